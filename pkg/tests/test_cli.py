import filecmp
import json
import subprocess
import sys
from collections import Counter

import numpy as np
import pytest

from conftest import DATA
from helprank.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, build_parser, run_command
from helprank.recommend import load_model
from helprank.report import read_csv_table

FAST = ["--n-trees", "4", "--linear-epochs", "20", "--K", "4", "--rec-epochs", "4", "--folds", "3",
        "--eval-folds", "3"]


def _args(out, *extra):
    return ["--reviews", str(DATA / "reviews.jsonl"), "--items", str(DATA / "items.jsonl"),
            "--out", str(out), *FAST, *extra]


def _run(cmd, out, *extra):
    return run_command([cmd, *_args(out, *extra)])


def test_parser_lists_every_command():
    text = build_parser().format_help()
    for cmd in ("ingest", "stats", "features", "study", "train-helpfulness", "recommend", "evaluate", "report"):
        assert cmd in text


def test_ingest(tmp_path, capsys):
    assert _run("ingest", tmp_path) == EXIT_OK
    assert "390 reviews, 33 users, 21 items" in capsys.readouterr().out
    lines = (tmp_path / "corpus.jsonl").read_text().splitlines()
    assert len(lines) == 390


def test_stats_matches_direct_computation(tmp_path):
    assert _run("ingest", tmp_path) == EXIT_OK
    assert _run("stats", tmp_path) == EXIT_OK
    recs = [json.loads(l) for l in (tmp_path / "corpus.jsonl").read_text().splitlines()]
    stars = np.array([r["stars"] for r in recs], float)
    per_user = np.array(list(Counter(r["user_id"] for r in recs).values()), float)
    meta, rows = read_csv_table(tmp_path / "stats_table.csv")
    by_var = {r["variable"]: r for r in rows}
    assert meta["report"] == "stats" and meta["ddof"] == "1"
    assert by_var["Number of reviews"]["count"] == len(recs)
    assert by_var["Number of items"]["count"] == len({r["business_id"] for r in recs})
    for name, vals in (("Rating values", stars), ("Number of reviews x user", per_user)):
        row = by_var[name]
        assert row["mean"] == pytest.approx(vals.mean(), abs=1e-6)
        assert row["std"] == pytest.approx(vals.std(ddof=1), abs=1e-6)
        assert row["median"] == pytest.approx(np.median(vals), abs=1e-6)
        assert (row["min"], row["max"]) == (vals.min(), vals.max())


def test_features_json(tmp_path):
    assert _run("features", tmp_path, "--report-format", "json") == EXIT_OK
    assert (tmp_path / "features.json").exists()


def test_study_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("study", a, "--models", "M1,M2,M3", "--seed", "7") == EXIT_OK
    assert _run("study", b, "--models", "M1,M2,M3", "--seed", "7") == EXIT_OK
    assert "study: 6 model/regressor pairs" in capsys.readouterr().out
    names = sorted(p.name for p in a.iterdir())
    assert "study_correlations.csv" in names
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors


def test_train_helpfulness(tmp_path):
    assert _run("train-helpfulness", tmp_path) == EXIT_OK
    rows = (tmp_path / "helpfulness_weights.csv").read_text().splitlines()
    assert len(rows) > 300
    weights = [float(r.split(",")[-1]) for r in rows[1:]]
    assert all(0 <= w <= 1 for w in weights)


@pytest.mark.parametrize("algorithm", ["svd_helpfulness", "svdpp"])
def test_recommend(tmp_path, algorithm):
    assert _run("recommend", tmp_path, "--algorithm", algorithm, "--N", "3") == EXIT_OK
    lines = (tmp_path / "recommendations.csv").read_text().splitlines()
    assert lines[0] == "user_id,rank,item_id"
    ranks = Counter(l.split(",")[0] for l in lines[1:])
    assert max(ranks.values()) <= 3
    assert load_model(tmp_path / "model").kind == ("svdpp" if algorithm == "svdpp" else "mf")


def test_evaluate(tmp_path, capsys):
    assert _run("evaluate", tmp_path) == EXIT_OK
    assert "svd_helpfulness rmse=" in capsys.readouterr().out
    meta, rows = read_csv_table(tmp_path / "eval_metrics.csv")
    assert meta["K"] == "4" and meta["seed"] == "7"
    assert [r["metric"] for r in rows][-2:] == ["rmse", "mae"]


def test_report_writes_tables_and_figures(tmp_path):
    assert _run("report", tmp_path) == EXIT_OK
    names = {p.name for p in tmp_path.iterdir()}
    assert {"stats_table.csv", "study_correlations.csv", "eval_metrics.csv",
            "study_correlations.png", "eval_metrics.png", "stats_summary.png"} <= names
    assert run_command(["report", *_args(tmp_path / "n", "--figures", "false")]) == EXIT_OK
    assert not any(p.suffix == ".png" for p in (tmp_path / "n").iterdir())


def test_helprank_out_env(tmp_path, monkeypatch):
    monkeypatch.setenv("HELPRANK_OUT", str(tmp_path / "env"))
    args = ["--reviews", str(DATA / "reviews.jsonl"), "--items", str(DATA / "items.jsonl")]
    assert run_command(["ingest", *args]) == EXIT_OK
    assert (tmp_path / "env" / "corpus.jsonl").exists()
    # an explicit flag still wins
    assert run_command(["ingest", *args, "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "flag" / "corpus.jsonl").exists()


def test_ini_config(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text(f"[data]\nreviews = {DATA / 'reviews.jsonl'}\nitems = {DATA / 'items.jsonl'}\n"
                   f"min_reviews_per_user = 15\n[output]\nout = {tmp_path / 'ini'}\n")
    assert run_command(["ingest", "--config", str(ini)]) == EXIT_OK
    assert (tmp_path / "ini" / "corpus.jsonl").exists()
    strict = capsys.readouterr().out
    assert run_command(["ingest", "--config", str(ini), "--min-reviews-per-user", "10"]) == EXIT_OK
    assert "390 reviews" in capsys.readouterr().out and "390 reviews" not in strict


def test_ini_duplicate_key(tmp_path, capsys):
    ini = tmp_path / "dup.ini"
    ini.write_text("[a]\nseed = 1\n[b]\nseed = 2\n")
    assert run_command(["stats", "--config", str(ini)]) == EXIT_USAGE
    assert "more than one section" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["nope"], ["stats", "--bogus"], ["stats", "--folds", "x"],
                                  ["study", "--folds", "1"], ["stats"], ["study", "--models", "M9"],
                                  ["stats", "--on-error", "raise"]])
def test_usage_errors(argv, capsys, tmp_path):
    extra = [] if not argv or argv[0] == "nope" else ["--reviews", str(DATA / "reviews.jsonl"),
                                                      "--items", str(DATA / "items.jsonl")]
    if argv == ["stats"]:
        extra = []  # no review file configured
    assert run_command(argv + extra) == EXIT_USAGE
    err = capsys.readouterr().err
    assert err.startswith("helprank: error:")


def test_data_errors(tmp_path, capsys):
    assert run_command(["stats", "--reviews", str(tmp_path / "missing.jsonl"), "--tags", ""]) == EXIT_DATA
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run_command(["stats", "--reviews", str(bad), "--tags", "", "--on-error", "fail"]) == EXIT_DATA
    assert "helprank: error:" in capsys.readouterr().err


def test_numeric_failure(tmp_path, capsys):
    assert _run("evaluate", tmp_path, "--lr", "50") == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "lower the learning rate" in err and "Warning" not in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "helprank", "ingest", *_args(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.count("\n") == 1 and proc.stderr == ""

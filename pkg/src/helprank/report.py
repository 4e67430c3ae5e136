"""Serialization of study, evaluation and statistics reports, plus figures.

Every report becomes a set of named tables. CSV output writes one file per
table, each starting with ``# key: value`` header lines that echo the config
and seeds; JSON output writes one document holding the config and all
tables. Floats are fixed at 6 decimals in both, so the two formats parse to
equal values.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .corpus import StatsReport, STAT_COLUMNS
from .evaluate import EvalReport, METRICS
from .regress import StudyReport

DECIMALS = 6
FORMATS = ("csv", "json")


class ReportError(OSError):
    pass


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------

def _kind(report) -> str:
    if isinstance(report, StudyReport):
        return "study"
    if isinstance(report, EvalReport):
        return "eval"
    if isinstance(report, StatsReport):
        return "stats"
    raise TypeError(f"cannot emit {type(report).__name__}")


def _study_tables(r: StudyReport) -> dict[str, tuple[list[str], list[list]]]:
    tables = {}
    tables["correlations"] = (["model", "regressor", "pearson", "spearman"],
                              [[c["model"], c["regressor"], c["pearson"], c["spearman"]]
                               for c in r.correlations])
    if r.coefficients:
        with_p = bool(r.coefficient_pvalues)
        header = ["model", "feature", "coefficient"] + (["pvalue"] if with_p else [])
        rows = []
        for model, coefs in r.coefficients.items():
            rows.append([model, "intercept", r.intercepts.get(model, math.nan)] + ([None] if with_p else []))
            for feat, val in coefs.items():
                row = [model, feat, val]
                if with_p:
                    row.append(r.coefficient_pvalues.get(model, {}).get(feat))
                rows.append(row)
        tables["coefficients"] = (header, rows)
    if r.importances:
        tables["importances"] = (["model", "feature", "importance"],
                                 [[m, f, v] for m, imp in r.importances.items() for f, v in imp.items()])
    cols = list(r.matrix_columns)
    tables["matrix"] = (["variable"] + cols,
                        [[name] + list(map(float, r.matrix[k])) for k, name in enumerate(cols)])
    if r.fold_correlations:
        tables["folds"] = (["model", "regressor", "fold", "pearson", "spearman"],
                           [[c["model"], c["regressor"], c["fold"], c["pearson"], c["spearman"]]
                            for c in r.fold_correlations])
    return tables


def _eval_tables(r: EvalReport) -> dict[str, tuple[list[str], list[list]]]:
    others = [a for a in r.algorithms if a != r.baseline]
    header = ["metric"] + list(r.algorithms)
    for a in others:
        header += [f"{a}_vs_{r.baseline}_pct", f"{a}_pvalue", f"{a}_significant"]
    rows = []
    for m in METRICS:
        row = [m] + [r.metrics[a][m] for a in r.algorithms]
        for a in others:
            row += [r.relative[a][m], r.pvalues[a][m], r.significant[a][m]]
        rows.append(row)
    fold_header = ["fold", "algorithm"] + list(METRICS)
    folds = [[p["fold"], p["algorithm"]] + [p[m] for m in METRICS] for p in r.per_fold]
    return {"metrics": (header, rows), "folds": (fold_header, folds)}


def _stats_tables(r: StatsReport) -> dict[str, tuple[list[str], list[list]]]:
    header = ["variable", *STAT_COLUMNS]
    return {"table": (header, [[row.as_dict()[h] for h in header] for row in r.rows])}


def report_tables(report) -> dict[str, tuple[list[str], list[list]]]:
    """Named ``(header, rows)`` tables for any supported report."""
    return {"study": _study_tables, "eval": _eval_tables,
            "stats": _stats_tables}[_kind(report)](report)


def report_config(report, extra: Mapping[str, Any] | None = None) -> dict:
    kind = _kind(report)
    if kind == "stats":
        cfg = {"ddof": report.ddof}
    elif kind == "eval":
        cfg = {**report.config, "users_evaluated": report.users_evaluated,
               "users_skipped": report.users_skipped}
    else:
        cfg = dict(report.config)
    return {"report": kind, **cfg, **dict(extra or {})}


# --------------------------------------------------------------------------
# Value formatting
# --------------------------------------------------------------------------

def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if not math.isfinite(v) else float(f"{v:.{DECIMALS}f}")
    if v is None or isinstance(v, str):
        return v
    if isinstance(v, Mapping):
        return {str(k): _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(x) for x in v]
    return str(v)


def _csv_value(v) -> str:
    v = _json_value(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.{DECIMALS}f}"
    if isinstance(v, list):
        return ",".join(_csv_value(x) for x in v)
    return str(v)


def _flatten(cfg: Mapping, prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for key, val in cfg.items():
        name = f"{prefix}{key}"
        if isinstance(val, Mapping):
            out.extend(_flatten(val, name + "."))
        else:
            out.append((name, val))
    return out


# --------------------------------------------------------------------------
# Emission
# --------------------------------------------------------------------------

def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path


def _prepare(dest) -> Path:
    d = Path(dest)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {d}: {exc}") from exc
    if not d.is_dir():
        raise ReportError(f"{d} is not a directory")
    return d


def emit_report(report, fmt: str = "csv", dest=".", *, config: Mapping | None = None,
                prefix: str | None = None) -> list[Path]:
    """Write ``report`` into directory ``dest``; returns the written paths.

    CSV gives ``<prefix>_<table>.csv`` per table; JSON gives ``<prefix>.json``.
    ``config`` adds entries to the echoed header (seeds, input paths).
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    d = _prepare(dest)
    prefix = prefix or _kind(report)
    tables = report_tables(report)
    cfg = report_config(report, config)
    if fmt == "json":
        doc = {"config": _json_value(cfg),
               "tables": {name: [dict(zip(h, map(_json_value, row))) for row in rows]
                          for name, (h, rows) in tables.items()}}
        return [_write(d / f"{prefix}.json", json.dumps(doc, indent=2) + "\n")]
    paths = []
    for name, (header, rows) in tables.items():
        buf = io.StringIO()
        for key, val in _flatten(cfg):
            buf.write(f"# {key}: {_csv_value(val)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_value(v) for v in row])
        paths.append(_write(d / f"{prefix}_{name}.csv", buf.getvalue()))
    return paths


def read_csv_table(path) -> tuple[dict[str, str], list[dict[str, Any]]]:
    """Parse an emitted CSV back into ``(header_config, rows)`` with typed cells."""
    meta, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, val = line[2:].rstrip("\n").partition(": ")
                meta[key] = val
            else:
                lines.append(line)
    rows = []
    for rec in csv.DictReader(lines):
        rows.append({k: _parse_cell(v) for k, v in rec.items()})
    return meta, rows


def _parse_cell(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


# --------------------------------------------------------------------------
# Figures
# --------------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path: Path) -> Path:
    # no Software/date metadata, so reruns are byte-identical
    try:
        fig.savefig(path, dpi=100, metadata={"Software": None})
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    finally:
        fig.clf()
    return path


def _grouped_bars(ax, groups, series: Mapping[str, list[float]]):
    x = np.arange(len(groups))
    width = 0.8 / max(1, len(series))
    for k, (label, vals) in enumerate(series.items()):
        ax.bar(x + (k - (len(series) - 1) / 2) * width, vals, width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(groups)
    ax.legend(fontsize=8)


def render_figures(report, dest=".", prefix: str | None = None) -> list[Path]:
    """PNG figures for a report (matplotlib, Agg backend)."""
    plt = _pyplot()
    d = _prepare(dest)
    kind = _kind(report)
    prefix = prefix or kind
    out = []
    if kind == "study":
        models = list(dict.fromkeys(c["model"] for c in report.correlations))
        series = {}
        for c in report.correlations:
            for stat in ("pearson", "spearman"):
                series.setdefault(f"{c['regressor']} {stat}", {})[c["model"]] = c[stat]
        fig, ax = plt.subplots(figsize=(6, 4))
        _grouped_bars(ax, models, {k: [v.get(m, np.nan) for m in models] for k, v in series.items()})
        ax.set_ylabel("correlation with helpfulness")
        ax.set_title("Cross-validated correlation")
        out.append(_save(fig, d / f"{prefix}_correlations.png"))
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(7, 6))
        im = ax.imshow(report.matrix, vmin=-1, vmax=1, cmap="RdBu_r")
        ticks = range(len(report.matrix_columns))
        ax.set_xticks(ticks)
        ax.set_yticks(ticks)
        ax.set_xticklabels(report.matrix_columns, rotation=90, fontsize=7)
        ax.set_yticklabels(report.matrix_columns, fontsize=7)
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        out.append(_save(fig, d / f"{prefix}_matrix.png"))
        plt.close(fig)

        for model, imp in report.importances.items():
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.barh(list(imp)[::-1], list(imp.values())[::-1])
            ax.set_xlabel("importance")
            ax.set_title(f"Forest importances, {model}")
            fig.tight_layout()
            out.append(_save(fig, d / f"{prefix}_importances_{model}.png"))
            plt.close(fig)
    elif kind == "eval":
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        rank = [m for m in METRICS if m not in ("rmse", "mae")]
        _grouped_bars(axes[0], rank, {a: [report.metrics[a][m] for m in rank] for a in report.algorithms})
        axes[0].set_title("Ranking and top-N")
        _grouped_bars(axes[1], ["rmse", "mae"],
                      {a: [report.metrics[a][m] for m in ("rmse", "mae")] for a in report.algorithms})
        axes[1].set_title("Rating error")
        fig.tight_layout()
        out.append(_save(fig, d / f"{prefix}_metrics.png"))
        plt.close(fig)
    else:
        rows = [r for r in report.rows if r.count and math.isfinite(r.mean)]
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.errorbar(range(len(rows)), [r.mean for r in rows],
                    yerr=[0.0 if not math.isfinite(r.std) else r.std for r in rows], fmt="o")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels([r.variable for r in rows], rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("mean ± std")
        fig.tight_layout()
        out.append(_save(fig, d / f"{prefix}_summary.png"))
        plt.close(fig)
    return out

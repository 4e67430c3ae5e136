"""``helprank`` command line.

Settings come from defaults, then an optional INI file (``--config``), then
``HELPRANK_OUT`` for the output directory, then command-line flags. Every
config key is also a flag: ``n_trees`` becomes ``--n-trees``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .corpus import CorpusError
from .evaluate import FoldFailure
from .pipeline import (ConfigError, PipelineConfig, prepare_corpus, prepare_features, stage_evaluate,
                       stage_ingest, stage_recommend, stage_stats, stage_study, train_helpfulness,
                       write_recommendations)
from .recommend import RatingMatrix, save_model
from .report import emit_report, render_figures

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = ("ingest", "stats", "features", "study", "train-helpfulness", "recommend",
            "evaluate", "report")

logger = logging.getLogger("helprank")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it through our codes instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with pipeline settings")
    p.add_argument("-v", "--verbose", action="count", default=0)
    group = p.add_argument_group("pipeline settings")
    for name, kind in PipelineConfig.field_types().items():
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            group.add_argument(flag, dest=name, nargs="?", const="true", default=None,
                               metavar="BOOL")
        else:
            group.add_argument(flag, dest=name, default=None, metavar=kind.__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="helprank", description="Review helpfulness study and "
                     "helpfulness-weighted recommendation.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "ingest": "load, filter and save the review corpus",
        "stats": "descriptive statistics of the filtered corpus",
        "features": "compute the review feature matrix",
        "study": "cross-validated M1/M2/M3 correlation study",
        "train-helpfulness": "fit the M3 forest and write hybrid helpfulness weights",
        "recommend": "fit one recommender on all ratings and write top-N lists",
        "evaluate": "cross-validated recommender comparison",
        "report": "stats, study and evaluation reports with figures",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        _add_config_flags(sp)
        if name == "recommend":
            sp.add_argument("--algorithm", help="algorithm to fit (default: first of --algorithms)")
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.from_ini(args.config) if args.config else PipelineConfig()
    env_out = os.environ.get("HELPRANK_OUT")
    if env_out:
        cfg.out = env_out
    flags = {k: v for k, v in vars(args).items()
             if k in PipelineConfig.field_types() and v is not None}
    return cfg.update(flags).validate()


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def _emit(cfg: PipelineConfig, report, extra: dict, figures: bool = False) -> list[Path]:
    paths = emit_report(report, cfg.report_format, cfg.out_dir(), config=extra)
    if figures and cfg.figures:
        paths += render_figures(report, cfg.out_dir())
    return paths


def _seeds(cfg: PipelineConfig) -> dict:
    return {"input": Path(cfg.reviews).name, "seed": cfg.seed, "linear_seed": cfg.linear_seed,
            "forest_seed": cfg.forest_seed, "rec_seed": cfg.rec_seed, "eval_seed": cfg.eval_seed}


def cmd_ingest(cfg, args) -> str:
    prep, path = stage_ingest(cfg)
    c = prep.corpus
    return (f"ingest: {len(c)} reviews, {len(c.users)} users, {len(c.items)} items "
            f"({prep.skipped} malformed skipped) -> {path}")


def cmd_stats(cfg, args) -> str:
    prep, stats = stage_stats(cfg)
    paths = _emit(cfg, stats, {"input": Path(cfg.reviews).name,
                               "min_reviews_per_user": cfg.min_reviews_per_user})
    return f"stats: {len(prep.corpus)} reviews summarised -> {paths[0]}"


def cmd_features(cfg, args) -> str:
    prep = prepare_corpus(cfg)
    _, fm = prepare_features(cfg, prep)
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    if cfg.report_format == "json":
        path = fm.to_json(out / "features.json")
    else:
        path = fm.to_csv(out / "features.csv")
    return f"features: {len(fm)} reviews x {fm.values.shape[1]} columns -> {path}"


def cmd_study(cfg, args) -> str:
    report = stage_study(cfg)
    paths = _emit(cfg, report, _seeds(cfg))
    best = max(report.correlations, key=lambda r: r["pearson"])
    return (f"study: {len(report.correlations)} model/regressor pairs, best "
            f"{best['model']}/{best['regressor']} pearson={best['pearson']:.4f} -> {paths[0].parent}")


def cmd_train_helpfulness(cfg, args) -> str:
    prep = prepare_corpus(cfg)
    _, fm = prepare_features(cfg, prep)
    _, weights, fallback = train_helpfulness(cfg, prep.corpus, fm)
    R = RatingMatrix.from_corpus(prep.corpus)
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    path = weights.to_csv(out / "helpfulness_weights.csv", R)
    return f"train-helpfulness: {len(R)} weights, {100 * fallback:.1f}% from the M3 forest -> {path}"


def cmd_recommend(cfg, args) -> str:
    model, rows = stage_recommend(cfg, algorithm=args.algorithm)
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    model_dir = save_model(model, out / "model")
    path = write_recommendations(rows, out / "recommendations.csv")
    users = len({r[0] for r in rows})
    return f"recommend: top-{cfg.N} lists for {users} users -> {path} (model in {model_dir})"


def cmd_evaluate(cfg, args) -> str:
    report = stage_evaluate(cfg)
    paths = _emit(cfg, report, _seeds(cfg))
    parts = [f"{a} rmse={report.metrics[a]['rmse']:.4f} map={report.metrics[a]['map']:.4f}"
             for a in report.algorithms]
    return f"evaluate: {'; '.join(parts)} -> {paths[0].parent}"


def cmd_report(cfg, args) -> str:
    prep = prepare_corpus(cfg)
    features = prepare_features(cfg, prep)
    _, stats = stage_stats(cfg, prep)
    paths = _emit(cfg, stats, {"input": Path(cfg.reviews).name}, figures=True)
    paths += _emit(cfg, stage_study(cfg, prep, features), _seeds(cfg), figures=True)
    paths += _emit(cfg, stage_evaluate(cfg, prep, features), _seeds(cfg), figures=True)
    return f"report: {len(paths)} files -> {cfg.out_dir()}"


HANDLERS = {
    "ingest": cmd_ingest, "stats": cmd_stats, "features": cmd_features, "study": cmd_study,
    "train-helpfulness": cmd_train_helpfulness, "recommend": cmd_recommend,
    "evaluate": cmd_evaluate, "report": cmd_report,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, FoldFailure) and exc.__cause__ is not None:
        exc = exc.__cause__
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, ArithmeticError):
        return EXIT_NUMERIC
    return EXIT_DATA


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
        if args.command is None:
            raise UsageError(f"missing command; choose one of {', '.join(COMMANDS)}")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = load_config(args)
        summary = HANDLERS[args.command](cfg, args)
    except (UsageError, ConfigError, CorpusError, OSError, ArithmeticError, FoldFailure,
            KeyError, ValueError) as exc:
        code = _exit_code(exc)
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"helprank: error: {msg}", file=sys.stderr)
        return code
    print(summary)
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()

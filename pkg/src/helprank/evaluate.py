"""Recommender metrics, the Wilcoxon signed-rank test and the algorithm comparison."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .folds import FoldPlan
from .recommend import (FactorModel, HelpfulnessWeights, RatingMatrix, RATING_MAX, RATING_MIN,
                        train_mf, train_svdpp, train_weighted_mf)
from .regress import rankdata

logger = logging.getLogger(__name__)

RANK_METRICS = ("precision", "recall", "f1", "map", "mrr", "ndcg")
ERROR_METRICS = ("rmse", "mae")
METRICS = RANK_METRICS + ERROR_METRICS
LOWER_IS_BETTER = frozenset(ERROR_METRICS)


class UndefinedMetric(ValueError):
    """The metric has no value for this user (e.g. no relevant items)."""


# --------------------------------------------------------------------------
# Point metrics
# --------------------------------------------------------------------------

def error_metrics(predicted, actual) -> dict[str, float]:
    p = np.asarray(predicted, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if p.size != a.size:
        raise ValueError(f"length mismatch: {p.size} vs {a.size}")
    if p.size == 0:
        raise ValueError("no predictions to score")
    err = p - a
    return {"rmse": float(np.sqrt(np.mean(err * err))), "mae": float(np.mean(np.abs(err)))}


def topn_metrics(recommended: Sequence, relevant, N: int) -> dict[str, float]:
    """Precision, recall and F1 of the first ``N`` recommendations.

    Precision divides by the length of the (possibly shorter) top-N list.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    relevant = set(relevant)
    if not relevant:
        raise UndefinedMetric("recall is undefined without relevant items")
    top = list(recommended)[:N]
    hits = sum(1 for x in top if x in relevant)
    precision = hits / len(top) if top else 0.0
    recall = hits / len(relevant)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1}


def dcg(gains: Sequence[float]) -> float:
    return float(sum(g / math.log2(k + 2) for k, g in enumerate(gains)))


def ranking_metrics(recommended: Sequence, relevant, gains: Mapping | None = None,
                    N: int | None = None) -> dict[str, float]:
    """AP, reciprocal rank and NDCG of one ranked list.

    AP averages precision@k over the relevant hits and divides by
    ``min(|relevant|, N)``. NDCG uses linear gains (``gains``, default 1 for
    relevant items) with a log2 discount; the ideal ordering is taken over
    all items that have a gain.
    """
    relevant = set(relevant)
    if not relevant:
        raise UndefinedMetric("ranking metrics need at least one relevant item")
    ranked = list(recommended)
    if N is not None:
        if N < 1:
            raise ValueError("N must be >= 1")
        ranked = ranked[:N]
    cutoff = len(ranked) if N is None else N
    hits, ap_sum, rr = 0, 0.0, 0.0
    for k, item in enumerate(ranked, start=1):
        if item in relevant:
            hits += 1
            ap_sum += hits / k
            if rr == 0.0:
                rr = 1.0 / k
    ap = ap_sum / min(len(relevant), max(cutoff, 1))
    if gains is None:
        gains = {x: 1.0 for x in relevant}
    ideal = dcg(sorted(gains.values(), reverse=True)[:cutoff])
    actual = dcg([gains.get(x, 0.0) for x in ranked])
    ndcg = actual / ideal if ideal > 0 else 0.0
    return {"map": ap, "mrr": rr, "ndcg": ndcg}


# --------------------------------------------------------------------------
# Wilcoxon signed-rank test
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    pvalue: float
    n_effective: int
    method: str


def _exact_lower_tail(ranks: np.ndarray, w: float) -> float:
    """P(T+ <= w) under random signs, by dynamic programming over doubled ranks."""
    doubled = np.rint(2 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    limit = int(np.floor(2 * w + 1e-9))
    return float(counts[:limit + 1].sum() / counts.sum())


def wilcoxon_signed_rank(a, b, exact_max_n: int = 15) -> WilcoxonResult:
    """Two-sided signed-rank test of paired samples.

    Zero differences are dropped; ties in |d| share mid-ranks. The
    statistic is the smaller signed-rank sum. For up to ``exact_max_n``
    non-zero pairs the null distribution is enumerated exactly, otherwise a
    tie-corrected normal approximation is used.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError("paired samples must have equal length")
    if a.size == 0:
        raise ValueError("empty samples")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("all paired differences are zero")
    ranks = rankdata(np.abs(d))
    t_plus = float(ranks[d > 0].sum())
    t_minus = float(ranks[d < 0].sum())
    w = min(t_plus, t_minus)
    if n <= exact_max_n:
        p = min(1.0, 2.0 * _exact_lower_tail(ranks, w))
        return WilcoxonResult(w, p, n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    if var <= 0:
        return WilcoxonResult(w, 1.0, n, "normal")
    z = (w - mean) / math.sqrt(var)
    return WilcoxonResult(w, min(1.0, 2.0 * float(ndtr(z))), n, "normal")


# --------------------------------------------------------------------------
# Comparison harness
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    N: int = 10
    relevance_threshold: float = 4.0
    graded_gain: bool = True
    clamp: bool = True
    alpha: float = 0.05
    baseline: str | None = None


# A trainer maps (training matrix, training weights or None) to a fitted model.
Trainer = Callable[[RatingMatrix, np.ndarray | None], FactorModel]


def make_trainer(name: str, K: int = 50, lam: float = 0.02, lr: float = 0.01,
                 epochs: int = 50, seed: int = 0) -> Trainer:
    """Named algorithms: ``svd_helpfulness``, ``svd_helpfulness_biased``, ``mf``, ``mf_biased``, ``svdpp``."""
    if name == "svd_helpfulness":
        return lambda R, w: train_weighted_mf(R, w, K, lam, lr, epochs, seed)
    if name == "svd_helpfulness_biased":
        return lambda R, w: train_weighted_mf(R, w, K, lam, lr, epochs, seed, biased=True)
    if name == "mf":
        return lambda R, w: train_mf(R, K, lam, lr, epochs, seed)
    if name == "mf_biased":
        return lambda R, w: train_mf(R, K, lam, lr, epochs, seed, biased=True)
    if name == "svdpp":
        return lambda R, w: train_svdpp(R, K, lam, lr, epochs, seed)
    raise ValueError(f"unknown algorithm {name!r}")


@dataclass
class EvalReport:
    algorithms: list[str]
    metrics: dict[str, dict[str, float]]
    relative: dict[str, dict[str, float]]
    pvalues: dict[str, dict[str, float]]
    significant: dict[str, dict[str, bool]]
    baseline: str
    per_fold: list[dict]
    users_evaluated: int
    users_skipped: int
    config: dict = field(default_factory=dict)


class FoldFailure(RuntimeError):
    def __init__(self, fold: int, algorithm: str, cause: Exception):
        super().__init__(f"fold {fold}, algorithm {algorithm}: {cause}")
        self.fold = fold
        self.algorithm = algorithm


def _user_ranking_values(model: FactorModel, R_test: RatingMatrix, cfg: EvalConfig):
    """Per-user rank-metric values over each user's test items; None for skipped users."""
    out = {}
    by_user: dict[int, list[int]] = {}
    for k, u in enumerate(R_test.users.tolist()):
        by_user.setdefault(u, []).append(k)
    for u in sorted(by_user):
        obs = by_user[u]
        items = R_test.items[obs]
        truth = R_test.ratings[obs]
        if model.seen_users[u]:
            scores = model.score_indices(u, items)
            scores = np.where(model.seen_items[items], scores, model.fallback())
        else:
            scores = np.full(items.size, model.fallback())
        ids = [R_test.item_ids[i] for i in items]
        order = sorted(range(len(ids)), key=lambda j: (-scores[j], ids[j]))
        ranked = [ids[j] for j in order]
        relevant = {ids[j] for j in range(len(ids)) if truth[j] >= cfg.relevance_threshold}
        if not relevant:
            out[u] = None
            continue
        gains = ({ids[j]: float(truth[j]) for j in range(len(ids))} if cfg.graded_gain
                 else {x: 1.0 for x in relevant})
        vals = topn_metrics(ranked, relevant, cfg.N)
        vals.update(ranking_metrics(ranked, relevant, gains, cfg.N))
        out[u] = vals
    return out


def _fold_predictions(model: FactorModel, R_test: RatingMatrix, clamp: bool) -> np.ndarray:
    pred = np.empty(len(R_test))
    for k, (u, i) in enumerate(zip(R_test.users, R_test.items)):
        if model.seen_users[u] and model.seen_items[i]:
            pred[k] = model.score_indices(u, np.array([i]))[0]
        else:
            pred[k] = model.fallback()
    if clamp:
        np.clip(pred, RATING_MIN, RATING_MAX, out=pred)
    return pred


def _resolve_weights(W, fold: int, train: np.ndarray, R_train: RatingMatrix):
    if W is None:
        return None
    if isinstance(W, HelpfulnessWeights):
        return W.for_matrix(R_train)
    if callable(W):
        w = W(fold, train)
        return w.for_matrix(R_train) if isinstance(w, HelpfulnessWeights) else np.asarray(w, float)
    return np.asarray(W, dtype=float)[train]


@dataclass
class _Run:
    abs_err: list = field(default_factory=list)
    sq_err: list = field(default_factory=list)
    user_vals: dict = field(default_factory=dict)
    per_fold: list = field(default_factory=list)
    skipped: int = 0


def _run_algorithm(name: str, trainer: Trainer, R: RatingMatrix, fold_weights: list,
                   fold_plan: FoldPlan, cfg: EvalConfig) -> _Run:
    run = _Run()
    for (fold, train, test), w_train in zip(fold_plan.splits(), fold_weights):
        R_train, R_test = R.subset(train), R.subset(test)
        try:
            model = trainer(R_train, w_train)
        except Exception as exc:
            raise FoldFailure(fold, name, exc) from exc
        pred = _fold_predictions(model, R_test, cfg.clamp)
        err = pred - R_test.ratings
        run.abs_err.append(np.abs(err))
        run.sq_err.append(err * err)
        vals = _user_ranking_values(model, R_test, cfg)
        run.skipped += sum(v is None for v in vals.values())
        kept = {u: v for u, v in vals.items() if v is not None}
        for u, v in kept.items():
            run.user_vals[(fold, u)] = v
        row = {"fold": fold, "algorithm": name, **error_metrics(pred, R_test.ratings)}
        for m in RANK_METRICS:
            row[m] = float(np.mean([v[m] for v in kept.values()])) if kept else math.nan
        run.per_fold.append(row)
    return run


def _summarize(run: _Run, keys) -> tuple[dict, dict]:
    se = np.concatenate(run.sq_err)
    ae = np.concatenate(run.abs_err)
    values = {"rmse": float(np.sqrt(se.mean())), "mae": float(ae.mean())}
    samples = {"rmse": se, "mae": ae}
    for m in RANK_METRICS:
        arr = np.array([run.user_vals[k][m] for k in keys])
        values[m] = float(arr.mean()) if arr.size else math.nan
        samples[m] = arr
    return {m: values[m] for m in METRICS}, samples


def compare_recommenders(R: RatingMatrix, W, fold_plan: FoldPlan,
                         algorithms: Mapping[str, Trainer], cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Cross-validated comparison of two or more recommenders.

    ``W`` supplies training weights: a :class:`HelpfulnessWeights`, an
    array aligned with ``R``, or ``callable(fold, train_obs) -> weights`` so
    that each fold can build its own helpfulness model. Relative differences
    are ``(A - baseline) / baseline`` in percent. Rank metrics are paired
    per (fold, user) for the Wilcoxon test, error metrics per observation
    (absolute errors for MAE, squared errors for RMSE).
    """
    names = list(algorithms)
    if len(names) < 2:
        raise ValueError("need at least two algorithms to compare")
    if fold_plan.assignment.size != len(R):
        raise ValueError("fold plan does not cover the rating matrix")
    baseline = cfg.baseline or names[-1]
    if baseline not in algorithms:
        raise ValueError(f"baseline {baseline!r} is not among the algorithms")

    fold_weights = [_resolve_weights(W, f, train, R.subset(train)) for f, train, _ in fold_plan.splits()]
    runs = {name: _run_algorithm(name, algorithms[name], R, fold_weights, fold_plan, cfg)
            for name in names}
    # relevance depends only on the test ratings, so every run keeps the same users
    keys = sorted(runs[names[0]].user_vals)
    metrics, samples = {}, {}
    for name in names:
        metrics[name], samples[name] = _summarize(runs[name], keys)

    relative, pvalues, significant = {}, {}, {}
    for name in names:
        if name == baseline:
            continue
        relative[name], pvalues[name], significant[name] = {}, {}, {}
        for m in METRICS:
            base = metrics[baseline][m]
            relative[name][m] = (metrics[name][m] - base) / base * 100.0 if base else math.nan
            try:
                p = wilcoxon_signed_rank(samples[name][m], samples[baseline][m]).pvalue
            except ValueError:
                p = 1.0  # identical paired values: no evidence of a difference
            pvalues[name][m] = p
            significant[name][m] = p < cfg.alpha
    per_fold = [row for name in names for row in runs[name].per_fold]
    return EvalReport(names, metrics, relative, pvalues, significant, baseline, per_fold,
                      len(keys), runs[names[0]].skipped,
                      {"N": cfg.N, "relevance_threshold": cfg.relevance_threshold,
                       "graded_gain": cfg.graded_gain, "clamp": cfg.clamp, "alpha": cfg.alpha,
                       "folds": fold_plan.k, "fold_seed": fold_plan.seed, "baseline": baseline})


def tune_by_map(R: RatingMatrix, W, fold_plan: FoldPlan, name: str, grid: Mapping[str, Sequence],
                base: Mapping | None = None, cfg: EvalConfig = EvalConfig()) -> tuple[dict, float]:
    """Grid search over trainer keyword arguments, keeping the best cross-validated MAP."""
    base = dict(base or {})
    keys = sorted(grid)
    fold_weights = [_resolve_weights(W, f, train, R.subset(train)) for f, train, _ in fold_plan.splits()]
    best, best_map = None, -math.inf
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = {**base, **dict(zip(keys, combo))}
        run = _run_algorithm(name, make_trainer(name, **params), R, fold_weights, fold_plan, cfg)
        score = _summarize(run, sorted(run.user_vals))[0]["map"]
        if score > best_map:
            best, best_map = params, score
    return best, best_map

"""Helpfulness regressors (linear epsilon-insensitive, random forest) and the correlation study."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .features import COLUMNS, FEATURES, FeatureMatrix, fold_features
from .folds import make_folds

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Correlation
# --------------------------------------------------------------------------

def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("correlation needs at least two observations")
    return a, b


def pearson(a, b) -> float:
    """Product-moment correlation; NaN when either vector is constant."""
    a, b = _check_pair(a, b)
    da = a - a.mean()
    db = b - b.mean()
    saa = float(np.dot(da, da))
    sbb = float(np.dot(db, db))
    if saa == 0.0 or sbb == 0.0:
        return math.nan
    r = float(np.dot(da, db)) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


def rankdata(a) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    a = np.asarray(a, dtype=float).ravel()
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    ranks = np.empty(a.size, dtype=float)
    start = 0
    n = a.size
    while start < n:
        stop = start + 1
        while stop < n and sorted_a[stop] == sorted_a[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
        start = stop
    return ranks


def spearman(a, b) -> float:
    a, b = _check_pair(a, b)
    return pearson(rankdata(a), rankdata(b))


def correlation_matrix(fm: FeatureMatrix, columns: Sequence[str] = COLUMNS) -> np.ndarray:
    cols = [fm.column(c) for c in columns]
    n = len(cols)
    out = np.eye(n)
    for i in range(n):
        for j in range(i):
            out[i, j] = out[j, i] = pearson(cols[i], cols[j])
    return out


# --------------------------------------------------------------------------
# Model specs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    name: str
    features: tuple[str, ...]

    def __post_init__(self):
        unknown = set(self.features) - set(FEATURES)
        if unknown:
            raise ValueError(f"unknown features: {sorted(unknown)}")

    @property
    def dim(self) -> int:
        return len(self.features)


M1 = ModelSpec("M1", ("rat", "len", "ugr"))
M2 = ModelSpec("M2", ("rat", "len", "ugr", "pol"))
M3 = ModelSpec("M3", FEATURES)
SPECS = {s.name: s for s in (M1, M2, M3)}


def get_spec(name) -> ModelSpec:
    if isinstance(name, ModelSpec):
        return name
    try:
        return SPECS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(SPECS)}") from None


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError("X must be two-dimensional")
    if X.shape[0] == 0:
        raise ValueError("cannot train on zero rows")
    if X.shape[0] != y.size:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.size}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in training data")
    return X, y


def _spec_for(X, spec):
    if spec is None:
        return None
    spec = get_spec(spec)
    if X.shape[1] != spec.dim:
        raise ValueError(f"{spec.name} expects {spec.dim} features, X has {X.shape[1]}")
    return spec


# --------------------------------------------------------------------------
# Linear epsilon-insensitive regression
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearHyper:
    epsilon: float = 0.0
    C: float = 1.0
    epochs: int = 200
    learning_rate: float = 0.05
    batch_size: int = 32
    standardize: bool = False
    precondition: bool = True
    seed: int = 0


@dataclass(frozen=True)
class LinearModel:
    bias: float
    weights: np.ndarray
    spec: ModelSpec | None
    hyper: LinearHyper
    loss_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def coefficients(self) -> dict[str, float]:
        names = self.spec.features if self.spec else [f"x{i}" for i in range(self.weights.size)]
        return dict(zip(names, map(float, self.weights)))


def svr_objective(w, b, X, y, epsilon: float, lam: float) -> float:
    resid = np.abs(y - X @ w - b)
    return float(np.mean(np.maximum(resid - epsilon, 0.0)) + 0.5 * lam * np.dot(w, w))


def train_linear(X, y, spec=None, hp: LinearHyper = LinearHyper()) -> LinearModel:
    """Epsilon-insensitive linear regression with an L2 penalty.

    Minimises ``mean(max(0, |y - Xw - b| - eps)) + lam/2 ||w||^2`` with
    ``lam = 1 / (C n)``, i.e. the usual ``1/2||w||^2 + C sum(loss)`` primal
    divided by ``C n``. Mini-batch subgradient steps at rate
    ``learning_rate / (1 + epoch)``; the penalty is applied as a proximal
    shrink so stiff directions cannot blow up.

    With ``precondition`` the steps are taken in standardized coordinates,
    but the objective (penalty included) is still the one on the raw
    features, so the minimiser does not change. Both the last and the
    running-average iterate are scored after each epoch and the best point
    seen is returned; ``loss_history`` is that best objective per epoch and
    therefore never increases.

    ``standardize`` is a different model: the penalty falls on the weights
    of the standardized features. Returned weights are always on the raw
    scale.
    """
    X, y = _check_xy(X, y)
    spec = _spec_for(X, spec)
    n, d = X.shape
    if hp.precondition or hp.standardize:
        mu = X.mean(axis=0)
        sigma = X.std(axis=0)
        sigma[sigma == 0.0] = 1.0
    else:
        mu, sigma = np.zeros(d), np.ones(d)
    Z = (X - mu) / sigma
    lam = 1.0 / (hp.C * n)
    # penalty per coordinate of the standardized weights
    pen = np.ones(d) if hp.standardize else 1.0 / sigma ** 2
    shrink_rate = lam * pen

    def objective(wz, bz):
        resid = np.abs(y - Z @ wz - bz)
        return float(np.mean(np.maximum(resid - hp.epsilon, 0.0)) + 0.5 * lam * np.dot(pen * wz, wz))

    def to_raw(wz, bz):
        w = wz / sigma
        return w, bz - float(np.dot(w, mu))

    rng = np.random.default_rng(hp.seed)
    wz = np.zeros(d)
    bz = float(np.median(y))
    avg_w, avg_b = wz.copy(), bz
    best_w, best_b = wz.copy(), bz
    best = objective(wz, bz)
    history = [best]
    bs = max(1, min(hp.batch_size, n))
    for epoch in range(hp.epochs):
        lr = hp.learning_rate / (1.0 + epoch)
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            Zb = Z[idx]
            r = y[idx] - Zb @ wz - bz
            g = np.where(r > hp.epsilon, -1.0, np.where(r < -hp.epsilon, 1.0, 0.0))
            wz = (wz - lr * (Zb.T @ g) / idx.size) / (1.0 + lr * shrink_rate)
            bz -= lr * float(g.mean())
        avg_w += (wz - avg_w) / (epoch + 1)
        avg_b += (bz - avg_b) / (epoch + 1)
        for cw, cb in ((wz, bz), (avg_w, avg_b)):
            obj = objective(cw, cb)
            if obj < best:
                best, best_w, best_b = obj, cw.copy(), cb
        history.append(best)
    weights, bias = to_raw(best_w, best_b)
    weights.setflags(write=False)
    return LinearModel(float(bias), weights, spec, hp, tuple(history))


# --------------------------------------------------------------------------
# Regression trees and forests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestHyper:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 2
    max_features: int | float | str | None = "third"
    bootstrap: bool = True
    seed: int = 0

    def features_per_split(self, d: int) -> int:
        mf = self.max_features
        if mf is None:
            return d
        if mf == "third":
            return max(1, math.ceil(d / 3))
        if mf == "sqrt":
            return max(1, int(math.sqrt(d)))
        if isinstance(mf, float):
            return max(1, min(d, int(math.ceil(mf * d))))
        return max(1, min(d, int(mf)))


@dataclass(frozen=True)
class RegressionTree:
    """Array-encoded CART tree; ``feature[k] == -1`` marks leaf ``k``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    impurity_decrease: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def importances(self) -> np.ndarray:
        imp = np.zeros(self.n_features)
        split = self.feature >= 0
        np.add.at(imp, self.feature[split], self.impurity_decrease[split])
        return imp


def _best_split(Xn, yn, feats, min_leaf):
    """Best (feature, threshold, decrease) over ``feats``, or None.

    Uses the identity SSE = sum(y^2) - (sum y)^2 / n; the decrease equals
    ``S_L^2/n_L + S_R^2/n_R - S^2/n``.
    """
    n = yn.size
    sub = Xn[:, feats]
    order = np.argsort(sub, axis=0, kind="mergesort")
    xs = np.take_along_axis(sub, order, axis=0)
    ys = yn[order]
    csum = np.cumsum(ys, axis=0)
    total = csum[-1]
    n_left = np.arange(1, n)[:, None].astype(float)
    s_left = csum[:-1]
    s_right = total - s_left
    gain = s_left ** 2 / n_left + s_right ** 2 / (n - n_left) - total ** 2 / n
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        valid[: min_leaf - 1] = False
        valid[n - min_leaf:] = False
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))
    pos, j = divmod(flat, len(feats))
    best = gain[pos, j]
    if not np.isfinite(best) or best <= 1e-12 * max(1.0, float(np.dot(yn, yn))):
        return None
    lo, hi = xs[pos, j], xs[pos + 1, j]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return int(feats[j]), float(thr), float(best)


def build_tree(X, y, hp: ForestHyper, rng: np.random.Generator) -> RegressionTree:
    X, y = _check_xy(X, y)
    n, d = X.shape
    k = hp.features_per_split(d)
    min_leaf = max(1, hp.min_samples_leaf)
    feature, threshold, left, right, value, decrease = [], [], [], [], [], []

    def new_node(val):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(val)
        decrease.append(0.0)
        return len(feature) - 1

    root = new_node(float(y.mean()))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if rows.size < 2 * min_leaf or (hp.max_depth is not None and depth >= hp.max_depth):
            continue
        yn = y[rows]
        if np.ptp(yn) == 0.0:
            continue
        feats = np.sort(rng.choice(d, size=k, replace=False)) if k < d else np.arange(d)
        found = _best_split(X[rows], yn, feats, min_leaf)
        if found is None:
            continue
        f, thr, gain = found
        mask = X[rows, f] <= thr
        lrows, rrows = rows[mask], rows[~mask]
        feature[node] = f
        threshold[node] = thr
        decrease[node] = gain
        left[node] = new_node(float(y[lrows].mean()))
        right[node] = new_node(float(y[rrows].mean()))
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                          np.array(value), np.array(decrease), d)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[RegressionTree, ...]
    spec: ModelSpec | None
    hyper: ForestHyper

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features


def train_forest(X, y, spec=None, hp: ForestHyper = ForestHyper()) -> ForestModel:
    """Bagged CART regression trees, one child seed per tree."""
    X, y = _check_xy(X, y)
    spec = _spec_for(X, spec)
    if hp.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    n = X.shape[0]
    trees = []
    for child in np.random.SeedSequence(hp.seed).spawn(hp.n_trees):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, size=n) if hp.bootstrap else np.arange(n)
        trees.append(build_tree(X[rows], y[rows], hp, rng))
    return ForestModel(tuple(trees), spec, hp)


def feature_importance(f: ForestModel) -> dict[str, float]:
    """Variance-decrease importances, normalised per tree, averaged, then renormalised.

    All zeros when no tree ever split.
    """
    per_tree = []
    for tree in f.trees:
        imp = tree.importances()
        s = imp.sum()
        per_tree.append(imp / s if s > 0 else imp)
    mean = np.mean(per_tree, axis=0)
    total = mean.sum()
    if total > 0:
        mean = mean / total
    names = f.spec.features if f.spec else [f"x{i}" for i in range(f.n_features)]
    return dict(zip(names, map(float, mean)))


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------

HELPFULNESS_CEILING = float(np.nextafter(1.0, 0.0))


def _model_dim(model) -> int:
    return model.weights.size if isinstance(model, LinearModel) else model.n_features


def predict_raw(model, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != _model_dim(model):
        raise ValueError(f"model expects {_model_dim(model)} features, got {X.shape[1]}")
    if isinstance(model, LinearModel):
        out = model.bias + X @ model.weights
    elif isinstance(model, ForestModel):
        out = np.mean([t.predict(X) for t in model.trees], axis=0)
    else:
        raise TypeError(f"cannot predict with {type(model).__name__}")
    return out[0] if single else out


def predict(model, x, clamp: bool = True):
    """Predicted helpfulness; with ``clamp`` values are forced into [0, 1).

    Returns ``(prediction, clamped)`` where ``clamped`` flags values that
    were moved. Scalars in, scalars out.
    """
    raw = np.asarray(predict_raw(model, x), dtype=float)
    if not clamp:
        return (float(raw) if raw.ndim == 0 else raw), (False if raw.ndim == 0 else np.zeros(raw.shape, bool))
    out = np.clip(raw, 0.0, HELPFULNESS_CEILING)
    flags = out != raw
    if raw.ndim == 0:
        return float(out), bool(flags)
    return out, flags


def fit_regressor(kind: str, X, y, spec, linear_hp: LinearHyper, forest_hp: ForestHyper):
    if kind == "linear":
        return train_linear(X, y, spec, linear_hp)
    if kind == "forest":
        return train_forest(X, y, spec, forest_hp)
    raise ValueError(f"unknown regressor {kind!r}; expected 'linear' or 'forest'")


# --------------------------------------------------------------------------
# Study
# --------------------------------------------------------------------------

@dataclass
class StudyReport:
    """Correlation study outputs.

    ``correlations``: rows ``{model, regressor, pearson, spearman}``.
    ``coefficients`` / ``importances``: model name -> feature -> value,
    from a fit on the full data. ``matrix``: Pearson matrix over
    :data:`COLUMNS`.
    """

    correlations: list[dict]
    coefficients: dict[str, dict[str, float]]
    intercepts: dict[str, float]
    importances: dict[str, dict[str, float]]
    matrix: np.ndarray
    matrix_columns: tuple[str, ...]
    config: dict
    coefficient_pvalues: dict[str, dict[str, float]] = field(default_factory=dict)
    fold_correlations: list[dict] = field(default_factory=list)

    def correlation(self, model: str, regressor: str) -> dict:
        for row in self.correlations:
            if row["model"] == model and row["regressor"] == regressor:
                return row
        raise KeyError((model, regressor))


def permutation_pvalues(X, y, spec, hp: LinearHyper, n_permutations: int = 1000,
                        seed: int = 0) -> dict[str, float]:
    """Two-sided permutation p-value per coefficient (refit on shuffled targets)."""
    fitted = train_linear(X, y, spec, hp)
    base = fitted.weights
    rng = np.random.default_rng(seed)
    exceed = np.zeros(base.size)
    for _ in range(n_permutations):
        w = train_linear(X, rng.permutation(y), spec, hp).weights
        exceed += np.abs(w) >= np.abs(base)
    p = (exceed + 1.0) / (n_permutations + 1.0)
    return dict(zip(fitted.coefficients, map(float, p)))


def run_study(features: FeatureMatrix, specs: Sequence = (M1, M2, M3),
              regressors: Sequence[str] = ("linear", "forest"), k: int = 5, seed: int = 0,
              linear_hp: LinearHyper = LinearHyper(), forest_hp: ForestHyper = ForestHyper(),
              per_fold_average: bool = False, strict: tuple | None = None,
              n_permutations: int = 0) -> StudyReport:
    """K-fold CV of every (model, regressor) pair plus full-data coefficients.

    Correlations are computed on the pooled out-of-fold predictions, or
    averaged over folds with ``per_fold_average``. ``strict`` is an optional
    ``(corpus, review_bases, FeatureConfig)`` triple: features are then
    rebuilt inside every fold from the training reviews only.
    """
    specs = [get_spec(s) for s in specs]
    n = len(features)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < 2 * k:
        raise ValueError(f"{n} rows cannot give {k} folds of at least 2 samples")
    plan = make_folds(n, k, seed)
    y = features.y
    folds = []
    for f, train, test in plan.splits():
        if strict is not None:
            corpus, bases, cfg = strict
            folds.append((f, test) + fold_features(corpus, bases, train, test, cfg))
        else:
            folds.append((f, test, features.take(train), features.take(test)))

    correlations, fold_rows = [], []
    for spec in specs:
        for kind in regressors:
            oof = np.empty(n)
            per_fold = []
            for f, test, train_fm, test_fm in folds:
                model = fit_regressor(kind, train_fm.X(spec.features), train_fm.y, spec,
                                      linear_hp, forest_hp)
                pred = predict_raw(model, test_fm.X(spec.features))
                oof[test] = pred
                pr, sr = pearson(pred, test_fm.y), spearman(pred, test_fm.y)
                per_fold.append((pr, sr))
                fold_rows.append({"model": spec.name, "regressor": kind, "fold": f,
                                  "pearson": pr, "spearman": sr})
            if per_fold_average:
                pr = float(np.nanmean([p for p, _ in per_fold]))
                sr = float(np.nanmean([s for _, s in per_fold]))
            else:
                pr, sr = pearson(oof, y), spearman(oof, y)
            correlations.append({"model": spec.name, "regressor": kind,
                                 "pearson": pr, "spearman": sr})
            logger.info("%s/%s: pearson=%.4f spearman=%.4f", spec.name, kind, pr, sr)

    coefficients, intercepts, importances, pvalues = {}, {}, {}, {}
    for spec in specs:
        X = features.X(spec.features)
        if "linear" in regressors:
            lm = train_linear(X, y, spec, linear_hp)
            coefficients[spec.name] = lm.coefficients
            intercepts[spec.name] = float(lm.bias)
            if n_permutations:
                pvalues[spec.name] = permutation_pvalues(X, y, spec, linear_hp, n_permutations, seed)
        if "forest" in regressors:
            importances[spec.name] = feature_importance(train_forest(X, y, spec, forest_hp))

    config = {
        "folds": k, "seed": seed, "models": [s.name for s in specs],
        "regressors": list(regressors), "per_fold_average": per_fold_average,
        "strict_folds": strict is not None,
        "linear": asdict(linear_hp),
        "forest": asdict(forest_hp),
    }
    return StudyReport(correlations, coefficients, intercepts, importances,
                       correlation_matrix(features), COLUMNS, config, pvalues, fold_rows)

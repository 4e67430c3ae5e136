"""Helpfulness-weighted matrix factorization and the SVD++ baseline."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus, RawReview
from .features import FeatureMatrix, ReviewFeatures, perceived_helpfulness
from .regress import ForestModel, M3, predict

logger = logging.getLogger(__name__)

RATING_MIN, RATING_MAX = 1.0, 5.0
MIDPOINT = 3.0


class TrainingDiverged(FloatingPointError):
    """A factor became non-finite during SGD."""


# --------------------------------------------------------------------------
# Rating matrix and weights
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RatingMatrix:
    """Sparse observed ratings over fixed user/item universes.

    ``keys`` identify observations (review ids); the SGD visiting order is
    derived from them, so dropping observations never reorders the rest.
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    keys: tuple[str, ...]

    def __post_init__(self):
        for name, dtype in (("users", np.int64), ("items", np.int64), ("ratings", float)):
            arr = np.asarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.ratings.size
        if not (self.users.size == self.items.size == len(self.keys) == n):
            raise ValueError("observation arrays must have equal length")
        if n and (self.users.max() >= len(self.user_ids) or self.items.max() >= len(self.item_ids)):
            raise ValueError("observation index outside the user/item universe")
        pairs = set(zip(self.users.tolist(), self.items.tolist()))
        if len(pairs) != n:
            raise ValueError("at most one observation per (user, item) pair")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.user_ids), len(self.item_ids)

    def __len__(self) -> int:
        return self.ratings.size

    def subset(self, obs) -> "RatingMatrix":
        obs = np.asarray(obs, dtype=np.int64)
        return RatingMatrix(self.user_ids, self.item_ids, self.users[obs], self.items[obs],
                            self.ratings[obs], tuple(self.keys[i] for i in obs))

    @classmethod
    def from_triples(cls, triples: Sequence[tuple], user_ids=None, item_ids=None) -> "RatingMatrix":
        """``(user, item, rating[, key])`` tuples; keys default to ``"user|item"``."""
        user_ids = tuple(user_ids) if user_ids is not None else tuple(sorted({t[0] for t in triples}))
        item_ids = tuple(item_ids) if item_ids is not None else tuple(sorted({t[1] for t in triples}))
        uix = {u: k for k, u in enumerate(user_ids)}
        iix = {i: k for k, i in enumerate(item_ids)}
        keys = tuple(str(t[3]) if len(t) > 3 else f"{t[0]}|{t[1]}" for t in triples)
        return cls(user_ids, item_ids,
                   np.array([uix[t[0]] for t in triples], dtype=np.int64),
                   np.array([iix[t[1]] for t in triples], dtype=np.int64),
                   np.array([float(t[2]) for t in triples]), keys)

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "RatingMatrix":
        """One observation per (user, item); repeated reviews keep the latest.

        "Latest" is the greatest ``(date, review_id)`` so the choice does not
        depend on corpus order.
        """
        best: dict[tuple[str, str], RawReview] = {}
        for r in corpus.reviews:
            key = (r.user_id, r.item_id)
            cur = best.get(key)
            if cur is None or (r.date or "", r.review_id) > (cur.date or "", cur.review_id):
                best[key] = r
        dropped = len(corpus) - len(best)
        if dropped:
            logger.warning("%d repeated (user, item) reviews collapsed to the latest one", dropped)
        triples = [(r.user_id, r.item_id, r.stars, r.review_id)
                   for _, r in sorted(best.items())]
        return cls.from_triples(triples, corpus.users, corpus.items)


@dataclass(frozen=True)
class HelpfulnessWeights:
    """Weight per observation key (review id), each in [0, 1]."""

    weights: Mapping[str, float]

    def __post_init__(self):
        for k, w in self.weights.items():
            if not (0.0 <= w <= 1.0) or math.isnan(w):
                raise ValueError(f"weight for {k!r} is {w}, outside [0, 1]")

    def for_matrix(self, R: RatingMatrix) -> np.ndarray:
        missing = [k for k in R.keys if k not in self.weights]
        if missing:
            raise KeyError(f"{len(missing)} observations lack a weight, e.g. {missing[0]!r}")
        return np.array([self.weights[k] for k in R.keys], dtype=float)

    def to_csv(self, path, R: RatingMatrix, precision: int = 6) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "item_id", "review_id", "weight"])
            for u, i, k in zip(R.users, R.items, R.keys):
                w.writerow([R.user_ids[u], R.item_ids[i], k, f"{self.weights[k]:.{precision}f}"])
        return path

    @classmethod
    def read_csv(cls, path, R: RatingMatrix | None = None) -> "HelpfulnessWeights":
        """Read weights; without a ``review_id`` column keys are resolved through ``R``."""
        by_pair = {}
        if R is not None:
            by_pair = {(R.user_ids[u], R.item_ids[i]): k for u, i, k in zip(R.users, R.items, R.keys)}
        out = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for rec in csv.DictReader(fh):
                key = rec.get("review_id") or by_pair.get((rec["user_id"], rec["item_id"]))
                if key is None:
                    raise KeyError(f"no observation for ({rec['user_id']}, {rec['item_id']})")
                out[key] = float(rec["weight"])
        return cls(out)


def predicted_helpfulness(r: RawReview, features: ReviewFeatures | np.ndarray,
                          m3: ForestModel) -> float:
    """Observed helpfulness when the review has votes, else the M3 forest estimate."""
    if r.total_votes > 0:
        return perceived_helpfulness(r)
    x = features.vector(m3.spec.features if m3.spec else M3.features) \
        if isinstance(features, ReviewFeatures) else np.asarray(features, dtype=float)
    value, _ = predict(m3, x)
    return value


def build_weights(corpus: Corpus, fm: FeatureMatrix, m3: ForestModel) -> tuple[HelpfulnessWeights, float]:
    """Hybrid helpfulness per review id, plus the fraction taken from the model.

    Reviews without any text get weight 1.0.
    """
    if tuple(r.review_id for r in corpus.reviews) != fm.review_ids:
        raise ValueError("feature matrix rows must align with the corpus reviews")
    names = m3.spec.features if m3.spec else M3.features
    X = fm.X(names)
    no_votes = np.array([r.total_votes == 0 for r in corpus.reviews])
    preds = np.zeros(len(corpus))
    if no_votes.any():
        preds[no_votes], _ = predict(m3, X[no_votes])
    weights = {}
    blank = 0
    for pos, r in enumerate(corpus.reviews):
        if not r.text.strip():
            weights[r.review_id] = 1.0
            blank += 1
        elif r.total_votes > 0:
            weights[r.review_id] = perceived_helpfulness(r)
        else:
            weights[r.review_id] = float(preds[pos])
    if blank:
        logger.warning("%d observations without review text received weight 1.0", blank)
    fallback = float(no_votes.mean()) if len(corpus) else 0.0
    return HelpfulnessWeights(weights), fallback


# --------------------------------------------------------------------------
# Factor models
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FactorModel:
    """Latent factor model. Factor matrices are stored row-per-entity (n x K, m x K)."""

    kind: str  # "mf" or "svdpp"
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    user_factors: np.ndarray
    item_factors: np.ndarray
    hyper: dict
    seen_users: np.ndarray
    seen_items: np.ndarray
    biased: bool = False
    global_mean: float = 0.0
    user_bias: np.ndarray | None = None
    item_bias: np.ndarray | None = None
    implicit_factors: np.ndarray | None = None
    user_items: tuple[tuple[int, ...], ...] = ()
    objective_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def K(self) -> int:
        return self.user_factors.shape[1]

    def _index(self):
        idx = getattr(self, "_idx_cache", None)
        if idx is None:
            idx = ({u: k for k, u in enumerate(self.user_ids)},
                   {i: k for k, i in enumerate(self.item_ids)})
            object.__setattr__(self, "_idx_cache", idx)
        return idx

    def implicit_user_vector(self, u: int) -> np.ndarray:
        p = self.user_factors[u]
        if self.implicit_factors is None or not self.user_items or not self.user_items[u]:
            return p
        nu = list(self.user_items[u])
        return p + self.implicit_factors[nu].sum(axis=0) / math.sqrt(len(nu))

    def fallback(self) -> float:
        return self.global_mean if (self.kind == "svdpp" or self.biased) else MIDPOINT

    def score_indices(self, u: int, items: np.ndarray) -> np.ndarray:
        """Unclamped estimates of user index ``u`` for item indices ``items``."""
        vec = self.implicit_user_vector(u) if self.kind == "svdpp" else self.user_factors[u]
        out = self.item_factors[items] @ vec
        if self.kind == "svdpp" or self.biased:
            out = out + self.global_mean + self.user_bias[u] + self.item_bias[items]
        return out


def estimate_rating(m: FactorModel, user, item, clamp: bool = True) -> tuple[float, bool]:
    """Estimated rating and whether the cold-start fallback was used.

    ``user`` / ``item`` are ids; unknown or never-trained entities fall back
    to the global mean (SVD++ and biased MF) or the scale midpoint.
    """
    uix, iix = m._index()
    u, i = uix.get(user), iix.get(item)
    if u is None or i is None or not m.seen_users[u] or not m.seen_items[i]:
        return m.fallback(), True
    value = float(m.score_indices(u, np.array([i]))[0])
    if clamp:
        value = min(RATING_MAX, max(RATING_MIN, value))
    return value, False


def predict_matrix(m: FactorModel, R: RatingMatrix, clamp: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Estimates for every observation of ``R`` (same universes as ``m``)."""
    if R.user_ids != m.user_ids or R.item_ids != m.item_ids:
        raise ValueError("rating matrix universes differ from the model's")
    out = np.empty(len(R))
    cold = np.zeros(len(R), dtype=bool)
    for k, (u, i) in enumerate(zip(R.users, R.items)):
        if not m.seen_users[u] or not m.seen_items[i]:
            out[k], cold[k] = m.fallback(), True
        else:
            out[k] = m.score_indices(u, np.array([i]))[0]
    if clamp:
        np.clip(out, RATING_MIN, RATING_MAX, out=out)
    return out, cold


def top_n(m: FactorModel, user, candidates, N: int) -> list:
    """Candidates ranked by unclamped estimate, ties by ascending item id."""
    if N < 1:
        raise ValueError("N must be >= 1")
    candidates = list(candidates)
    if not candidates:
        raise ValueError("empty candidate set")
    scores = {c: estimate_rating(m, user, c, clamp=False)[0] for c in candidates}
    return sorted(candidates, key=lambda c: (-scores[c], c))[:N]


# --------------------------------------------------------------------------
# SGD training
# --------------------------------------------------------------------------

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _key_hashes(keys: Sequence[str], seed: int) -> np.ndarray:
    return np.array([int.from_bytes(hashlib.blake2b(f"{seed}\x1f{k}".encode(), digest_size=8).digest(), "little")
                     for k in keys], dtype=np.uint64)


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return z ^ (z >> np.uint64(31))


def epoch_order(hashes: np.ndarray, epoch: int) -> np.ndarray:
    """Visiting order for one epoch; depends only on each observation's own key."""
    with np.errstate(over="ignore"):
        mixed = _splitmix(hashes ^ _splitmix(np.array([epoch], dtype=np.uint64))[0])
    return np.lexsort((hashes, mixed))


def _init_factors(n: int, m: int, K: int, seed: int, init_std: float):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, init_std, (n, K)), rng.normal(0.0, init_std, (m, K))


def mf_objective(R: RatingMatrix, weights, U, I, lam, bu=None, bi=None, mu=0.0) -> float:
    """Weighted squared error plus the Frobenius penalty (and bias penalty if biased)."""
    pred = np.einsum("ij,ij->i", U[R.users], I[R.items])
    if bu is not None:
        pred = pred + mu + bu[R.users] + bi[R.items]
    err = R.ratings - pred
    w = np.ones_like(err) if weights is None else weights
    reg = np.sum(U * U) + np.sum(I * I)
    if bu is not None:
        reg += np.sum(bu * bu) + np.sum(bi * bi)
    return float(np.sum(w * err * err) + lam * reg)


def _check_finite(*arrays, epoch):
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise TrainingDiverged(f"non-finite factor after epoch {epoch}; lower the learning rate")


def _sgd_mf(R: RatingMatrix, weights, K, lam, lr, epochs, seed, biased, init_std, track):
    if len(R) == 0:
        raise ValueError("no observations to train on")
    if K < 1:
        raise ValueError("K must be >= 1")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    n, m = R.shape
    U, I = _init_factors(n, m, K, seed, init_std)
    mu = float(R.ratings.mean()) if biased else 0.0
    bu = np.zeros(n) if biased else None
    bi = np.zeros(m) if biased else None
    hashes = _key_hashes(R.keys, seed)
    users, items, ratings = R.users, R.items, R.ratings
    history = []
    # overflow is caught by _check_finite after each epoch
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            for k in epoch_order(hashes, epoch):
                if weights is not None and weights[k] == 0.0:
                    continue
                u, i = users[k], items[k]
                pu, qi = U[u], I[i]
                pred = pu @ qi
                if biased:
                    pred += mu + bu[u] + bi[i]
                e = ratings[k] - pred
                if weights is not None:
                    e = weights[k] * e
                if biased:
                    bu[u] += lr * (e - lam * bu[u])
                    bi[i] += lr * (e - lam * bi[i])
                pu_old = pu.copy()
                pu += lr * (e * qi - lam * pu)
                qi += lr * (e * pu_old - lam * qi)
            _check_finite(U, I, bu, bi, epoch=epoch)
            if track:
                history.append(mf_objective(R, weights, U, I, lam, bu, bi, mu))
    seen_u = np.zeros(n, dtype=bool)
    seen_i = np.zeros(m, dtype=bool)
    active = np.ones(len(R), dtype=bool) if weights is None else weights > 0
    seen_u[users[active]] = True
    seen_i[items[active]] = True
    return U, I, mu, bu, bi, seen_u, seen_i, tuple(history)


def train_weighted_mf(R: RatingMatrix, W, K: int = 50, lam: float = 0.02, lr: float = 0.01,
                      epochs: int = 50, seed: int = 0, *, biased: bool = False,
                      init_std: float = 0.1, track_objective: bool = False) -> FactorModel:
    """SGD on ``sum w (r - u.i)^2 + lam (|U|^2 + |I|^2)``.

    ``W`` is a :class:`HelpfulnessWeights`, an array aligned with the
    observations of ``R``, or ``None`` for the unweighted objective.
    Zero-weight observations are skipped entirely.
    """
    weights = None
    if W is not None:
        weights = W.for_matrix(R) if isinstance(W, HelpfulnessWeights) else np.asarray(W, dtype=float)
        if weights.shape != R.ratings.shape:
            raise ValueError("weights must align with the observations")
        if np.any((weights < 0) | (weights > 1)) or np.any(np.isnan(weights)):
            raise ValueError("weights must lie in [0, 1]")
    U, I, mu, bu, bi, su, si, hist = _sgd_mf(R, weights, K, lam, lr, epochs, seed, biased, init_std,
                                             track_objective)
    hyper = {"K": K, "lambda": lam, "lr": lr, "epochs": epochs, "seed": seed,
             "biased": biased, "init_std": init_std, "weighted": weights is not None}
    return FactorModel("mf", R.user_ids, R.item_ids, U, I, hyper, su, si, biased, mu, bu, bi,
                       objective_history=hist)


def train_mf(R: RatingMatrix, K: int = 50, lam: float = 0.02, lr: float = 0.01,
             epochs: int = 50, seed: int = 0, **kw) -> FactorModel:
    """Unweighted matrix factorization."""
    return train_weighted_mf(R, None, K, lam, lr, epochs, seed, **kw)


def train_svdpp(R: RatingMatrix, K: int = 50, lam: float = 0.02, lr: float = 0.01,
                epochs: int = 50, seed: int = 0, *, init_std: float = 0.1,
                track_objective: bool = False) -> FactorModel:
    """SVD++: biased MF plus implicit item factors over each user's rated items.

    ``r = mu + b_u + b_i + q_i . (p_u + |N(u)|^-1/2 sum_j y_j)`` trained by
    per-rating SGD with the standard update rules (all ``y_j`` of the user
    are updated on every rating).
    """
    if len(R) == 0:
        raise ValueError("no observations to train on")
    if K < 1:
        raise ValueError("K must be >= 1")
    n, m = R.shape
    P, Q = _init_factors(n, m, K, seed, init_std)
    Y = np.random.default_rng([seed, 1]).normal(0.0, init_std, (m, K))
    mu = float(R.ratings.mean())
    bu, bi = np.zeros(n), np.zeros(m)
    rated: list[list[int]] = [[] for _ in range(n)]
    for u, i in sorted(zip(R.users.tolist(), R.items.tolist())):
        rated[u].append(i)
    rated_idx = [np.array(r, dtype=np.int64) for r in rated]
    norms = [1.0 / math.sqrt(len(r)) if r else 0.0 for r in rated]
    hashes = _key_hashes(R.keys, seed)
    history = []
    # overflow is caught by _check_finite after each epoch
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            for k in epoch_order(hashes, epoch):
                u, i, r = R.users[k], R.items[k], R.ratings[k]
                nu, norm = rated_idx[u], norms[u]
                pu, qi = P[u], Q[i]
                z = pu + norm * Y[nu].sum(axis=0)
                e = r - (mu + bu[u] + bi[i] + qi @ z)
                bu[u] += lr * (e - lam * bu[u])
                bi[i] += lr * (e - lam * bi[i])
                qi_old = qi.copy()
                qi += lr * (e * z - lam * qi)
                pu += lr * (e * qi_old - lam * pu)
                Y[nu] += lr * (e * norm * qi_old - lam * Y[nu])
            _check_finite(P, Q, Y, bu, bi, epoch=epoch)
            if track_objective:
                history.append(_svdpp_objective(R, P, Q, Y, bu, bi, mu, rated_idx, norms, lam))
    seen_u = np.zeros(n, dtype=bool)
    seen_i = np.zeros(m, dtype=bool)
    seen_u[R.users] = True
    seen_i[R.items] = True
    hyper = {"K": K, "lambda": lam, "lr": lr, "epochs": epochs, "seed": seed, "init_std": init_std}
    return FactorModel("svdpp", R.user_ids, R.item_ids, P, Q, hyper, seen_u, seen_i, True, mu,
                       bu, bi, Y, tuple(tuple(r) for r in rated), tuple(history))


def _svdpp_objective(R, P, Q, Y, bu, bi, mu, rated_idx, norms, lam) -> float:
    Z = P.copy()
    for u, nu in enumerate(rated_idx):
        if nu.size:
            Z[u] += norms[u] * Y[nu].sum(axis=0)
    pred = mu + bu[R.users] + bi[R.items] + np.einsum("ij,ij->i", Z[R.users], Q[R.items])
    err = R.ratings - pred
    reg = sum(float(np.sum(a * a)) for a in (P, Q, Y, bu, bi))
    return float(np.sum(err * err) + lam * reg)


def rmse(model: FactorModel, R: RatingMatrix, clamp: bool = False) -> float:
    pred, _ = predict_matrix(model, R, clamp)
    return float(np.sqrt(np.mean((R.ratings - pred) ** 2)))


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def _write_block(path: Path, ids, arr) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for ident, row in zip(ids, np.atleast_2d(arr) if arr.ndim > 1 else arr[:, None]):
            w.writerow([ident] + [repr(float(v)) for v in row])


def _read_block(path: Path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.reader(fh):
            ids.append(rec[0])
            rows.append([float(v) for v in rec[1:]])
    return ids, np.array(rows, dtype=float)


def save_model(m: FactorModel, directory) -> Path:
    """JSON header plus one CSV block per factor/bias array (lossless floats)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": m.kind, "K": m.K, "n_users": len(m.user_ids), "n_items": len(m.item_ids),
        "biased": m.biased, "global_mean": repr(float(m.global_mean)), "hyper": m.hyper,
        "seen_users": m.seen_users.astype(int).tolist(), "seen_items": m.seen_items.astype(int).tolist(),
        "user_items": [list(map(int, r)) for r in m.user_items],
        "objective_history": [repr(float(v)) for v in m.objective_history],
    }
    (d / "model.json").write_text(json.dumps(header, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _write_block(d / "user_factors.csv", m.user_ids, m.user_factors)
    _write_block(d / "item_factors.csv", m.item_ids, m.item_factors)
    if m.user_bias is not None:
        _write_block(d / "user_bias.csv", m.user_ids, m.user_bias)
        _write_block(d / "item_bias.csv", m.item_ids, m.item_bias)
    if m.implicit_factors is not None:
        _write_block(d / "implicit_factors.csv", m.item_ids, m.implicit_factors)
    return d


def load_model(directory) -> FactorModel:
    d = Path(directory)
    h = json.loads((d / "model.json").read_text(encoding="utf-8"))
    uids, U = _read_block(d / "user_factors.csv")
    iids, I = _read_block(d / "item_factors.csv")
    bu = bi = Y = None
    if (d / "user_bias.csv").exists():
        bu = _read_block(d / "user_bias.csv")[1][:, 0]
        bi = _read_block(d / "item_bias.csv")[1][:, 0]
    if (d / "implicit_factors.csv").exists():
        Y = _read_block(d / "implicit_factors.csv")[1]
    return FactorModel(h["kind"], tuple(uids), tuple(iids), U.reshape(len(uids), -1),
                       I.reshape(len(iids), -1), h["hyper"],
                       np.array(h["seen_users"], dtype=bool), np.array(h["seen_items"], dtype=bool),
                       h["biased"], float(h["global_mean"]), bu, bi, Y,
                       tuple(tuple(r) for r in h["user_items"]),
                       tuple(float(v) for v in h["objective_history"]))

"""Dependent variable and the eleven review-level independent variables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, RawReview
from .text import TfIdfIndex, TokenList, build_tfidf, default_scorers, mean_tfidf, polarity, tokenize

FEATURES = ("rat", "len", "ugr", "pol", "coh",
            "d_len_ru", "d_len_ri", "d_rat_ru", "d_rat_ri", "d_pol_ru", "d_pol_ri")
TARGET = "helpfulness"
COLUMNS = FEATURES + (TARGET,)
ID_COLUMNS = ("review_id", "user_id", "item_id")

PRETTY = {
    "rat": "RAT", "len": "LEN", "ugr": "UGR", "pol": "POL", "coh": "COH",
    "d_len_ru": "dLEN_ru", "d_len_ri": "dLEN_ri", "d_rat_ru": "dRAT_ru",
    "d_rat_ri": "dRAT_ri", "d_pol_ru": "dPOL_ru", "d_pol_ri": "dPOL_ri",
    "helpfulness": "Helpfulness",
}


def squash(x: float, base: float = math.e) -> float:
    """``log(x+1) / (1 + log(x+1))``: maps [0, inf) onto [0, 1), strictly increasing."""
    if x < 0 or math.isnan(x):
        raise ValueError(f"squash is defined for x >= 0, got {x}")
    lg = math.log1p(x) if base == math.e else math.log1p(x) / math.log(base)
    return lg / (1.0 + lg)


def perceived_helpfulness(r: RawReview, base: float = math.e) -> float:
    return squash(r.votes_useful + r.votes_funny + r.votes_cool, base)


@dataclass(frozen=True)
class FeatureConfig:
    log_base: float = math.e
    leave_one_out: bool = False
    idf_smooth: bool = False
    idf_universe: str = "corpus"

    @classmethod
    def from_names(cls, log_base="e", **kw) -> "FeatureConfig":
        base = {"e": math.e, "ln": math.e, "10": 10.0}.get(str(log_base))
        if base is None:
            raise ValueError(f"log base must be 'e' or '10', got {log_base!r}")
        return cls(log_base=base, **kw)


@dataclass(frozen=True)
class ReviewBase:
    """Per-review text measurements that do not depend on other reviews."""

    tokens: TokenList
    polarity: float

    @property
    def raw_count(self) -> int:
        return self.tokens.raw_count


def review_bases(corpus: Corpus, scorers=None, stopwords=None) -> list[ReviewBase]:
    if scorers is None:
        scorers = default_scorers()
    return [ReviewBase(tokenize(r.text, stopwords), polarity(r.text, scorers))
            for r in corpus.reviews]


@dataclass(frozen=True)
class GroupAggregate:
    """Means of normalized LEN/RAT/POL over one user's or one item's reviews.

    Sums are kept so a leave-one-out mean can be derived for any member.
    ``constant`` lists the attributes on which every member agrees; their
    mean is that common value exactly (a floating-point ``sum / n`` need not
    be), which keeps deviations of identical reviews at exactly zero.
    """

    key: str
    n: int
    sum_len: float
    sum_rat: float
    sum_pol: float
    constant: dict = field(default_factory=dict)

    def mean(self, attr: str) -> float:
        if attr in self.constant:
            return self.constant[attr]
        return getattr(self, "sum_" + attr) / self.n

    @property
    def mean_len(self) -> float:
        return self.mean("len")

    @property
    def mean_rat(self) -> float:
        return self.mean("rat")

    @property
    def mean_pol(self) -> float:
        return self.mean("pol")


UserAggregate = GroupAggregate
ItemAggregate = GroupAggregate


def _aggregate(groups: dict[str, Sequence[int]], lens, rats, pols) -> dict[str, GroupAggregate]:
    out = {}
    for key in sorted(groups):
        pos = list(groups[key])
        if not pos:
            raise ValueError(f"group {key!r} has no reviews")
        constant = {}
        for attr, vals in (("len", lens), ("rat", rats), ("pol", pols)):
            if all(vals[p] == vals[pos[0]] for p in pos):
                constant[attr] = vals[pos[0]]
        # math.fsum makes the mean independent of review order
        out[key] = GroupAggregate(key, len(pos),
                                  math.fsum(lens[p] for p in pos),
                                  math.fsum(rats[p] for p in pos),
                                  math.fsum(pols[p] for p in pos), constant)
    return out


def compute_aggregates(c: Corpus, lens: Sequence[float], rats: Sequence[float],
                       pols: Sequence[float]):
    """Per-user and per-item aggregates of the normalized LEN, RAT, POL values."""
    if not (len(lens) == len(rats) == len(pols) == len(c)):
        raise ValueError("value vectors must align with corpus reviews")
    return (_aggregate(c.by_user, lens, rats, pols),
            _aggregate(c.by_item, lens, rats, pols))


def _group_mean(agg: GroupAggregate | None, attr: str, own: float, leave_one_out: bool) -> float:
    if agg is None:
        return own
    if attr in agg.constant:
        return agg.constant[attr]
    if leave_one_out:
        if agg.n <= 1:
            return own
        return (getattr(agg, "sum_" + attr) - own) / (agg.n - 1)
    return agg.mean(attr)


@dataclass(frozen=True)
class ReviewFeatures:
    rat: float
    len: float
    ugr: float
    pol: float
    coh: float
    d_len_ru: float
    d_len_ri: float
    d_rat_ru: float
    d_rat_ri: float
    d_pol_ru: float
    d_pol_ri: float
    helpfulness: float

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in COLUMNS)

    def vector(self, names: Sequence[str] = FEATURES) -> np.ndarray:
        return np.array([getattr(self, n) for n in names], dtype=float)


def _base_values(r: RawReview, base: ReviewBase, index: TfIdfIndex, cfg: FeatureConfig):
    f = cfg.log_base
    rat = squash(r.stars, f)
    ln = squash(base.raw_count, f)
    item = r.item_id if index.universe == "item" else None
    ugr = squash(mean_tfidf(base.tokens, index, item), f)
    pol = squash(base.polarity, f)
    return rat, ln, ugr, pol


def compute_feature_vector(r: RawReview, base: ReviewBase, index: TfIdfIndex,
                           aggs, cfg: FeatureConfig = FeatureConfig(),
                           missing: str = "error") -> ReviewFeatures:
    """Feature vector of a single review.

    ``aggs`` is the ``(user_aggregates, item_aggregates)`` pair. With
    ``missing="self"`` a user or item absent from the aggregates is compared
    against the review itself (zero deviation) instead of raising.
    """
    user_aggs, item_aggs = aggs
    ua, ia = user_aggs.get(r.user_id), item_aggs.get(r.item_id)
    if missing == "error" and (ua is None or ia is None):
        raise KeyError(f"no aggregate for user {r.user_id!r} or item {r.item_id!r}")
    f = cfg.log_base
    rat, ln, ugr, pol = _base_values(r, base, index, cfg)
    loo = cfg.leave_one_out

    def dev(value, agg, attr):
        return squash(abs(value - _group_mean(agg, attr, value, loo)), f)

    coh = squash(1.0 - abs(rat - pol), f)
    if rat != pol:
        # gaps below float spacing near 1 would otherwise round up to the maximum
        coh = min(coh, math.nextafter(squash(1.0, f), 0.0))
    return ReviewFeatures(
        rat=rat, len=ln, ugr=ugr, pol=pol, coh=coh,
        d_len_ru=dev(ln, ua, "len"), d_len_ri=dev(ln, ia, "len"),
        d_rat_ru=dev(rat, ua, "rat"), d_rat_ri=dev(rat, ia, "rat"),
        d_pol_ru=dev(pol, ua, "pol"), d_pol_ri=dev(pol, ia, "pol"),
        helpfulness=perceived_helpfulness(r, f),
    )


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature rows aligned with review/user/item ids, columns in :data:`COLUMNS`."""

    review_ids: tuple[str, ...]
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1, len(COLUMNS))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not (len(self.review_ids) == len(self.user_ids) == len(self.item_ids) == v.shape[0]):
            raise ValueError("ids and values must have the same number of rows")

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, COLUMNS.index(name)]

    def X(self, names: Sequence[str] = FEATURES) -> np.ndarray:
        return self.values[:, [COLUMNS.index(n) for n in names]]

    @property
    def y(self) -> np.ndarray:
        return self.column(TARGET)

    def row(self, i: int) -> ReviewFeatures:
        return ReviewFeatures(*map(float, self.values[i]))

    def take(self, rows) -> "FeatureMatrix":
        rows = list(rows)
        return FeatureMatrix(tuple(self.review_ids[i] for i in rows),
                             tuple(self.user_ids[i] for i in rows),
                             tuple(self.item_ids[i] for i in rows),
                             self.values[rows])

    def records(self, precision: int | None = None) -> list[dict]:
        out = []
        for i in range(len(self)):
            rec = {"review_id": self.review_ids[i], "user_id": self.user_ids[i],
                   "item_id": self.item_ids[i]}
            for j, c in enumerate(COLUMNS):
                v = float(self.values[i, j])
                rec[c] = round(v, precision) if precision is not None else v
            out.append(rec)
        return out

    def to_csv(self, path, precision: int = 6) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ID_COLUMNS + COLUMNS)
            for rec in self.records():
                w.writerow([rec[c] for c in ID_COLUMNS] + [f"{rec[c]:.{precision}f}" for c in COLUMNS])
        return path

    def to_json(self, path, precision: int = 6) -> Path:
        path = Path(path)
        doc = {"columns": list(ID_COLUMNS + COLUMNS), "rows": self.records(precision)}
        path.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read_csv(cls, path) -> "FeatureMatrix":
        rids, uids, iids, vals = [], [], [], []
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(ID_COLUMNS + COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"feature CSV lacks columns: {sorted(missing)}")
            for rec in reader:
                rids.append(rec["review_id"])
                uids.append(rec["user_id"])
                iids.append(rec["item_id"])
                vals.append([float(rec[c]) for c in COLUMNS])
        return cls(tuple(rids), tuple(uids), tuple(iids), np.array(vals, dtype=float))


def features_for(reviews: Sequence[RawReview], bases: Sequence[ReviewBase],
                 index: TfIdfIndex, aggs, cfg: FeatureConfig,
                 missing: str = "error") -> FeatureMatrix:
    rows = [compute_feature_vector(r, b, index, aggs, cfg, missing).as_tuple()
            for r, b in zip(reviews, bases)]
    return FeatureMatrix(tuple(r.review_id for r in reviews),
                         tuple(r.user_id for r in reviews),
                         tuple(r.item_id for r in reviews),
                         np.array(rows, dtype=float).reshape(-1, len(COLUMNS)))


def compute_features(corpus: Corpus, cfg: FeatureConfig = FeatureConfig(),
                     scorers=None, bases: Sequence[ReviewBase] | None = None,
                     stopwords=None) -> FeatureMatrix:
    """Full feature matrix of ``corpus`` (index and aggregates built on it)."""
    if bases is None:
        bases = review_bases(corpus, scorers, stopwords)
    index = build_tfidf(corpus, [b.tokens for b in bases],
                        smooth=cfg.idf_smooth, universe=cfg.idf_universe)
    base_vals = [_base_values(r, b, index, cfg) for r, b in zip(corpus.reviews, bases)]
    rats = [v[0] for v in base_vals]
    lens = [v[1] for v in base_vals]
    pols = [v[3] for v in base_vals]
    aggs = compute_aggregates(corpus, lens, rats, pols)
    return features_for(corpus.reviews, bases, index, aggs, cfg)


def fold_features(corpus: Corpus, bases: Sequence[ReviewBase], train: Sequence[int],
                  test: Sequence[int], cfg: FeatureConfig = FeatureConfig()):
    """Strict per-fold features: index and aggregates come from ``train`` only.

    Test reviews whose user or item never appears in the training part get a
    zero deviation for that side.
    """
    train_corpus = corpus.subset(train)
    train_bases = [bases[p] for p in train]
    index = build_tfidf(train_corpus, [b.tokens for b in train_bases],
                        smooth=cfg.idf_smooth, universe=cfg.idf_universe)
    base_vals = [_base_values(r, b, index, cfg) for r, b in zip(train_corpus.reviews, train_bases)]
    aggs = compute_aggregates(train_corpus, [v[1] for v in base_vals],
                              [v[0] for v in base_vals], [v[3] for v in base_vals])
    train_fm = features_for(train_corpus.reviews, train_bases, index, aggs, cfg)
    test_reviews = [corpus.reviews[p] for p in test]
    test_fm = features_for(test_reviews, [bases[p] for p in test], index, aggs, cfg, missing="self")
    return train_fm, test_fm

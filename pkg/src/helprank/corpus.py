"""Review ingestion, category/user filtering and descriptive statistics."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

HOTEL_TAGS = frozenset({
    "Hotels", "Mountain Huts", "Residences", "Rest Stops",
    "Bed & Breakfast", "Hostels", "Resorts",
})

FOOD_TAGS = frozenset({
    "American", "Argentine", "Asian Fusion", "Australian", "Austrian",
    "Bangladeshi", "Belgian", "Brasseries", "Brazilian", "British",
    "Cambodian", "Cantonese", "Catalan", "Chinese", "Conveyor Belt Sushi",
    "Cuban", "Czech", "Delis", "Empanadas", "Falafel", "Filipino",
    "Fish & Chips", "French", "German", "Greek", "Hawaiian",
    "Himalayan/Nepalese", "Hot Pot", "Hungarian", "Iberian", "Indian",
    "Indonesian", "Irish", "Italian", "Japanese", "Japanese Curry", "Korean",
    "Latin American", "Lebanese", "Malaysian", "Mediterranean", "Mexican",
    "Middle Eastern", "Modern European", "Mongolian", "New Mexican Cuisine",
    "Noodles", "Pakistani", "Pan Asian", "Persian/Iranian", "Peruvian",
    "Piadina", "Pizza", "Poke", "Polish", "Polynesian", "Portuguese", "Ramen",
    "Russian", "Salad", "Scandinavian", "Scottish", "Seafood", "Shanghainese",
    "Sicilian", "Singaporean", "Soup", "Southern", "Spanish", "Sri Lankan",
    "Steakhouses", "Sushi Bars", "Syrian", "Tacos", "Tapas Bars",
    "Tapas/Small Plates", "Teppanyaki", "Tex-Mex", "Thai", "Turkish",
    "Ukrainian", "Vegan", "Vegetarian", "Vietnamese", "Wraps",
})

TAG_PRESETS = {"hotel": HOTEL_TAGS, "food": FOOD_TAGS}

REVIEW_COLUMNS = ("review_id", "user_id", "business_id", "stars", "text",
                  "useful", "funny", "cool", "date")


class CorpusError(ValueError):
    """Raised for unreadable inputs or invalid filter configuration."""


class MalformedRecordError(CorpusError):
    def __init__(self, path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class RawReview:
    review_id: str
    user_id: str
    item_id: str
    stars: int
    text: str
    votes_useful: int = 0
    votes_funny: int = 0
    votes_cool: int = 0
    date: str | None = None

    def __post_init__(self):
        if self.stars not in (1, 2, 3, 4, 5):
            raise ValueError(f"stars must be an integer in 1..5, got {self.stars!r}")
        for name in ("votes_useful", "votes_funny", "votes_cool"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total_votes(self) -> int:
        return self.votes_useful + self.votes_funny + self.votes_cool


@dataclass(frozen=True)
class RawItem:
    item_id: str
    category_tags: frozenset = frozenset()


@dataclass(frozen=True)
class Corpus:
    """Immutable, indexed collection of reviews.

    ``users`` and ``items`` are sorted tuples so that every downstream
    enumeration is deterministic. ``by_user`` / ``by_item`` map an id to the
    positions of its reviews in ``reviews``.
    """

    reviews: tuple[RawReview, ...]
    users: tuple[str, ...] = field(init=False)
    items: tuple[str, ...] = field(init=False)
    by_user: dict[str, tuple[int, ...]] = field(init=False, repr=False)
    by_item: dict[str, tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        reviews = tuple(self.reviews)
        object.__setattr__(self, "reviews", reviews)
        by_user: dict[str, list[int]] = {}
        by_item: dict[str, list[int]] = {}
        seen = set()
        for pos, r in enumerate(reviews):
            if r.review_id in seen:
                raise CorpusError(f"duplicate review_id {r.review_id!r}")
            seen.add(r.review_id)
            by_user.setdefault(r.user_id, []).append(pos)
            by_item.setdefault(r.item_id, []).append(pos)
        object.__setattr__(self, "users", tuple(sorted(by_user)))
        object.__setattr__(self, "items", tuple(sorted(by_item)))
        object.__setattr__(self, "by_user", {k: tuple(v) for k, v in by_user.items()})
        object.__setattr__(self, "by_item", {k: tuple(v) for k, v in by_item.items()})

    def __len__(self) -> int:
        return len(self.reviews)

    def __iter__(self) -> Iterator[RawReview]:
        return iter(self.reviews)

    def subset(self, positions: Iterable[int]) -> "Corpus":
        return Corpus(tuple(self.reviews[p] for p in positions))


# --------------------------------------------------------------------------
# Loading
# --------------------------------------------------------------------------

def _as_int(value, name: str) -> int:
    if value is None or value == "":
        return 0
    if isinstance(value, bool):
        raise ValueError(f"{name}: boolean is not a count")
    f = float(value)
    if not f.is_integer():
        raise ValueError(f"{name}: {value!r} is not an integer")
    return int(f)


def _review_from_mapping(rec: dict) -> RawReview:
    votes = rec.get("votes") if isinstance(rec.get("votes"), dict) else {}
    item_id = rec.get("business_id", rec.get("item_id"))
    missing = [k for k, v in (("review_id", rec.get("review_id")),
                              ("user_id", rec.get("user_id")),
                              ("business_id", item_id),
                              ("stars", rec.get("stars"))) if v in (None, "")]
    if missing:
        raise ValueError(f"missing field(s): {', '.join(missing)}")
    text = rec.get("text") or ""
    if not isinstance(text, str):
        raise ValueError("text is not a string")
    return RawReview(
        review_id=str(rec["review_id"]),
        user_id=str(rec["user_id"]),
        item_id=str(item_id),
        stars=_as_int(rec["stars"], "stars"),
        text=text,
        votes_useful=_as_int(rec.get("useful", votes.get("useful")), "useful"),
        votes_funny=_as_int(rec.get("funny", votes.get("funny")), "funny"),
        votes_cool=_as_int(rec.get("cool", votes.get("cool")), "cool"),
        date=rec.get("date") or None,
    )


def _iter_records(path: Path, fmt: str) -> Iterator[tuple[int, dict | Exception]]:
    """Yield ``(line_number, record_or_error)`` pairs."""
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "json-lines":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    if not isinstance(rec, dict):
                        raise ValueError("record is not a JSON object")
                    yield lineno, rec
                except ValueError as exc:
                    yield lineno, exc
        elif fmt == "csv":
            reader = csv.DictReader(fh)
            for rec in reader:
                # header is line 1; multi-line text fields make line_num the end line
                if None in rec:
                    yield reader.line_num, ValueError("too many columns")
                else:
                    yield reader.line_num, rec
        else:
            raise CorpusError(f"unknown format {fmt!r}; expected 'json-lines' or 'csv'")


def _guess_format(path: Path) -> str:
    return "csv" if path.suffix.lower() == ".csv" else "json-lines"


def load_reviews(path, fmt: str | None = None, on_error: str = "skip") -> tuple[list[RawReview], list[MalformedRecordError]]:
    """Parse a review file; returns the valid reviews and the skipped-record errors."""
    if on_error not in ("skip", "fail"):
        raise CorpusError(f"on_error must be 'skip' or 'fail', got {on_error!r}")
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"cannot read review file {path}")
    fmt = fmt or _guess_format(path)
    reviews, skipped, seen = [], [], set()
    for lineno, rec in _iter_records(path, fmt):
        try:
            if isinstance(rec, Exception):
                raise rec
            review = _review_from_mapping(rec)
            if review.review_id in seen:
                raise ValueError(f"duplicate review_id {review.review_id!r}")
        except (ValueError, TypeError) as exc:
            err = MalformedRecordError(path, lineno, str(exc))
            if on_error == "fail":
                raise err from exc
            logger.warning("skipping malformed record %s", err)
            skipped.append(err)
            continue
        seen.add(review.review_id)
        reviews.append(review)
    return reviews, skipped


def load_corpus(review_path, item_path=None, fmt: str | None = None,
                on_error: str = "skip") -> Corpus:
    """Load a review file (Yelp JSON-lines or CSV) into a :class:`Corpus`.

    ``item_path`` is accepted for symmetry with :func:`load_items`; items are
    needed only for filtering and are not attached to the corpus.
    """
    reviews, _ = load_reviews(review_path, fmt, on_error)
    if item_path is not None and not Path(item_path).is_file():
        raise CorpusError(f"cannot read item file {item_path}")
    return Corpus(tuple(reviews))


def _parse_tags(raw) -> frozenset:
    if raw is None:
        return frozenset()
    if isinstance(raw, str):
        parts = raw.replace(";", ",").split(",")
    else:
        parts = list(raw)
    return frozenset(p.strip() for p in parts if p and p.strip())


def load_items(path, fmt: str | None = None, on_error: str = "skip") -> dict[str, RawItem]:
    """Load businesses/items with their category tags.

    Yelp stores ``categories`` either as a list or as a comma-separated
    string depending on the dataset release; both are accepted.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"cannot read item file {path}")
    fmt = fmt or _guess_format(path)
    items: dict[str, RawItem] = {}
    for lineno, rec in _iter_records(path, fmt):
        try:
            if isinstance(rec, Exception):
                raise rec
            item_id = rec.get("business_id", rec.get("item_id"))
            if item_id in (None, ""):
                raise ValueError("missing business_id")
            tags = _parse_tags(rec.get("categories", rec.get("category_tags")))
        except ValueError as exc:
            err = MalformedRecordError(path, lineno, str(exc))
            if on_error == "fail":
                raise err from exc
            logger.warning("skipping malformed item %s", err)
            continue
        items[str(item_id)] = RawItem(str(item_id), tags)
    return items


def save_corpus(corpus: Corpus, path, fmt: str | None = None) -> Path:
    """Write reviews back out in the Yelp review schema."""
    path = Path(path)
    fmt = fmt or _guess_format(path)
    rows = [{
        "review_id": r.review_id, "user_id": r.user_id, "business_id": r.item_id,
        "stars": r.stars, "text": r.text, "useful": r.votes_useful,
        "funny": r.votes_funny, "cool": r.votes_cool, "date": r.date or "",
    } for r in corpus.reviews]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            writer = csv.DictWriter(fh, fieldnames=REVIEW_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        else:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# Filtering
# --------------------------------------------------------------------------

def filter_corpus(c: Corpus, items, tags, min_reviews_per_user: int = 10) -> Corpus:
    """Keep reviews of tagged items, then drop users below the review threshold.

    The two passes run once each, in that order. Items that end up with no
    review disappear from the result because the corpus only knows items
    through their reviews.
    """
    tags = frozenset(tags)
    if not tags:
        raise CorpusError("empty tag set: nothing would survive the category filter")
    if min_reviews_per_user < 1:
        raise CorpusError("min_reviews_per_user must be >= 1")
    if isinstance(items, dict):
        items = items.values()
    tagged = {it.item_id for it in items if it.category_tags & tags}

    kept = [r for r in c.reviews if r.item_id in tagged]
    per_user: dict[str, int] = {}
    for r in kept:
        per_user[r.user_id] = per_user.get(r.user_id, 0) + 1
    kept = [r for r in kept if per_user[r.user_id] >= min_reviews_per_user]
    return Corpus(tuple(kept))


# --------------------------------------------------------------------------
# Descriptive statistics
# --------------------------------------------------------------------------

STAT_COLUMNS = ("count", "min", "max", "mean", "std", "median")


@dataclass(frozen=True)
class StatRow:
    variable: str
    count: int
    min: float = math.nan
    max: float = math.nan
    mean: float = math.nan
    std: float = math.nan
    median: float = math.nan

    def as_dict(self) -> dict:
        return {"variable": self.variable, **{k: getattr(self, k) for k in STAT_COLUMNS}}


@dataclass(frozen=True)
class StatsReport:
    rows: tuple[StatRow, ...]
    ddof: int = 1

    def __getitem__(self, variable: str) -> StatRow:
        for row in self.rows:
            if row.variable == variable:
                return row
        raise KeyError(variable)

    def variables(self) -> list[str]:
        return [r.variable for r in self.rows]


def _describe(name: str, values, ddof: int) -> StatRow:
    x = np.asarray(values, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return StatRow(name, 0)
    std = float(np.std(x, ddof=ddof)) if x.size > ddof else math.nan
    return StatRow(name, int(x.size), float(x.min()), float(x.max()),
                   float(x.mean()), std, float(np.median(x)))


def _group_std(groups: dict[str, tuple[int, ...]], values: np.ndarray, ddof: int) -> np.ndarray:
    out = []
    for key in sorted(groups):
        v = values[list(groups[key])]
        out.append(float(np.std(v, ddof=ddof)) if v.size > ddof else math.nan)
    return np.asarray(out)


def descriptive_stats(c: Corpus, lengths: Sequence[float] | None = None,
                      polarity: Sequence[float] | None = None,
                      ddof: int = 1) -> StatsReport:
    """Summary rows in the layout of the dataset description table.

    ``lengths`` defaults to whitespace word counts. Polarity rows (and the
    rating-polarity coherence row, ``5 - |stars - polarity|`` on the 1..5
    scale) appear only when ``polarity`` is given. ``ddof=1`` is the sample
    estimator; pass ``ddof=0`` for the population formula. Per-user and
    per-item STD rows skip groups too small for the estimator.
    """
    if len(c) == 0:
        raise CorpusError("descriptive_stats needs a non-empty corpus")
    if ddof not in (0, 1):
        raise ValueError("ddof must be 0 or 1")
    stars = np.array([r.stars for r in c.reviews], dtype=float)
    votes = np.array([r.total_votes for r in c.reviews], dtype=float)
    if lengths is None:
        lengths = [len(r.text.split()) for r in c.reviews]
    length = np.asarray(lengths, dtype=float)
    if length.shape != stars.shape:
        raise ValueError("lengths must have one entry per review")

    rows = [
        StatRow("Number of reviews", len(c)),
        StatRow("Number of users", len(c.users)),
        StatRow("Number of items", len(c.items)),
        _describe("Number of reviews x user", [len(c.by_user[u]) for u in c.users], ddof),
        _describe("Number of reviews x item", [len(c.by_item[i]) for i in c.items], ddof),
        _describe("Number of helpfulness votes x review", votes, ddof),
        _describe("Rating values", stars, ddof),
        _describe("Review length", length, ddof),
    ]
    pol = None
    if polarity is not None:
        pol = np.asarray(polarity, dtype=float)
        if pol.shape != stars.shape:
            raise ValueError("polarity must have one entry per review")
        rows.append(_describe("Review polarity", pol, ddof))
        rows.append(_describe("Rating-polarity coherence", 5.0 - np.abs(stars - pol), ddof))
    rows.append(_describe("STD of rating values x user", _group_std(c.by_user, stars, ddof), ddof))
    rows.append(_describe("STD of rating values x item", _group_std(c.by_item, stars, ddof), ddof))
    if pol is not None:
        rows.append(_describe("STD of review polarity x user", _group_std(c.by_user, pol, ddof), ddof))
        rows.append(_describe("STD of review polarity x item", _group_std(c.by_item, pol, ddof), ddof))
    rows.append(_describe("STD of review length x user", _group_std(c.by_user, length, ddof), ddof))
    rows.append(_describe("STD of review length x item", _group_std(c.by_item, length, ddof), ddof))
    return StatsReport(tuple(rows), ddof)

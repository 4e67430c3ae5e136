"""Synthetic review corpora and rating data with planted structure.

Used for fixtures, tests and the acceptance suite; nothing here is needed
to run the pipeline on real data.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .corpus import Corpus, RawItem, RawReview, save_corpus
from .recommend import RatingMatrix

POSITIVE = ("great", "excellent", "friendly", "clean", "comfortable", "lovely", "amazing",
            "helpful", "delicious", "spacious", "quiet", "perfect", "wonderful", "nice")
NEGATIVE = ("dirty", "rude", "noisy", "terrible", "awful", "broken", "smelly", "cramped",
            "disappointing", "overpriced", "slow", "bland", "horrible", "stale")
TOPICS = ("room", "pool", "breakfast", "staff", "bed", "lobby", "view", "parking",
          "shower", "location", "service", "coffee", "desk", "elevator", "bathroom",
          "towels", "checkin", "wifi", "restaurant", "bar", "beach", "suite", "carpet",
          "pillow", "balcony", "gym", "spa", "shuttle", "airport", "downtown")
FILLER = ("the", "was", "and", "we", "our", "it", "very", "with", "for", "this", "stay",
          "night", "would", "again", "there", "had", "were", "a", "to", "of")
HOTEL_ITEM_TAGS = ("Hotels", "Resorts", "Hostels", "Bed & Breakfast")
OTHER_ITEM_TAGS = ("Nightlife", "Bars", "Shopping")


def _review_text(rng: np.random.Generator, stars: int, length: int, item_topics) -> str:
    p_pos = (stars - 1) / 4.0
    words = []
    for _ in range(max(1, length)):
        roll = rng.random()
        if roll < 0.12:
            words.append(POSITIVE[rng.integers(len(POSITIVE))] if rng.random() < p_pos
                         else NEGATIVE[rng.integers(len(NEGATIVE))])
        elif roll < 0.45:
            words.append(item_topics[rng.integers(len(item_topics))])
        elif roll < 0.55:
            words.append(TOPICS[rng.integers(len(TOPICS))])
        else:
            words.append(FILLER[rng.integers(len(FILLER))])
    return " ".join(words).capitalize() + "."


def make_corpus(seed: int = 0, n_users: int = 30, n_items: int = 20,
                reviews_per_user: tuple[int, int] = (10, 14), vote_rate: float = 0.8,
                share_tagged: float = 0.8) -> tuple[Corpus, dict[str, RawItem]]:
    """Reviews with per-user length/rating habits and per-item topic vocabulary.

    Votes grow with review length; a fraction of reviews gets none.
    Returns the corpus and the item catalogue (some items carry non-hotel tags).
    """
    rng = np.random.default_rng(seed)
    items = {}
    topics = {}
    for k in range(n_items):
        iid = f"i{k:03d}"
        tagged = rng.random() < share_tagged
        pool = HOTEL_ITEM_TAGS if tagged else OTHER_ITEM_TAGS
        tags = frozenset(rng.choice(pool, size=min(2, len(pool)), replace=False).tolist())
        items[iid] = RawItem(iid, tags)
        topics[iid] = tuple(rng.choice(TOPICS, size=5, replace=False).tolist())
    item_ids = sorted(items)
    quality = {i: rng.normal(0.0, 0.8) for i in item_ids}
    reviews = []
    for u in range(n_users):
        uid = f"u{u:03d}"
        style_len = math.exp(rng.normal(3.6, 0.6))
        bias = rng.normal(0.0, 0.7)
        n = int(rng.integers(reviews_per_user[0], reviews_per_user[1] + 1))
        chosen = rng.choice(item_ids, size=min(n, len(item_ids)), replace=False)
        for j, iid in enumerate(chosen):
            stars = int(np.clip(np.rint(3.6 + bias + quality[iid] + rng.normal(0, 0.8)), 1, 5))
            length = int(max(3, round(style_len * math.exp(rng.normal(0, 0.4)))))
            text = _review_text(rng, stars, length, topics[iid])
            lam = vote_rate * math.log1p(length) if rng.random() < 0.8 else 0.0
            useful = int(rng.poisson(lam))
            funny = int(rng.poisson(lam / 4))
            cool = int(rng.poisson(lam / 3))
            reviews.append(RawReview(f"r{u:03d}_{j:02d}", uid, str(iid), stars, text,
                                     useful, funny, cool, f"2019-{1 + j % 12:02d}-{1 + u % 28:02d}"))
    return Corpus(tuple(reviews)), items


def with_votes(corpus: Corpus, votes) -> Corpus:
    """Copy of ``corpus`` where review ``k`` has ``votes[k]`` useful votes and no others."""
    votes = np.asarray(votes)
    if votes.size != len(corpus):
        raise ValueError("one vote count per review")
    return Corpus(tuple(replace(r, votes_useful=int(v), votes_funny=0, votes_cool=0)
                        for r, v in zip(corpus.reviews, votes)))


def plant_deviation_votes(corpus: Corpus, fm, seed: int = 0, scale: float = 40.0,
                          noise: float = 0.5) -> Corpus:
    """Votes driven by the user-based rating and length deviations only."""
    rng = np.random.default_rng(seed)
    d = fm.column("d_rat_ru") / max(fm.column("d_rat_ru").max(), 1e-12) \
        + fm.column("d_len_ru") / max(fm.column("d_len_ru").max(), 1e-12)
    signal = scale * d / 2.0
    votes = np.maximum(0, np.rint(signal + rng.normal(0.0, noise, size=signal.size)))
    return with_votes(corpus, votes.astype(int))


def write_fixture(directory, seed: int = 7, **kw) -> tuple[Path, Path]:
    """Write ``reviews.jsonl`` and ``items.jsonl`` (Yelp schema) into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    kw = {"n_users": 40, "n_items": 30, "reviews_per_user": (13, 18), **kw}
    corpus, items = make_corpus(seed, **kw)
    rpath = save_corpus(corpus, d / "reviews.jsonl")
    ipath = d / "items.jsonl"
    with open(ipath, "w", encoding="utf-8") as fh:
        for iid in sorted(items):
            fh.write(json.dumps({"business_id": iid,
                                 "categories": ", ".join(sorted(items[iid].category_tags))}) + "\n")
    return rpath, ipath


def noisy_ratings(seed: int = 0, n_users: int = 60, n_items: int = 50, rank: int = 3,
                  density: float = 0.3, noisy_share: float = 0.3, noise_std: float = 1.5,
                  test_share: float = 0.2):
    """Low-rank ratings where a share of training ratings carries extra noise.

    Returns ``(R_train, weights, R_test, noisy_mask)``. Noisy training observations get
    helpfulness weights in [0, 0.15]; clean ones in [0.55, 0.75]. Test
    ratings are the noise-free truth.
    """
    rng = np.random.default_rng(seed)
    P = rng.normal(0, 1, (n_users, rank)) / math.sqrt(rank)
    Q = rng.normal(0, 1, (n_items, rank)) / math.sqrt(rank)
    truth = np.clip(3.5 + P @ Q.T, 1.0, 5.0)
    mask = rng.random((n_users, n_items)) < density
    users, items = np.nonzero(mask)
    test = rng.random(users.size) < test_share
    noisy = (rng.random(users.size) < noisy_share) & ~test
    ratings = truth[users, items] + np.where(noisy, rng.normal(0, noise_std, users.size), 0.0)
    weights = np.where(noisy, rng.uniform(0.0, 0.15, users.size), rng.uniform(0.55, 0.75, users.size))
    uids = tuple(f"u{k:03d}" for k in range(n_users))
    iids = tuple(f"i{k:03d}" for k in range(n_items))

    def matrix(sel):
        idx = np.flatnonzero(sel)
        return RatingMatrix(uids, iids, users[idx], items[idx], ratings[idx],
                            tuple(f"o{k:05d}" for k in idx))

    train = ~test
    return matrix(train), weights[train], matrix(test), noisy[train]


def rank_one_matrix(n: int = 15, m: int = 15, seed: int = 0, low: float = 1.0,
                    high: float = 2.2) -> RatingMatrix:
    """Fully observed ``a b^T`` with entries in [low^2, high^2]."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(low, high, n)
    b = rng.uniform(low, high, m)
    return RatingMatrix.from_triples([(f"u{x:02d}", f"i{y:02d}", float(a[x] * b[y]))
                                      for x in range(n) for y in range(m)])


if __name__ == "__main__":  # pragma: no cover
    import sys
    out = sys.argv[1] if len(sys.argv) > 1 else "fixture"
    print(*write_fixture(out))

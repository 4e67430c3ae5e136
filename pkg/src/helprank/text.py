"""Tokenization, TF/IDF indexing and polarity scoring of review texts."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

_WORD_RE = re.compile(r"[a-z]+")
_SENTIMENT_WORD_RE = re.compile(r"[a-z]+(?:'[a-z]+)?")
_APOSTROPHES = str.maketrans("", "", "'’")

MIN_TOKEN_LENGTH = 3


# --------------------------------------------------------------------------
# Resources
# --------------------------------------------------------------------------

def _data_path(name: str) -> Path:
    return Path(str(resources.files("helprank") / "data" / name))


def load_stopwords(path=None) -> frozenset:
    """One word per line; blank lines and ``#`` comments are ignored."""
    path = Path(path) if path is not None else _data_path("stopwords.txt")
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip().lower()
            if line and not line.startswith("#"):
                words.add(line)
    return frozenset(words)


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset:
    return load_stopwords()


def load_lexicon(path=None) -> dict[str, float]:
    """Read ``term<TAB>valence`` lines, valence in [-4, 4]."""
    path = Path(path) if path is not None else _data_path("lexicon.tsv")
    if not path.is_file():
        raise FileNotFoundError(f"lexicon file not found: {path}")
    lexicon = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected term<TAB>valence")
            valence = float(parts[1])
            if not -4.0 <= valence <= 4.0:
                raise ValueError(f"{path}:{lineno}: valence {valence} outside [-4, 4]")
            lexicon[parts[0].strip().lower()] = valence
    return lexicon


# --------------------------------------------------------------------------
# Lemmatization and tokenization
# --------------------------------------------------------------------------

_IRREGULAR = {
    "went": "go", "gone": "go", "ate": "eat", "eaten": "eat", "slept": "sleep",
    "got": "get", "gotten": "get", "made": "make", "took": "take", "taken": "take",
    "came": "come", "gave": "give", "given": "give", "paid": "pay", "left": "leave",
    "found": "find", "told": "tell", "said": "say", "thought": "think",
    "bought": "buy", "brought": "bring", "felt": "feel", "kept": "keep",
    "saw": "see", "seen": "see", "knew": "know", "known": "know", "ran": "run",
    "sat": "sit", "stood": "stand", "spent": "spend", "drove": "drive",
    "driven": "drive", "chose": "choose", "chosen": "choose", "wrote": "write",
    "written": "write", "children": "child", "men": "man", "women": "woman",
    "feet": "foot", "teeth": "tooth", "mice": "mouse", "geese": "goose",
    "better": "good", "best": "good", "worse": "bad", "worst": "bad",
    "ordered": "order", "served": "serve", "loved": "love", "liked": "like",
    "hated": "hate", "arrived": "arrive", "used": "use", "charged": "charge",
    "priced": "price", "tasted": "taste", "recommended": "recommend",
}

# -ing / -s words whose surface form is already the lemma
_KEEP = frozenset({
    "morning", "evening", "building", "ceiling", "wedding", "thing", "king",
    "ring", "spring", "string", "wing", "during", "bring", "parking", "lodging",
    "clothing", "pudding", "stuffing", "seasoning", "icing", "topping",
    "always", "news", "gas", "bus", "menus", "sometimes", "perhaps", "nevertheless",
    "this", "was", "has", "his", "its", "yes", "plus", "bonus", "focus", "campus",
    "chaos", "lens", "series", "species", "analysis", "basis", "tennis", "famous",
    "delicious", "gorgeous", "generous", "nervous", "various", "previous",
    "serious", "obvious", "spacious", "gracious", "luxurious", "anxious",
    "less", "unless", "glass", "class", "grass", "pass", "mass", "dress", "press",
    "need", "feed", "seed", "speed", "bed", "red", "shed", "breed", "indeed",
    "hundred", "sacred", "wicked", "naked", "rugged", "tired", "bored",
})

_VOWELS = set("aeiou")


class Lemmatizer:
    """Dictionary lookup with a conservative suffix-stripping fallback."""

    def __init__(self, exceptions: dict[str, str] | None = None, keep: Iterable[str] = ()):
        self.exceptions = dict(_IRREGULAR)
        if exceptions:
            self.exceptions.update(exceptions)
        self.keep = _KEEP | frozenset(keep)

    def __call__(self, word: str) -> str:
        if word in self.exceptions:
            return self.exceptions[word]
        if word in self.keep or len(word) <= 3:
            return word
        if word.endswith("ies") and len(word) > 4:
            return word[:-3] + "y"
        if word.endswith("ied") and len(word) > 4:
            return word[:-3] + "y"
        if word.endswith("sses"):
            return word[:-2]
        if word.endswith(("ches", "shes", "xes", "zes")):
            return word[:-2]
        if word.endswith("ing") and len(word) >= 7:
            return self._undouble(word[:-3])
        if word.endswith("ed") and len(word) >= 6 and not word.endswith("eed"):
            return self._undouble(word[:-2])
        if word.endswith("s") and not word.endswith(("ss", "us", "is")):
            return word[:-1]
        return word

    @staticmethod
    def _undouble(stem: str) -> str:
        if len(stem) >= 4 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS and stem[-1] not in "lsz":
            return stem[:-1]
        return stem


_DEFAULT_LEMMATIZER = Lemmatizer()


@dataclass(frozen=True)
class TokenList:
    """Content tokens of one review plus its raw whitespace word count."""

    tokens: tuple[str, ...]
    raw_count: int

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def tokenize(text: str, stopwords: frozenset | set | None = None,
             lemmatizer=None) -> TokenList:
    """Lowercase, strip punctuation, lemmatize, drop stop words and short tokens.

    A token is dropped when its surface form or its lemma is a stop word, or
    when its lemma has fewer than three characters. ``raw_count`` counts
    whitespace-delimited words before any of that.
    """
    if stopwords is None:
        stopwords = default_stopwords()
    lemmatize = lemmatizer or _DEFAULT_LEMMATIZER
    raw_count = len(text.split())
    tokens = []
    for word in _WORD_RE.findall(text.lower().translate(_APOSTROPHES)):
        if word in stopwords:
            continue
        lemma = lemmatize(word)
        if len(lemma) < MIN_TOKEN_LENGTH or lemma in stopwords:
            continue
        tokens.append(lemma)
    return TokenList(tuple(tokens), raw_count)


# --------------------------------------------------------------------------
# TF/IDF
# --------------------------------------------------------------------------

def idf_value(doc_count: int, doc_freq: int, smooth: bool = False) -> float:
    """``ln(N/df)``, or ``ln((N+1)/(df+1)) + 1`` when smoothed; 0 for unseen terms."""
    if doc_freq <= 0:
        return 0.0
    if smooth:
        return math.log((doc_count + 1) / (doc_freq + 1)) + 1.0
    return math.log(doc_count / doc_freq)


@dataclass(frozen=True)
class TfIdfIndex:
    """Document frequencies over reviews.

    With ``universe="item"`` each item's reviews form their own document
    collection and :meth:`idf` needs the item id.
    """

    doc_count: int
    doc_freq: dict[str, int]
    term_freqs: tuple[Counter, ...] = field(repr=False, default=())
    smooth: bool = False
    universe: str = "corpus"
    item_docs: dict[str, tuple[int, Counter]] = field(repr=False, default_factory=dict)

    def idf(self, term: str, item_id: str | None = None) -> float:
        if self.universe == "item":
            if item_id is None:
                raise ValueError("per-item TF/IDF index needs an item id")
            n, df = self.item_docs.get(item_id, (0, Counter()))
            return idf_value(n, df.get(term, 0), self.smooth)
        return idf_value(self.doc_count, self.doc_freq.get(term, 0), self.smooth)


def _doc_freq(token_lists: Iterable[Sequence[str]]) -> Counter:
    df = Counter()
    for toks in token_lists:
        df.update(set(toks))
    return df


def build_tfidf(corpus, tokens: Sequence[TokenList] | None = None, *,
                smooth: bool = False, universe: str = "corpus",
                stopwords=None) -> TfIdfIndex:
    """Index the reviews of ``corpus``; ``tokens`` may be supplied pre-computed."""
    if len(corpus) == 0:
        raise ValueError("cannot build a TF/IDF index over an empty corpus")
    if universe not in ("corpus", "item"):
        raise ValueError(f"universe must be 'corpus' or 'item', got {universe!r}")
    if tokens is None:
        tokens = [tokenize(r.text, stopwords) for r in corpus.reviews]
    if len(tokens) != len(corpus):
        raise ValueError("tokens must align with corpus reviews")
    token_seqs = [t.tokens if isinstance(t, TokenList) else tuple(t) for t in tokens]
    item_docs = {}
    if universe == "item":
        for item, positions in corpus.by_item.items():
            item_docs[item] = (len(positions), _doc_freq(token_seqs[p] for p in positions))
    return TfIdfIndex(
        doc_count=len(corpus),
        doc_freq=dict(_doc_freq(token_seqs)),
        term_freqs=tuple(Counter(t) for t in token_seqs),
        smooth=smooth,
        universe=universe,
        item_docs=item_docs,
    )


def mean_tfidf(review_tokens, index: TfIdfIndex, item_id: str | None = None) -> float:
    """Mean of ``tf(t) * idf(t)`` over the token occurrences of one review.

    ``tf`` is the raw count of the term inside the review. Empty input gives 0.
    """
    toks = review_tokens.tokens if isinstance(review_tokens, TokenList) else tuple(review_tokens)
    if not toks:
        return 0.0
    tf = Counter(toks)
    total = 0.0
    for term in toks:
        total += tf[term] * index.idf(term, item_id)
    return total / len(toks)


# --------------------------------------------------------------------------
# Sentiment
# --------------------------------------------------------------------------

class SentimentScorer(Protocol):
    name: str

    def __call__(self, text: str) -> float:  # pragma: no cover - protocol
        ...


NEGATIONS = frozenset({
    "not", "no", "never", "none", "nobody", "nothing", "neither", "nor",
    "nowhere", "without", "hardly", "barely", "cannot", "cant", "can't",
    "dont", "don't", "doesnt", "doesn't", "didnt", "didn't", "isnt", "isn't",
    "wasnt", "wasn't", "werent", "weren't", "wont", "won't", "wouldnt",
    "wouldn't", "shouldnt", "shouldn't", "couldnt", "couldn't", "aint",
    "ain't", "arent", "aren't", "havent", "haven't", "hasnt", "hasn't",
})

BOOST = 0.293
INTENSIFIERS = {
    **dict.fromkeys((
        "very", "really", "extremely", "incredibly", "super", "so", "truly",
        "absolutely", "completely", "totally", "highly", "especially",
        "exceptionally", "remarkably", "particularly", "most", "utterly",
        "thoroughly", "seriously", "insanely", "ridiculously", "amazingly",
        "too", "quite", "definitely", "genuinely",
    ), BOOST),
    **dict.fromkeys((
        "slightly", "somewhat", "barely", "marginally", "kinda", "kind",
        "sorta", "fairly", "little", "bit", "rather", "almost", "partly",
    ), -BOOST),
}

NEGATION_SCALAR = -0.74
WINDOW = 3
NORMALIZATION_ALPHA = 15.0


def _adjusted_valences(text: str, lexicon: dict[str, float], lemmatizer) -> list[float]:
    words = _SENTIMENT_WORD_RE.findall(text.lower().replace("’", "'"))
    out = []
    for i, word in enumerate(words):
        if word in INTENSIFIERS or word in NEGATIONS:
            continue
        valence = lexicon.get(word)
        if valence is None:
            valence = lexicon.get(lemmatizer(word))
        if valence is None or valence == 0.0:
            continue
        sign = 1.0 if valence > 0 else -1.0
        negated = False
        for dist, prev in enumerate(reversed(words[max(0, i - WINDOW):i])):
            if prev in INTENSIFIERS:
                # nearer intensifiers count more
                valence += sign * INTENSIFIERS[prev] * (1.0 - 0.05 * dist)
            elif prev in NEGATIONS:
                negated = True
        if negated:
            valence *= NEGATION_SCALAR
        out.append(valence)
    return out


class LexiconScorer:
    """Rule-based scorer: summed valences squashed by ``s / sqrt(s^2 + alpha)``.

    Valences of lexicon words are boosted (or dampened) by intensifiers and
    flipped by negations found among the three preceding words.
    """

    name = "lexicon-sum"

    def __init__(self, lexicon: dict[str, float] | str | Path | None = None,
                 alpha: float = NORMALIZATION_ALPHA, lemmatizer=None):
        if lexicon is None or isinstance(lexicon, (str, Path)):
            lexicon = load_lexicon(lexicon)
        self.lexicon = dict(lexicon)
        self.alpha = alpha
        self.lemmatizer = lemmatizer or _DEFAULT_LEMMATIZER

    def __call__(self, text: str) -> float:
        total = sum(_adjusted_valences(text, self.lexicon, self.lemmatizer))
        if total == 0.0:
            return 0.0
        score = total / math.sqrt(total * total + self.alpha)
        return max(-1.0, min(1.0, score))


class MeanValenceScorer(LexiconScorer):
    """Average of the adjusted valences of matched words, scaled by 1/4."""

    name = "lexicon-mean"

    def __call__(self, text: str) -> float:
        vals = _adjusted_valences(text, self.lexicon, self.lemmatizer)
        if not vals:
            return 0.0
        return max(-1.0, min(1.0, sum(vals) / len(vals) / 4.0))


def lexicon_sentiment(text: str, lexicon: dict[str, float] | None = None) -> float:
    """Score ``text`` in [-1, 1] with the bundled (or given) lexicon."""
    if lexicon is None:
        return _default_scorer()(text)
    return LexiconScorer(lexicon)(text)


@lru_cache(maxsize=1)
def _default_scorer() -> LexiconScorer:
    return LexiconScorer()


def default_scorers() -> list:
    """The two bundled scorers, averaged by :func:`polarity`."""
    lex = load_lexicon()
    return [LexiconScorer(lex), MeanValenceScorer(lex)]


def rescale_polarity(score: float) -> float:
    """Map a sentiment score in [-1, 1] linearly onto the 1..5 rating scale."""
    return 2.0 * (score + 1.0) + 1.0


def polarity(text: str, scorers: Sequence) -> float:
    """Mean scorer output rescaled into [1, 5]."""
    if not scorers:
        raise ValueError("polarity needs at least one sentiment scorer")
    scores = []
    for scorer in scorers:
        s = float(scorer(text))
        if not -1.0 <= s <= 1.0:
            raise ValueError(f"scorer {getattr(scorer, 'name', scorer)!r} returned {s} outside [-1, 1]")
        scores.append(s)
    return rescale_polarity(sum(scores) / len(scores))

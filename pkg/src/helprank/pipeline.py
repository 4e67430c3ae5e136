"""Stage orchestration: configuration, corpus preparation and the pipeline steps.

Each stage reads its inputs from the configuration alone and writes into the
configured output directory, so any stage can be rerun in isolation.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .corpus import (TAG_PRESETS, Corpus, CorpusError, RawItem, descriptive_stats, filter_corpus,
                     load_items, load_reviews, save_corpus)
from .evaluate import EvalConfig, EvalReport, compare_recommenders, make_trainer
from .features import FeatureConfig, FeatureMatrix, compute_features, review_bases
from .folds import make_folds
from .recommend import HelpfulnessWeights, RatingMatrix, build_weights, top_n
from .regress import ForestHyper, LinearHyper, M3, StudyReport, get_spec, run_study, train_forest
from .text import LexiconScorer, MeanValenceScorer, load_lexicon, load_stopwords

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # data
    reviews: str = ""
    items: str = ""
    format: str = ""
    tags: str = "hotel"
    min_reviews_per_user: int = 10
    on_error: str = "skip"
    # text
    stopwords: str = ""
    lexicon: str = ""
    # features
    log_base: str = "e"
    leave_one_out: bool = False
    idf_smooth: bool = False
    idf_universe: str = "corpus"
    ddof: int = 1
    # study
    models: str = "M1,M2,M3"
    regressors: str = "linear,forest"
    folds: int = 5
    seed: int = 7
    per_fold_average: bool = False
    strict_folds: bool = False
    permutations: int = 0
    # linear learner
    epsilon: float = 0.0
    C: float = 1.0
    linear_epochs: int = 200
    linear_lr: float = 0.05
    batch_size: int = 32
    standardize: bool = False
    linear_seed: int = 0
    # forest
    n_trees: int = 100
    max_depth: int = 0
    min_samples_leaf: int = 2
    max_features: str = "third"
    forest_seed: int = 0
    # recommender
    algorithms: str = "svd_helpfulness,svdpp"
    baseline: str = ""
    K: int = 50
    lam: float = 0.02
    lr: float = 0.01
    rec_epochs: int = 50
    rec_seed: int = 0
    # evaluation
    eval_folds: int = 5
    eval_seed: int = 7
    N: int = 10
    relevance_threshold: float = 4.0
    graded_gain: bool = True
    clamp: bool = True
    alpha: float = 0.05
    # output
    out: str = "out"
    report_format: str = "csv"
    figures: bool = True

    # -- construction ------------------------------------------------------

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}

    def update(self, values: dict[str, Any]) -> "PipelineConfig":
        types = self.field_types()
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                setattr(self, key, _coerce(raw, types[key]))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        return self

    @classmethod
    def from_ini(cls, path) -> "PipelineConfig":
        """Read an INI file; section names are ignored, keys must be unique."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values = {}
        for section in parser.sections():
            for key, val in parser.items(section):
                if key in values:
                    raise ConfigError(f"config key {key!r} appears in more than one section")
                values[key] = val
        return cls().update(values)

    def validate(self) -> "PipelineConfig":
        if self.format not in ("", "json", "csv"):
            raise ConfigError(f"format must be json or csv, got {self.format!r}")
        if self.on_error not in ("skip", "fail"):
            raise ConfigError(f"on_error must be skip or fail, got {self.on_error!r}")
        if self.report_format not in ("csv", "json"):
            raise ConfigError(f"report_format must be csv or json, got {self.report_format!r}")
        if self.folds < 2 or self.eval_folds < 2:
            raise ConfigError("fold counts must be at least 2")
        if self.log_base not in ("e", "ln", "10"):
            raise ConfigError("log_base must be 'e' or '10'")
        if self.idf_universe not in ("corpus", "item"):
            raise ConfigError("idf_universe must be 'corpus' or 'item'")
        for m in self.model_names():
            try:
                get_spec(m)
            except (KeyError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
        return self

    # -- derived objects ----------------------------------------------------

    def model_names(self) -> list[str]:
        return _split(self.models)

    def tag_set(self) -> frozenset | None:
        if not self.tags:
            return None
        if self.tags in TAG_PRESETS:
            return TAG_PRESETS[self.tags]
        return frozenset(_split(self.tags))

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig.from_names(self.log_base, leave_one_out=self.leave_one_out,
                                        idf_smooth=self.idf_smooth, idf_universe=self.idf_universe)

    def linear_hyper(self) -> LinearHyper:
        return LinearHyper(epsilon=self.epsilon, C=self.C, epochs=self.linear_epochs,
                           learning_rate=self.linear_lr, batch_size=self.batch_size,
                           standardize=self.standardize, seed=self.linear_seed)

    def forest_hyper(self) -> ForestHyper:
        mf: Any = self.max_features
        if mf in ("", "none", "all"):
            mf = None
        elif mf not in ("third", "sqrt"):
            mf = float(mf) if "." in mf else int(mf)
        return ForestHyper(n_trees=self.n_trees, max_depth=self.max_depth or None,
                           min_samples_leaf=self.min_samples_leaf, max_features=mf,
                           seed=self.forest_seed)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(N=self.N, relevance_threshold=self.relevance_threshold,
                          graded_gain=self.graded_gain, clamp=self.clamp, alpha=self.alpha,
                          baseline=self.baseline or None)

    def out_dir(self) -> Path:
        return Path(self.out)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _split(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _coerce(raw, kind: type):
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    s = str(raw).strip()
    if kind is bool:
        low = s.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if kind is int:
        return int(s)
    if kind is float:
        return float(s)
    return s


# --------------------------------------------------------------------------
# Shared preparation
# --------------------------------------------------------------------------

@dataclass
class Prepared:
    corpus: Corpus
    skipped: int
    scorers: list
    stopwords: frozenset | None


def prepare_corpus(cfg: PipelineConfig) -> Prepared:
    """Load and filter the review corpus named in the config."""
    if not cfg.reviews:
        raise ConfigError("no review file configured (set 'reviews')")
    reviews, errors = load_reviews(cfg.reviews, cfg.format or None, cfg.on_error)
    corpus = Corpus(tuple(reviews))
    tags = cfg.tag_set()
    if tags is not None:
        if not cfg.items:
            raise ConfigError("category filtering needs an item file (set 'items', or tags to empty)")
        corpus = filter_corpus(corpus, load_items(cfg.items), tags, cfg.min_reviews_per_user)
    elif cfg.min_reviews_per_user > 1:
        # no category filter: still apply the per-user threshold
        corpus = filter_corpus(corpus, [RawItem(i, frozenset({"*"})) for i in corpus.items],
                               {"*"}, cfg.min_reviews_per_user)
    if len(corpus) == 0:
        raise CorpusError("no reviews survive filtering")
    lexicon = load_lexicon(cfg.lexicon) if cfg.lexicon else None
    scorers = [LexiconScorer(lexicon), MeanValenceScorer(lexicon)]
    stopwords = load_stopwords(cfg.stopwords) if cfg.stopwords else None
    return Prepared(corpus, len(errors), scorers, stopwords)


def prepare_features(cfg: PipelineConfig, prep: Prepared):
    bases = review_bases(prep.corpus, prep.scorers, prep.stopwords)
    fm = compute_features(prep.corpus, cfg.feature_config(), bases=bases)
    return bases, fm


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------

def stage_ingest(cfg: PipelineConfig):
    prep = prepare_corpus(cfg)
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    path = save_corpus(prep.corpus, out / "corpus.jsonl")
    return prep, path


def stage_stats(cfg: PipelineConfig, prep: Prepared | None = None):
    prep = prep or prepare_corpus(cfg)
    pols = [b.polarity for b in review_bases(prep.corpus, prep.scorers, prep.stopwords)]
    return prep, descriptive_stats(prep.corpus, polarity=pols, ddof=cfg.ddof)


def stage_study(cfg: PipelineConfig, prep: Prepared | None = None,
                features: tuple | None = None) -> StudyReport:
    prep = prep or prepare_corpus(cfg)
    bases, fm = features or prepare_features(cfg, prep)
    strict = (prep.corpus, bases, cfg.feature_config()) if cfg.strict_folds else None
    return run_study(fm, cfg.model_names(), _split(cfg.regressors), cfg.folds, cfg.seed,
                     cfg.linear_hyper(), cfg.forest_hyper(), cfg.per_fold_average, strict,
                     cfg.permutations)


def train_helpfulness(cfg: PipelineConfig, corpus: Corpus, fm: FeatureMatrix):
    """M3 forest on the whole corpus and the resulting hybrid weights."""
    m3 = train_forest(fm.X(M3.features), fm.y, M3, cfg.forest_hyper())
    weights, fallback = build_weights(corpus, fm, m3)
    return m3, weights, fallback


def fold_weight_builder(corpus: Corpus, fm: FeatureMatrix, R: RatingMatrix, hp: ForestHyper):
    """``(fold, train_obs) -> HelpfulnessWeights`` using an M3 forest fit on that fold's training reviews.

    Feature rows come from the full-corpus matrix; only the forest is
    restricted, which is what keeps test votes out of the weights.
    """
    pos = {rid: k for k, rid in enumerate(fm.review_ids)}

    def build(fold: int, train_obs) -> HelpfulnessWeights:
        rows = [pos[R.keys[o]] for o in train_obs]
        sub_fm = fm.take(rows)
        m3 = train_forest(sub_fm.X(M3.features), sub_fm.y, M3, hp)
        weights, fallback = build_weights(corpus.subset(rows), sub_fm, m3)
        logger.info("fold %d: %.1f%% of training weights from the model", fold, 100 * fallback)
        return weights

    return build


def algorithm_trainers(cfg: PipelineConfig) -> dict:
    names = _split(cfg.algorithms)
    if len(names) < 2:
        raise ConfigError("evaluation needs at least two algorithms")
    try:
        return {n: make_trainer(n, cfg.K, cfg.lam, cfg.lr, cfg.rec_epochs, cfg.rec_seed) for n in names}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def stage_evaluate(cfg: PipelineConfig, prep: Prepared | None = None,
                   features: tuple | None = None) -> EvalReport:
    prep = prep or prepare_corpus(cfg)
    _, fm = features or prepare_features(cfg, prep)
    R = RatingMatrix.from_corpus(prep.corpus)
    plan = make_folds(len(R), cfg.eval_folds, cfg.eval_seed)
    W = fold_weight_builder(prep.corpus, fm, R, cfg.forest_hyper())
    report = compare_recommenders(R, W, plan, algorithm_trainers(cfg), cfg.eval_config())
    report.config.update({"K": cfg.K, "lam": cfg.lam, "lr": cfg.lr, "epochs": cfg.rec_epochs,
                          "rec_seed": cfg.rec_seed})
    return report


def stage_recommend(cfg: PipelineConfig, prep: Prepared | None = None,
                    features: tuple | None = None, algorithm: str | None = None):
    """Fit one recommender on all ratings and rank each user's unrated items."""
    prep = prep or prepare_corpus(cfg)
    _, fm = features or prepare_features(cfg, prep)
    R = RatingMatrix.from_corpus(prep.corpus)
    name = algorithm or _split(cfg.algorithms)[0]
    try:
        trainer = make_trainer(name, cfg.K, cfg.lam, cfg.lr, cfg.rec_epochs, cfg.rec_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    w = None
    if name.startswith("svd_helpfulness"):
        _, weights, _ = train_helpfulness(cfg, prep.corpus, fm)
        w = weights.for_matrix(R)
    model = trainer(R, w)
    rated: dict[int, set] = {}
    for u, i in zip(R.users.tolist(), R.items.tolist()):
        rated.setdefault(u, set()).add(i)
    rows = []
    for u, uid in enumerate(R.user_ids):
        seen = rated.get(u, set())
        candidates = [R.item_ids[i] for i in range(len(R.item_ids)) if i not in seen]
        if not candidates:
            continue
        for rank, iid in enumerate(top_n(model, uid, candidates, cfg.N), start=1):
            rows.append((uid, rank, iid))
    return model, rows


def write_recommendations(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("user_id,rank,item_id\n")
        for uid, rank, iid in rows:
            fh.write(f"{uid},{rank},{iid}\n")
    return path

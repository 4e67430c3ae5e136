"""Review helpfulness prediction and helpfulness-weighted matrix factorization."""

from .corpus import Corpus, RawItem, RawReview, descriptive_stats, filter_corpus, load_corpus
from .features import FEATURES, FeatureConfig, FeatureMatrix, compute_features, squash
from .recommend import RatingMatrix, train_mf, train_svdpp, train_weighted_mf
from .regress import M1, M2, M3, run_study, train_forest, train_linear

__all__ = [
    "Corpus", "RawItem", "RawReview", "descriptive_stats", "filter_corpus", "load_corpus",
    "FEATURES", "FeatureConfig", "FeatureMatrix", "compute_features", "squash",
    "RatingMatrix", "train_mf", "train_svdpp", "train_weighted_mf",
    "M1", "M2", "M3", "run_study", "train_forest", "train_linear",
]

__version__ = "0.1.0"

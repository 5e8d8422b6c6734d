"""Knowledge-based neural network refinement: rule translation, TopGen and REGENT."""

from .data import Dataset, FeatureSpace, align_theory, kfold, load_dataset
from .network import Network, TranslationParams, translate
from .regent import RegentConfig
from .theory import RuleSet, evaluate, parse_rules
from .topgen import TopGenConfig
from .train import TrainParams, score, train

__all__ = ["Dataset", "FeatureSpace", "Network", "RegentConfig", "RuleSet", "TopGenConfig",
           "TrainParams", "TranslationParams", "align_theory", "evaluate", "kfold",
           "load_dataset", "parse_rules", "score", "train", "translate"]

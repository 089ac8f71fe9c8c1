"""Task-adaptive reference transformation for few-shot classification."""

from .episodes import ClassSplit, Corpus, Episode, load_corpus, load_split, make_synthetic_corpus, sample_episode
from .head import HeadConfig, compute_W, compute_prototypes
from .model import TartModel
from .training import EvalReport, TrainConfig, TrainState, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ClassSplit", "Corpus", "Episode", "EvalReport", "HeadConfig", "TartModel", "TrainConfig", "TrainState",
    "compute_W", "compute_prototypes", "evaluate", "load_checkpoint", "load_corpus", "load_split",
    "make_synthetic_corpus", "sample_episode", "save_checkpoint", "train",
]

"""Answer recommendation for StackExchange questions with question boosting and a four-class ranker."""

from importlib.metadata import PackageNotFoundError, version

from .config import PipelineConfig
from .pipeline import Recommendation, Recommender
from .qboost import boost
from .ranker import ScoreWeights, rank_candidates
from .training_log import TrainingRecorder

try:
    __version__ = version("answer-recommender")
except PackageNotFoundError:
    __version__ = "unknown"

__all__ = [
    "PipelineConfig",
    "Recommendation",
    "Recommender",
    "ScoreWeights",
    "TrainingRecorder",
    "boost",
    "rank_candidates",
]

from .base import ScoreProvider, aggregate_quality_scores, write_quality_csv
from .remote import HttpScoreProvider

__all__ = [
    "ScoreProvider",
    "HttpScoreProvider",
    "aggregate_quality_scores",
    "write_quality_csv",
]

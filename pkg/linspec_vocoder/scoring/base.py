"""Quality-score providers: anything that maps WAV files to one scalar each."""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Sequence, Union
import csv
import logging
import math

import numpy as np

from ..models import QualityScore

logger = logging.getLogger(__name__)

QUALITY_CSV_HEADER = ["method", "provider", "mean", "ci95", "count"]
Z_95 = 1.96


class ScoreProvider(ABC):
    """Abstract base class for external quality predictors."""

    name: str = "provider"

    @abstractmethod
    def score(self, paths: Sequence[Path]) -> Dict[str, float]:
        """Score each WAV file; returns {path string: score}. Files that fail are left out."""
        pass

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def aggregate_quality_scores(scores: Dict[str, Sequence[float]], provider: str) -> List[QualityScore]:
    """Mean and normal-approximation 95% interval half-width (1.96 s / sqrt(n)) per method."""
    results = []
    for method, values in scores.items():
        values = np.asarray([v for v in values if math.isfinite(v)], dtype=np.float64)
        if values.size == 0:
            logger.warning(f"No usable {provider} scores for {method}")
            continue
        spread = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        results.append(QualityScore(method=method, provider=provider, mean=float(values.mean()),
                                    ci95=Z_95 * spread / math.sqrt(values.size), count=int(values.size)))
    return results


def write_quality_csv(results: List[QualityScore], path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(QUALITY_CSV_HEADER)
        for r in results:
            writer.writerow([r.method, r.provider, f"{r.mean:.6f}", f"{r.ci95:.6f}", r.count])

"""Score provider backed by an HTTP endpoint."""

from pathlib import Path
from typing import Dict, Optional, Sequence
import logging

import httpx
from tenacity import retry, stop_after_attempt, wait_exponential, retry_if_exception_type

from .. import __version__
from .base import ScoreProvider

logger = logging.getLogger(__name__)


class HttpScoreProvider(ScoreProvider):
    """POSTs WAV bytes to `endpoint` and reads `{"score": float}` from the JSON reply."""

    def __init__(self, endpoint: str, name: str = "remote", timeout: float = 30.0,
                 transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint
        self.name = name
        self.client = httpx.Client(
            timeout=timeout,
            headers={"User-Agent": f"linspec-vocoder/{__version__}"},
            follow_redirects=True,
            transport=transport,
        )

    @retry(
        stop=stop_after_attempt(3),
        wait=wait_exponential(multiplier=1, min=2, max=10),
        retry=retry_if_exception_type((httpx.ConnectError, httpx.ReadTimeout)),
    )
    def score_file(self, path: Path) -> Optional[float]:
        """Score one file with retry logic; None when the endpoint rejects it."""
        try:
            logger.debug(f"Scoring: {path}")
            response = self.client.post(self.endpoint, content=Path(path).read_bytes(),
                                        headers={"Content-Type": "audio/wav"})
            response.raise_for_status()
            return float(response.json()["score"])
        except httpx.HTTPStatusError as e:
            if 400 <= e.response.status_code < 500:
                logger.warning(f"Endpoint rejected {path}: {e.response.status_code}")
                return None
            logger.warning(f"HTTP error scoring {path}: {e}")
            raise
        except (KeyError, TypeError, ValueError) as e:
            logger.warning(f"Malformed score for {path}: {e}")
            return None

    def score(self, paths: Sequence[Path]) -> Dict[str, float]:
        results = {}
        for path in paths:
            value = self.score_file(path)
            if value is not None:
                results[str(path)] = value
        return results

    def close(self):
        """Clean up HTTP client."""
        self.client.close()

import json

import httpx
import pytest
from tenacity import wait_none

from linspec_vocoder.scoring import HttpScoreProvider, aggregate_quality_scores, write_quality_csv

from .conftest import tone, write_wav


@pytest.fixture
def wavs(tmp_path):
    return [write_wav(tmp_path / f"{name}.wav", tone(440.0, 0.05)) for name in ("a", "b", "c")]


@pytest.fixture(autouse=True)
def _no_retry_wait(monkeypatch):
    monkeypatch.setattr(HttpScoreProvider.score_file.retry, "wait", wait_none())


def provider_for(handler):
    return HttpScoreProvider("http://scorer.test/score", transport=httpx.MockTransport(handler))


def test_scores_are_read_from_json(wavs):
    seen = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(request)
        return httpx.Response(200, json={"score": 3.5})

    with provider_for(handler) as provider:
        scores = provider.score(wavs)
    assert list(scores.values()) == [3.5, 3.5, 3.5]
    assert seen[0].headers["content-type"] == "audio/wav"
    assert seen[0].headers["user-agent"].startswith("linspec-vocoder/")
    assert seen[0].content[:4] == b"RIFF"


def test_client_errors_and_malformed_replies_are_skipped(wavs):
    replies = iter([
        httpx.Response(415, text="unsupported"),
        httpx.Response(200, json={"value": 1.0}),
        httpx.Response(200, json={"score": 2.0}),
    ])

    def handler(request: httpx.Request) -> httpx.Response:
        return next(replies)

    with provider_for(handler) as provider:
        scores = provider.score(wavs)
    assert scores == {str(wavs[2]): 2.0}


def test_server_errors_propagate(wavs):
    with provider_for(lambda request: httpx.Response(503)) as provider:
        with pytest.raises(httpx.HTTPStatusError):
            provider.score(wavs[:1])


def test_connection_errors_are_retried(wavs):
    attempts = []

    def handler(request):
        attempts.append(request)
        if len(attempts) < 3:
            raise httpx.ConnectError("refused", request=request)
        return httpx.Response(200, content=json.dumps({"score": 4.0}))

    with provider_for(handler) as provider:
        assert provider.score_file(wavs[0]) == 4.0
    assert len(attempts) == 3


def test_aggregation_uses_normal_interval():
    results = aggregate_quality_scores({"gt": [4.0, 4.0, 4.0], "vocos": [3.0, 4.0], "empty": [], "solo": [2.5]},
                                       provider="remote")
    by_method = {r.method: r for r in results}
    assert set(by_method) == {"gt", "vocos", "solo"}
    assert by_method["gt"].ci95 == 0.0
    assert by_method["vocos"].mean == pytest.approx(3.5)
    assert by_method["vocos"].ci95 == pytest.approx(1.96 * 0.70710678 / 2 ** 0.5, rel=1e-6)
    assert by_method["solo"].count == 1 and by_method["solo"].ci95 == 0.0


def test_non_finite_scores_are_dropped(tmp_path):
    (result,) = aggregate_quality_scores({"m": [1.0, float("nan"), 3.0]}, provider="p")
    assert result.count == 2
    write_quality_csv([result], tmp_path / "quality.csv")
    lines = (tmp_path / "quality.csv").read_text().splitlines()
    assert lines == ["method,provider,mean,ci95,count", f"m,p,2.000000,{result.ci95:.6f},2"]

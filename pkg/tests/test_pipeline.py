from pathlib import Path

import pytest

from linspec_vocoder.data import STATS_NAME, write_stats
from linspec_vocoder.errors import DataError, UsageError
from linspec_vocoder.pipeline import Pipeline
from linspec_vocoder.scoring import ScoreProvider

from .conftest import tone, write_wav


class ConstantProvider(ScoreProvider):
    name = "constant"

    def score(self, paths):
        return {str(p): 3.0 for p in paths}


@pytest.fixture
def pipeline(tiny_config):
    cache = Path(tiny_config.paths.cache_dir)
    write_stats(cache / STATS_NAME, -5.0, 3.0, tiny_config.spectral)
    tiny_config.data.test_ratio = 0.5
    tiny_config.optim_classifier.steps = 2
    return Pipeline(tiny_config)


def method_dir(root: Path, base: float) -> Path:
    for i in range(12):
        write_wav(root / f"clip{i:02d}.wav", tone(base + 25 * i, 0.5))
    return root


def test_evaluate_writes_scores_figure_quality_and_report(pipeline, tmp_path):
    dirs = {"gt": method_dir(tmp_path / "gt", 200.0), "vocos": method_dir(tmp_path / "vocos", 3000.0),
            "missing": tmp_path / "missing"}
    out = tmp_path / "eval"
    table = pipeline.evaluate(dirs, out, regimes=["vocos-only"], report=out / "report.pdf",
                              provider=ConstantProvider())
    assert set(table.methods) == {"gt", "vocos"}
    assert len(table.columns) == 2
    for name in ("scores.csv", "scores.png", "quality.csv", "report.pdf"):
        assert (out / name).exists(), name
    assert "gt,constant,3.000000,0.000000" in (out / "quality.csv").read_text()


def test_evaluate_needs_ground_truth_audio(pipeline, tmp_path):
    with pytest.raises(DataError, match="ground truth"):
        pipeline.evaluate({"gt": tmp_path / "nothing"}, tmp_path / "eval")


def test_train_rejects_unknown_stage_and_lse_input_kind(pipeline):
    with pytest.raises(UsageError):
        pipeline.train("classifier")
    with pytest.raises(UsageError):
        pipeline.train("lse", input_kind="linear")


def test_synthesis_requires_checkpoints(pipeline, tmp_path):
    source = write_wav(tmp_path / "in.wav", tone(440.0, 0.2))
    with pytest.raises(DataError, match="train"):
        pipeline.synthesize(source, tmp_path / "out.wav")
    with pytest.raises(UsageError):
        pipeline.synthesize(source, tmp_path / "out.wav", dump_linear=tmp_path / "lin.lsf")
    with pytest.raises(DataError, match="not found"):
        pipeline.synthesize(tmp_path / "absent.wav", tmp_path / "out.wav")


def test_run_directories_follow_input_kind(pipeline):
    assert pipeline.run_dir("lse").name == "lse-mel"
    assert pipeline.run_dir("vocos2d").name == "vocos2d-linear"
    assert pipeline.run_dir("vocos-baseline").name == "vocos-baseline-mel"

import json

import numpy as np
import pytest
import soundfile as sf

from linspec_vocoder import __version__
from linspec_vocoder.cli import create_parser, main, parse_methods
from linspec_vocoder.errors import UsageError

from .conftest import tone, write_wav

TINY = {
    "lse": {"n_blocks": 1, "n_heads": 2, "hidden": 16, "timestep_freq_dim": 16},
    "vocos2d": {"n_blocks": 1, "hidden": 8},
    "vocos": {"n_blocks": 1, "hidden": 16},
    "discriminator": {"channels": 4},
    "da": {"max_shift": 100},
    "optim_lse": {"batch_size": 2, "segment_seconds": 0.4, "precision": "fp32", "checkpoint_every": 1},
    "optim_vocoder": {"batch_size": 2, "segment_seconds": 0.4, "checkpoint_every": 1},
    "data": {"test_ratio": 0.3, "max_workers": 1},
}


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("LINSPEC_CACHE_DIR", raising=False)
    monkeypatch.delenv("LINSPEC_CHECKPOINT_DIR", raising=False)


@pytest.fixture
def config_file(tmp_path):
    payload = dict(TINY, paths={"cache_dir": str(tmp_path / "cache"), "checkpoint_dir": str(tmp_path / "ckpt")})
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


def run(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code


def test_version(capsys):
    assert run(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_stage_is_a_usage_error(config_file):
    assert run(["train", "decoder", "-c", str(config_file)]) == 1


def test_missing_command_is_a_usage_error():
    assert run([]) == 1


def test_empty_input_directory_exits_2(tmp_path, config_file, capsys):
    (tmp_path / "empty").mkdir()
    assert run(["extract", str(tmp_path / "empty"), "-c", str(config_file), "-q"]) == 2
    assert "no audio found" in capsys.readouterr().err


def test_bad_override_exits_1(tmp_path, config_file):
    assert run(["extract", str(tmp_path), "-c", str(config_file), "--set", "lse.width=3", "-q"]) == 1


def test_synth_without_extract_exits_2(tmp_path, config_file):
    write_wav(tmp_path / "in.wav", tone(440.0, 0.2))
    assert run(["synth", str(tmp_path / "in.wav"), "-o", str(tmp_path / "out.wav"), "-c", str(config_file),
                "-q"]) == 2


def test_malformed_method_is_rejected():
    with pytest.raises(UsageError):
        parse_methods(["vocos"])
    assert parse_methods(["a=x/y", "b=z"])["a"].as_posix() == "x/y"


def test_parser_knows_every_command():
    parser = create_parser()
    args = parser.parse_args(["synth", "x.wav", "-o", "y.wav", "--use-lse", "--steps", "4", "--seed", "9"])
    assert (args.command, args.use_lse, args.steps, args.seed) == ("synth", True, 4, 9)
    args = parser.parse_args(["eval", "--gt", "gt", "--method", "vocos=v", "--regimes", "both,vocos-only"])
    assert args.method == ["vocos=v"] and args.out_dir.name == "eval"


def test_extract_builds_cache_and_is_idempotent(corpus_dir, tmp_path, config_file):
    out = tmp_path / "elsewhere"
    assert run(["extract", str(corpus_dir), str(out), "-c", str(config_file), "-q", "--no-progress"]) == 0
    assert (out / "manifest.jsonl").exists()
    assert (out / "stats.json").exists()
    records = sorted(p.name for p in (out / "features").glob("*.lsf"))
    assert len(records) == 18
    stamps = [(out / "features" / r).stat().st_mtime_ns for r in records]
    assert run(["extract", str(corpus_dir), str(out), "-c", str(config_file), "-q", "--no-progress"]) == 0
    assert [(out / "features" / r).stat().st_mtime_ns for r in records] == stamps


def test_render_command(tmp_path, config_file):
    write_wav(tmp_path / "wavs" / "a.wav", tone(600.0, 0.2))
    code = run(["render", str(tmp_path / "wavs"), str(tmp_path / "pngs"), "--sheet", str(tmp_path / "sheet.pdf"),
                "-c", str(config_file), "-q", "--no-progress"])
    assert code == 0
    assert (tmp_path / "pngs" / "a.png").exists()
    assert (tmp_path / "sheet.pdf").exists()


@pytest.mark.slow
def test_train_and_synthesize_end_to_end(corpus_dir, tmp_path, config_file):
    common = ["-c", str(config_file), "-q", "--no-progress"]
    assert run(["extract", str(corpus_dir), *common]) == 0
    assert run(["train", "lse", "--steps", "2", *common]) == 0
    assert run(["train", "vocos2d", "--steps", "2", *common]) == 0
    assert run(["train", "vocos-baseline", "--steps", "2", *common]) == 0
    assert (tmp_path / "ckpt" / "lse-mel" / "step-00000002").is_dir()
    assert (tmp_path / "ckpt" / "vocos2d-linear" / "step-00000002").is_dir()

    source = write_wav(tmp_path / "in.wav", tone(440.0, 0.3))
    assert run(["synth", str(source), "-o", str(tmp_path / "lse.wav"), "--use-lse", "--steps", "2",
                "--dump-linear", str(tmp_path / "lin.lsf"), *common]) == 0
    assert run(["synth", str(source), "-o", str(tmp_path / "base.wav"), *common]) == 0
    for name in ("lse.wav", "base.wav"):
        samples, rate = sf.read(str(tmp_path / name))
        assert rate == 44100
        assert len(samples) == 15 * 882
        assert np.all(np.isfinite(samples))
    assert (tmp_path / "lin.lsf").exists()
    # --input-kind does not apply to the LSE stage
    assert run(["train", "lse", "--input-kind", "linear", "--steps", "1", *common]) == 1

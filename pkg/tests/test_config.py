import json

import pytest

from linspec_vocoder.config import (
    GlobalConfig, OptimConfig, ScheduleConfig, SpectralConfig, describe_config_keys, diff_manifests, field_origin,
)
from linspec_vocoder.errors import ConfigurationError


def test_defaults_validate():
    config = GlobalConfig().validate()
    assert config.spectral.hop == 882
    assert config.spectral.n_freq_bins == 1025
    assert config.input_kind_for("vocos2d") == "linear"
    assert config.input_kind_for("vocos-baseline") == "mel"
    assert config.input_kind_for("lse") == "mel"


def test_file_then_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"lse": {"hidden": 64, "n_heads": 4}, "optim_vocoder": {"betas": [0.5, 0.9]},
                                "seed": 3}))
    config = GlobalConfig.from_file(path).apply_overrides(["lse.hidden=128", "paths.cache_dir=/tmp/x"])
    assert config.lse.hidden == 128
    assert config.lse.n_heads == 4
    assert config.optim_vocoder.betas == (0.5, 0.9)
    assert config.paths.cache_dir == "/tmp/x"
    assert config.seed == 3


@pytest.mark.parametrize("payload", [{"nope": {}}, {"lse": {"width": 3}}, {"lse": 5}])
def test_unknown_sections_and_keys_rejected(payload):
    with pytest.raises(ConfigurationError):
        GlobalConfig.from_dict(payload)


def test_bad_file_and_override_syntax(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        GlobalConfig.from_file(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigurationError, match="JSON"):
        GlobalConfig.from_file(tmp_path / "bad.json")
    with pytest.raises(ConfigurationError):
        GlobalConfig().apply_overrides(["hidden=3"])


def test_environment_relocates_paths_only():
    config = GlobalConfig().apply_environment({"LINSPEC_CACHE_DIR": "/c", "LINSPEC_CHECKPOINT_DIR": "/k"})
    assert (config.paths.cache_dir, config.paths.checkpoint_dir) == ("/c", "/k")


def test_input_kind_keeps_bins_consistent():
    config = GlobalConfig().with_input_kind("vocos2d", "mel").with_input_kind("vocos-baseline", "linear")
    assert (config.vocos2d.input_kind, config.vocos2d.input_bins) == ("mel", 80)
    assert (config.vocos.input_kind, config.vocos.input_bins) == ("linear", 592)
    config.validate()
    with pytest.raises(ConfigurationError):
        config.with_input_kind("lse", "linear")
    with pytest.raises(ConfigurationError):
        config.with_input_kind("vocos2d", "cqt")


def test_inconsistent_sections_rejected():
    config = GlobalConfig()
    config.lse.n_mel = 64
    with pytest.raises(ConfigurationError, match="spectral"):
        config.validate()
    with pytest.raises(ConfigurationError):
        OptimConfig(precision="bf16").validate()
    with pytest.raises(ConfigurationError):
        ScheduleConfig(decay_rate=0.0).validate()
    with pytest.raises(ConfigurationError):
        SpectralConfig(window_size=4096).validate()


def test_stage_manifests_cover_only_their_sections():
    config = GlobalConfig()
    assert set(config.stage_manifest("lse")) == {"spectral", "lse", "diffusion"}
    before = config.fingerprint_for("vocos2d")
    config.lse.hidden = 64
    assert config.fingerprint_for("vocos2d") == before
    config.spectral.norm_mean = -3.0
    assert config.fingerprint_for("vocos2d") != before


def test_spectral_fingerprint_ignores_statistics_by_default():
    base = SpectralConfig()
    with_stats = base.with_stats(-4.0, 2.0)
    assert base.fingerprint() == with_stats.fingerprint()
    assert base.fingerprint(include_stats=True) != with_stats.fingerprint(include_stats=True)
    assert len(base.fingerprint()) == 16


def test_manifest_diff_lists_changed_keys():
    assert diff_manifests({"a": {"x": 1, "y": 2}}, {"a": {"x": 1, "y": 3}, "b": {"z": 0}}) == [
        "a.y: 2 -> 3", "b.z: None -> 0",
    ]


def test_help_lists_every_section():
    text = describe_config_keys()
    for section in ("spectral", "lse", "vocos2d", "classifier", "paths"):
        assert f"[{section}]" in text
    assert "n_linear = 592" in text


def test_provenance_is_tracked_per_section():
    assert field_origin("optim_lse", "full_scale_batch_size") == "published"
    assert field_origin("optim_vocoder", "full_scale_batch_size") == "decision"
    assert field_origin("optim_vocoder", "lr_init") == "published"
    assert field_origin("optim_classifier", "lr_init") == "decision"
    text = describe_config_keys()
    classifier_keys = text.split("  [optim_classifier]\n")[1].split("\n  [")[0]
    assert "lr_init = 0.001  (decision)" in classifier_keys
    assert "(published)" not in classifier_keys

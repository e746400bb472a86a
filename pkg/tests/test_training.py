import csv
import math

import numpy as np
import pytest
import torch
from torch import nn

from linspec_vocoder.config import ScheduleConfig
from linspec_vocoder.errors import CheckpointMismatchError, DataError, DivergenceError
from linspec_vocoder.training import (
    AudioCorpus, EmaState, LrScheduleState, LseCorpus, LseTrainer, checkpoint_name, ema_update,
    exponential_lr, find_latest_checkpoint, load_checkpoint, load_inference_weights, read_weights,
    save_checkpoint, segment_clips, segment_frames, train_lse, train_vocoder, verify_manifest, write_weights,
)
from linspec_vocoder.lse_net import LseNet


def lse_corpus(n=3, frames=20, seed=0):
    rng = np.random.default_rng(seed)
    return LseCorpus(
        linear=rng.standard_normal((n, 592, frames)).astype(np.float32),
        mel=rng.standard_normal((n, 80, frames)).astype(np.float32),
    )


def test_segments_drop_short_tails_and_pad_long_ones():
    clip = np.ones(10, dtype=np.float32)
    assert [len(s) for s in segment_clips([clip], 4, sample_rate=1)] == [4, 4]
    padded = segment_clips([np.ones(7, dtype=np.float32)], 4, sample_rate=1)
    assert len(padded) == 2 and padded[1][-1] == 0.0
    with pytest.raises(DataError):
        segment_clips([], 1.0)


def test_frame_segments_pad_with_floor_value():
    values = np.zeros((2, 7), dtype=np.float32)
    pieces = segment_frames(values, 4, pad_value=-9.0)
    assert len(pieces) == 2
    assert pieces[1][:, -1].tolist() == [-9.0, -9.0]


def test_frame_segments_pad_each_bin_with_its_own_floor():
    values = np.zeros((2, 7), dtype=np.float32)
    pieces = segment_frames(values, 4, pad_value=np.array([-9.0, -3.0]))
    assert pieces[1][:, -1].tolist() == [-9.0, -3.0]
    assert pieces[1][:, :3].tolist() == [[0.0] * 3, [0.0] * 3]
    with pytest.raises(ValueError, match="bins"):
        segment_frames(values, 4, pad_value=np.zeros(3))


def test_misaligned_corpus_rejected():
    with pytest.raises(DataError):
        LseCorpus(linear=np.zeros((2, 592, 10)), mel=np.zeros((2, 80, 12)))
    with pytest.raises(DataError):
        AudioCorpus(segments=np.zeros((0, 100)))


def test_ema_update_moves_towards_weights():
    ema = EmaState(0.9, {"w": torch.zeros(3), "n": torch.zeros(1, dtype=torch.long)})
    ema_update(ema, {"w": torch.ones(3), "n": torch.tensor([5])})
    assert torch.allclose(ema.shadow["w"], torch.full((3,), 0.1))
    assert ema.shadow["n"].item() == 5
    assert ema.step == 1
    with pytest.raises(ValueError):
        ema_update(ema, {"w": torch.ones(3)})
    with pytest.raises(ValueError):
        EmaState(1.5, {})


def test_ema_decay_bounds_are_exact():
    frozen = EmaState(1.0, {"w": torch.zeros(2)})
    ema_update(frozen, {"w": torch.ones(2)})
    assert torch.equal(frozen.shadow["w"], torch.zeros(2))
    follower = EmaState(0.0, {"w": torch.zeros(2)})
    ema_update(follower, {"w": torch.ones(2)})
    assert torch.equal(follower.shadow["w"], torch.ones(2))


def test_plateau_halving_counts_from_the_best_loss():
    state = LrScheduleState(mode="plateau_halving", lr=1.0, lr_init=1.0, window=3, smoothing_half_life=0)
    lrs = [state.observe(step, 1.0) for step in range(1, 8)]
    assert lrs == [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25]
    assert state.halvings == 2
    assert state.observe(8, 0.1) == 0.25
    assert state.steps_since_best == 0


def test_smoothed_plateau_halving_on_flat_and_falling_loss():
    state = LrScheduleState(mode="plateau_halving", lr=1.0, lr_init=1.0, window=50, smoothing_half_life=100)
    for step in range(1, 501):
        state.observe(step, 1.0)
    assert state.halvings == 9
    assert state.lr == 0.5 ** 9
    assert state.steps_since_best == 49
    for step in range(501, 601):
        state.observe(step, 0.0)
    # One half-life of zero loss halves the smoothed value
    assert state.smoothed_loss == pytest.approx(0.5, rel=1e-9)
    assert state.best_loss == state.smoothed_loss
    assert state.steps_since_best == 0
    assert state.halvings == 9


def test_exponential_decay_per_interval():
    state = LrScheduleState.from_config(ScheduleConfig(mode="exponential", decay_rate=0.5, decay_interval=10), 1.0)
    assert exponential_lr(state, 9) == 1.0
    assert exponential_lr(state, 10) == 0.5
    assert state.observe(25, 123.0) == 0.25


def test_weights_file_round_trips_dtypes(tmp_path):
    tensors = {
        "a": torch.randn(3, 4),
        "b": torch.arange(5, dtype=torch.int64),
        "c": torch.tensor(2.5, dtype=torch.float64),
        "d": torch.tensor([True, False]),
    }
    write_weights(tmp_path / "w.bin", tensors)
    loaded = read_weights(tmp_path / "w.bin")
    assert set(loaded) == set(tensors)
    for name, value in tensors.items():
        assert loaded[name].dtype == value.dtype
        assert torch.equal(loaded[name], value)


def test_bad_weights_file_rejected(tmp_path):
    (tmp_path / "w.bin").write_bytes(b"NOTACKPT")
    with pytest.raises(DataError):
        read_weights(tmp_path / "w.bin")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing")


def test_checkpoint_replaces_existing_directory(tmp_path):
    target = tmp_path / "run" / checkpoint_name(3)
    save_checkpoint(target, {"s": {"k": 1}}, {"x": torch.zeros(1)}, {"step": 3})
    save_checkpoint(target, {"s": {"k": 2}}, {"x": torch.ones(1)}, {"step": 3})
    loaded = load_checkpoint(target)
    assert loaded.manifest == {"s": {"k": 2}}
    assert loaded.tensors["x"].item() == 1.0
    assert sorted(p.name for p in target.parent.iterdir()) == ["step-00000003"]
    assert find_latest_checkpoint(target.parent) == target


def test_manifest_mismatch_names_the_differing_keys():
    with pytest.raises(CheckpointMismatchError) as info:
        verify_manifest({"lse": {"hidden": 320}}, {"lse": {"hidden": 32}}, "ckpt")
    assert info.value.differences == ["lse.hidden: 320 -> 32"]
    assert info.value.exit_code == 2


def test_lse_training_writes_checkpoints_and_log(tmp_path, tiny_config):
    run_dir = tmp_path / "lse"
    state = train_lse(lse_corpus(), tiny_config, steps=3, run_dir=run_dir)
    assert state.step == 3
    assert sorted(p.name for p in run_dir.glob("step-*")) == ["step-00000002", "step-00000003"]
    with open(run_dir / "loss.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [int(r["step"]) for r in rows] == [1, 2, 3]
    assert all(math.isfinite(float(r["loss"])) for r in rows)

    net = LseNet(tiny_config.lse)
    meta = load_inference_weights(net, run_dir / "step-00000003", "lse", tiny_config)
    assert meta["step"] == 3
    assert torch.equal(net.final_layer.linear.weight, state.ema.shadow["final_layer.linear.weight"])


def test_resume_matches_uninterrupted_run(tmp_path, tiny_config):
    corpus = lse_corpus()
    straight = train_lse(corpus, tiny_config, steps=4, run_dir=tmp_path / "a")
    train_lse(corpus, tiny_config, steps=2, run_dir=tmp_path / "b")
    resumed = train_lse(corpus, tiny_config, steps=4, run_dir=tmp_path / "b", resume=True)
    assert resumed.step == 4
    for name, value in straight.model.state_dict().items():
        assert torch.allclose(resumed.model.state_dict()[name], value, atol=1e-6), name
    with open(tmp_path / "b" / "loss.csv", newline="") as f:
        assert [int(r["step"]) for r in csv.DictReader(f)] == [1, 2, 3, 4]


def test_resume_without_checkpoint_fails(tmp_path, tiny_config):
    with pytest.raises(DataError, match="no checkpoint"):
        train_lse(lse_corpus(), tiny_config, steps=2, run_dir=tmp_path / "empty", resume=True)


def test_resume_under_changed_config_fails(tmp_path, tiny_config):
    train_lse(lse_corpus(), tiny_config, steps=2, run_dir=tmp_path / "run")
    tiny_config.lse.hidden = 64
    with pytest.raises(CheckpointMismatchError):
        train_lse(lse_corpus(), tiny_config, steps=3, run_dir=tmp_path / "run", resume=True)


class ExplodingTrainer(LseTrainer):
    def train_step(self, state):
        return {"loss": float("nan")}


def test_divergence_writes_diagnostic_checkpoint(tmp_path, tiny_config):
    trainer = ExplodingTrainer(lse_corpus(), tiny_config, tmp_path / "run")
    with pytest.raises(DivergenceError):
        trainer.fit(5)
    assert (tmp_path / "run" / "diagnostic-step-00000001" / "weights.bin").exists()


def test_vocoder_alternates_discriminator_and_generator(tmp_path, tiny_config):
    segments = np.random.default_rng(0).uniform(-0.3, 0.3, size=(2, 17640)).astype(np.float32)
    tiny_config.discriminator.channels = 4
    state = train_vocoder(AudioCorpus(segments=segments), tiny_config, "vocos2d", steps=2,
                          run_dir=tmp_path / "voc")
    assert state.update_log == ["D", "G", "D", "G"]
    assert all(math.isfinite(h["discriminator_loss"]) for h in state.history)
    assert find_latest_checkpoint(tmp_path / "voc").name == "step-00000002"
    with pytest.raises(ValueError):
        train_vocoder(AudioCorpus(segments=segments), tiny_config, "lse", steps=1, run_dir=tmp_path / "x")

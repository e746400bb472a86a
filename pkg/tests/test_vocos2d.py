import math

import numpy as np
import pytest
import torch

from linspec_vocoder.config import BaselineVocosConfig, DAConfig, DiscriminatorConfig, Vocos2DConfig
from linspec_vocoder.lse_net import count_parameters
from linspec_vocoder.models import LinearSpec, MelSpec
from linspec_vocoder.vocos2d import (
    AugmentDraw, BaselineVocosGenerator, GanCriterion, MultiResolutionDiscriminator, Vocos2DGenerator,
    apply_gain, circular_shift, combine_log_magnitude_phase, da_transform, draw_augmentation, gan_losses,
    group_bins, rotate_phase, transposed_freq_geometry, vocode,
)

from .conftest import tone


def test_baseline_default_parameter_count(spectral):
    assert count_parameters(BaselineVocosGenerator(BaselineVocosConfig(), spectral)) == 17_146_370


def test_transposed_conv_maps_grid_to_stft_bins():
    assert transposed_freq_geometry(37, 1025) == (29, 28, 6)
    kernel, stride, padding = transposed_freq_geometry(37, 1025)
    assert (37 - 1) * stride - 2 * padding + kernel == 1025


def test_group_bins_pads_top_rows():
    x = torch.arange(10.0).reshape(1, 10, 1)
    grouped = group_bins(x, 4)
    assert grouped.shape == (1, 4, 1, 3)
    assert grouped[0, 0, 0].tolist() == [0.0, 1.0, 2.0]
    assert grouped[0, 3, 0].tolist() == [9.0, 0.0, 0.0]


def test_magnitude_is_clipped():
    spec = combine_log_magnitude_phase(torch.tensor([10.0, 0.0]), torch.tensor([0.0, math.pi / 2]))
    assert spec.abs()[0].item() == pytest.approx(100.0)
    assert spec[1].imag.item() == pytest.approx(1.0)


def test_vocos2d_output_length(spectral, tiny_vocos2d):
    gen = Vocos2DGenerator(tiny_vocos2d, spectral)
    audio = gen(torch.randn(2, 592, 10))
    assert audio.shape == (2, 10 * spectral.hop)
    m, phi = gen.head(gen.backbone(torch.randn(1, 592, 3)))
    assert m.shape == phi.shape == (1, 1025, 3)


def test_vocos2d_accepts_mel_input(spectral):
    cfg = Vocos2DConfig(n_blocks=1, hidden=8, input_kind="mel", input_bins=80)
    assert Vocos2DGenerator(cfg, spectral)(torch.randn(1, 80, 4)).shape == (1, 4 * spectral.hop)


def test_vocos2d_rejects_wrong_bins(spectral, tiny_vocos2d):
    with pytest.raises(ValueError):
        Vocos2DGenerator(tiny_vocos2d, spectral)(torch.randn(1, 80, 4))
    with pytest.raises(ValueError):
        Vocos2DGenerator(Vocos2DConfig(input_bins=80), spectral)


def test_baseline_vocode_produces_clip(spectral, tiny_baseline):
    gen = BaselineVocosGenerator(tiny_baseline, spectral)
    clip = vocode(gen, MelSpec(values=np.full((80, 6), -3.0, dtype=np.float32)))
    assert len(clip) == 6 * spectral.hop
    assert clip.sample_rate == 44100
    assert np.all(np.isfinite(clip.samples))


def test_vocode_linear_with_vocos2d(spectral, tiny_vocos2d):
    clip = vocode(Vocos2DGenerator(tiny_vocos2d, spectral), LinearSpec(values=np.zeros((592, 5), dtype=np.float32)))
    assert len(clip) == 5 * spectral.hop


def test_identity_draw_leaves_audio_untouched():
    w = torch.from_numpy(tone(440.0, 0.05)).unsqueeze(0).double()
    assert torch.allclose(da_transform(w, AugmentDraw.identity(1)), w, atol=1e-10)


def test_gain_shift_and_rotation():
    w = torch.from_numpy(tone(1000.0, 0.1)).unsqueeze(0).double()
    assert torch.allclose(apply_gain(w, torch.tensor([6.0])), w * 10 ** 0.3)
    assert torch.equal(circular_shift(w, torch.tensor([5])), torch.roll(w, 5, dims=-1))
    assert torch.allclose(rotate_phase(w, torch.tensor([math.pi])), -w, atol=1e-8)
    rotated = rotate_phase(w, torch.tensor([1.0]))
    # 1 kHz fits a whole number of periods, so the clip has no DC and energy is kept
    assert rotated.pow(2).sum().item() == pytest.approx(w.pow(2).sum().item(), rel=1e-6)


def test_draws_stay_in_range():
    cfg = DAConfig(loudness_range_db=6.0, max_shift=100)
    draw = draw_augmentation(256, cfg, torch.Generator().manual_seed(0))
    assert draw.gain_db.abs().max() <= 6.0
    assert 0 <= int(draw.shift.min()) and int(draw.shift.max()) <= 100
    assert 0 <= float(draw.theta.min()) and float(draw.theta.max()) < 2 * math.pi
    off = draw_augmentation(4, DAConfig(enabled=False))
    assert torch.count_nonzero(off.gain_db) == 0 and torch.count_nonzero(off.shift) == 0


def test_da_transform_gradient_matches_central_differences():
    w = (0.3 * torch.randn(2, 400, dtype=torch.float64)).requires_grad_(True)
    draw = draw_augmentation(2, DAConfig(max_shift=100), torch.Generator().manual_seed(1))
    loss = lambda v: torch.tanh(da_transform(v, draw)).pow(2).sum()
    assert torch.autograd.gradcheck(loss, (w,), eps=1e-6, atol=1e-6, rtol=1e-3)


def test_discriminator_needs_two_resolutions():
    with pytest.raises(ValueError):
        DiscriminatorConfig(resolutions=[(512, 128, 512)]).validate()


@pytest.fixture
def criterion(spectral):
    disc = MultiResolutionDiscriminator(DiscriminatorConfig(channels=4))
    return GanCriterion(disc, spectral)


def test_discriminator_step_does_not_update_generator_output(criterion):
    real = torch.randn(2, 8820) * 0.1
    fake = (torch.randn(2, 8820) * 0.1).requires_grad_(True)
    loss = criterion.discriminator_loss(real, fake, AugmentDraw.identity(2))
    loss.backward()
    assert fake.grad is None
    assert criterion.discriminator.discriminators[0].conv_post.parametrizations.weight.original0.grad is not None


def test_identical_real_and_fake_have_no_reconstruction_loss(criterion):
    real = torch.from_numpy(tone(330.0, 0.2)).unsqueeze(0)
    report = gan_losses(real, real.clone(), criterion)
    assert report.feature_matching == pytest.approx(0.0, abs=1e-6)
    assert report.spectral_l1 == pytest.approx(0.0, abs=1e-6)
    assert math.isfinite(report.total) and math.isfinite(report.discriminator_loss)
    with pytest.raises(ValueError):
        gan_losses(real, real[:, :-1], criterion)

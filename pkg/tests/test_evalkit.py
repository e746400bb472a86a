import logging
import math

import numpy as np
import pytest
import torch
import matplotlib.pyplot as plt

from linspec_vocoder.errors import DataError
from linspec_vocoder.evalkit import (
    REGIMES, ClassifierTrainer, ConvNeXtClassifier, LabeledClips, build_labeled_clips, classifier_auc,
    classifier_features, classifier_run_dir, crop_features, evaluate_regimes, load_method_dir, read_score_csv,
    render_directory, render_score_figure, render_spectrogram_image, score_matrix, tone_row, write_score_csv,
)
from linspec_vocoder.models import ScoreCell, ScoreTable, Split, WaveformClip

from .conftest import SR, tone, write_wav


def test_scores_are_probabilities(tiny_classifier):
    model = ConvNeXtClassifier(tiny_classifier).eval()
    scores = model.score(torch.randn(3, 592, 100))
    assert scores.shape == (3,)
    assert torch.all((scores > 0) & (scores < 1))


@pytest.mark.parametrize("bins,frames", [(592, 100), (1025, 200), (80, 64)])
def test_feature_map_covers_ceil_of_input(tiny_classifier, bins, frames):
    model = ConvNeXtClassifier(tiny_classifier)
    h = model.forward_features(torch.randn(1, bins, frames))
    assert h.shape[2:] == (math.ceil(bins / 64), math.ceil(frames / 64))


def test_min_padding_inside_a_cell_does_not_change_the_score(tiny_classifier):
    model = ConvNeXtClassifier(tiny_classifier).eval()
    x = torch.randn(1, 592, 100)
    padded = torch.cat([x, torch.full((1, 592, 20), float(x.min()))], dim=-1)
    with torch.no_grad():
        assert torch.allclose(model(x), model(padded), atol=1e-6)
        assert torch.allclose(model(x), model(padded, lengths=torch.tensor([100])), atol=1e-6)


def test_classifier_features_shapes(spectral):
    samples = torch.from_numpy(tone(440.0, 0.5).astype(np.float64))
    assert classifier_features(samples, "raw_log_magnitude", spectral).shape == (1025, 25)
    assert classifier_features(samples, "linear_filterbank", spectral).shape == (592, 25)
    with pytest.raises(ValueError):
        classifier_features(samples, "mel", spectral)


def test_crop_pads_short_items_with_their_minimum():
    rng = np.random.default_rng(0)
    values = torch.arange(6.0).reshape(2, 3)
    cropped = crop_features(values, 5, rng)
    assert cropped.shape == (2, 5)
    assert cropped[:, 3:].eq(0.0).all()
    assert crop_features(torch.randn(2, 50), 10, rng).shape == (2, 10)


def clips_of(freqs, seconds=0.5):
    return {f"clip{i:02d}": WaveformClip(samples=tone(f, seconds), sample_rate=SR) for i, f in enumerate(freqs)}


def test_labeled_clips_follow_the_regime(tiny_config):
    methods = {"gt": clips_of([300.0] * 12), "vocos": clips_of([5000.0] * 12), "mdctgan": clips_of([900.0] * 12)}
    tiny_config.data.test_ratio = 0.5
    train = build_labeled_clips(methods, REGIMES["vocos-only"], "linear_filterbank", tiny_config)
    test = build_labeled_clips(methods, REGIMES["vocos-only"], "linear_filterbank", tiny_config, Split.TEST)
    assert not {i.split("/")[1] for i in train.ids} & {i.split("/")[1] for i in test.ids}
    assert all(i.split("/")[0] in ("gt", "vocos") for i in train.ids)
    assert train.n_positive + train.n_negative == len(train.ids)


def test_single_class_corpus_rejected(tiny_config, tmp_path):
    clips = LabeledClips(features=[torch.zeros(592, 30)] * 2, labels=np.array([1, 1]), ids=["a", "b"])
    with pytest.raises(DataError, match="both classes"):
        ClassifierTrainer(clips, tiny_config, tmp_path)


def test_heavy_imbalance_reweights_positives(tiny_config, tmp_path, caplog):
    labels = np.array([1] * 11 + [0])
    clips = LabeledClips(features=[torch.zeros(592, 30)] * 12, labels=labels, ids=[str(i) for i in range(12)])
    with caplog.at_level(logging.WARNING):
        trainer = ClassifierTrainer(clips, tiny_config, tmp_path)
    assert trainer.criterion.pos_weight.item() == pytest.approx(1 / 11)
    assert "imbalance" in caplog.text


def test_auc_is_a_probability(tiny_classifier):
    model = ConvNeXtClassifier(tiny_classifier)
    clips = LabeledClips(features=[torch.randn(592, 40) for _ in range(4)], labels=np.array([1, 0, 1, 0]),
                         ids=list("abcd"))
    assert 0.0 <= classifier_auc(model, clips) <= 1.0


def test_evaluation_scores_every_method_and_reuses_classifiers(tiny_config, tmp_path):
    tiny_config.data.test_ratio = 0.5
    tiny_config.optim_classifier.steps = 2
    methods = {"gt": clips_of([300.0 + 10 * i for i in range(12)]),
               "vocos": clips_of([4000.0 + 10 * i for i in range(12)])}
    called = []
    table = evaluate_regimes(methods, tiny_config, tmp_path / "ckpt", regimes=["vocos-only", "mdctgan-only"],
                             input_kinds=("linear_filterbank",), on_classifier=lambda r, k: called.append((r, k)))
    # mdctgan-only has no negatives and is skipped
    assert called == [("vocos-only", "linear_filterbank")]
    assert set(table.methods) == {"gt", "vocos"}
    assert all(0.0 <= c.mean_score <= 1.0 and c.seen for c in table.cells)
    assert classifier_run_dir(tmp_path / "ckpt", "vocos-only", "linear_filterbank").is_dir()

    again = evaluate_regimes(methods, tiny_config, tmp_path / "ckpt", regimes=["vocos-only"],
                             input_kinds=("linear_filterbank",))
    for cell in table.cells:
        assert again.get(cell.method, cell.regime, cell.input_kind).mean_score == pytest.approx(cell.mean_score)


def test_evaluation_requires_ground_truth(tiny_config, tmp_path):
    with pytest.raises(DataError, match="gt"):
        evaluate_regimes({"vocos": clips_of([1000.0])}, tiny_config, tmp_path)
    with pytest.raises(ValueError, match="unknown regime"):
        evaluate_regimes({"gt": clips_of([1000.0])}, tiny_config, tmp_path, regimes=["nope"])


@pytest.mark.slow
def test_all_regimes_separate_tones_from_noise(tiny_config, tmp_path):
    tiny_config.data.test_ratio = 0.5
    tiny_config.optim_classifier.steps = 60
    rng = np.random.default_rng(1)
    noise = {f"clip{i:02d}": WaveformClip(samples=0.3 * rng.standard_normal(SR // 2).astype(np.float32))
             for i in range(12)}
    methods = {"gt": clips_of([300.0 + 50 * i for i in range(12)]), "vocos": noise, "mdctgan": dict(noise),
               "lse_vocos2d": dict(noise)}
    table = evaluate_regimes(methods, tiny_config, tmp_path / "ckpt")
    assert len(table.columns) == len(REGIMES) * 2
    for regime, kind in table.columns:
        assert table.get("gt", regime, kind).mean_score > table.get("vocos", regime, kind).mean_score


def test_score_csv_round_trip(tmp_path):
    table = ScoreTable()
    table.add(ScoreCell("gt", True, "both", "linear_filterbank", 0.8125, 5))
    table.add(ScoreCell("lse_vocos2d", False, "both", "linear_filterbank", 0.25, 4))
    write_score_csv(table, tmp_path / "scores.csv")
    lines = (tmp_path / "scores.csv").read_text().splitlines()
    assert lines[0] == "method,seen,regime,input_kind,mean_score,count"
    assert lines[2] == "lse_vocos2d,false,both,linear_filterbank,0.250000,4"
    loaded = read_score_csv(tmp_path / "scores.csv")
    assert loaded.get("gt", "both", "linear_filterbank").seen is True
    matrix, methods, columns = score_matrix(loaded)
    assert methods == ["gt", "lse_vocos2d"] and columns == [("both", "linear_filterbank")]
    assert matrix[:, 0].tolist() == [0.8125, 0.25]
    assert render_score_figure(loaded, tmp_path / "scores.png").stat().st_size > 0


def test_scores_outside_unit_interval_rejected():
    with pytest.raises(ValueError):
        ScoreTable().add(ScoreCell("gt", True, "both", "linear_filterbank", 1.5, 1))


def _brightness(image: np.ndarray) -> np.ndarray:
    return image[..., :3].sum(axis=-1)


def test_tone_renders_at_its_frequency_row(tmp_path, spectral):
    path = render_spectrogram_image(WaveformClip(samples=tone(1000.0, 0.5)), tmp_path / "tone.png", spectral)
    image = plt.imread(path)
    assert image.shape[:2] == (1025, 25)
    assert abs(int(np.argmax(_brightness(image)[:, 12])) - tone_row(1000.0, spectral)) <= 1


def test_silence_renders_a_uniform_image(tmp_path, spectral):
    path = render_spectrogram_image(WaveformClip(samples=np.zeros(SR // 4, dtype=np.float32)),
                                    tmp_path / "silence.png", spectral)
    brightness = _brightness(plt.imread(path))
    assert brightness.max() == brightness.min()


def test_rendering_is_byte_deterministic(tmp_path, spectral):
    clip = WaveformClip(samples=tone(700.0, 0.3))
    first = render_spectrogram_image(clip, tmp_path / "a.png", spectral).read_bytes()
    second = render_spectrogram_image(clip, tmp_path / "b.png", spectral).read_bytes()
    assert first == second


def test_render_rejects_wrong_rate(tmp_path, spectral):
    with pytest.raises(ValueError):
        render_spectrogram_image(WaveformClip(samples=tone(700.0, 0.3, 22050), sample_rate=22050),
                                 tmp_path / "x.png", spectral)


def test_render_directory(tmp_path, spectral):
    write_wav(tmp_path / "wavs" / "a.wav", tone(500.0, 0.2))
    write_wav(tmp_path / "wavs" / "b.wav", tone(800.0, 0.2, 48000), 48000)
    written = render_directory(tmp_path / "wavs", tmp_path / "pngs", spectral)
    assert [p.name for p in written] == ["a.png", "b.png"]
    assert load_method_dir(tmp_path / "wavs", spectral)["b"].sample_rate == SR
    (tmp_path / "none").mkdir()
    with pytest.raises(DataError, match="no audio found"):
        render_directory(tmp_path / "none", tmp_path / "pngs", spectral)

"""Orchestrates the extract, train, synthesize, evaluate and render workflows."""

from contextlib import contextmanager
from copy import deepcopy
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Union
import logging

import numpy as np
import soundfile as sf
import torch

from .config import GlobalConfig
from .data import (
    AUDIO_EXTENSIONS, MANIFEST_NAME, STATS_NAME, build_audio_corpus, build_lse_corpus, cache_features,
    compute_norm_stats, find_audio, ingest, load_features, load_stats, load_wav, read_manifest, scalar_view,
    write_feature_record, write_stats,
)
from .diffusion import NoiseSchedule, SamplerPlan, dpmpp_2m_sample
from .errors import DataError, UsageError
from .evalkit import (
    GT, evaluate_regimes, load_method_dir, render_directory, render_score_figure, split_ids, write_score_csv,
)
from .lse_net import LseNet, pad_frames
from .models import FeatureCacheRecord, FeatureKind, LinearSpec, MelSpec, QualityScore, ScoreTable, Split, WaveformClip
from .report import ReportGenerator
from .scoring import HttpScoreProvider, ScoreProvider, aggregate_quality_scores, write_quality_csv
from .spectral import denormalize_values, get_frontend, normalize_values, normalized_floor
from .training import (
    TrainState, build_generator, find_latest_checkpoint, load_inference_weights, train_lse, train_vocoder,
)
from .vocos2d import vocode

logger = logging.getLogger(__name__)

STAGES = ("lse", "vocos2d", "vocos-baseline")
VOCODER_STAGES = {"vocos2d": "vocos2d", "vocos": "vocos-baseline"}

Advance = Callable[..., None]


class Pipeline:
    """Wires the data, training, sampling and evaluation modules into the command workflows."""

    def __init__(self, config: GlobalConfig, device: Union[str, torch.device] = "cpu"):
        self.config = config.validate()
        self.device = torch.device(device)
        self.cache_dir = Path(config.paths.cache_dir)
        self.checkpoint_root = Path(config.paths.checkpoint_dir)

    # Progress hooks; the rich subclass draws bars and panels.

    @contextmanager
    def _track(self, description: str, total: Optional[int]) -> Iterator[Advance]:
        yield lambda *args: None

    def banner(self, title: str, lines: Sequence[str]):
        for line in lines:
            logger.info(f"{title}: {line}")

    # -- extract -----------------------------------------------------------

    def extract(self, in_dir: Union[str, Path], force: bool = False) -> List:
        """Ingest audio, compute normalization statistics and fill the feature cache."""
        spectral = self.config.spectral
        manifest_path = self.cache_dir / MANIFEST_NAME
        self.banner("Extract", [f"Input: {in_dir}", f"Cache: {self.cache_dir}"])

        if manifest_path.exists() and not force:
            manifest = read_manifest(manifest_path)
            logger.info(f"Manifest already present with {len(manifest)} clips; skipping ingestion")
        else:
            total = len(find_audio(in_dir))
            with self._track("Ingesting audio", total) as advance:
                manifest = ingest(in_dir, self.cache_dir, spectral, test_ratio=self.config.data.test_ratio,
                                  seed=self.config.seed, max_workers=self.config.data.max_workers,
                                  on_item=advance)

        stats_path = self.cache_dir / STATS_NAME
        stats_ready = False
        if not force:
            try:
                self.config.spectral = load_stats(self.cache_dir, spectral)
                stats_ready = True
                logger.info(f"Normalization statistics already present at {stats_path}")
            except DataError as e:
                logger.debug(f"Recomputing statistics: {e}")
        if not stats_ready:
            mean, std = compute_norm_stats(manifest, spectral, self.cache_dir)
            write_stats(stats_path, mean, std, spectral)
            self.config.spectral = spectral.with_stats(mean, std)
            logger.info(f"Normalization statistics written to {stats_path}")

        with self._track("Caching features", len(manifest)) as advance:
            cache_features(manifest, self.config.spectral, self.cache_dir, force=force,
                           max_workers=self.config.data.max_workers, on_item=advance)
        return manifest

    # -- train -------------------------------------------------------------

    def _with_stats(self) -> GlobalConfig:
        config = deepcopy(self.config)
        config.spectral = load_stats(self.cache_dir, config.spectral)
        return config

    def run_dir(self, stage: str, config: Optional[GlobalConfig] = None) -> Path:
        config = config or self.config
        return self.checkpoint_root / f"{stage}-{config.input_kind_for(stage)}"

    def train(self, stage: str, steps: Optional[int] = None, resume: bool = False,
              input_kind: Optional[str] = None) -> TrainState:
        if stage not in STAGES:
            raise UsageError(f"Unknown stage: {stage}. Available: {', '.join(STAGES)}")
        config = self._with_stats()
        if input_kind is not None:
            if stage == "lse":
                raise UsageError("--input-kind applies to vocoder stages only")
            config.with_input_kind(stage, input_kind)
        manifest = read_manifest(self.cache_dir / MANIFEST_NAME)
        optim = config.optim_lse if stage == "lse" else config.optim_vocoder
        total = steps or optim.steps
        run_dir = self.run_dir(stage, config)
        self.banner("Train", [f"Stage: {stage}", f"Steps: {total}", f"Run directory: {run_dir}"])

        with self._track(f"Training {stage}", total) as advance:
            def progress(step: int, _total: int, loss: float):
                advance(f"Training {stage} (loss {loss:.4f})")

            if stage == "lse":
                corpus = build_lse_corpus(manifest, config.spectral, self.cache_dir, optim.segment_seconds)
                return train_lse(corpus, config, total, run_dir, resume, self.device, progress)
            corpus = build_audio_corpus(manifest, config.spectral, self.cache_dir, optim.segment_seconds)
            return train_vocoder(corpus, config, stage, total, run_dir, resume, self.device, progress)

    # -- synthesize --------------------------------------------------------

    def _load_latest(self, model: torch.nn.Module, stage: str, config: GlobalConfig) -> torch.nn.Module:
        run_dir = self.run_dir(stage, config)
        latest = find_latest_checkpoint(run_dir)
        if latest is None:
            raise DataError(f"No {stage} checkpoint under {run_dir}; run `train {stage}` first")
        load_inference_weights(model, latest, stage, config)
        return model.to(self.device)

    def mel_from_source(self, source: Union[str, Path], config: GlobalConfig) -> MelSpec:
        """Un-normalized mel from a WAV path, or from the feature cache given a clip id."""
        path = Path(source)
        if path.suffix.lower() in AUDIO_EXTENSIONS and not path.exists():
            raise DataError(f"Input audio not found: {path}")
        if path.is_file():
            clip = load_wav(path, config.spectral)
            frontend = get_frontend(config.spectral)
            with torch.no_grad():
                values = frontend.mel(torch.from_numpy(clip.samples.astype(np.float64))).numpy()
            return MelSpec(values=values)
        entries = {e.id: e for e in read_manifest(self.cache_dir / MANIFEST_NAME)}
        if str(source) not in entries:
            raise DataError(f"{source} is neither a readable file nor a cached clip id")
        return MelSpec(values=load_features(self.cache_dir, entries[str(source)], FeatureKind.MEL, config.spectral))

    def estimate_linear(self, mel: MelSpec, config: GlobalConfig, seed: int,
                        n_sample_steps: Optional[int] = None) -> LinearSpec:
        """Mel -> normalized-space sampling -> un-normalized linear spectrogram."""
        lse = self._load_latest(LseNet(config.lse), "lse", config)
        schedule = NoiseSchedule.from_config(config.diffusion)
        plan = SamplerPlan.from_config(config.diffusion, schedule, n_sample_steps)
        mel_cfg = scalar_view(config.spectral)
        c = torch.from_numpy(normalize_values(mel.values.astype(np.float64), mel_cfg).astype(np.float32))
        c = pad_frames(c.unsqueeze(0), config.lse.patch_t, normalized_floor(mel_cfg)).to(self.device)
        with self._track("Sampling linear spectrogram", plan.n_sample_steps) as advance:
            x = dpmpp_2m_sample(lse, c, plan, schedule, seed, config.lse.n_linear,
                                callback=lambda i, n: advance())
        values = x[0, :, : mel.n_frames].double().cpu().numpy()
        return LinearSpec(values=denormalize_values(values, config.spectral))

    def synthesize(self, source: Union[str, Path], output: Union[str, Path], use_lse: bool = False,
                   vocoder: Optional[str] = None, seed: Optional[int] = None, n_sample_steps: Optional[int] = None,
                   dump_linear: Optional[Union[str, Path]] = None) -> WaveformClip:
        """mel -> [LSE ->] vocoder -> WAV; the default vocoder is Vocos2D with LSE and Vocos without."""
        config = self._with_stats()
        stage = VOCODER_STAGES[vocoder] if vocoder else ("vocos2d" if use_lse else "vocos-baseline")
        config.with_input_kind(stage, "linear" if use_lse else "mel")
        if dump_linear is not None and not use_lse:
            raise UsageError("--dump-linear needs --use-lse")
        seed = config.seed if seed is None else seed
        self.banner("Synthesize", [f"Source: {source}", f"LSE: {'on' if use_lse else 'off'}", f"Vocoder: {stage}"])

        spec = self.mel_from_source(source, config)
        if use_lse:
            spec = self.estimate_linear(spec, config, seed, n_sample_steps)
            if dump_linear is not None:
                record = FeatureCacheRecord(Path(source).stem, FeatureKind.LINEAR, spec.values,
                                            config.spectral.fingerprint())
                write_feature_record(Path(dump_linear), record)
                logger.info(f"Linear spectrogram written to {dump_linear}")

        generator = self._load_latest(build_generator(stage, config), stage, config)
        clip = vocode(generator, spec, config.spectral.sample_rate)
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        sf.write(str(output), clip.samples, clip.sample_rate, subtype="FLOAT")
        logger.info(f"Wrote {clip.duration:.2f} s of audio to {output}")
        return clip

    # -- evaluate / render -------------------------------------------------

    def evaluate(self, method_dirs: Dict[str, Union[str, Path]], out_dir: Union[str, Path],
                 regimes: Optional[Sequence[str]] = None, report: Optional[Union[str, Path]] = None,
                 provider: Optional[ScoreProvider] = None) -> ScoreTable:
        config = self._with_stats()
        out_dir = Path(out_dir)
        methods = {}
        for name, directory in method_dirs.items():
            clips = load_method_dir(directory, config.spectral)
            if not clips:
                if name == GT:
                    raise DataError(f"no audio found for ground truth in {directory}")
                logger.warning(f"No audio found for method {name} in {directory}; row omitted")
                continue
            methods[name] = clips
        self.banner("Evaluate", [f"Methods: {', '.join(methods)}", f"Output: {out_dir}"])

        n_regimes = len(regimes) if regimes else 4
        with self._track("Training and scoring classifiers", 2 * n_regimes) as advance:
            table = evaluate_regimes(methods, config, self.checkpoint_root, regimes, device=self.device,
                                     on_classifier=lambda regime, kind: advance())
        csv_path = out_dir / "scores.csv"
        write_score_csv(table, csv_path)
        figure = render_score_figure(table, out_dir / "scores.png")
        logger.info(f"Score table written to {csv_path}")

        quality: List[QualityScore] = []
        if provider is not None:
            quality = self.quality_scores(method_dirs, methods, provider, config)
            write_quality_csv(quality, out_dir / "quality.csv")
        if report is not None:
            ReportGenerator().generate_evaluation_report(table, report, figure, quality, seed=config.seed)
            logger.info(f"Evaluation report written to {report}")
        return table

    def quality_scores(self, method_dirs: Dict[str, Union[str, Path]], methods: Dict[str, Dict[str, WaveformClip]],
                       provider: ScoreProvider, config: GlobalConfig) -> List[QualityScore]:
        """External scores over each method's held-out files."""
        scores = {}
        for name, clips in methods.items():
            ids = split_ids(sorted(clips), Split.TEST, config.data.test_ratio, config.seed)
            paths = [Path(method_dirs[name]) / f"{i}.wav" for i in ids]
            scores[name] = list(provider.score(paths).values())
        return aggregate_quality_scores(scores, provider.name)

    def render(self, wav_dir: Union[str, Path], png_dir: Union[str, Path],
               sheet: Optional[Union[str, Path]] = None) -> List[Path]:
        total = len(list(Path(wav_dir).glob("*.wav")))
        with self._track("Rendering spectrograms", total) as advance:
            images = render_directory(wav_dir, png_dir, self.config.spectral, on_item=advance)
        if sheet is not None:
            ReportGenerator().generate_study_sheet(images, sheet, seed=self.config.seed)
            logger.info(f"Study sheet written to {sheet}")
        return images


def remote_provider(endpoint: Optional[str]) -> Optional[ScoreProvider]:
    return HttpScoreProvider(endpoint) if endpoint else None


class PipelineWithProgress(Pipeline):
    """Pipeline with rich progress bar support."""

    @contextmanager
    def _track(self, description: str, total: Optional[int]) -> Iterator[Advance]:
        from rich.progress import Progress, SpinnerColumn, TextColumn, BarColumn, TaskProgressColumn, TimeRemainingColumn
        from rich.console import Console

        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            TimeRemainingColumn(),
            console=Console(stderr=True),
            transient=total is None,
        ) as progress:
            task = progress.add_task(f"[cyan]{description}...", total=total)

            def advance(label: Optional[str] = None, *_):
                if isinstance(label, str) and label.startswith(description):
                    progress.update(task, description=f"[cyan]{label}")
                progress.advance(task)

            yield advance

    def banner(self, title: str, lines: Sequence[str]):
        from rich.console import Console
        from rich.panel import Panel

        Console(stderr=True).print(Panel("\n".join(f"[bold]{line}[/bold]" for line in lines),
                                         title=f"linspec-vocoder {title.lower()}", border_style="blue"))

"""Corpus ingestion, manifests, normalization statistics and the feature cache."""

from concurrent.futures import ThreadPoolExecutor, as_completed
from math import gcd
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union
import hashlib
import json
import logging
import struct

import numpy as np
import soundfile as sf
import torch
from scipy.signal import resample_poly

from .config import SpectralConfig
from .errors import DataError, DegenerateCorpusError, StaleCacheError
from .models import FeatureCacheRecord, FeatureKind, ManifestEntry, Split, WaveformClip
from .spectral import get_frontend, normalize_values, normalized_floor
from .training import AudioCorpus, LseCorpus, segment_clips, segment_frames

logger = logging.getLogger(__name__)

AUDIO_EXTENSIONS = (".wav", ".flac", ".ogg", ".aiff", ".aif")
FEATURE_MAGIC = b"LSEFEAT1"
MIN_STD = 1e-3

MANIFEST_NAME = "manifest.jsonl"
STATS_NAME = "stats.json"

ItemCallback = Callable[[str], None]


def decode_audio(path: Path) -> Tuple[np.ndarray, int]:
    """Read any soundfile-supported file as float32 [frames, channels]."""
    samples, sample_rate = sf.read(str(path), dtype="float32", always_2d=True)
    return samples, sample_rate


def to_mono(samples: np.ndarray) -> np.ndarray:
    return samples.mean(axis=1) if samples.ndim == 2 else samples


def resample(samples: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """Windowed-sinc polyphase resampling."""
    if source_rate == target_rate:
        return samples.astype(np.float32)
    divisor = gcd(int(source_rate), int(target_rate))
    return resample_poly(samples, target_rate // divisor, source_rate // divisor).astype(np.float32)


def load_wav(path: Union[str, Path], cfg: SpectralConfig) -> WaveformClip:
    """Any readable audio file as a mono clip at the configured rate."""
    samples, rate = decode_audio(Path(path))
    return WaveformClip(samples=resample(to_mono(samples), rate, cfg.sample_rate), sample_rate=cfg.sample_rate)


def clip_id(path: Path, root: Path) -> str:
    relative = path.relative_to(root).as_posix()
    return f"{path.stem}-{hashlib.sha1(relative.encode('utf-8')).hexdigest()[:8]}"


def assign_split(entry_id: str, test_ratio: float, seed: int = 0) -> str:
    """Deterministic hash split by id."""
    digest = hashlib.sha1(f"{seed}:{entry_id}".encode("utf-8")).digest()
    position = int.from_bytes(digest[:8], "little") / 2 ** 64
    return Split.TEST.value if position < test_ratio else Split.TRAIN.value


def audio_path(cache_dir: Union[str, Path], entry_id: str) -> Path:
    return Path(cache_dir) / "audio" / f"{entry_id}.wav"


def feature_path(cache_dir: Union[str, Path], entry_id: str, kind: FeatureKind) -> Path:
    return Path(cache_dir) / "features" / f"{entry_id}.{kind.value}.lsf"


def find_audio(in_dir: Union[str, Path]) -> List[Path]:
    root = Path(in_dir)
    if not root.is_dir():
        raise DataError(f"Input directory not found: {in_dir}")
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in AUDIO_EXTENSIONS)


def _ingest_one(path: Path, root: Path, out_dir: Path, cfg: SpectralConfig) -> ManifestEntry:
    samples, source_rate = decode_audio(path)
    mono = resample(to_mono(samples), source_rate, cfg.sample_rate)
    if len(mono) == 0:
        raise ValueError("file contains no samples")
    clip = WaveformClip(samples=mono, sample_rate=cfg.sample_rate)
    entry_id = clip_id(path, root)
    target = audio_path(out_dir, entry_id)
    target.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(target), clip.samples, cfg.sample_rate, subtype="FLOAT")
    return ManifestEntry(
        id=entry_id,
        source_path=path.relative_to(root).as_posix(),
        duration_s=len(clip) / cfg.sample_rate,
        sample_rate_original=int(source_rate),
    )


def ingest(in_dir: Union[str, Path], out_dir: Union[str, Path], cfg: SpectralConfig, test_ratio: float = 0.1,
           seed: int = 0, max_workers: int = 4, on_item: Optional[ItemCallback] = None) -> List[ManifestEntry]:
    """Mono-mix and resample every audio file under in_dir; write audio and the JSONL manifest to out_dir."""
    root = Path(in_dir)
    out = Path(out_dir)
    paths = find_audio(root)
    if not paths:
        raise DataError(f"no audio found in {in_dir}")
    logger.info(f"Ingesting {len(paths)} audio files from {in_dir}")

    entries: List[ManifestEntry] = []
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_path = {executor.submit(_ingest_one, p, root, out, cfg): p for p in paths}
        for future in as_completed(future_to_path):
            path = future_to_path[future]
            try:
                entries.append(future.result())
                logger.debug(f"Ingested {path}")
            except Exception as e:
                logger.warning(f"Skipping unreadable audio {path}: {e}")
            finally:
                if on_item is not None:
                    on_item(str(path))

    if not entries:
        raise DataError(f"no audio found in {in_dir} (every file failed to decode)")
    entries.sort(key=lambda e: e.id)
    if len({e.id for e in entries}) != len(entries):
        raise DataError("duplicate clip ids after ingestion")
    for entry in entries:
        entry.split = assign_split(entry.id, test_ratio, seed)
    write_manifest(out / MANIFEST_NAME, entries)
    logger.info(f"Manifest written with {len(entries)} clips "
                f"({sum(e.split == Split.TEST.value for e in entries)} held out)")
    return entries


def write_manifest(path: Path, entries: List[ManifestEntry]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")


def read_manifest(path: Union[str, Path]) -> List[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Manifest not found: {path}; run `extract` first")
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                entries.append(ManifestEntry(**json.loads(line)))
    return entries


def load_clip(cache_dir: Union[str, Path], entry: ManifestEntry, cfg: SpectralConfig) -> WaveformClip:
    path = audio_path(cache_dir, entry.id)
    if not path.exists():
        raise DataError(f"Ingested audio missing for {entry.id}: {path}")
    samples, rate = sf.read(str(path), dtype="float32")
    if rate != cfg.sample_rate:
        raise DataError(f"{path} is {rate} Hz, expected {cfg.sample_rate} Hz")
    return WaveformClip(samples=samples, sample_rate=rate)


def _train_entries(manifest: List[ManifestEntry]) -> List[ManifestEntry]:
    return [e for e in manifest if e.split == Split.TRAIN.value]


def compute_norm_stats(manifest: List[ManifestEntry], cfg: SpectralConfig, cache_dir: Union[str, Path]
                       ) -> Tuple[Union[float, List[float]], Union[float, List[float]]]:
    """Mean and std of floor-clipped linear spectrogram cells over the train split, in one pass."""
    train = _train_entries(manifest)
    if not train:
        raise DegenerateCorpusError("the train split is empty; cannot compute normalization statistics")
    frontend = get_frontend(cfg)
    axis = 1 if cfg.per_bin_stats else None
    total = np.zeros(cfg.n_linear) if cfg.per_bin_stats else 0.0
    total_sq = np.zeros(cfg.n_linear) if cfg.per_bin_stats else 0.0
    count = 0
    for entry in train:
        clip = load_clip(cache_dir, entry, cfg)
        with torch.no_grad():
            values = frontend.linear(torch.from_numpy(clip.samples.astype(np.float64))).numpy()
        values = np.maximum(values, cfg.loudness_floor)
        total = total + values.sum(axis=axis)
        total_sq = total_sq + np.square(values).sum(axis=axis)
        count += values.shape[1] if cfg.per_bin_stats else values.size
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - np.square(mean), 0.0))
    if np.any(std < MIN_STD):
        raise DegenerateCorpusError(
            f"corpus spectrogram std {np.min(std):.2e} is below {MIN_STD}; the corpus is silent or constant"
        )
    if cfg.per_bin_stats:
        return [float(v) for v in mean], [float(v) for v in std]
    return float(mean), float(std)


def write_stats(path: Path, mean, std, cfg: SpectralConfig):
    payload = {"mean": mean, "std": std, "per_bin": cfg.per_bin_stats, "fingerprint": cfg.fingerprint().hex()}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_stats(cache_dir: Union[str, Path], cfg: SpectralConfig) -> SpectralConfig:
    """The spectral config with the persisted corpus statistics applied."""
    path = Path(cache_dir) / STATS_NAME
    if not path.exists():
        raise DataError(f"Normalization statistics not found at {path}; run `extract` first")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("fingerprint") != cfg.fingerprint().hex():
        raise StaleCacheError(f"{path} was computed under a different spectral configuration; "
                              f"re-run `extract --force`")
    return cfg.with_stats(payload["mean"], payload["std"])


def scalar_view(cfg: SpectralConfig) -> SpectralConfig:
    """Statistics usable for any bin count: per-bin vectors collapse to their means."""
    if isinstance(cfg.norm_mean, list) or isinstance(cfg.norm_std, list):
        return cfg.with_stats(float(np.mean(cfg.norm_mean)), float(np.mean(cfg.norm_std)))
    return cfg


def write_feature_record(path: Path, record: FeatureCacheRecord):
    """magic LSEFEAT1, uint32 bins, uint32 frames, 16-byte fingerprint, float32 row-major payload (all LE)."""
    values = np.ascontiguousarray(record.values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError("feature records are 2D [bins x frames]")
    if len(record.fingerprint) != 16:
        raise ValueError("fingerprint must be 16 bytes")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", *values.shape))
        f.write(record.fingerprint)
        f.write(values.tobytes())
    tmp.replace(path)


def read_feature_header(path: Path) -> Tuple[int, int, bytes]:
    with open(path, "rb") as f:
        head = f.read(8 + 8 + 16)
    if len(head) < 32 or head[:8] != FEATURE_MAGIC:
        raise DataError(f"{path} is not a feature cache record")
    bins, frames = struct.unpack("<II", head[8:16])
    return bins, frames, head[16:32]


def read_feature_record(path: Union[str, Path]) -> FeatureCacheRecord:
    path = Path(path)
    data = path.read_bytes()
    bins, frames, fingerprint = read_feature_header(path)
    payload = np.frombuffer(data, dtype="<f4", offset=32)
    if payload.size != bins * frames:
        raise DataError(f"{path}: payload holds {payload.size} values, header says {bins}x{frames}")
    entry_id, kind = path.name[: -len(".lsf")].rsplit(".", 1)
    return FeatureCacheRecord(id=entry_id, feature_kind=FeatureKind(kind),
                              values=payload.reshape(bins, frames).astype(np.float32), fingerprint=fingerprint)


def compute_features(clip: WaveformClip, cfg: SpectralConfig) -> Dict[FeatureKind, np.ndarray]:
    frontend = get_frontend(cfg)
    with torch.no_grad():
        samples = torch.from_numpy(clip.samples.astype(np.float64))
        return {
            FeatureKind.MEL: frontend.mel(samples).numpy().astype(np.float32),
            FeatureKind.LINEAR: frontend.linear(samples).numpy().astype(np.float32),
        }


def _cache_one(entry: ManifestEntry, cfg: SpectralConfig, cache_dir: Path, force: bool) -> int:
    fingerprint = cfg.fingerprint()
    paths = {kind: feature_path(cache_dir, entry.id, kind) for kind in FeatureKind}
    pending = []
    for kind, path in paths.items():
        if path.exists() and not force:
            _, _, stored = read_feature_header(path)
            if stored != fingerprint:
                raise StaleCacheError(
                    f"{path} was written under a different spectral configuration; re-run with --force"
                )
            continue
        pending.append(kind)
    if not pending:
        return 0
    features = compute_features(load_clip(cache_dir, entry, cfg), cfg)
    for kind in pending:
        write_feature_record(paths[kind], FeatureCacheRecord(entry.id, kind, features[kind], fingerprint))
    return len(pending)


def cache_features(manifest: List[ManifestEntry], cfg: SpectralConfig, cache_dir: Union[str, Path],
                   force: bool = False, max_workers: int = 4, on_item: Optional[ItemCallback] = None) -> int:
    """Write un-normalized mel and linear records for every clip; returns how many were (re)written."""
    cache_dir = Path(cache_dir)
    written = 0
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_entry = {executor.submit(_cache_one, e, cfg, cache_dir, force): e for e in manifest}
        for future in as_completed(future_to_entry):
            try:
                written += future.result()
            finally:
                if on_item is not None:
                    on_item(future_to_entry[future].id)
    logger.info(f"Feature cache up to date ({written} records written)")
    return written


def load_features(cache_dir: Union[str, Path], entry: ManifestEntry, kind: FeatureKind,
                  cfg: SpectralConfig) -> np.ndarray:
    path = feature_path(cache_dir, entry.id, kind)
    if not path.exists():
        raise DataError(f"Feature cache missing for {entry.id} ({kind.value}); run `extract` first")
    record = read_feature_record(path)
    if record.fingerprint != cfg.fingerprint():
        raise StaleCacheError(f"{path} is stale; re-run `extract --force`")
    return record.values


def corpus_fingerprint(manifest: List[ManifestEntry], cfg: SpectralConfig) -> str:
    digest = hashlib.md5(cfg.fingerprint(include_stats=True))
    for entry in _train_entries(manifest):
        digest.update(entry.id.encode("utf-8"))
    return digest.hexdigest()


def build_lse_corpus(manifest: List[ManifestEntry], cfg: SpectralConfig, cache_dir: Union[str, Path],
                     seconds: float) -> LseCorpus:
    """Normalized paired segments of the train split, floor-padded at clip tails."""
    frames = int(round(seconds * cfg.frames_per_second))
    linear_floor = normalized_floor(cfg)
    mel_cfg = scalar_view(cfg)
    mel_floor = normalized_floor(mel_cfg)
    linear_segments, mel_segments = [], []
    for entry in _train_entries(manifest):
        linear = normalize_values(load_features(cache_dir, entry, FeatureKind.LINEAR, cfg).astype(np.float64), cfg)
        mel = normalize_values(load_features(cache_dir, entry, FeatureKind.MEL, cfg).astype(np.float64), mel_cfg)
        linear_segments += segment_frames(linear, frames, linear_floor)
        mel_segments += segment_frames(mel, frames, mel_floor)
    if not linear_segments:
        raise DataError("no LSE training segments; the train split is empty or every clip is too short")
    return LseCorpus(
        linear=np.stack(linear_segments).astype(np.float32),
        mel=np.stack(mel_segments).astype(np.float32),
        fingerprint=corpus_fingerprint(manifest, cfg),
    )


def build_audio_corpus(manifest: List[ManifestEntry], cfg: SpectralConfig, cache_dir: Union[str, Path],
                       seconds: float) -> AudioCorpus:
    clips = [load_clip(cache_dir, e, cfg).samples for e in _train_entries(manifest)]
    segments = segment_clips(clips, seconds, cfg.sample_rate)
    if not segments:
        raise DataError("no vocoder training segments; every clip is shorter than half a segment")
    return AudioCorpus(segments=np.stack(segments), fingerprint=corpus_fingerprint(manifest, cfg))

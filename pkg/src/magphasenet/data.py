"""Corpus ingestion and desk-scale dataset synthesis.

A manifest is a UTF-8 file of line-delimited JSON records with fields
``clean_path``, ``noisy_path``, ``noise_path``, ``snr_db``, ``split``.  Each
entry either points at a pre-mixed noisy file or carries a noise file plus a
target SNR for on-the-fly mixing.  The synthetic desk corpus mirrors the
clean/noisy train/test directory layout of standard enhancement corpora.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dsp import Waveform, read_wav, write_wav
from .errors import InvalidInputError

SNR_GRID_DB = (0.0, 5.0, 10.0, 15.0)
TARGET_RATE = 16000


@dataclass
class ManifestEntry:
    clean_path: str
    noisy_path: str | None = None
    noise_path: str | None = None
    snr_db: float | None = None
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise InvalidInputError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.noisy_path is None and (self.noise_path is None or self.snr_db is None):
            raise InvalidInputError(
                "entry needs either noisy_path or both noise_path and snr_db"
            )


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                record = {
                    "clean_path": e.clean_path,
                    "noisy_path": e.noisy_path,
                    "noise_path": e.noise_path,
                    "snr_db": e.snr_db,
                    "split": e.split,
                }
                fh.write(json.dumps(record) + "\n")

    @classmethod
    def load(cls, path, check_paths: bool = True) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise InvalidInputError(f"manifest not found: {path}")
        entries = []
        base = path.parent
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InvalidInputError(f"{path}:{lineno}: bad record: {exc}") from exc
                entry = ManifestEntry(
                    clean_path=record["clean_path"],
                    noisy_path=record.get("noisy_path"),
                    noise_path=record.get("noise_path"),
                    snr_db=record.get("snr_db"),
                    split=record.get("split", "train"),
                )
                if check_paths:
                    for p in (entry.clean_path, entry.noisy_path, entry.noise_path):
                        if p is not None and not (base / p).exists() and not Path(p).exists():
                            raise InvalidInputError(f"{path}:{lineno}: missing file {p}")
                entries.append(entry)
        return cls(entries=entries)


def resolve_path(manifest_path, file_path) -> Path:
    """Manifest-relative paths resolve against the manifest's directory."""
    p = Path(file_path)
    if p.is_absolute() or p.exists():
        return p
    return Path(manifest_path).parent / p


@dataclass
class TrainSegment:
    """A sample-aligned (clean, noisy) pair of equal length at 16 kHz."""

    clean: Waveform
    noisy: Waveform

    def __post_init__(self):
        if len(self.clean) != len(self.noisy):
            raise InvalidInputError("clean/noisy segment lengths differ")
        if self.clean.sample_rate != TARGET_RATE or self.noisy.sample_rate != TARGET_RATE:
            raise InvalidInputError("training segments must be 16 kHz")


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, seed: int) -> Waveform:
    """Add a random crop of ``noise`` to ``clean``, scaled to the requested SNR.

    The gain solves 10*log10(P_clean / P_noise_scaled) = snr_db with P the mean
    square over the segment.  The crop offset is drawn from ``seed``.
    """
    if clean.sample_rate != noise.sample_rate:
        raise InvalidInputError("clean and noise sample rates differ")
    if len(noise) < len(clean):
        raise InvalidInputError("noise must be at least as long as clean")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(noise) - len(clean) + 1))
    crop = noise.samples[offset : offset + len(clean)]
    p_clean = float(np.mean(clean.samples**2))
    p_noise = float(np.mean(crop**2))
    if p_clean <= 0.0:
        raise InvalidInputError("clean signal is silent; SNR undefined")
    if p_noise <= 0.0:
        raise InvalidInputError("noise crop is silent; SNR undefined")
    exponent = -snr_db / 20.0
    if exponent > 300.0:
        raise InvalidInputError(f"snr_db {snr_db} is too negative to represent")
    scale = 0.0 if exponent < -300.0 else 10.0**exponent
    gain = math.sqrt(p_clean / p_noise) * scale
    return Waveform(samples=clean.samples + gain * crop, sample_rate=clean.sample_rate)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited resampling with a Kaiser-windowed sinc kernel.

    Output length is round(L * target / source); cutoff sits at 0.9 times the
    lower Nyquist frequency.
    """
    if target_rate <= 0:
        raise InvalidInputError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(samples=w.samples.copy(), sample_rate=w.sample_rate)
    ratio = target_rate / w.sample_rate
    out_len = int(round(len(w) * ratio))
    if out_len == 0:
        return Waveform(samples=np.zeros(0), sample_rate=target_rate)
    # cutoff in cycles per *input* sample; 0.45 = 0.9 * Nyquist
    fc = 0.45 * min(1.0, ratio)
    zeros = 16
    half_width = int(math.ceil(zeros / (2.0 * fc)))
    beta = 8.6
    pos = np.arange(out_len) / ratio
    base = np.floor(pos).astype(np.int64)
    taps = np.arange(-half_width, half_width + 1)
    idx = base[:, None] + taps[None, :]
    u = pos[:, None] - idx
    kernel = 2.0 * fc * np.sinc(2.0 * fc * u)
    frac = u / half_width
    window = np.where(np.abs(frac) <= 1.0, np.i0(beta * np.sqrt(np.clip(1.0 - frac**2, 0.0, 1.0))), 0.0)
    kernel *= window / np.i0(beta)
    valid = (idx >= 0) & (idx < len(w))
    samples = np.where(valid, w.samples[np.clip(idx, 0, len(w) - 1)], 0.0)
    out = np.sum(samples * kernel, axis=1)
    return Waveform(samples=out, sample_rate=target_rate)


def segment_pair(
    clean: Waveform, noisy: Waveform, segment_length: int, seed: int
) -> TrainSegment:
    """Crop the same seeded random window from both waveforms.

    Clips shorter than ``segment_length`` are zero-padded on the right.
    """
    if len(clean) != len(noisy):
        raise InvalidInputError("clean and noisy lengths differ")
    if len(clean) < 1:
        raise InvalidInputError("cannot segment an empty pair")
    c, n = clean.samples, noisy.samples
    if len(c) < segment_length:
        pad = segment_length - len(c)
        c = np.pad(c, (0, pad))
        n = np.pad(n, (0, pad))
    elif len(c) > segment_length:
        rng = np.random.default_rng(seed)
        offset = int(rng.integers(0, len(c) - segment_length + 1))
        c = c[offset : offset + segment_length]
        n = n[offset : offset + segment_length]
    return TrainSegment(
        clean=Waveform(samples=c.copy(), sample_rate=clean.sample_rate),
        noisy=Waveform(samples=n.copy(), sample_rate=noisy.sample_rate),
    )


def _synth_voice(rng: np.random.Generator, n_samples: int, rate: int) -> np.ndarray:
    """Pseudo-speech: a pitch- and amplitude-modulated harmonic tone."""
    t = np.arange(n_samples) / rate
    f0 = rng.uniform(110.0, 220.0)
    vibrato = rng.uniform(3.0, 7.0)
    depth = rng.uniform(0.01, 0.04)
    inst_freq = f0 * (1.0 + depth * np.sin(2 * np.pi * vibrato * t))
    phase = 2 * np.pi * np.cumsum(inst_freq) / rate
    x = np.zeros(n_samples)
    for k in range(1, 7):
        amp = rng.uniform(0.5, 1.0) / k
        x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    # syllable-like envelope with quiet (never digitally silent) pauses
    syllable = 0.5 * (1.0 - np.cos(2 * np.pi * rng.uniform(2.0, 4.0) * t))
    gate = np.where(
        np.sin(2 * np.pi * rng.uniform(0.5, 1.2) * t + rng.uniform(0, 2 * np.pi)) > -0.8,
        1.0,
        0.12,
    )
    x *= 0.1 + 0.9 * syllable * gate
    peak = np.max(np.abs(x))
    return 0.5 * x / peak if peak > 0 else x


def _synth_noise(rng: np.random.Generator, n_samples: int, rate: int, kind: str) -> np.ndarray:
    white = rng.standard_normal(n_samples)
    if kind == "white":
        out = white
    elif kind == "pink":
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n_samples, 1.0 / rate)
        spec[1:] /= np.sqrt(freqs[1:])
        out = np.fft.irfft(spec, n=n_samples)
    elif kind == "babble":
        # band-limited noise shaped to the speech band
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n_samples, 1.0 / rate)
        band = (freqs >= 300.0) & (freqs <= 3000.0)
        spec[~band] *= 0.05
        out = np.fft.irfft(spec, n=n_samples)
        am = 0.6 + 0.4 * np.clip(
            np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * np.arange(n_samples) / rate), 0, 1
        )
        out *= am
    else:
        raise InvalidInputError(f"unknown noise kind {kind!r}")
    peak = np.max(np.abs(out))
    return 0.5 * out / peak if peak > 0 else out


def synth_desk_corpus(
    out_dir,
    n_clips: int,
    clip_seconds: float = 1.0,
    seed: int = 0,
    n_test_clips: int = 2,
) -> Manifest:
    """Generate a deterministic synthetic corpus and write WAVs plus a manifest.

    ``n_clips`` training pairs (and ``n_test_clips`` test pairs) of
    pseudo-speech mixed with white/pink/babble noise over the standard SNR
    grid.  The same seed always produces byte-identical files.  Returns the
    manifest, which is also written to ``out_dir/manifest.jsonl``.
    """
    out_dir = Path(out_dir)
    dirs = {
        ("train", "clean"): out_dir / "clean_trainset",
        ("train", "noisy"): out_dir / "noisy_trainset",
        ("test", "clean"): out_dir / "clean_testset",
        ("test", "noisy"): out_dir / "noisy_testset",
    }
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    n_samples = int(round(clip_seconds * TARGET_RATE))
    noise_kinds = ("white", "pink", "babble")
    entries = []
    specs = [("train", i) for i in range(n_clips)] + [("test", i) for i in range(n_test_clips)]
    for split, i in specs:
        rng = np.random.default_rng([seed, 0 if split == "train" else 1, i])
        clean = Waveform(_synth_voice(rng, n_samples, TARGET_RATE), TARGET_RATE)
        kind = noise_kinds[i % len(noise_kinds)]
        noise = Waveform(
            _synth_noise(rng, 2 * n_samples, TARGET_RATE, kind), TARGET_RATE
        )
        snr = SNR_GRID_DB[i % len(SNR_GRID_DB)]
        noisy = mix_at_snr(clean, noise, snr, seed=int(rng.integers(0, 2**31)))
        peak = float(np.max(np.abs(noisy.samples)))
        if peak > 0.99:
            g = 0.99 / peak
            noisy = Waveform(noisy.samples * g, TARGET_RATE)
            clean = Waveform(clean.samples * g, TARGET_RATE)
        name = f"{split}_{i:04d}.wav"
        clean_path = dirs[(split, "clean")] / name
        noisy_path = dirs[(split, "noisy")] / name
        write_wav(clean_path, clean, fmt="float32")
        write_wav(noisy_path, noisy, fmt="float32")
        entries.append(
            ManifestEntry(
                clean_path=str(clean_path.relative_to(out_dir)),
                noisy_path=str(noisy_path.relative_to(out_dir)),
                snr_db=snr,
                split=split,
            )
        )
    manifest = Manifest(entries=entries)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


class SegmentLoader:
    """Deterministic batch iterator over the training split of a manifest.

    All clips are loaded (and resampled to 16 kHz) once, up front.  The batch
    sequence for a given (seed, epoch) is fixed by construction, independent
    of any prefetching arrangement.
    """

    def __init__(
        self,
        manifest: Manifest,
        manifest_path,
        segment_length: int,
        batch_size: int,
        seed: int,
        split: str = "train",
    ):
        self.segment_length = segment_length
        self.batch_size = batch_size
        self.seed = seed
        self.pairs: list[tuple[Waveform, Waveform, str]] = []
        for j, entry in enumerate(manifest.split(split)):
            clean = read_wav(resolve_path(manifest_path, entry.clean_path))
            if clean.sample_rate != TARGET_RATE:
                clean = resample(clean, TARGET_RATE)
            if entry.noisy_path is not None:
                noisy = read_wav(resolve_path(manifest_path, entry.noisy_path))
                if noisy.sample_rate != TARGET_RATE:
                    noisy = resample(noisy, TARGET_RATE)
            else:
                noise = read_wav(resolve_path(manifest_path, entry.noise_path))
                if noise.sample_rate != TARGET_RATE:
                    noise = resample(noise, TARGET_RATE)
                noisy = mix_at_snr(clean, noise, entry.snr_db, seed=seed * 7919 + j)
            if len(clean) != len(noisy):
                raise InvalidInputError(f"entry {j}: clean/noisy lengths differ")
            self.pairs.append((clean, noisy, f"{split}:{j}"))
        if not self.pairs:
            raise InvalidInputError(f"manifest has no '{split}' entries")

    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.pairs) / self.batch_size)

    def batches(self, epoch: int):
        """Yield (clean, noisy, batch_id) with tensors of shape (B, segment_length)."""
        order_rng = np.random.default_rng([self.seed, epoch])
        order = order_rng.permutation(len(self.pairs))
        for b in range(self.steps_per_epoch()):
            chunk = order[b * self.batch_size : (b + 1) * self.batch_size]
            cleans, noisies, ids = [], [], []
            for j, idx in enumerate(chunk):
                clean, noisy, clip_id = self.pairs[idx]
                seg_seed = int(
                    np.random.default_rng([self.seed, epoch, b, j]).integers(0, 2**31)
                )
                seg = segment_pair(clean, noisy, self.segment_length, seg_seed)
                cleans.append(seg.clean.samples)
                noisies.append(seg.noisy.samples)
                ids.append(clip_id)
            clean_batch = torch.as_tensor(np.stack(cleans), dtype=torch.float32)
            noisy_batch = torch.as_tensor(np.stack(noisies), dtype=torch.float32)
            yield clean_batch, noisy_batch, f"epoch{epoch}/batch{b}[" + ",".join(ids) + "]"

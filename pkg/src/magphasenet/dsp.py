"""Deterministic signal transforms: STFT/ISTFT, magnitude compression, phase helpers.

Everything here is a pure function of its inputs (no learned parameters), so all
operations are safe to call concurrently.  Tensor-level functions operate on
``torch.Tensor`` and are differentiable; the :class:`Waveform` /
:class:`SpectrumPair` wrappers form the library-facing API and compute in
float64.

Conventions
-----------
* Spectra are laid out as ``(..., T, F)`` with ``F = n_fft // 2 + 1``.
* Analysis frames are centered: the signal is reflect-padded by
  ``win_length // 2`` on both ends, so ``T = 1 + L // hop_length``.
* Phase is the principal-value angle in ``(-pi, pi]``; bins whose magnitude is
  below ``ZERO_MAG_EPS`` get phase 0.
* Synthesis divides by the squared-window overlap-add envelope, floored at
  ``OLA_FLOOR`` to avoid edge blow-up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.io import wavfile

from .errors import InvalidInputError

TWO_PI = 2.0 * math.pi
ZERO_MAG_EPS = 1e-10
OLA_FLOOR = 1e-11


def _window_samples(name: str, length: int) -> np.ndarray:
    """Periodic window samples for the given identifier."""
    n = np.arange(length)
    if name == "hann":
        return 0.5 * (1.0 - np.cos(TWO_PI * n / length))
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(TWO_PI * n / length)
    if name == "rect":
        return np.ones(length)
    raise InvalidInputError(f"unknown window identifier: {name!r}")


@dataclass(frozen=True)
class StftConfig:
    """Short-time transform geometry.

    The (window, hop) pair must satisfy the constant-overlap-add condition on
    the squared window (checked at construction), which guarantees exact
    inversion under squared-window overlap-add normalization.
    """

    n_fft: int = 400
    win_length: int = 400
    hop_length: int = 100
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop_length <= self.win_length <= self.n_fft):
            raise InvalidInputError(
                "require 0 < hop_length <= win_length <= n_fft, got "
                f"hop={self.hop_length} win={self.win_length} n_fft={self.n_fft}"
            )
        w2 = _window_samples(self.window, self.win_length) ** 2
        # Overlap-add envelope of w^2 over an infinite tiling is hop-periodic:
        # envelope(n) = sum_m w2[n + m*hop]. Constancy <=> exact inversion.
        env = np.zeros(self.hop_length)
        for start in range(0, self.win_length, self.hop_length):
            seg = w2[start : start + self.hop_length]
            env[: len(seg)] += seg
        mean = env.mean()
        if mean <= 0 or (env.max() - env.min()) > 1e-8 * mean:
            raise InvalidInputError(
                f"window {self.window!r} with hop {self.hop_length} does not "
                "satisfy the constant-overlap-add condition"
            )

    @property
    def freq_bins(self) -> int:
        return self.n_fft // 2 + 1

    def window_tensor(self, dtype=torch.float64, device=None) -> torch.Tensor:
        w = _window_samples(self.window, self.win_length)
        return torch.as_tensor(w, dtype=dtype, device=device)

    def frame_count(self, length: int) -> int:
        return 1 + length // self.hop_length


@dataclass
class Waveform:
    """A mono sample sequence with its sample rate.

    Samples are dimensionless amplitudes, nominally in [-1, 1], stored as a
    1-D float array.  Non-finite samples and non-positive rates are rejected.
    """

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError(f"samples must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("samples contain NaN or Inf")
        if self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class SpectrumPair:
    """Magnitude and wrapped phase of a short-time spectrum, each ``(T, F)``.

    Magnitude is linear amplitude (>= 0); phase is radians in ``(-pi, pi]``.
    """

    magnitude: torch.Tensor
    phase: torch.Tensor

    def __post_init__(self):
        if self.magnitude.shape != self.phase.shape:
            raise InvalidInputError(
                f"magnitude shape {tuple(self.magnitude.shape)} != "
                f"phase shape {tuple(self.phase.shape)}"
            )
        if self.magnitude.ndim != 2:
            raise InvalidInputError("expected a (T, F) pair")
        if bool((self.magnitude < 0).any()):
            raise InvalidInputError("magnitude has negative entries")
        if bool((self.phase <= -math.pi).any()) or bool((self.phase > math.pi).any()):
            raise InvalidInputError("phase outside (-pi, pi]")

    @property
    def frames(self) -> int:
        return self.magnitude.shape[0]

    @property
    def bins(self) -> int:
        return self.magnitude.shape[1]


def stft_tensor(x: torch.Tensor, cfg: StftConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Magnitude and wrapped phase of ``x`` with shape ``(..., L)`` -> ``(..., T, F)``.

    Centered analysis with reflect padding; requires L > win_length // 2.
    """
    if x.shape[-1] == 0:
        raise InvalidInputError("empty waveform")
    pad = cfg.win_length // 2
    if x.shape[-1] <= pad:
        raise InvalidInputError(
            f"waveform of length {x.shape[-1]} too short for centered analysis "
            f"(needs more than {pad} samples)"
        )
    lead = x.shape[:-1]
    flat = x.reshape(1, -1, x.shape[-1]) if lead else x.reshape(1, 1, -1)
    padded = F.pad(flat, (pad, pad), mode="reflect").reshape(*lead, -1)
    frames = padded.unfold(-1, cfg.win_length, cfg.hop_length)
    frames = frames * cfg.window_tensor(dtype=x.dtype, device=x.device)
    if cfg.n_fft > cfg.win_length:
        offset = (cfg.n_fft - cfg.win_length) // 2
        buf = torch.zeros(*frames.shape[:-1], cfg.n_fft, dtype=x.dtype, device=x.device)
        buf[..., offset : offset + cfg.win_length] = frames
        frames = buf
    spec = torch.fft.rfft(frames, n=cfg.n_fft, dim=-1)
    magnitude = spec.abs()
    phase = torch.angle(spec)
    # atan2 can return -pi for (-x, -0.0); fold onto the principal branch.
    phase = torch.where(phase <= -math.pi, phase + TWO_PI, phase)
    phase = torch.where(magnitude < ZERO_MAG_EPS, torch.zeros_like(phase), phase)
    return magnitude, phase


def istft_tensor(
    magnitude: torch.Tensor,
    phase: torch.Tensor,
    cfg: StftConfig,
    length: int,
) -> torch.Tensor:
    """Overlap-add synthesis of a ``(..., T, F)`` pair back to ``(..., length)``.

    Differentiable; inverse of :func:`stft_tensor` for lengths consistent with
    the frame count.
    """
    if magnitude.shape != phase.shape:
        raise InvalidInputError("magnitude/phase shape mismatch")
    if magnitude.shape[-1] != cfg.freq_bins:
        raise InvalidInputError(
            f"expected {cfg.freq_bins} frequency bins, got {magnitude.shape[-1]}"
        )
    frames_t = magnitude.shape[-2]
    pad = cfg.win_length // 2
    # T = 1 + L // hop, so the longest signal T frames can represent is T*hop - 1.
    max_len = frames_t * cfg.hop_length - 1
    if length > max_len:
        raise InvalidInputError(
            f"length {length} not representable by {frames_t} frames (max {max_len})"
        )
    lead = magnitude.shape[:-2]
    spec = torch.polar(magnitude, phase)
    frames = torch.fft.irfft(spec, n=cfg.n_fft, dim=-1)
    if cfg.n_fft > cfg.win_length:
        offset = (cfg.n_fft - cfg.win_length) // 2
        frames = frames[..., offset : offset + cfg.win_length]
    window = cfg.window_tensor(dtype=frames.dtype, device=frames.device)
    frames = frames * window
    out_len = (frames_t - 1) * cfg.hop_length + cfg.win_length
    cols = frames.reshape(-1, frames_t, cfg.win_length).transpose(1, 2)
    acc = F.fold(
        cols,
        output_size=(1, out_len),
        kernel_size=(1, cfg.win_length),
        stride=(1, cfg.hop_length),
    ).reshape(-1, out_len)
    env_cols = (window**2).reshape(1, -1, 1).expand(1, cfg.win_length, frames_t)
    env = F.fold(
        env_cols,
        output_size=(1, out_len),
        kernel_size=(1, cfg.win_length),
        stride=(1, cfg.hop_length),
    ).reshape(out_len)
    acc = acc / env.clamp(min=OLA_FLOOR)
    out = acc[:, pad : pad + length]
    if out.shape[-1] < length:
        out = F.pad(out, (0, length - out.shape[-1]))
    return out.reshape(*lead, length) if lead else out.reshape(length)


def stft(w: Waveform, cfg: StftConfig) -> SpectrumPair:
    """Short-time transform of a waveform into a magnitude/phase pair."""
    if len(w) == 0:
        raise InvalidInputError("empty waveform")
    x = torch.as_tensor(w.samples, dtype=torch.float64)
    magnitude, phase = stft_tensor(x, cfg)
    return SpectrumPair(magnitude=magnitude, phase=phase)


def istft(s: SpectrumPair, cfg: StftConfig, length: int, sample_rate: int = 16000) -> Waveform:
    """Inverse transform of a spectrum pair back to a waveform of ``length`` samples."""
    x = istft_tensor(
        s.magnitude.to(torch.float64), s.phase.to(torch.float64), cfg, length
    )
    return Waveform(samples=x.numpy(), sample_rate=sample_rate)


def compress_magnitude(m: torch.Tensor, c: float) -> torch.Tensor:
    """Power-law compression ``m ** c`` for nonnegative ``m`` and ``0 < c <= 1``."""
    if not (0.0 < c <= 1.0):
        raise InvalidInputError(f"compression factor must be in (0, 1], got {c}")
    if bool((m < 0).any()):
        raise InvalidInputError("magnitude has negative entries")
    return m**c


def decompress_magnitude(m: torch.Tensor, c: float) -> torch.Tensor:
    """Inverse power-law mapping ``m ** (1/c)``; exact inverse of compression."""
    if not (0.0 < c <= 1.0):
        raise InvalidInputError(f"compression factor must be in (0, 1], got {c}")
    if bool((m < 0).any()):
        raise InvalidInputError("magnitude has negative entries")
    return m ** (1.0 / c)


def _round_half_away(x: torch.Tensor) -> torch.Tensor:
    return torch.sign(x) * torch.floor(x.abs() + 0.5)


def anti_wrap(t: torch.Tensor) -> torch.Tensor:
    """Principal angular distance ``|t - 2*pi*round(t / 2*pi)|`` in ``[0, pi]``.

    Even, 2*pi-periodic, and piecewise linear.  Rounding is half-away-from-zero
    so half-integer multiples resolve identically on every platform; the
    subgradient at the wrap boundary (residual exactly +-pi) is fixed to 0.
    """
    r = t - TWO_PI * _round_half_away(t / TWO_PI)
    if r.requires_grad:
        boundary = r.detach().abs() == math.pi
        if bool(boundary.any()):
            r = torch.where(boundary, r.detach(), r)
    return r.abs()


def diff_along_freq(t: torch.Tensor) -> torch.Tensor:
    """First difference along the frequency (last) axis; output shrinks by one."""
    if t.shape[-1] < 2:
        raise InvalidInputError("frequency axis must have at least 2 elements")
    return t[..., 1:] - t[..., :-1]


def diff_along_time(t: torch.Tensor) -> torch.Tensor:
    """First difference along the time (second-to-last) axis; output shrinks by one."""
    if t.ndim < 2 or t.shape[-2] < 2:
        raise InvalidInputError("time axis must have at least 2 elements")
    return t[..., 1:, :] - t[..., :-1, :]


def read_wav(path) -> Waveform:
    """Read a mono WAV file (16-bit PCM or 32-bit float)."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise InvalidInputError(f"{path}: only mono WAV is supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise InvalidInputError(
            f"{path}: unsupported sample format {data.dtype}; "
            "use 16-bit PCM or 32-bit float"
        )
    return Waveform(samples=samples, sample_rate=int(rate))


def write_wav(path, w: Waveform, fmt: str = "float32") -> None:
    """Write a mono WAV file as 32-bit float (default) or 16-bit PCM."""
    if fmt == "float32":
        wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
    elif fmt == "pcm16":
        clipped = np.clip(w.samples, -1.0, 1.0)
        wavfile.write(path, w.sample_rate, np.round(clipped * 32767.0).astype(np.int16))
    else:
        raise InvalidInputError(f"unknown WAV format {fmt!r}")

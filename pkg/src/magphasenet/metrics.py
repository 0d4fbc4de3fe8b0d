"""Objective evaluation: segmental SNR, scale-invariant SDR, quality oracles.

Perceptual metrics (PESQ, STOI, composite MOS predictors) are intentionally
not reimplemented here: they plug in through the external-oracle interface,
which shells out to any scorer that accepts two WAV paths and prints a single
decimal number.  A deterministic surrogate oracle built on SI-SDR lets the
adversarial trainer run with no external dependency.
"""

from __future__ import annotations

import math
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .dsp import Waveform, write_wav
from .errors import ConfigError, InvalidInputError, UndefinedMetricError

SSNR_FRAME_SECONDS = 0.030
SSNR_MIN_DB = -10.0
SSNR_MAX_DB = 35.0
SSNR_SILENCE_ENERGY = 1e-8
SI_SDR_CLAMP_DB = 60.0


def ssnr(clean: Waveform, enhanced: Waveform) -> float:
    """Segmental SNR in dB: frame-averaged, clamped per-frame SNR.

    Frames are 30 ms with 50% overlap; per-frame values are clamped to
    [-10, 35] dB and frames with clean energy below 1e-8 are excluded.
    """
    if len(clean) != len(enhanced):
        raise InvalidInputError("ssnr: signal lengths differ")
    frame = int(round(SSNR_FRAME_SECONDS * clean.sample_rate))
    hop = frame // 2
    c, e = clean.samples, enhanced.samples
    values = []
    for start in range(0, len(c) - frame + 1, hop):
        cf = c[start : start + frame]
        ef = e[start : start + frame]
        energy = float(np.sum(cf**2))
        if energy < SSNR_SILENCE_ENERGY:
            continue
        err = float(np.sum((cf - ef) ** 2))
        if err == 0.0:
            values.append(SSNR_MAX_DB)
            continue
        values.append(min(max(10.0 * math.log10(energy / err), SSNR_MIN_DB), SSNR_MAX_DB))
    if not values:
        raise UndefinedMetricError("ssnr: no frames with non-silent clean signal")
    return float(np.mean(values))


def si_sdr(clean: Waveform, enhanced: Waveform) -> float:
    """Scale-invariant SDR in dB, clamped to +-60.

    The enhanced signal is projected onto the clean signal; the ratio of
    projected to residual energy is invariant to positive rescaling of the
    enhanced signal.
    """
    if len(clean) != len(enhanced):
        raise InvalidInputError("si_sdr: signal lengths differ")
    c = clean.samples
    e = enhanced.samples
    c_energy = float(np.dot(c, c))
    if c_energy <= 0.0:
        raise UndefinedMetricError("si_sdr: clean signal is silent")
    scale = float(np.dot(e, c)) / c_energy
    target = scale * c
    residual = e - target
    t_energy = float(np.dot(target, target))
    r_energy = float(np.dot(residual, residual))
    if r_energy == 0.0:
        return SI_SDR_CLAMP_DB
    if t_energy == 0.0:
        return -SI_SDR_CLAMP_DB
    value = 10.0 * math.log10(t_energy / r_energy)
    return float(min(max(value, -SI_SDR_CLAMP_DB), SI_SDR_CLAMP_DB))


class QualityOracle(Protocol):
    """Scores a (clean, degraded) pair in [0, 1]; higher means better."""

    name: str

    def score(self, clean: Waveform, degraded: Waveform) -> float: ...


def surrogate_score(clean: Waveform, degraded: Waveform) -> float:
    """Logistic squash of SI-SDR: 0.5 at 8 dB, saturating toward 0 and 1."""
    value = 1.0 / (1.0 + math.exp(-(si_sdr(clean, degraded) - 8.0) / 4.0))
    return float(min(max(value, 0.0), 1.0))


class SurrogateOracle:
    """Built-in dependency-free quality oracle (monotone in SI-SDR).

    Silent-clean segments carry no quality information; they score a neutral
    0.5 instead of raising, so training never aborts on a silent crop.
    """

    name = "surrogate"

    def score(self, clean: Waveform, degraded: Waveform) -> float:
        try:
            return surrogate_score(clean, degraded)
        except UndefinedMetricError:
            return 0.5


def scale_pesq(raw: float) -> float:
    """Map a raw PESQ value in [-0.5, 4.5] linearly onto [0, 1], clamping."""
    return float(min(max((raw + 0.5) / 5.0, 0.0), 1.0))


class ExternalOracle:
    """Wraps an external scorer command.

    The command is invoked as ``<command...> <clean.wav> <degraded.wav>`` and
    must print one decimal scalar and exit 0.  ``scale='pesq'`` applies the
    PESQ-to-unit rescaling; ``scale='unit'`` expects scores already in [0, 1].
    Availability is checked at construction so a missing scorer fails at
    startup rather than mid-training.
    """

    def __init__(self, command: str, scale: str = "pesq"):
        if scale not in ("pesq", "unit"):
            raise ConfigError(f"unknown oracle scale {scale!r}; use 'pesq' or 'unit'")
        self.argv = shlex.split(command)
        if not self.argv:
            raise ConfigError("external oracle command is empty")
        exe = self.argv[0]
        if shutil.which(exe) is None and not Path(exe).exists():
            raise ConfigError(f"external oracle executable not found: {exe}")
        self.scale = scale
        self.name = f"external:{exe}"

    def score(self, clean: Waveform, degraded: Waveform) -> float:
        with tempfile.TemporaryDirectory(prefix="oracle_") as tmp:
            clean_path = Path(tmp) / "clean.wav"
            degraded_path = Path(tmp) / "degraded.wav"
            write_wav(clean_path, clean)
            write_wav(degraded_path, degraded)
            proc = subprocess.run(
                self.argv + [str(clean_path), str(degraded_path)],
                capture_output=True,
                text=True,
            )
        if proc.returncode != 0:
            raise RuntimeError(
                f"external oracle failed (exit {proc.returncode}): {proc.stderr.strip()}"
            )
        try:
            raw = float(proc.stdout.strip().split()[-1])
        except (ValueError, IndexError) as exc:
            raise RuntimeError(f"external oracle printed no scalar: {proc.stdout!r}") from exc
        if self.scale == "pesq":
            return scale_pesq(raw)
        return float(min(max(raw, 0.0), 1.0))


def make_oracle(spec: str, scale: str = "pesq") -> QualityOracle:
    """Build an oracle from a selector: ``surrogate`` or ``external:<command>``."""
    if spec == "surrogate":
        return SurrogateOracle()
    if spec.startswith("external:"):
        return ExternalOracle(spec[len("external:") :], scale=scale)
    raise ConfigError(f"unknown oracle selector {spec!r}; use 'surrogate' or 'external:<cmd>'")


@dataclass
class ClipScores:
    clip_id: str
    ssnr_db: float
    si_sdr_db: float
    oracle_score: float


@dataclass
class EvalReport:
    """Per-clip and corpus-mean objective scores."""

    clips: list[ClipScores] = field(default_factory=list)
    oracle_name: str = "surrogate"

    @property
    def clip_count(self) -> int:
        return len(self.clips)

    @property
    def mean_ssnr_db(self) -> float:
        return float(np.mean([c.ssnr_db for c in self.clips]))

    @property
    def mean_si_sdr_db(self) -> float:
        return float(np.mean([c.si_sdr_db for c in self.clips]))

    @property
    def mean_oracle_score(self) -> float:
        return float(np.mean([c.oracle_score for c in self.clips]))

    def save_jsonl(self, path) -> None:
        import json

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for c in self.clips:
                fh.write(
                    json.dumps(
                        {
                            "clip_id": c.clip_id,
                            "ssnr_db": c.ssnr_db,
                            "si_sdr_db": c.si_sdr_db,
                            "oracle_score": c.oracle_score,
                        }
                    )
                    + "\n"
                )
            fh.write(
                json.dumps(
                    {
                        "clip_count": self.clip_count,
                        "mean_ssnr_db": self.mean_ssnr_db,
                        "mean_si_sdr_db": self.mean_si_sdr_db,
                        "mean_oracle_score": self.mean_oracle_score,
                        "oracle": self.oracle_name,
                    }
                )
                + "\n"
            )

    def format_table(self) -> str:
        header = f"{'clip':<24} {'SSNR dB':>10} {'SI-SDR dB':>10} {self.oracle_name:>16}"
        lines = [header, "-" * len(header)]
        for c in self.clips:
            lines.append(
                f"{c.clip_id:<24} {c.ssnr_db:>10.3f} {c.si_sdr_db:>10.3f} {c.oracle_score:>16.4f}"
            )
        lines.append("-" * len(header))
        lines.append(
            f"{'mean (' + str(self.clip_count) + ' clips)':<24} "
            f"{self.mean_ssnr_db:>10.3f} {self.mean_si_sdr_db:>10.3f} "
            f"{self.mean_oracle_score:>16.4f}"
        )
        return "\n".join(lines)


def score_pair(
    clip_id: str, clean: Waveform, degraded: Waveform, oracle: QualityOracle
) -> ClipScores:
    return ClipScores(
        clip_id=clip_id,
        ssnr_db=ssnr(clean, degraded),
        si_sdr_db=si_sdr(clean, degraded),
        oracle_score=oracle.score(clean, degraded),
    )

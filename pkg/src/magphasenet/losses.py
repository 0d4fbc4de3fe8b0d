"""Training objectives: time, magnitude, complex, anti-wrapped phase, and metric losses.

Expectations are realized as arithmetic means over every element (and batch
item), so loss magnitudes do not scale with segment length or spectrum size.
All functions are pure and differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch

from .dsp import anti_wrap, diff_along_freq, diff_along_time
from .errors import InvalidInputError


@dataclass
class LossWeights:
    """Coefficients of the weighted generator objective; all must be >= 0."""

    gamma1: float = 0.2  # time
    gamma2: float = 0.9  # magnitude
    gamma3: float = 0.1  # complex
    gamma4: float = 0.05  # metric
    gamma5: float = 0.3  # phase

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise InvalidInputError(f"{name} must be nonnegative, got {value}")


@dataclass
class LossReport:
    """Scalar values of every objective at one training step."""

    time: float = 0.0
    mag: float = 0.0
    complex: float = 0.0
    ip: float = 0.0
    gd: float = 0.0
    iaf: float = 0.0
    phase_total: float = 0.0
    metric: float = 0.0
    generator_total: float = 0.0
    discriminator: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def format_line(self) -> str:
        return " ".join(f"{k}={v:.6e}" for k, v in self.as_dict().items())


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def time_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute sample difference between clean and enhanced waveforms."""
    _check_same_shape(x, x_hat, "time_loss")
    return (x - x_hat).abs().mean()


def magnitude_loss(mag: torch.Tensor, mag_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between clean and enhanced magnitude spectra."""
    _check_same_shape(mag, mag_hat, "magnitude_loss")
    return (mag - mag_hat).square().mean()


def complex_loss(
    real: torch.Tensor,
    imag: torch.Tensor,
    real_hat: torch.Tensor,
    imag_hat: torch.Tensor,
) -> torch.Tensor:
    """Sum of mean squared errors on the real and imaginary spectrum planes."""
    _check_same_shape(real, real_hat, "complex_loss(real)")
    _check_same_shape(imag, imag_hat, "complex_loss(imag)")
    return (real - real_hat).square().mean() + (imag - imag_hat).square().mean()


def ip_loss(phase: torch.Tensor, phase_hat: torch.Tensor) -> torch.Tensor:
    """Instantaneous-phase loss: mean anti-wrapped distance between phase spectra."""
    _check_same_shape(phase, phase_hat, "ip_loss")
    return anti_wrap(phase - phase_hat).mean()


def gd_loss(phase: torch.Tensor, phase_hat: torch.Tensor) -> torch.Tensor:
    """Group-delay loss: anti-wrapped distance of the frequency-axis differences."""
    _check_same_shape(phase, phase_hat, "gd_loss")
    return anti_wrap(diff_along_freq(phase - phase_hat)).mean()


def iaf_loss(phase: torch.Tensor, phase_hat: torch.Tensor) -> torch.Tensor:
    """Instantaneous-angular-frequency loss: anti-wrapped distance of time differences."""
    _check_same_shape(phase, phase_hat, "iaf_loss")
    return anti_wrap(diff_along_time(phase - phase_hat)).mean()


def phase_loss(phase: torch.Tensor, phase_hat: torch.Tensor) -> torch.Tensor:
    """Combined anti-wrapping phase objective: IP + GD + IAF."""
    return ip_loss(phase, phase_hat) + gd_loss(phase, phase_hat) + iaf_loss(phase, phase_hat)


def metric_loss(d_score: torch.Tensor) -> torch.Tensor:
    """Adversarial term pushing the discriminator score toward 1."""
    return (d_score - 1.0).square().mean()


def discriminator_loss(
    d_clean_clean: torch.Tensor,
    d_clean_enhanced: torch.Tensor,
    q_score: torch.Tensor,
) -> torch.Tensor:
    """Discriminator regression target: 1 for clean pairs, the oracle score otherwise."""
    q_score = torch.as_tensor(q_score, dtype=d_clean_enhanced.dtype)
    if bool((q_score < 0).any()) or bool((q_score > 1).any()):
        raise InvalidInputError("oracle score must lie in [0, 1]")
    return (d_clean_clean - 1.0).square().mean() + (d_clean_enhanced - q_score).square().mean()


def generator_loss(
    time: torch.Tensor,
    mag: torch.Tensor,
    complex_spec: torch.Tensor,
    metric: torch.Tensor,
    phase: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted combination of the generator objectives.

    Terms with a zero weight are skipped entirely, so no gradient flows
    through their computation paths.
    """
    terms = [
        (weights.gamma1, time),
        (weights.gamma2, mag),
        (weights.gamma3, complex_spec),
        (weights.gamma4, metric),
        (weights.gamma5, phase),
    ]
    total = None
    for gamma, term in terms:
        if gamma == 0.0:
            continue
        contrib = gamma * term
        total = contrib if total is None else total + contrib
    if total is None:
        total = torch.zeros(())
    return total

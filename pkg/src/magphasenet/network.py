"""Generator and discriminator networks for parallel magnitude/phase denoising.

The generator is a codec: a convolutional encoder with a dilated dense stack,
a bridge of dual-axis (time, then frequency) conformer blocks, and two parallel
decoders.  The magnitude decoder predicts a bounded multiplicative mask in the
compressed-magnitude domain; the phase decoder predicts pseudo-real and
pseudo-imaginary planes and folds them into a wrapped phase with a
two-argument arctangent.

Feature maps use the ``(B, C, T, F)`` layout throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from . import dsp
from .dsp import StftConfig, SpectrumPair, Waveform
from .errors import InvalidInputError


@dataclass
class ModelConfig:
    """Architecture and activation hyperparameters for the generator."""

    base_channels: int = 64
    dense_depth: int = 4
    n_conformers: int = 4
    compression_c: float = 0.3
    lsigmoid_beta: float = 2.0
    n_freq: int = 201
    downsample_stride: int = 2
    conformer_dim: int = 64
    conformer_heads: int = 4
    conformer_ff_mult: int = 4
    conformer_conv_kernel: int = 31
    dropout: float = 0.0
    # ablation switches
    disable_mag_compression: bool = False
    replace_lsigmoid_with_prelu: bool = False
    disable_phase_decoder: bool = False

    def __post_init__(self):
        if not (0.0 < self.compression_c <= 1.0):
            raise InvalidInputError(f"compression_c must be in (0, 1], got {self.compression_c}")
        if self.lsigmoid_beta <= 0:
            raise InvalidInputError(f"lsigmoid_beta must be positive, got {self.lsigmoid_beta}")
        if self.n_conformers < 1:
            raise InvalidInputError("n_conformers must be >= 1")
        if self.dense_depth < 1:
            raise InvalidInputError("dense_depth must be >= 1")
        if self.n_freq < 2:
            raise InvalidInputError("n_freq must be >= 2")
        if self.downsample_stride < 1:
            raise InvalidInputError("downsample_stride must be >= 1")
        if self.conformer_dim != self.base_channels:
            raise InvalidInputError(
                "conformer_dim must equal base_channels (the conformer bridge "
                "operates directly on encoder channels)"
            )
        if self.conformer_dim % self.conformer_heads != 0:
            raise InvalidInputError("conformer_dim must be divisible by conformer_heads")

    @property
    def dilations(self) -> tuple[int, ...]:
        """Dense-stack dilation per layer: 1, 2, 4, ... along the time axis."""
        return tuple(2**i for i in range(self.dense_depth))

    @property
    def effective_c(self) -> float:
        return 1.0 if self.disable_mag_compression else self.compression_c

    @property
    def latent_bins(self) -> int:
        return (self.n_freq - 1) // self.downsample_stride + 1


class LearnableSigmoid(nn.Module):
    """Sigmoid rescaled to (0, beta) with a trainable per-frequency slope.

    ``out = beta / (1 + exp(1 - alpha * t))`` with ``alpha`` broadcast along
    the last (frequency) axis.  ``alpha`` starts at 1 so the initial activation
    is a plain unit-slope sigmoid.
    """

    def __init__(self, n_freq: int, beta: float = 2.0):
        super().__init__()
        self.beta = beta
        self.alpha = nn.Parameter(torch.ones(n_freq))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.beta / (1.0 + torch.exp(1.0 - self.alpha * t))


def learnable_sigmoid(t: torch.Tensor, alpha: torch.Tensor, beta: float) -> torch.Tensor:
    """Functional form of :class:`LearnableSigmoid`; ``alpha`` broadcasts over frequency."""
    return beta / (1.0 + torch.exp(1.0 - alpha * t))


def phase_from_components(real: torch.Tensor, imag: torch.Tensor) -> torch.Tensor:
    """Wrapped phase in (-pi, pi] from pseudo-real/imaginary planes.

    Built from the single-argument arctangent plus a quadrant correction using
    the sign convention sgn(t) = 1 for t >= 0 and -1 otherwise, which places
    the negative real axis at +pi and maps (0, 0) to 0.
    """
    sgn_i = torch.where(imag >= 0, 1.0, -1.0).to(real.dtype)
    sgn_r = torch.where(real >= 0, 1.0, -1.0).to(real.dtype)
    zero_r = real == 0
    safe_real = torch.where(zero_r, torch.ones_like(real), real)
    base = torch.atan(imag / safe_real)
    on_axis = torch.sign(imag) * (math.pi / 2.0)
    base = torch.where(zero_r, on_axis, base)
    return base - (math.pi / 2.0) * sgn_i * (sgn_r - 1.0)


class ConvBlock(nn.Module):
    """2D convolution + instance norm + PReLU."""

    def __init__(self, in_ch, out_ch, kernel=(1, 1), stride=(1, 1), padding=(0, 0)):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding)
        self.norm = nn.InstanceNorm2d(out_ch, affine=True)
        self.act = nn.PReLU(out_ch)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class DilatedDenseBlock(nn.Module):
    """Densely connected 2D conv layers with time-axis dilations 1, 2, 4, ...

    Each layer sees the concatenation of the block input and every previous
    layer output; the block returns the last layer's activation.
    """

    def __init__(self, channels: int, depth: int = 4):
        super().__init__()
        self.layers = nn.ModuleList()
        for i in range(depth):
            d = 2**i
            self.layers.append(
                nn.Sequential(
                    nn.Conv2d(
                        channels * (i + 1),
                        channels,
                        kernel_size=(3, 3),
                        dilation=(d, 1),
                        padding=(d, 1),
                    ),
                    nn.InstanceNorm2d(channels, affine=True),
                    nn.PReLU(channels),
                )
            )

    def forward(self, x):
        skip = x
        out = x
        for layer in self.layers:
            out = layer(skip)
            skip = torch.cat([skip, out], dim=1)
        return out


class FeedForward(nn.Module):
    def __init__(self, dim, mult, dropout):
        super().__init__()
        self.net = nn.Sequential(
            nn.LayerNorm(dim),
            nn.Linear(dim, dim * mult),
            nn.SiLU(),
            nn.Dropout(dropout),
            nn.Linear(dim * mult, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x):
        return self.net(x)


class ConformerBlock(nn.Module):
    """Convolution-augmented transformer block over one sequence axis.

    Half-step feed-forward, self-attention, a depthwise-convolution module,
    another half-step feed-forward, and a closing layer norm, with residual
    connections around every stage.  Normalization inside the convolution
    module is batch-independent (GroupNorm) so outputs never mix across batch
    items in any mode.
    """

    def __init__(self, dim: int, heads: int, ff_mult: int, conv_kernel: int, dropout: float):
        super().__init__()
        self.ff1 = FeedForward(dim, ff_mult, dropout)
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.attn_dropout = nn.Dropout(dropout)
        self.conv_norm = nn.LayerNorm(dim)
        self.conv_pointwise_in = nn.Conv1d(dim, 2 * dim, kernel_size=1)
        self.conv_depthwise = nn.Conv1d(
            dim, dim, kernel_size=conv_kernel, groups=dim, padding=conv_kernel // 2
        )
        self.conv_groupnorm = nn.GroupNorm(1, dim)
        self.conv_pointwise_out = nn.Conv1d(dim, dim, kernel_size=1)
        self.conv_dropout = nn.Dropout(dropout)
        self.ff2 = FeedForward(dim, ff_mult, dropout)
        self.out_norm = nn.LayerNorm(dim)

    def _conv_module(self, x):
        y = self.conv_norm(x).transpose(1, 2)
        y = nn.functional.glu(self.conv_pointwise_in(y), dim=1)
        y = self.conv_depthwise(y)
        y = nn.functional.silu(self.conv_groupnorm(y))
        y = self.conv_pointwise_out(y).transpose(1, 2)
        return self.conv_dropout(y)

    def forward(self, x):
        x = x + 0.5 * self.ff1(x)
        a = self.attn_norm(x)
        a, _ = self.attn(a, a, a, need_weights=False)
        x = x + self.attn_dropout(a)
        x = x + self._conv_module(x)
        x = x + 0.5 * self.ff2(x)
        return self.out_norm(x)


class TimeFreqConformer(nn.Module):
    """One conformer pass along time (per frequency), then along frequency (per frame)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        args = (
            cfg.conformer_dim,
            cfg.conformer_heads,
            cfg.conformer_ff_mult,
            cfg.conformer_conv_kernel,
            cfg.dropout,
        )
        self.time_block = ConformerBlock(*args)
        self.freq_block = ConformerBlock(*args)

    def forward(self, x):
        b, c, t, f = x.shape
        y = x.permute(0, 3, 2, 1).reshape(b * f, t, c)
        y = self.time_block(y)
        x = y.reshape(b, f, t, c).permute(0, 3, 2, 1)
        y = x.permute(0, 2, 3, 1).reshape(b * t, f, c)
        y = self.freq_block(y)
        return y.reshape(b, t, f, c).permute(0, 3, 1, 2)


class Encoder(nn.Module):
    """Maps the 2-channel (compressed magnitude, phase) input to the latent grid.

    Channel lift, dilated dense stack, then a frequency-downsampling block.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_channels
        self.conv_in = ConvBlock(2, c, kernel=(1, 1))
        self.dense = DilatedDenseBlock(c, cfg.dense_depth)
        self.conv_down = ConvBlock(
            c, c, kernel=(1, 3), stride=(1, cfg.downsample_stride), padding=(0, 1)
        )
        self.n_freq = cfg.n_freq

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 2 or x.shape[3] != self.n_freq:
            raise InvalidInputError(
                f"expected input (B, 2, T, {self.n_freq}), got {tuple(x.shape)}"
            )
        return self.conv_down(self.dense(self.conv_in(x)))


class _DeconvBlock(nn.Module):
    """Transposed-conv upsampling along frequency back to the full bin count."""

    def __init__(self, channels: int, stride: int):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(
            channels, channels, kernel_size=(1, 3), stride=(1, stride), padding=(0, 1)
        )
        self.norm = nn.InstanceNorm2d(channels, affine=True)
        self.act = nn.PReLU(channels)

    def forward(self, x, out_freq: int):
        y = self.deconv(x, output_size=(x.shape[2], out_freq))
        return self.act(self.norm(y))


class MaskDecoder(nn.Module):
    """Predicts a bounded compressed-domain mask and applies it to the noisy magnitude.

    The mask lives in (0, beta) through the learnable sigmoid; the enhanced
    magnitude is ``(noisy**c * mask) ** (1/c)``, which can attenuate or amplify.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_channels
        self.cfg = cfg
        self.dense = DilatedDenseBlock(c, cfg.dense_depth)
        self.up = _DeconvBlock(c, cfg.downsample_stride)
        self.out_conv = nn.Conv2d(c, 1, kernel_size=(1, 1))
        if cfg.replace_lsigmoid_with_prelu:
            self.activation = nn.PReLU(cfg.n_freq)
        else:
            self.activation = LearnableSigmoid(cfg.n_freq, cfg.lsigmoid_beta)

    def forward(self, latent: torch.Tensor, noisy_mag: torch.Tensor):
        if latent.shape[2] != noisy_mag.shape[1]:
            raise InvalidInputError("latent and noisy magnitude frame counts differ")
        h = self.up(self.dense(latent), self.cfg.n_freq)
        pre = self.out_conv(h).squeeze(1)
        if self.cfg.replace_lsigmoid_with_prelu:
            # per-frequency PReLU slopes live on the channel axis
            mask = self.activation(pre.transpose(1, 2)).transpose(1, 2)
        else:
            mask = self.activation(pre)
        c = self.cfg.effective_c
        masked = dsp.compress_magnitude(noisy_mag, c) * mask
        if self.cfg.replace_lsigmoid_with_prelu:
            # PReLU masks can go negative; keep the magnitude domain valid.
            masked = masked.clamp(min=0.0)
        return mask, dsp.decompress_magnitude(masked, c)


class PhaseDecoder(nn.Module):
    """Predicts the wrapped phase via parallel pseudo-real/imaginary planes."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_channels
        self.cfg = cfg
        self.dense = DilatedDenseBlock(c, cfg.dense_depth)
        self.up = _DeconvBlock(c, cfg.downsample_stride)
        self.conv_real = nn.Conv2d(c, 1, kernel_size=(1, 1))
        self.conv_imag = nn.Conv2d(c, 1, kernel_size=(1, 1))

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        h = self.up(self.dense(latent), self.cfg.n_freq)
        real = self.conv_real(h).squeeze(1)
        imag = self.conv_imag(h).squeeze(1)
        return phase_from_components(real, imag)


class MagPhaseGenerator(nn.Module):
    """End-to-end spectrum enhancer: encoder, conformer bridge, parallel decoders."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.conformers = nn.ModuleList(TimeFreqConformer(cfg) for _ in range(cfg.n_conformers))
        self.mask_decoder = MaskDecoder(cfg)
        self.phase_decoder = PhaseDecoder(cfg)
        if cfg.disable_phase_decoder:
            for p in self.phase_decoder.parameters():
                p.requires_grad_(False)

    def encode(self, noisy_mag: torch.Tensor, noisy_phase: torch.Tensor) -> torch.Tensor:
        """Latent grid (B, C, T, F') from raw noisy magnitude and phase (B, T, F)."""
        mag_c = dsp.compress_magnitude(noisy_mag, self.cfg.effective_c)
        x = torch.stack([mag_c, noisy_phase], dim=1)
        latent = self.encoder(x)
        for block in self.conformers:
            latent = block(latent)
        return latent

    def forward(self, noisy_mag: torch.Tensor, noisy_phase: torch.Tensor):
        """Returns (enhanced_mag, enhanced_phase, compressed mask), each (B, T, F)."""
        latent = self.encode(noisy_mag, noisy_phase)
        mask, enhanced_mag = self.mask_decoder(latent, noisy_mag)
        if self.cfg.disable_phase_decoder:
            enhanced_phase = noisy_phase
        else:
            enhanced_phase = self.phase_decoder(latent)
        return enhanced_mag, enhanced_phase, mask

    @torch.no_grad()
    def enhance(self, w: Waveform, stft_cfg: StftConfig) -> tuple[Waveform, SpectrumPair]:
        """Denoise a waveform; output has the same length and sample rate."""
        was_training = self.training
        self.eval()
        try:
            x = torch.as_tensor(w.samples, dtype=torch.float32)
            mag, phase = dsp.stft_tensor(x, stft_cfg)
            enh_mag, enh_phase, _ = self.forward(mag.unsqueeze(0), phase.unsqueeze(0))
            y = dsp.istft_tensor(enh_mag, enh_phase, stft_cfg, len(w))[0]
        finally:
            self.train(was_training)
        pair = SpectrumPair(magnitude=enh_mag[0].detach(), phase=enh_phase[0].detach())
        return Waveform(samples=y.numpy(), sample_rate=w.sample_rate), pair


class MetricDiscriminator(nn.Module):
    """Regresses a quality score in (0, 1) from a (reference, estimate) magnitude pair."""

    def __init__(self, channels: tuple[int, ...] = (16, 32, 64, 128)):
        super().__init__()
        blocks = []
        in_ch = 2
        for ch in channels:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, ch, kernel_size=(4, 4), stride=(2, 2), padding=(1, 1)),
                    nn.InstanceNorm2d(ch, affine=True),
                    nn.PReLU(ch),
                )
            )
            in_ch = ch
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Sequential(
            nn.Linear(in_ch, in_ch // 2),
            nn.PReLU(in_ch // 2),
            nn.Linear(in_ch // 2, 1),
            nn.Sigmoid(),
        )

    def forward(self, clean_mag: torch.Tensor, other_mag: torch.Tensor) -> torch.Tensor:
        if clean_mag.shape != other_mag.shape:
            raise InvalidInputError(
                f"magnitude shapes differ: {tuple(clean_mag.shape)} vs {tuple(other_mag.shape)}"
            )
        x = torch.stack([clean_mag, other_mag], dim=1)
        h = self.blocks(x)
        pooled = h.mean(dim=(2, 3))
        return self.head(pooled).squeeze(-1)


def count_parameters(module: nn.Module) -> int:
    """Number of trainable scalars in a module."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def parameter_breakdown(gen: MagPhaseGenerator) -> dict[str, int]:
    """Trainable-parameter counts per generator stage."""
    return {
        "encoder": count_parameters(gen.encoder),
        "conformers": count_parameters(gen.conformers),
        "mask_decoder": count_parameters(gen.mask_decoder),
        "phase_decoder": count_parameters(gen.phase_decoder),
        "total": count_parameters(gen),
    }

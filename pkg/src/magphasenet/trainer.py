"""Joint adversarial training of the generator and metric discriminator.

One training step runs a discriminator update (regressing oracle scores on
detached enhanced spectra) followed by a generator update on the weighted
multi-level objective.  Checkpoints carry every parameter tensor, optimizer
moments, the epoch/step counters, and the RNG states, so an interrupted run
resumes on the exact loss trajectory of an uninterrupted one.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np
import torch

from . import dsp, losses
from .data import Manifest, SegmentLoader, mix_at_snr, resolve_path, resample, TARGET_RATE
from .dsp import StftConfig, Waveform
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .losses import LossReport, LossWeights
from .metrics import EvalReport, QualityOracle, make_oracle, score_pair
from .network import MagPhaseGenerator, MetricDiscriminator, ModelConfig

CHECKPOINT_FORMAT = "magphasenet.ckpt.v1"


@dataclass
class TrainConfig:
    """Optimization schedule, batching, and run-control settings."""

    epochs: int = 100
    lr_init: float = 5e-4
    lr_halving_period: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 4
    segment_length: int = 32000
    seed: int = 1234
    checkpoint_every: int = 10
    eval_every: int = 1
    grad_clip: float = 5.0
    max_steps: int = 0  # 0 = no cap
    oracle: str = "surrogate"
    oracle_scale: str = "pesq"
    disable_discriminator: bool = False
    update_order: str = "d_first"

    def __post_init__(self):
        if self.lr_init <= 0:
            raise ConfigError(f"lr_init must be positive, got {self.lr_init}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_halving_period < 1:
            raise ConfigError("lr_halving_period must be >= 1")
        if self.update_order not in ("d_first", "g_first"):
            raise ConfigError(f"update_order must be d_first or g_first, got {self.update_order}")


@dataclass
class TrainState:
    generator: MagPhaseGenerator
    discriminator: MetricDiscriminator
    opt_g: torch.optim.AdamW
    opt_d: torch.optim.AdamW
    epoch: int = 0
    global_step: int = 0
    best_oracle_score: float = -math.inf
    best_epoch: int = -1


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    random.seed(seed)
    torch.set_flush_denormal(True)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Initial rate halved every ``lr_halving_period`` epochs."""
    return cfg.lr_init * 0.5 ** (epoch // cfg.lr_halving_period)


def _trainable(module: torch.nn.Module):
    return [p for p in module.parameters() if p.requires_grad]


def init_state(model_cfg: ModelConfig, cfg: TrainConfig) -> TrainState:
    """Fresh generator/discriminator pair with AdamW optimizers, seeded."""
    seed_everything(cfg.seed)
    generator = MagPhaseGenerator(model_cfg)
    discriminator = MetricDiscriminator()
    opt_g = torch.optim.AdamW(
        _trainable(generator),
        lr=cfg.lr_init,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    opt_d = torch.optim.AdamW(
        _trainable(discriminator),
        lr=cfg.lr_init,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    return TrainState(generator, discriminator, opt_g, opt_d)


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def _oracle_batch(
    oracle: QualityOracle, clean: torch.Tensor, enhanced: torch.Tensor
) -> torch.Tensor:
    scores = []
    for i in range(clean.shape[0]):
        c = Waveform(clean[i].detach().numpy().astype(np.float64))
        e = Waveform(enhanced[i].detach().numpy().astype(np.float64))
        scores.append(oracle.score(c, e))
    return torch.tensor(scores, dtype=torch.float32)


def train_step(
    clean: torch.Tensor,
    noisy: torch.Tensor,
    batch_id: str,
    state: TrainState,
    cfg: TrainConfig,
    weights: LossWeights,
    stft_cfg: StftConfig,
    oracle: QualityOracle,
) -> LossReport:
    """One discriminator update followed by one generator update on a batch.

    ``clean`` and ``noisy`` are (B, L) float tensors.  With the discriminator
    disabled its parameters are never touched and the metric term is skipped.
    """
    gen, disc = state.generator, state.discriminator
    gen.train()
    disc.train()
    length = clean.shape[-1]
    with torch.no_grad():
        clean_mag, clean_phase = dsp.stft_tensor(clean, stft_cfg)
        noisy_mag, noisy_phase = dsp.stft_tensor(noisy, stft_cfg)

    enh_mag, enh_phase, _ = gen(noisy_mag, noisy_phase)
    x_hat = dsp.istft_tensor(enh_mag, enh_phase, stft_cfg, length)
    with torch.no_grad():
        finite = (
            torch.isfinite(enh_mag).all()
            and torch.isfinite(enh_phase).all()
            and torch.isfinite(x_hat).all()
        )
    if not finite:
        raise TrainingDivergedError(
            f"non-finite generator output at batch {batch_id}", batch_id=batch_id
        )

    use_disc = not cfg.disable_discriminator

    def update_discriminator() -> float:
        q = _oracle_batch(oracle, clean, x_hat)
        state.opt_d.zero_grad(set_to_none=True)
        d_cc = disc(clean_mag, clean_mag)
        d_ce = disc(clean_mag, enh_mag.detach())
        d_loss = losses.discriminator_loss(d_cc, d_ce, q)
        d_loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(_trainable(disc), cfg.grad_clip)
        state.opt_d.step()
        return float(d_loss.detach())

    def update_generator() -> LossReport:
        t_l = losses.time_loss(clean, x_hat)
        m_l = losses.magnitude_loss(clean_mag, enh_mag)
        c_l = losses.complex_loss(
            clean_mag * torch.cos(clean_phase),
            clean_mag * torch.sin(clean_phase),
            enh_mag * torch.cos(enh_phase),
            enh_mag * torch.sin(enh_phase),
        )
        ip = losses.ip_loss(clean_phase, enh_phase)
        gd = losses.gd_loss(clean_phase, enh_phase)
        iaf = losses.iaf_loss(clean_phase, enh_phase)
        p_l = ip + gd + iaf
        if use_disc and weights.gamma4 > 0:
            met = losses.metric_loss(disc(clean_mag, enh_mag))
        else:
            met = torch.zeros(())
        total = losses.generator_loss(t_l, m_l, c_l, met, p_l, weights)
        state.opt_g.zero_grad(set_to_none=True)
        if total.requires_grad:
            total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(_trainable(gen), cfg.grad_clip)
            state.opt_g.step()
        return LossReport(
            time=float(t_l.detach()),
            mag=float(m_l.detach()),
            complex=float(c_l.detach()),
            ip=float(ip.detach()),
            gd=float(gd.detach()),
            iaf=float(iaf.detach()),
            phase_total=float(p_l.detach()),
            metric=float(met.detach()),
            generator_total=float(total.detach()),
        )

    if cfg.update_order == "d_first":
        d_value = update_discriminator() if use_disc else 0.0
        report = update_generator()
    else:
        report = update_generator()
        d_value = update_discriminator() if use_disc else 0.0
    report.discriminator = d_value

    if not all(math.isfinite(v) for v in report.as_dict().values()):
        raise TrainingDivergedError(
            f"non-finite loss at batch {batch_id}: {report.format_line()}", batch_id=batch_id
        )
    return report


def evaluate_split(
    generator: MagPhaseGenerator | None,
    manifest: Manifest,
    manifest_path,
    split: str,
    stft_cfg: StftConfig,
    oracle: QualityOracle,
) -> EvalReport:
    """Score every clip of a split; with ``generator=None`` score the noisy input."""
    report = EvalReport(oracle_name=oracle.name)
    for j, entry in enumerate(manifest.split(split)):
        clean = dsp.read_wav(resolve_path(manifest_path, entry.clean_path))
        if clean.sample_rate != TARGET_RATE:
            clean = resample(clean, TARGET_RATE)
        if entry.noisy_path is not None:
            noisy = dsp.read_wav(resolve_path(manifest_path, entry.noisy_path))
            if noisy.sample_rate != TARGET_RATE:
                noisy = resample(noisy, TARGET_RATE)
        else:
            noise = dsp.read_wav(resolve_path(manifest_path, entry.noise_path))
            if noise.sample_rate != TARGET_RATE:
                noise = resample(noise, TARGET_RATE)
            noisy = mix_at_snr(clean, noise, entry.snr_db, seed=j)
        if generator is not None:
            degraded, _ = generator.enhance(noisy, stft_cfg)
        else:
            degraded = noisy
        report.clips.append(score_pair(f"{split}:{j}", clean, degraded, oracle))
    return report


def save_checkpoint(
    path,
    state: TrainState,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    stft_cfg: StftConfig,
    weights: LossWeights,
) -> None:
    """Write a single-archive checkpoint (parameters, optimizers, counters, RNG)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": asdict(model_cfg),
        "train_config": asdict(train_cfg),
        "stft_config": asdict(stft_cfg),
        "loss_weights": asdict(weights),
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "optimizer_g": state.opt_g.state_dict(),
        "optimizer_d": state.opt_d.state_dict(),
        "epoch": state.epoch,
        "global_step": state.global_step,
        "best_oracle_score": state.best_oracle_score,
        "best_epoch": state.best_epoch,
        "rng": {
            "torch": torch.get_rng_state(),
            "numpy": np.random.get_state(),
            "python": random.getstate(),
        },
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    """Read a checkpoint archive, validating the format tag."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"{path} is not a {CHECKPOINT_FORMAT} archive "
            f"(format tag: {payload.get('format') if isinstance(payload, dict) else None!r})"
        )
    return payload


def restore_state(payload: dict, restore_rng: bool = True) -> tuple[TrainState, ModelConfig, TrainConfig, StftConfig, LossWeights]:
    """Rebuild models, optimizers, and counters from a checkpoint payload."""
    model_cfg = ModelConfig(**payload["model_config"])
    train_cfg = TrainConfig(**payload["train_config"])
    stft_cfg = StftConfig(**payload["stft_config"])
    weights = LossWeights(**payload["loss_weights"])
    state = init_state(model_cfg, train_cfg)
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["optimizer_g"])
    state.opt_d.load_state_dict(payload["optimizer_d"])
    state.epoch = payload["epoch"]
    state.global_step = payload["global_step"]
    state.best_oracle_score = payload.get("best_oracle_score", -math.inf)
    state.best_epoch = payload.get("best_epoch", -1)
    if restore_rng:
        rng = payload["rng"]
        torch.set_rng_state(rng["torch"])
        np.random.set_state(rng["numpy"])
        random.setstate(rng["python"])
    return state, model_cfg, train_cfg, stft_cfg, weights


def load_generator(path) -> tuple[MagPhaseGenerator, ModelConfig, StftConfig]:
    """Inference-only load: generator parameters plus the configs they need."""
    payload = load_checkpoint(path)
    model_cfg = ModelConfig(**payload["model_config"])
    stft_cfg = StftConfig(**payload["stft_config"])
    generator = MagPhaseGenerator(model_cfg)
    generator.load_state_dict(payload["generator"])
    generator.eval()
    return generator, model_cfg, stft_cfg


def fit(
    manifest_path,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    stft_cfg: StftConfig | None = None,
    weights: LossWeights | None = None,
    out_dir=None,
    resume_from=None,
) -> tuple[TrainState, dict]:
    """Run the epoch loop: train steps, periodic eval, checkpoints, best tracking.

    Returns the final state and a history dict with per-step loss records and
    per-eval metric records.  ``max_steps`` (if nonzero) caps the total number
    of optimization steps; a run interrupted by the cap checkpoints mid-epoch
    and resumes exactly.
    """
    stft_cfg = stft_cfg or StftConfig()
    weights = weights or LossWeights()
    if resume_from is not None:
        state, model_cfg, train_cfg_ckpt, stft_cfg, weights = restore_state(
            load_checkpoint(resume_from)
        )
        train_cfg = replace(
            train_cfg_ckpt, epochs=train_cfg.epochs, max_steps=train_cfg.max_steps
        )
    else:
        state = init_state(model_cfg, train_cfg)
    oracle = make_oracle(train_cfg.oracle, train_cfg.oracle_scale)
    manifest = Manifest.load(manifest_path)
    if train_cfg.disable_discriminator and weights.gamma4 != 0.0:
        raise ConfigError("disable_discriminator requires gamma4 = 0")

    loader = SegmentLoader(
        manifest,
        manifest_path,
        segment_length=train_cfg.segment_length,
        batch_size=train_cfg.batch_size,
        seed=train_cfg.seed,
    )
    has_test = bool(manifest.split("test"))

    out_dir = Path(out_dir) if out_dir is not None else None
    step_log = eval_log = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        step_log = open(out_dir / "train_log.txt", "a", encoding="utf-8")
        eval_log = open(out_dir / "eval_log.txt", "a", encoding="utf-8")

    history: dict = {"steps": [], "evals": []}
    steps_per_epoch = loader.steps_per_epoch()

    def step_cap_reached() -> bool:
        return train_cfg.max_steps > 0 and state.global_step >= train_cfg.max_steps

    def run_eval() -> None:
        report = evaluate_split(
            state.generator, manifest, manifest_path, "test", stft_cfg, oracle
        )
        is_best = report.mean_oracle_score > state.best_oracle_score
        if is_best:
            state.best_oracle_score = report.mean_oracle_score
            state.best_epoch = state.epoch
            if out_dir is not None:
                save_checkpoint(
                    out_dir / "checkpoint_best.pt",
                    state, model_cfg, train_cfg, stft_cfg, weights,
                )
        record = {
            "epoch": state.epoch,
            "ssnr_db": report.mean_ssnr_db,
            "si_sdr_db": report.mean_si_sdr_db,
            "oracle_score": report.mean_oracle_score,
            "best": int(is_best),
        }
        history["evals"].append(record)
        if eval_log is not None:
            eval_log.write(" ".join(f"{k}={v}" for k, v in record.items()) + "\n")
            eval_log.flush()

    try:
        while state.epoch < train_cfg.epochs and not step_cap_reached():
            lr = lr_schedule(state.epoch, train_cfg)
            _set_lr(state.opt_g, lr)
            _set_lr(state.opt_d, lr)
            skip = state.global_step - state.epoch * steps_per_epoch
            for b, (clean, noisy, batch_id) in enumerate(loader.batches(state.epoch)):
                if b < skip:
                    continue
                report = train_step(
                    clean, noisy, batch_id, state, train_cfg, weights, stft_cfg, oracle
                )
                state.global_step += 1
                record = {"step": state.global_step, "epoch": state.epoch, "lr": lr}
                record.update(report.as_dict())
                history["steps"].append(record)
                if step_log is not None:
                    step_log.write(
                        f"step={state.global_step} epoch={state.epoch} lr={lr:.6e} "
                        + report.format_line()
                        + "\n"
                    )
                    step_log.flush()
                if step_cap_reached():
                    break
            else:
                state.epoch += 1
                if has_test and (
                    state.epoch % train_cfg.eval_every == 0
                    or state.epoch == train_cfg.epochs
                ):
                    run_eval()
                if out_dir is not None:
                    save_checkpoint(
                        out_dir / "checkpoint_latest.pt",
                        state, model_cfg, train_cfg, stft_cfg, weights,
                    )
                    if state.epoch % train_cfg.checkpoint_every == 0:
                        save_checkpoint(
                            out_dir / f"checkpoint_epoch{state.epoch:05d}.pt",
                            state, model_cfg, train_cfg, stft_cfg, weights,
                        )
                continue
            break  # step cap hit mid-epoch
        if out_dir is not None:
            save_checkpoint(
                out_dir / "checkpoint_latest.pt",
                state, model_cfg, train_cfg, stft_cfg, weights,
            )
    finally:
        if step_log is not None:
            step_log.close()
        if eval_log is not None:
            eval_log.close()
    return state, history

"""Command-line entry point: train, enhance, eval, synth-data, spectrogram, inspect.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.  Every run
that produces artifacts also writes the fully resolved configuration next to
them, so reruns are reproducible from the echo alone.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dsp, metrics, trainer
from .config import RunConfig, apply_ablation, build_run_config, echo_config, parse_config_file
from .data import Manifest, resample, synth_desk_corpus
from .dsp import StftConfig, read_wav, write_wav
from .errors import (
    CheckpointError,
    ConfigError,
    InvalidInputError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from .network import MagPhaseGenerator, parameter_breakdown

PARAM_BUDGET = 2_050_000  # reference size for the default architecture


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key-value configuration file")
    parser.add_argument(
        "--set",
        dest="sets",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="override train.seed")
    parser.add_argument(
        "--ablation",
        action="append",
        default=[],
        choices=sorted(config_mod.ABLATIONS),
        help="apply a named ablation switch (repeatable)",
    )
    parser.add_argument("--oracle", help="quality oracle: surrogate or external:<cmd>")
    parser.add_argument("--out", help="output directory or file")


def load_run_config(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides: dict[str, str] = {}
    for item in args.sets:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    if args.oracle is not None:
        overrides["train.oracle"] = args.oracle
    if args.out is not None:
        overrides["data.out_dir"] = args.out
    cfg = build_run_config(file_values, overrides)
    for name in args.ablation:
        apply_ablation(cfg, name)
    return cfg


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    if cfg.data.manifest is None:
        raise ConfigError("missing required configuration key: data.manifest")
    out_dir = Path(cfg.data.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_echo.cfg").write_text(echo_config(cfg), encoding="utf-8")
    state, history = trainer.fit(
        cfg.data.manifest,
        cfg.model,
        cfg.train,
        stft_cfg=cfg.stft,
        weights=cfg.loss,
        out_dir=out_dir,
        resume_from=args.resume,
    )
    manifest = Manifest.load(cfg.data.manifest)
    if manifest.split("test"):
        oracle = metrics.make_oracle(cfg.train.oracle, cfg.train.oracle_scale)
        report = trainer.evaluate_split(
            state.generator, manifest, cfg.data.manifest, "test", cfg.stft, oracle
        )
        report.save_jsonl(out_dir / "eval_report.jsonl")
        print(report.format_table())
    print(
        f"trained {state.global_step} steps over {state.epoch} epochs; "
        f"artifacts in {out_dir}"
    )
    return 0


def cmd_enhance(args) -> int:
    generator, _, stft_cfg = trainer.load_generator(args.checkpoint)
    w = read_wav(args.input)
    original_rate = w.sample_rate
    original_length = len(w)
    work = w if original_rate == 16000 else resample(w, 16000)
    enhanced, _ = generator.enhance(work, stft_cfg)
    if original_rate != 16000:
        enhanced = resample(enhanced, original_rate)
    samples = enhanced.samples
    if len(samples) < original_length:
        samples = np.pad(samples, (0, original_length - len(samples)))
    samples = samples[:original_length]
    out = args.out or str(Path(args.input).with_suffix(".enhanced.wav"))
    write_wav(out, dsp.Waveform(samples, original_rate))
    print(f"wrote {out} ({original_length} samples @ {original_rate} Hz)")
    return 0


def cmd_eval(args) -> int:
    generator, _, stft_cfg = trainer.load_generator(args.checkpoint)
    manifest = Manifest.load(args.manifest)
    oracle = metrics.make_oracle(args.oracle or "surrogate")
    report = trainer.evaluate_split(
        generator, manifest, args.manifest, args.split, stft_cfg, oracle
    )
    out = args.out or "eval_report.jsonl"
    report.save_jsonl(out)
    print(report.format_table())
    print(f"report written to {out}")
    return 0


def cmd_synth_data(args) -> int:
    out_dir = args.out or "desk_corpus"
    manifest = synth_desk_corpus(
        out_dir,
        n_clips=args.clips,
        clip_seconds=args.seconds,
        seed=args.seed if args.seed is not None else 0,
        n_test_clips=args.test_clips,
    )
    print(
        f"wrote {len(manifest.split('train'))} train + {len(manifest.split('test'))} test "
        f"pairs under {out_dir} (manifest.jsonl alongside)"
    )
    return 0


def render_spectrogram(wav_path, out_path, stft_cfg: StftConfig | None = None) -> dict:
    """Render a log-magnitude spectrogram PNG; returns plot geometry for checks."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    w = read_wav(wav_path)
    cfg = stft_cfg or StftConfig()
    pair = dsp.stft(w, cfg)
    mag_db = 20.0 * np.log10(pair.magnitude.numpy() + 1e-10)
    vmax = float(mag_db.max())
    extent = (0.0, len(w) / w.sample_rate, 0.0, w.sample_rate / 2.0)
    fig, ax = plt.subplots(figsize=(8, 4))
    image = ax.imshow(
        mag_db.T,
        origin="lower",
        aspect="auto",
        extent=extent,
        cmap="magma",
        vmin=vmax - 80.0,
        vmax=vmax,
    )
    ax.set_xlabel("time [s]")
    ax.set_ylabel("frequency [Hz]")
    fig.colorbar(image, ax=ax, label="magnitude [dB]")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return {
        "extent": extent,
        "frames": pair.frames,
        "bins": pair.bins,
        "nyquist_hz": w.sample_rate / 2.0,
    }


def cmd_spectrogram(args) -> int:
    out = args.out or str(Path(args.input).with_suffix(".png"))
    info = render_spectrogram(args.input, out)
    print(
        f"wrote {out} ({info['frames']} frames x {info['bins']} bins, "
        f"0..{info['nyquist_hz']:.0f} Hz)"
    )
    return 0


def cmd_inspect(args) -> int:
    if args.checkpoint:
        generator, model_cfg, _ = trainer.load_generator(args.checkpoint)
    else:
        cfg = load_run_config(args)
        model_cfg = cfg.model
        generator = MagPhaseGenerator(model_cfg)
    breakdown = parameter_breakdown(generator)
    for name, count in breakdown.items():
        print(f"{name:>14}: {count:,}")
    total = breakdown["total"]
    delta = 100.0 * (total - PARAM_BUDGET) / PARAM_BUDGET
    print(f"reference budget {PARAM_BUDGET:,} ({delta:+.1f}% delta)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magphasenet",
        description="Parallel magnitude and phase spectrum denoising for speech",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a manifest")
    _add_common(p_train)
    p_train.add_argument("--resume", help="checkpoint to resume from")
    p_train.set_defaults(func=cmd_train)

    p_enh = sub.add_parser("enhance", help="denoise a WAV file with a checkpoint")
    p_enh.add_argument("input", help="input WAV path")
    p_enh.add_argument("--checkpoint", required=True)
    p_enh.add_argument("--out", help="output WAV path")
    p_enh.set_defaults(func=cmd_enhance)

    p_eval = sub.add_parser("eval", help="score a manifest split with a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--split", default="test", choices=["train", "test"])
    p_eval.add_argument("--oracle", help="surrogate or external:<cmd>")
    p_eval.add_argument("--out", help="report path (JSON lines)")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth-data", help="generate the synthetic desk corpus")
    p_synth.add_argument("--out", help="corpus directory")
    p_synth.add_argument("--clips", type=int, default=8, help="training pairs to generate")
    p_synth.add_argument("--seconds", type=float, default=1.0, help="clip duration")
    p_synth.add_argument("--test-clips", type=int, default=2)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth_data)

    p_spec = sub.add_parser("spectrogram", help="render a log-magnitude spectrogram")
    p_spec.add_argument("input", help="input WAV path")
    p_spec.add_argument("--out", help="output image path")
    p_spec.set_defaults(func=cmd_spectrogram)

    p_inspect = sub.add_parser("inspect", help="print trainable-parameter counts")
    _add_common(p_inspect)
    p_inspect.add_argument("--checkpoint", help="read architecture from a checkpoint")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (
        CheckpointError,
        TrainingDivergedError,
        UndefinedMetricError,
        InvalidInputError,
        RuntimeError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

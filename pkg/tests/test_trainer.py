import copy
import math

import numpy as np
import pytest
import torch

from magphasenet.dsp import StftConfig
from magphasenet.errors import ConfigError, TrainingDivergedError
from magphasenet.losses import LossWeights
from magphasenet.metrics import SurrogateOracle
from magphasenet.network import ModelConfig
from magphasenet.trainer import (
    TrainConfig,
    fit,
    init_state,
    load_checkpoint,
    load_generator,
    lr_schedule,
    restore_state,
    train_step,
)

STFT = StftConfig()


def tiny_train_cfg(**kw) -> TrainConfig:
    base = dict(
        epochs=10_000,
        batch_size=2,
        segment_length=1600,
        seed=7,
        max_steps=4,
        eval_every=1,
        checkpoint_every=1000,
    )
    base.update(kw)
    return TrainConfig(**base)


def make_batch(rng, batch=2, length=1600):
    clean = torch.tensor(rng.standard_normal((batch, length)) * 0.3, dtype=torch.float32)
    noisy = clean + torch.tensor(
        rng.standard_normal((batch, length)) * 0.1, dtype=torch.float32
    )
    return clean, noisy


class TestLrSchedule:
    def test_published_values(self):
        cfg = TrainConfig()
        assert lr_schedule(0, cfg) == pytest.approx(5e-4)
        assert lr_schedule(29, cfg) == pytest.approx(5e-4)
        assert lr_schedule(30, cfg) == pytest.approx(2.5e-4)
        assert lr_schedule(99, cfg) == pytest.approx(6.25e-5)

    def test_non_increasing(self):
        cfg = TrainConfig()
        values = [lr_schedule(e, cfg) for e in range(150)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestTrainStep:
    def test_losses_finite_and_reported(self, tiny_model_cfg, rng):
        state = init_state(tiny_model_cfg, tiny_train_cfg())
        clean, noisy = make_batch(rng)
        report = train_step(
            clean, noisy, "b0", state, tiny_train_cfg(), LossWeights(), STFT, SurrogateOracle()
        )
        for value in report.as_dict().values():
            assert math.isfinite(value)
        assert report.phase_total == pytest.approx(
            report.ip + report.gd + report.iaf, rel=1e-6
        )
        assert report.generator_total > 0

    def test_nan_batch_aborts_with_batch_id(self, tiny_model_cfg, rng):
        state = init_state(tiny_model_cfg, tiny_train_cfg())
        clean, noisy = make_batch(rng)
        noisy[0, 5] = float("inf")
        with pytest.raises(TrainingDivergedError) as err:
            train_step(
                clean, noisy, "bad-batch-17", state, tiny_train_cfg(), LossWeights(),
                STFT, SurrogateOracle(),
            )
        assert err.value.batch_id == "bad-batch-17"
        assert "bad-batch-17" in str(err.value)

    def test_discriminator_frozen_when_disabled(self, tiny_model_cfg, rng):
        cfg = tiny_train_cfg(disable_discriminator=True)
        state = init_state(tiny_model_cfg, cfg)
        before = copy.deepcopy(state.discriminator.state_dict())
        clean, noisy = make_batch(rng)
        report = train_step(
            clean, noisy, "b0", state, cfg, LossWeights(gamma4=0.0), STFT, SurrogateOracle()
        )
        after = state.discriminator.state_dict()
        for key in before:
            assert torch.equal(before[key], after[key]), key
        assert report.metric == 0.0
        assert report.discriminator == 0.0

    def test_phase_decoder_frozen_when_disabled(self, rng):
        model_cfg = ModelConfig(
            base_channels=16,
            conformer_dim=16,
            conformer_heads=2,
            n_conformers=1,
            dense_depth=2,
            conformer_conv_kernel=7,
            disable_phase_decoder=True,
        )
        cfg = tiny_train_cfg()
        state = init_state(model_cfg, cfg)
        before = copy.deepcopy(state.generator.phase_decoder.state_dict())
        clean, noisy = make_batch(rng)
        train_step(clean, noisy, "b0", state, cfg, LossWeights(), STFT, SurrogateOracle())
        after = state.generator.phase_decoder.state_dict()
        for key in before:
            assert torch.equal(before[key], after[key]), key

    def test_zero_gamma3_has_no_complex_gradient_path(self, tiny_model_cfg, rng):
        # updates with the complex term skipped equal updates with it weighted 0
        from magphasenet import dsp, losses

        weights = LossWeights(gamma3=0.0)
        results = []
        for include_term in (False, True):
            torch.manual_seed(21)
            gen_state = init_state(tiny_model_cfg, tiny_train_cfg())
            gen = gen_state.generator
            clean, noisy = make_batch(np.random.default_rng(5))
            clean_mag, clean_phase = dsp.stft_tensor(clean, STFT)
            noisy_mag, noisy_phase = dsp.stft_tensor(noisy, STFT)
            enh_mag, enh_phase, _ = gen(noisy_mag, noisy_phase)
            x_hat = dsp.istft_tensor(enh_mag, enh_phase, STFT, clean.shape[-1])
            total = (
                weights.gamma1 * losses.time_loss(clean, x_hat)
                + weights.gamma2 * losses.magnitude_loss(clean_mag, enh_mag)
                + weights.gamma5 * losses.phase_loss(clean_phase, enh_phase)
            )
            if include_term:
                total = total + 0.0 * losses.complex_loss(
                    clean_mag * torch.cos(clean_phase),
                    clean_mag * torch.sin(clean_phase),
                    enh_mag * torch.cos(enh_phase),
                    enh_mag * torch.sin(enh_phase),
                )
            total.backward()
            grads = {
                name: p.grad.clone()
                for name, p in gen.named_parameters()
                if p.grad is not None
            }
            results.append(grads)
        assert results[0].keys() == results[1].keys()
        for key in results[0]:
            assert torch.equal(results[0][key], results[1][key]), key


class TestFit:
    def test_zero_epochs_no_updates(self, tiny_model_cfg, tiny_corpus, tmp_path):
        root, _ = tiny_corpus
        cfg = tiny_train_cfg(epochs=0, max_steps=0)
        state, history = fit(
            root / "manifest.jsonl", tiny_model_cfg, cfg, out_dir=tmp_path
        )
        assert state.global_step == 0
        assert history["steps"] == []

    def test_determinism_ten_steps(self, tiny_model_cfg, tiny_corpus, tmp_path):
        root, _ = tiny_corpus
        runs = []
        for name in ("a", "b"):
            cfg = tiny_train_cfg(max_steps=10)
            state, history = fit(
                root / "manifest.jsonl", tiny_model_cfg, cfg, out_dir=tmp_path / name
            )
            runs.append([r["generator_total"] for r in history["steps"]])
        assert len(runs[0]) == 10
        for x, y in zip(runs[0], runs[1]):
            assert x == pytest.approx(y, rel=1e-5)

    def test_checkpoint_round_trip_bit_exact(self, tiny_model_cfg, tiny_corpus, tmp_path):
        root, _ = tiny_corpus
        cfg = tiny_train_cfg(max_steps=3)
        state, _ = fit(root / "manifest.jsonl", tiny_model_cfg, cfg, out_dir=tmp_path)
        path = tmp_path / "checkpoint_latest.pt"
        restored, model_cfg, train_cfg, stft_cfg, weights = restore_state(
            load_checkpoint(path)
        )
        for key, value in state.generator.state_dict().items():
            assert torch.equal(value, restored.generator.state_dict()[key]), key
        for key, value in state.discriminator.state_dict().items():
            assert torch.equal(value, restored.discriminator.state_dict()[key]), key
        assert restored.global_step == state.global_step
        assert restored.epoch == state.epoch
        assert train_cfg.seed == cfg.seed

    def test_resume_reproduces_uninterrupted_trajectory(
        self, tiny_model_cfg, tiny_corpus, tmp_path
    ):
        root, _ = tiny_corpus
        manifest = root / "manifest.jsonl"
        # uninterrupted reference: 6 steps
        cfg_full = tiny_train_cfg(max_steps=6)
        _, hist_full = fit(manifest, tiny_model_cfg, cfg_full, out_dir=tmp_path / "full")
        # interrupted: 3 steps, then resume to 6
        cfg_half = tiny_train_cfg(max_steps=3)
        fit(manifest, tiny_model_cfg, cfg_half, out_dir=tmp_path / "half")
        cfg_rest = tiny_train_cfg(max_steps=6)
        _, hist_rest = fit(
            manifest,
            tiny_model_cfg,
            cfg_rest,
            out_dir=tmp_path / "rest",
            resume_from=tmp_path / "half" / "checkpoint_latest.pt",
        )
        full_tail = [r["generator_total"] for r in hist_full["steps"]][3:]
        rest_steps = [r["generator_total"] for r in hist_rest["steps"]]
        assert len(rest_steps) == 3
        for x, y in zip(full_tail, rest_steps):
            assert x == pytest.approx(y, rel=1e-5)

    def test_artifacts_written(self, tiny_model_cfg, tiny_corpus, tmp_path):
        root, _ = tiny_corpus
        cfg = tiny_train_cfg(max_steps=4)
        fit(root / "manifest.jsonl", tiny_model_cfg, cfg, out_dir=tmp_path)
        assert (tmp_path / "train_log.txt").exists()
        assert (tmp_path / "checkpoint_latest.pt").exists()
        text = (tmp_path / "train_log.txt").read_text()
        assert "generator_total=" in text
        assert text.count("step=") == 4

    def test_best_checkpoint_tracked(self, tiny_model_cfg, tiny_corpus, tmp_path):
        root, _ = tiny_corpus
        cfg = tiny_train_cfg(max_steps=0, epochs=2)
        state, history = fit(root / "manifest.jsonl", tiny_model_cfg, cfg, out_dir=tmp_path)
        assert (tmp_path / "checkpoint_best.pt").exists()
        assert (tmp_path / "eval_log.txt").exists()
        assert history["evals"]
        assert state.best_epoch >= 0

    def test_disable_discriminator_requires_zero_gamma4(
        self, tiny_model_cfg, tiny_corpus
    ):
        root, _ = tiny_corpus
        cfg = tiny_train_cfg(disable_discriminator=True)
        with pytest.raises(ConfigError):
            fit(root / "manifest.jsonl", tiny_model_cfg, cfg, weights=LossWeights())

    def test_load_generator_from_checkpoint(self, tiny_model_cfg, tiny_corpus, tmp_path, rng):
        root, _ = tiny_corpus
        cfg = tiny_train_cfg(max_steps=2)
        fit(root / "manifest.jsonl", tiny_model_cfg, cfg, out_dir=tmp_path)
        generator, model_cfg, stft_cfg = load_generator(tmp_path / "checkpoint_latest.pt")
        assert model_cfg.base_channels == tiny_model_cfg.base_channels
        from magphasenet.dsp import Waveform

        out, _ = generator.enhance(Waveform(rng.standard_normal(1600)), stft_cfg)
        assert len(out) == 1600


class TestEvaluateSplit:
    def test_noisy_baseline_scoring(self, tiny_corpus):
        from magphasenet.data import Manifest
        from magphasenet.trainer import evaluate_split

        root, _ = tiny_corpus
        manifest = Manifest.load(root / "manifest.jsonl")
        report = evaluate_split(
            None, manifest, root / "manifest.jsonl", "test", STFT, SurrogateOracle()
        )
        assert report.clip_count == len(manifest.split("test"))
        assert all(0.0 <= c.oracle_score <= 1.0 for c in report.clips)

    def test_mixing_recipe_entries(self, tmp_path, rng):
        import json

        from magphasenet.data import Manifest
        from magphasenet.dsp import Waveform, write_wav
        from magphasenet.trainer import evaluate_split

        write_wav(tmp_path / "c.wav", Waveform(rng.standard_normal(8000) * 0.3))
        write_wav(tmp_path / "n.wav", Waveform(rng.standard_normal(16000) * 0.3))
        mpath = tmp_path / "m.jsonl"
        mpath.write_text(
            json.dumps(
                {"clean_path": "c.wav", "noise_path": "n.wav", "snr_db": 5.0, "split": "test"}
            )
            + "\n"
        )
        manifest = Manifest.load(mpath)
        report = evaluate_split(None, manifest, mpath, "test", STFT, SurrogateOracle())
        assert report.clip_count == 1
        assert report.clips[0].si_sdr_db == pytest.approx(5.0, abs=0.2)


class TestTrainConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr_init=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(update_order="simultaneous")

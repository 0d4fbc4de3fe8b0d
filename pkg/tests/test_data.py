import json
import math

import numpy as np
import pytest
import torch

import oracles
from magphasenet.data import (
    Manifest,
    ManifestEntry,
    SegmentLoader,
    TrainSegment,
    mix_at_snr,
    resample,
    segment_pair,
    synth_desk_corpus,
)
from magphasenet.dsp import Waveform, read_wav
from magphasenet.errors import InvalidInputError


class TestMixAtSnr:
    def test_zero_db_equalizes_power(self, rng):
        clean = Waveform(rng.standard_normal(8000))
        noise = Waveform(rng.standard_normal(12000))
        noisy = mix_at_snr(clean, noise, 0.0, seed=3)
        added = noisy.samples - clean.samples
        assert np.mean(added**2) == pytest.approx(np.mean(clean.samples**2), rel=1e-6)

    def test_huge_snr_is_identity(self, rng):
        clean = Waveform(rng.standard_normal(4000))
        noise = Waveform(rng.standard_normal(4000))
        noisy = mix_at_snr(clean, noise, 1e9, seed=0)
        assert np.max(np.abs(noisy.samples - clean.samples)) < 1e-4

    def test_hand_solved_gain(self):
        # clean RMS 0.1, noise RMS 0.2, 10 dB -> gain 0.1/(0.2*10^0.5)
        n = 5000
        clean = Waveform(np.full(n, 0.1))
        noise = Waveform(np.tile([0.2, -0.2], n // 2))
        noisy = mix_at_snr(clean, noise, 10.0, seed=0)
        added = noisy.samples - clean.samples
        gain = np.max(np.abs(added)) / 0.2
        ref = oracles.mix_gain_reference(0.1, 0.2, 10.0)
        assert ref == pytest.approx(0.15811388300841894, rel=1e-12)
        assert gain == pytest.approx(ref, rel=1e-9)

    def test_snr_contract_generic(self, rng):
        clean = Waveform(rng.standard_normal(6000))
        noise = Waveform(rng.standard_normal(9000))
        for snr in (-5.0, 0.0, 7.5, 15.0):
            noisy = mix_at_snr(clean, noise, snr, seed=11)
            added = noisy.samples - clean.samples
            measured = 10 * math.log10(
                np.mean(clean.samples**2) / np.mean(added**2)
            )
            assert measured == pytest.approx(snr, abs=1e-9)

    def test_silent_clean_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            mix_at_snr(
                Waveform(np.zeros(100)), Waveform(rng.standard_normal(100)), 0.0, seed=0
            )

    def test_short_noise_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            mix_at_snr(
                Waveform(rng.standard_normal(200)),
                Waveform(rng.standard_normal(100)),
                0.0,
                seed=0,
            )

    def test_seeded_crop_reproducible(self, rng):
        clean = Waveform(rng.standard_normal(500))
        noise = Waveform(rng.standard_normal(5000))
        a = mix_at_snr(clean, noise, 5.0, seed=42)
        b = mix_at_snr(clean, noise, 5.0, seed=42)
        assert np.array_equal(a.samples, b.samples)


class TestResample:
    def test_same_rate_identity(self, rng):
        w = Waveform(rng.standard_normal(1000))
        out = resample(w, 16000)
        assert np.array_equal(out.samples, w.samples)

    def test_length_contract(self, rng):
        w = Waveform(rng.standard_normal(48000), sample_rate=48000)
        out = resample(w, 16000)
        assert len(out) == 16000
        assert out.sample_rate == 16000
        odd = Waveform(rng.standard_normal(48001), sample_rate=48000)
        assert len(resample(odd, 16000)) == round(48001 * 16000 / 48000)

    def test_sine_peak_preserved_within_half_db(self):
        rate_in, rate_out, freq = 48000, 16000, 1000.0
        n = 48000
        t = np.arange(n) / rate_in
        w = Waveform(np.sin(2 * math.pi * freq * t), sample_rate=rate_in)
        out = resample(w, rate_out)
        # amplitude via the peak rFFT bin of the interior (edge-effect free)
        seg = out.samples[2000:14000]
        spec = np.abs(np.fft.rfft(seg * np.hanning(len(seg))))
        peak_bin = int(np.argmax(spec))
        expected_bin = round(freq * len(seg) / rate_out)
        assert abs(peak_bin - expected_bin) <= 1
        ref_seg = w.samples[6000:42000][: len(seg) * 3 : 3]  # naive decimation reference
        ref_spec = np.abs(np.fft.rfft(ref_seg * np.hanning(len(seg))))
        ratio_db = 20 * math.log10(spec[peak_bin] / ref_spec[int(np.argmax(ref_spec))])
        assert abs(ratio_db) < 0.5


class TestSegmentPair:
    def test_identity_when_exact_length(self, rng):
        c = Waveform(rng.standard_normal(800))
        n = Waveform(rng.standard_normal(800))
        seg = segment_pair(c, n, 800, seed=0)
        assert np.array_equal(seg.clean.samples, c.samples)
        assert np.array_equal(seg.noisy.samples, n.samples)

    def test_zero_padding_short_clip(self, rng):
        c = Waveform(rng.standard_normal(300))
        n = Waveform(rng.standard_normal(300))
        seg = segment_pair(c, n, 512, seed=0)
        assert len(seg.clean) == 512
        assert np.all(seg.clean.samples[300:] == 0)
        assert np.all(seg.noisy.samples[300:] == 0)

    def test_same_seed_same_offset(self, rng):
        c = Waveform(rng.standard_normal(2000))
        n = Waveform(rng.standard_normal(2000))
        a = segment_pair(c, n, 500, seed=9)
        b = segment_pair(c, n, 500, seed=9)
        assert np.array_equal(a.clean.samples, b.clean.samples)

    def test_pair_alignment(self, rng):
        # the cropped noisy-minus-clean equals the original noise at the same offset
        clean = Waveform(rng.standard_normal(3000))
        noise = rng.standard_normal(3000)
        noisy = Waveform(clean.samples + noise)
        seg = segment_pair(clean, noisy, 700, seed=5)
        diff = seg.noisy.samples - seg.clean.samples
        # locate offset by matching the clean crop
        offset = None
        for o in range(3000 - 700 + 1):
            if np.array_equal(clean.samples[o : o + 700], seg.clean.samples):
                offset = o
                break
        assert offset is not None
        # (clean + noise) - clean costs one rounding step, so compare tightly
        assert np.allclose(diff, noise[offset : offset + 700], atol=1e-12)
        lagged = np.abs(diff[1:] - noise[offset : offset + 699])
        assert lagged.max() > 1e-6  # a one-sample shift would not match

    def test_length_mismatch_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            segment_pair(
                Waveform(rng.standard_normal(100)),
                Waveform(rng.standard_normal(101)),
                50,
                seed=0,
            )

    def test_non_16k_rejected(self, rng):
        w = Waveform(rng.standard_normal(100), sample_rate=8000)
        with pytest.raises(InvalidInputError):
            TrainSegment(clean=w, noisy=w)


class TestSynthCorpus:
    def test_deterministic_bytes(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        synth_desk_corpus(a, n_clips=3, clip_seconds=0.3, seed=77)
        synth_desk_corpus(b, n_clips=3, clip_seconds=0.3, seed=77)
        for rel in sorted(p.relative_to(a) for p in a.rglob("*.wav")):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_train_entry_count(self, tmp_path):
        manifest = synth_desk_corpus(tmp_path, n_clips=8, clip_seconds=0.25, seed=1)
        assert len(manifest.split("train")) == 8

    def test_written_mixtures_verify_snr(self, tmp_path):
        manifest = synth_desk_corpus(tmp_path, n_clips=4, clip_seconds=0.4, seed=5)
        for entry in manifest.entries:
            clean = read_wav(tmp_path / entry.clean_path)
            noisy = read_wav(tmp_path / entry.noisy_path)
            added = noisy.samples - clean.samples
            measured = 10 * math.log10(
                np.mean(clean.samples**2) / np.mean(added**2)
            )
            # float32 storage costs a little precision
            assert measured == pytest.approx(entry.snr_db, abs=1e-3)

    def test_peak_bounded(self, tmp_path):
        manifest = synth_desk_corpus(tmp_path, n_clips=4, clip_seconds=0.3, seed=3)
        for entry in manifest.entries:
            noisy = read_wav(tmp_path / entry.noisy_path)
            assert np.max(np.abs(noisy.samples)) <= 0.99 + 1e-6


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = synth_desk_corpus(tmp_path, n_clips=2, clip_seconds=0.25, seed=9)
        reloaded = Manifest.load(tmp_path / "manifest.jsonl")
        assert reloaded.entries == manifest.entries

    def test_missing_file_rejected(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text(
            json.dumps(
                {"clean_path": "nope.wav", "noisy_path": "also_nope.wav", "split": "train"}
            )
            + "\n"
        )
        with pytest.raises(InvalidInputError):
            Manifest.load(path)

    def test_entry_requires_noisy_or_mixing_recipe(self):
        with pytest.raises(InvalidInputError):
            ManifestEntry(clean_path="c.wav")
        ManifestEntry(clean_path="c.wav", noise_path="n.wav", snr_db=5.0)

    def test_bad_split_rejected(self):
        with pytest.raises(InvalidInputError):
            ManifestEntry(clean_path="c.wav", noisy_path="n.wav", split="validation")


class TestSegmentLoader:
    def test_batch_sequence_reproducible(self, tiny_corpus):
        root, manifest = tiny_corpus
        mpath = root / "manifest.jsonl"
        a = SegmentLoader(manifest, mpath, segment_length=1600, batch_size=2, seed=3)
        b = SegmentLoader(manifest, mpath, segment_length=1600, batch_size=2, seed=3)
        for epoch in range(2):
            for (ca, na, ia), (cb, nb, ib) in zip(a.batches(epoch), b.batches(epoch)):
                assert torch.equal(ca, cb)
                assert torch.equal(na, nb)
                assert ia == ib

    def test_batch_shapes(self, tiny_corpus):
        root, manifest = tiny_corpus
        loader = SegmentLoader(
            manifest, root / "manifest.jsonl", segment_length=1600, batch_size=2, seed=0
        )
        clean, noisy, batch_id = next(iter(loader.batches(0)))
        assert clean.shape == (2, 1600)
        assert noisy.shape == (2, 1600)
        assert clean.dtype == torch.float32
        assert "epoch0" in batch_id

    def test_on_the_fly_mixing_path(self, tmp_path, rng):
        # manifest with noise_path + snr_db instead of a premixed file
        from magphasenet.dsp import write_wav

        clean = Waveform(rng.standard_normal(1600) * 0.3)
        noise = Waveform(rng.standard_normal(3200) * 0.3)
        write_wav(tmp_path / "c.wav", clean)
        write_wav(tmp_path / "n.wav", noise)
        mpath = tmp_path / "m.jsonl"
        mpath.write_text(
            json.dumps(
                {"clean_path": "c.wav", "noise_path": "n.wav", "snr_db": 5.0, "split": "train"}
            )
            + "\n"
        )
        manifest = Manifest.load(mpath)
        loader = SegmentLoader(manifest, mpath, segment_length=1600, batch_size=1, seed=1)
        clean_b, noisy_b, _ = next(iter(loader.batches(0)))
        added = (noisy_b - clean_b).numpy()[0].astype(np.float64)
        measured = 10 * math.log10(
            np.mean(clean_b.numpy()[0].astype(np.float64) ** 2) / np.mean(added**2)
        )
        assert measured == pytest.approx(5.0, abs=0.01)

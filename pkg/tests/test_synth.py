import numpy as np
import pytest

from streamqoe.evaluation import EvalConfig, gen_content_splits, run_experiment1
from streamqoe.features import FeatureVector, extract_features, read_feature_csv
from streamqoe.metrics import score_sequence
from streamqoe.pooling import PoolingConfig
from streamqoe.synth import (
    SynthConfig,
    gen_dataset,
    gen_dataset_multi,
    gen_pattern,
    gen_video_pair,
    synth_mos,
    with_m_stall,
    with_oracle_mos,
    write_dataset,
)
from streamqoe.video import Play, PlayoutPattern, Stall, build_alignment, load_pattern


class TestGenPattern:
    def test_no_stall_range(self):
        cfg = SynthConfig(stall_count_range=(0, 0), seed=1)
        rng = np.random.default_rng(0)
        for _ in range(20):
            pat = gen_pattern(cfg, rng)
            assert not pat.stalls()

    def test_seeded_determinism(self):
        cfg = SynthConfig(seed=2)
        a = gen_pattern(cfg, np.random.default_rng(42), pattern_id="x")
        b = gen_pattern(cfg, np.random.default_rng(42), pattern_id="x")
        assert a == b

    def test_property_sweep_all_valid(self):
        cfg = SynthConfig(seed=3)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            pat = gen_pattern(cfg, rng)
            pat.validate()  # raises on any violation
            assert pat.reference_bitrate_kbps == max(cfg.bitrate_ladder)


class TestGenVideoPair:
    def test_max_bitrate_dominates_low_bitrate_psnr(self):
        cfg = SynthConfig(seed=9)
        ref_rate = cfg.reference_bitrate
        hi = PlayoutPattern("hi", cfg.fps, 30, ref_rate, (Play(0, 29, ref_rate),))
        lo = PlayoutPattern("lo", cfg.fps, 30, ref_rate, (Play(0, 29, 100.0),))
        ref_h, dist_h = gen_video_pair(cfg, hi, np.random.default_rng(42))
        ref_l, dist_l = gen_video_pair(cfg, lo, np.random.default_rng(42))
        assert np.array_equal(ref_h.frames, ref_l.frames)
        ts_h = score_sequence(ref_h, dist_h, build_alignment(hi), "psnr")
        ts_l = score_sequence(ref_l, dist_l, build_alignment(lo), "psnr")
        assert (ts_h.values >= ts_l.values).all()

    def test_dist_length_matches_alignment(self):
        cfg = SynthConfig(seed=4, stall_count_range=(1, 2))
        rng = np.random.default_rng(7)
        pat = gen_pattern(cfg, rng, n_frames=40)
        ref, dist = gen_video_pair(cfg, pat, np.random.default_rng(1))
        al = build_alignment(pat)
        assert len(dist) == len(al)
        assert len(ref) == 40

    def test_identical_seeds_identical_pixels(self):
        cfg = SynthConfig(seed=4)
        pat = gen_pattern(cfg, np.random.default_rng(3), n_frames=25)
        a_ref, a_dist = gen_video_pair(cfg, pat, np.random.default_rng(5))
        b_ref, b_dist = gen_video_pair(cfg, pat, np.random.default_rng(5))
        assert np.array_equal(a_ref.frames, b_ref.frames)
        assert np.array_equal(a_dist.frames, b_dist.frames)

    def test_frozen_frames_repeat_pixels(self):
        cfg = SynthConfig(seed=4)
        pat = PlayoutPattern(
            "s", cfg.fps, 20, cfg.reference_bitrate,
            (Play(0, 19, cfg.reference_bitrate), Stall(10, 1.0)),
        )
        _, dist = gen_video_pair(cfg, pat, np.random.default_rng(2))
        al = build_alignment(pat)
        frozen = np.flatnonzero(al.stalled)
        shown = al.source_index[frozen[0]]
        clean_pos = np.flatnonzero((al.source_index == shown) & ~al.stalled)[0]
        for d in frozen:
            assert np.array_equal(dist.frames[d], dist.frames[clean_pos])


class TestSynthMos:
    def test_documented_coefficients_example(self):
        # q=1, m=1, everything else zero: 40 + 12
        f = FeatureVector(vqa=1.0, r1=0.0, r2=0, m=1.0, i=0.0)
        assert synth_mos(f, SynthConfig(), vqa_norm=(0.0, 1.0)) == 52.0

    def test_monotone_in_r1(self):
        cfg = SynthConfig()
        values = [
            synth_mos(
                FeatureVector(vqa=0.5, r1=r1, r2=1, m=0.5, i=0.1),
                cfg, vqa_norm=(0.0, 1.0),
            )
            for r1 in np.linspace(0.0, 0.5, 8)
        ]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_polarity_inversion_for_distortion_metric(self):
        cfg = SynthConfig()
        f = FeatureVector(vqa=0.9, r1=0.0, r2=0, m=1.0, i=0.0)
        good = synth_mos(f, cfg, vqa_norm=(0.0, 1.0), higher_is_better=True)
        bad = synth_mos(f, cfg, vqa_norm=(0.0, 1.0), higher_is_better=False)
        assert good > bad

    def test_seeded_noise_reproducible(self):
        cfg = SynthConfig(mos_noise_sigma=3.0)
        f = FeatureVector(vqa=0.5, r1=0.1, r2=1, m=0.3, i=0.2)
        a = synth_mos(f, cfg, np.random.default_rng(6), vqa_norm=(0.0, 1.0))
        b = synth_mos(f, cfg, np.random.default_rng(6), vqa_norm=(0.0, 1.0))
        assert a == b

    def test_noise_without_rng_rejected(self):
        cfg = SynthConfig(mos_noise_sigma=1.0)
        with pytest.raises(ValueError):
            synth_mos(FeatureVector(0.5, 0.0, 0, 1.0, 0.0), cfg)


class TestGenDataset:
    def test_linear_oracle_perfectly_learnable(self):
        cfg = SynthConfig(
            n_contents=6, n_patterns=4, frames_range=(30, 50),
            mos_noise_sigma=0.0, mos_coeffs=(40.0, 18.0, 4.0, 12.0, 8.0, 0.0),
            mos_scale=(-100.0, 200.0), seed=5,
        )
        ds = gen_dataset(cfg, metric="psnr")
        assert len(ds.samples) == 24
        splits = gen_content_splits(ds.contents(), 0.8, 20, seed=1)
        report = run_experiment1(ds, splits, EvalConfig(regressor="ridge", seed=0))
        assert report.median_srocc == pytest.approx(1.0)

    def test_dataset_features_satisfy_invariants(self):
        cfg = SynthConfig(n_contents=4, n_patterns=3, frames_range=(30, 40), seed=8)
        ds = gen_dataset(cfg, metric="psnr")
        for s in ds.samples:
            f = s.features
            assert 0.0 <= f.r1 <= 1.0
            assert 0.0 <= f.m <= 1.0
            assert 0.0 <= f.i <= 1.0
            assert (f.r2 == 0) == (f.r1 == 0.0)
            assert cfg.mos_scale[0] <= s.mos <= cfg.mos_scale[1]

    def test_multi_metric_single_pass(self):
        cfg = SynthConfig(n_contents=3, n_patterns=2, frames_range=(25, 30), seed=2)
        tables = gen_dataset_multi(cfg, ("psnr", "gmsd"))
        assert set(tables) == {"psnr", "gmsd"}
        assert tables["psnr"].vqa_higher_is_better
        assert not tables["gmsd"].vqa_higher_is_better
        # identical sessions, different vqa column
        a, b = tables["psnr"].samples, tables["gmsd"].samples
        assert [(s.content_id, s.pattern_id) for s in a] == [
            (s.content_id, s.pattern_id) for s in b
        ]
        assert [s.features.r1 for s in a] == [s.features.r1 for s in b]

    def test_with_oracle_mos_keeps_features(self):
        cfg = SynthConfig(n_contents=3, n_patterns=2, frames_range=(25, 30), seed=2)
        ds = gen_dataset(cfg, metric="psnr")
        import dataclasses

        relabeled = with_oracle_mos(ds, dataclasses.replace(cfg, mos_noise_sigma=2.0))
        assert [s.features for s in relabeled.samples] == [s.features for s in ds.samples]
        assert any(a.mos != b.mos for a, b in zip(ds.samples, relabeled.samples))

    def test_with_m_stall_variant(self):
        cfg = SynthConfig(n_contents=3, n_patterns=3, frames_range=(25, 30),
                          stall_count_range=(1, 2), seed=12)
        ds = gen_dataset(cfg, metric="psnr")
        stall_ds = with_m_stall(ds, cfg)
        assert stall_ds.m_variant == "stall"
        assert all(
            b.features.m >= a.features.m - 1e-12
            for a, b in zip(ds.samples, stall_ds.samples)
        )


class TestWriteDataset:
    def test_emitted_files_reingest(self, tmp_path):
        cfg = SynthConfig(n_contents=2, n_patterns=2, frames_range=(20, 25), seed=7)
        manifest_path = write_dataset(cfg, tmp_path, metric="psnr")
        assert manifest_path.exists()
        from streamqoe.features import extract_dataset

        ds_files = extract_dataset(manifest_path, metric="psnr", pooling=PoolingConfig())
        ds_mem = gen_dataset(cfg, metric="psnr")
        assert len(ds_files.samples) == len(ds_mem.samples)
        for a, b in zip(ds_files.samples, ds_mem.samples):
            assert a.content_id == b.content_id
            assert a.pattern_id == b.pattern_id
            assert a.features.vqa == pytest.approx(b.features.vqa, abs=1e-9)
            assert a.features.r1 == pytest.approx(b.features.r1)
            assert a.mos == pytest.approx(b.mos, abs=1e-9)

    def test_pattern_files_valid(self, tmp_path):
        cfg = SynthConfig(n_contents=1, n_patterns=3, frames_range=(20, 22),
                          stall_count_range=(0, 2), seed=3)
        manifest_path = write_dataset(cfg, tmp_path)
        import json

        data = json.loads(manifest_path.read_text())
        assert data["width"] == cfg.width
        for session in data["sessions"]:
            pat = load_pattern(tmp_path / session["pattern_file"])
            pat.validate()

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamqoe.errors import EmptySeriesError
from streamqoe.pooling import (
    HysteresisParams,
    PoolingConfig,
    VQParams,
    pool,
    pool_hysteresis,
    pool_mean,
    pool_vq,
)

from conftest import make_series


class TestPoolMean:
    def test_simple(self):
        assert pool_mean(make_series([1, 2, 3])) == 2.0

    def test_stalled_excluded(self):
        ts = make_series([5, 123, 5], stalled=[False, True, False])
        assert pool_mean(ts) == 5.0

    def test_two_values(self):
        assert pool_mean(make_series([0, 10])) == 5.0

    def test_all_stalled_errors(self):
        ts = make_series([1.0, 2.0], stalled=[True, True])
        with pytest.raises(EmptySeriesError):
            pool_mean(ts)


class TestPoolHysteresis:
    def test_constant_series(self):
        cfg = PoolingConfig(method="hysteresis")
        assert pool_hysteresis(make_series([7.0] * 12), cfg, fps=5.0) == pytest.approx(7.0)

    def test_alpha_one_non_increasing(self):
        # with alpha=1 each window minimum is the current value
        cfg = PoolingConfig(
            method="hysteresis", hysteresis=HysteresisParams(tau_s=2.0, alpha=1.0)
        )
        series = [9.0, 8.0, 8.0, 5.0, 3.0, 1.0]
        value = pool_hysteresis(make_series(series), cfg, fps=3.0)
        assert value == pytest.approx(np.mean(series))

    def test_hand_traced_dip(self):
        # series {10,10,2,10,10} at 1 fps, tau=2 s (w=2), alpha=0.8:
        #   l = min over [t-2, t]          -> 10, 10, 2, 2, 2
        #   m = descending-weight mean of the ascending-sorted next window
        #       (weights 3,2,1 / 6 or 2,1 / 3 at the tail)
        #       f(0)=f(1)=f(2): sorted {2,10,10} -> (3*2+2*10+1*10)/6 = 6
        #       f(3): {10,10} -> 10;  f(4): {10} -> 10
        #   q = 0.8 l + 0.2 m -> 9.2, 9.2, 2.8, 3.6, 3.6; mean = 5.68
        cfg = PoolingConfig(
            method="hysteresis", hysteresis=HysteresisParams(tau_s=2.0, alpha=0.8)
        )
        ts = make_series([10.0, 10.0, 2.0, 10.0, 10.0])
        assert pool_hysteresis(ts, cfg, fps=1.0) == pytest.approx(5.68, abs=1e-9)

    def test_stall_gaps_closed(self):
        # stalled frames are dropped before windowing, so the result matches
        # the same clean values without stalls
        cfg = PoolingConfig(method="hysteresis")
        clean = [10.0, 10.0, 2.0, 10.0, 10.0]
        with_stall = make_series(
            [10.0, 10.0, np.nan, np.nan, 2.0, 10.0, 10.0],
            stalled=[False, False, True, True, False, False, False],
        )
        assert pool_hysteresis(with_stall, cfg, fps=1.0) == pytest.approx(
            pool_hysteresis(make_series(clean), cfg, fps=1.0)
        )

    def test_order_sensitivity_witness(self):
        cfg = PoolingConfig(method="hysteresis")
        a = make_series([1.0, 9.0, 9.0, 9.0, 9.0, 9.0])
        b = make_series([9.0, 9.0, 9.0, 9.0, 9.0, 1.0])
        va = pool_hysteresis(a, cfg, fps=2.0)
        vb = pool_hysteresis(b, cfg, fps=2.0)
        assert va != vb


class TestPoolVQ:
    def test_constant(self):
        assert pool_vq(make_series([4.0] * 6), PoolingConfig(method="vq")) == 4.0

    def test_bimodal_weighting(self):
        # clusters are exactly {0} and {10}: 0.75*0 + 0.25*10
        cfg = PoolingConfig(method="vq", vq=VQParams(w_low=0.75))
        ts = make_series([0.0] * 5 + [10.0] * 5)
        assert pool_vq(ts, cfg) == pytest.approx(2.5)

    def test_single_value(self):
        assert pool_vq(make_series([7.0]), PoolingConfig(method="vq")) == 7.0

    def test_polarity_swap(self):
        # for a distortion metric the high cluster is the perceptually worse
        # one and receives w_low
        cfg = PoolingConfig(method="vq", vq=VQParams(w_low=0.75))
        quality = make_series([0.0] * 5 + [10.0] * 5, higher_is_better=True)
        distortion = make_series([0.0] * 5 + [10.0] * 5, higher_is_better=False)
        assert pool_vq(quality, cfg) == pytest.approx(2.5)
        assert pool_vq(distortion, cfg) == pytest.approx(7.5)

    def test_seeded_determinism(self, rng):
        values = rng.normal(50, 20, 40)
        cfg = PoolingConfig(method="vq", vq=VQParams(seed=9, kmeans_restarts=5))
        a = pool_vq(make_series(values), cfg)
        b = pool_vq(make_series(values), cfg)
        assert a == b

    def test_balanced_bimodal_below_mean(self, rng):
        # with half the frames in the low mode and w_low >= 0.5 the low
        # cluster is over-weighted relative to mean pooling
        low = rng.normal(10, 0.5, 20)
        high = rng.normal(80, 0.5, 20)
        values = np.concatenate([low, high])
        ts = make_series(values)
        for w_low in (0.5, 0.6, 0.75, 0.9):
            cfg = PoolingConfig(method="vq", vq=VQParams(w_low=w_low))
            assert pool_vq(ts, cfg) <= pool_mean(ts) + 1e-12


class TestPoolingProperties:
    @given(
        values=st.lists(st.floats(-100, 100), min_size=1, max_size=30),
        method=st.sampled_from(["mean", "hysteresis", "vq"]),
    )
    @settings(max_examples=80, deadline=None)
    def test_bounded_by_min_max(self, values, method):
        ts = make_series(values)
        cfg = PoolingConfig(method=method)
        result = pool(ts, cfg, fps=4.0)
        assert min(values) - 1e-9 <= result <= max(values) + 1e-9

    def test_mean_permutation_invariant(self, rng):
        values = rng.normal(0, 1, 25)
        perm = rng.permutation(values)
        assert pool_mean(make_series(values)) == pytest.approx(
            pool_mean(make_series(perm))
        )

    def test_dispatcher(self):
        ts = make_series([1.0, 5.0, 9.0])
        assert pool(ts, PoolingConfig(method="mean"), fps=2.0) == pool_mean(ts)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PoolingConfig(method="median")
        with pytest.raises(ValueError):
            HysteresisParams(tau_s=0.0)
        with pytest.raises(ValueError):
            VQParams(w_low=1.5)
        with pytest.raises(ValueError):
            VQParams(kmeans_restarts=0)

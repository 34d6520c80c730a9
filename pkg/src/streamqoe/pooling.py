"""Temporal pooling: collapse a quality time series into one scalar.

All pooling operates on the non-stalled subsequence with the stall gaps
closed, i.e. consecutive clean frames are treated as 1/fps apart even when
a stall sat between them. Stall information reaches the predictor through
the rebuffering features instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySeriesError
from .metrics import QualityTimeSeries

POOLING_METHODS = ("mean", "hysteresis", "vq")


@dataclass(frozen=True)
class HysteresisParams:
    tau_s: float = 2.0
    alpha: float = 0.8

    def __post_init__(self):
        if self.tau_s <= 0:
            raise ValueError("tau_s must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class VQParams:
    w_low: float = 0.75
    kmeans_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.w_low <= 1.0:
            raise ValueError("w_low must lie in [0, 1]")
        if self.kmeans_restarts < 1:
            raise ValueError("kmeans_restarts must be >= 1")


@dataclass(frozen=True)
class PoolingConfig:
    method: str = "mean"
    hysteresis: HysteresisParams = field(default_factory=HysteresisParams)
    vq: VQParams = field(default_factory=VQParams)

    def __post_init__(self):
        if self.method not in POOLING_METHODS:
            raise ValueError(f"method must be one of {POOLING_METHODS}")


def pool_mean(ts: QualityTimeSeries) -> float:
    """Arithmetic mean over non-stalled frames."""
    return float(ts.clean_values().mean())


def pool_hysteresis(ts: QualityTimeSeries, cfg: PoolingConfig, fps: float) -> float:
    """Memory-weighted pooling over the clean subsequence.

    Per frame t (window w = round(tau_s * fps) frames):
      l(t) = min of the previous w frames including t;
      m(t) = weighted mean of the next w frames including t, sorted
             ascending and weighted by linearly decaying weights
             (worst frames weigh most);
      q(t) = alpha * l(t) + (1 - alpha) * m(t).
    Returns mean(q).
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    x = ts.clean_values()
    p = cfg.hysteresis
    w = max(1, int(math.floor(p.tau_s * fps + 0.5)))
    n = x.size
    q = np.empty(n)
    for t in range(n):
        past = x[max(0, t - w) : t + 1]
        l_t = past.min()
        future = np.sort(x[t : min(n, t + w + 1)])
        weights = np.arange(future.size, 0, -1, dtype=np.float64)
        m_t = float(future @ (weights / weights.sum()))
        q[t] = p.alpha * l_t + (1.0 - p.alpha) * m_t
    return float(q.mean())


def _two_means_1d(x: np.ndarray, restarts: int, seed: int) -> tuple[float, float] | None:
    """Best-of-restarts Lloyd clustering into two groups. None when degenerate."""
    uniq = np.unique(x)
    if uniq.size < 2:
        return None
    rng = np.random.default_rng(seed)
    best = None
    best_sse = np.inf
    for _ in range(restarts):
        c_lo, c_hi = np.sort(rng.choice(uniq, size=2, replace=False))
        for _ in range(100):
            mid = 0.5 * (c_lo + c_hi)
            low = x <= mid
            if not low.any() or low.all():
                break
            n_lo, n_hi = float(x[low].mean()), float(x[~low].mean())
            if n_lo == c_lo and n_hi == c_hi:
                break
            c_lo, c_hi = n_lo, n_hi
        mid = 0.5 * (c_lo + c_hi)
        low = x <= mid
        if not low.any() or low.all():
            continue
        sse = float(((x[low] - x[low].mean()) ** 2).sum() + ((x[~low] - x[~low].mean()) ** 2).sum())
        if sse < best_sse:
            best_sse = sse
            best = (float(x[low].mean()), float(x[~low].mean()))
    return best


def pool_vq(ts: QualityTimeSeries, cfg: PoolingConfig) -> float:
    """Two-cluster pooling that over-weights the perceptually worse cluster.

    For quality metrics the low-score cluster receives w_low; for distortion
    metrics (higher_is_better False) the roles swap so the worse cluster is
    always the over-weighted one.
    """
    x = ts.clean_values()
    p = cfg.vq
    clusters = _two_means_1d(x, p.kmeans_restarts, p.seed)
    if clusters is None:
        return float(x.mean())
    mean_lo, mean_hi = clusters
    if ts.higher_is_better:
        worse, better = mean_lo, mean_hi
    else:
        worse, better = mean_hi, mean_lo
    return p.w_low * worse + (1.0 - p.w_low) * better


def pool(ts: QualityTimeSeries, cfg: PoolingConfig, fps: float) -> float:
    if cfg.method == "mean":
        return pool_mean(ts)
    if cfg.method == "hysteresis":
        return pool_hysteresis(ts, cfg, fps)
    return pool_vq(ts, cfg)

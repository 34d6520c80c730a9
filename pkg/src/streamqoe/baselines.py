"""QoS and hybrid QoE baselines: FTW, VsQM and a streaming quality index.

FTW and VsQM consume stall statistics only. The streaming quality index
(SQI) combines the per-frame presentation quality with a stall penalty
channel: quality is held during freezes, a negative penalty accumulates
linearly while stalled and decays exponentially afterwards.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import QualityTimeSeries
from .video import FrameAlignment, PlayoutPattern, _stall_frame_count, displayed_duration


@dataclass(frozen=True)
class FTWParams:
    a: float = 3.5
    b: float = 0.15
    c: float = 0.19
    d: float = 1.5


@dataclass(frozen=True)
class VsQMParams:
    segments: int = 3
    weights: tuple[float, ...] = (1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0)
    scale: float = 5.0

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if len(self.weights) != self.segments:
            raise ValueError("need one weight per segment")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class SQIParams:
    penalty_rate: float = 0.1  # per second, scaled by the pre-stall quality
    recovery_tau: float = 5.0  # seconds

    def __post_init__(self):
        if self.recovery_tau <= 0:
            raise ValueError("recovery_tau must be positive")


@dataclass(frozen=True)
class BaselineParams:
    ftw: FTWParams = field(default_factory=FTWParams)
    vsqm: VsQMParams = field(default_factory=VsQMParams)
    sqi: SQIParams = field(default_factory=SQIParams)


def ftw_score(mean_stall_s: float, n_stalls: int, params: BaselineParams) -> float:
    """a * exp(-(b * mean_stall + c) * n_stalls) + d."""
    if mean_stall_s < 0 or n_stalls < 0:
        raise ValueError("stall statistics must be non-negative")
    p = params.ftw
    return p.a * math.exp(-(p.b * mean_stall_s + p.c) * n_stalls) + p.d


def _stall_display_intervals(pattern: PlayoutPattern) -> list[tuple[float, float]]:
    """Displayed-time interval occupied by each stall, in timeline order."""
    fps = pattern.fps
    stalls = sorted(pattern.stalls(), key=lambda s: s.at_src_frame)
    intervals = []
    inserted = 0
    for s in stalls:
        n_frozen = _stall_frame_count(s.duration_s, fps)
        start = (s.at_src_frame + inserted) / fps
        intervals.append((start, start + n_frozen / fps))
        inserted += n_frozen
    return intervals


def vsqm_score(pattern: PlayoutPattern, params: BaselineParams) -> float:
    """Split the displayed timeline into equal parts; each part's stall share
    is weighted (defaults emphasize the end of the session, the recency
    effect) and the weighted degradation maps through a decaying exponential
    onto the score scale."""
    p = params.vsqm
    total = displayed_duration(pattern)
    part = total / p.segments
    degradation = 0.0
    for j in range(p.segments):
        lo, hi = j * part, (j + 1) * part
        stall_in_part = 0.0
        for start, end in _stall_display_intervals(pattern):
            stall_in_part += max(0.0, min(end, hi) - max(start, lo))
        degradation += p.weights[j] * (stall_in_part / part)
    return p.scale * math.exp(-degradation)


def sqi_score(
    ts: QualityTimeSeries,
    align: FrameAlignment,
    fps: float,
    params: BaselineParams,
) -> float:
    """Mean over displayed time of presentation quality plus stall penalty.

    Discretized per displayed frame (dt = 1/fps): during a stall the penalty
    channel drops by penalty_rate * (quality just before the stall) * dt per
    frame; on every non-stalled frame it decays by exp(-dt / recovery_tau).
    """
    if len(ts) != len(align):
        raise ValueError("series and alignment lengths differ")
    clean = ts.clean_values()  # raises on an all-stalled series
    p = params.sqi
    dt = 1.0 / fps
    decay = math.exp(-dt / p.recovery_tau)

    presented = np.empty(len(ts))
    last = float(clean[0])  # opening stalls hold the first upcoming quality
    for d in range(len(ts)):
        if not ts.stalled[d]:
            last = float(ts.values[d])
        presented[d] = last

    penalty = np.empty(len(ts))
    s = 0.0
    freeze_quality = 0.0
    in_stall = False
    for d in range(len(ts)):
        if ts.stalled[d]:
            if not in_stall:
                freeze_quality = presented[d]
                in_stall = True
            s -= p.penalty_rate * freeze_quality * dt
        else:
            in_stall = False
            s *= decay
        penalty[d] = s
    return float(np.mean(presented + penalty))


@dataclass(frozen=True)
class SessionRecord:
    """One training/evaluation session bundled with everything a baseline
    might need: the pattern, optionally the scored series, and the MOS."""

    pattern: PlayoutPattern
    mos: float
    ts: QualityTimeSeries | None = None
    align: FrameAlignment | None = None


def baseline_prediction(session: SessionRecord, kind: str, params: BaselineParams) -> float:
    if kind == "ftw":
        stalls = session.pattern.stalls()
        n = len(stalls)
        mean_stall = sum(s.duration_s for s in stalls) / n if n else 0.0
        return ftw_score(mean_stall, n, params)
    if kind == "vsqm":
        return vsqm_score(session.pattern, params)
    if kind == "sqi":
        if session.ts is None or session.align is None:
            raise ValueError("sqi needs the scored series and alignment")
        return sqi_score(session.ts, session.align, session.pattern.fps, params)
    raise ValueError(f"unknown baseline kind {kind!r}")


def _apply_candidate(base: BaselineParams, kind: str, candidate: dict) -> BaselineParams:
    if kind == "ftw":
        return replace(base, ftw=replace(base.ftw, **candidate))
    if kind == "vsqm":
        return replace(base, vsqm=replace(base.vsqm, **candidate))
    if kind == "sqi":
        return replace(base, sqi=replace(base.sqi, **candidate))
    raise ValueError(f"unknown baseline kind {kind!r}")


def tune_baseline(
    train: list[SessionRecord],
    kind: str,
    grid: dict,
    base: BaselineParams | None = None,
) -> BaselineParams:
    """Exhaustive grid search maximizing the rank correlation of the baseline
    against the training MOS. Ties keep the first candidate. The API only
    receives training sessions, so test rows cannot leak in."""
    from .evaluation import srocc  # local import avoids a module cycle

    if not train:
        raise ValueError("empty training set")
    if not grid:
        raise ValueError("empty parameter grid")
    base = base or BaselineParams()
    keys = list(grid)
    mos = np.array([s.mos for s in train])
    best_params = None
    best_score = -np.inf
    for values in itertools.product(*(grid[k] for k in keys)):
        candidate = _apply_candidate(base, kind, dict(zip(keys, values)))
        preds = np.array([baseline_prediction(s, kind, candidate) for s in train])
        score = srocc(preds, mos)
        if math.isnan(score):
            score = -np.inf
        if score > best_score:
            best_score = score
            best_params = candidate
    return best_params

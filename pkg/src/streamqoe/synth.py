"""Desk-scale synthetic sessions: videos, playout patterns and oracle MOS.

The generator exists so every experiment path is runnable end to end
without proprietary subjective data. Reference frames are a moving
gradient plus texture noise; distorted frames blend in blur and noise with
strength inversely tied to the segment bitrate, and frozen frames are
inserted per the alignment. The oracle MOS is a documented function of the
session features (plus optional noise) whose interaction term makes
nonlinear regressors genuinely useful; it is a test fixture, nothing more.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .features import Dataset, FeatureVector, QoESample, extract_features, extract_m_stall
from .metrics import METRICS, score_sequence
from .pooling import PoolingConfig
from .video import (
    FrameAlignment,
    FrameSequence,
    Play,
    PlayoutPattern,
    Stall,
    build_alignment,
    pattern_to_dict,
    save_pattern,
    write_yuv,
)

# oracle MOS coefficients: quality, r1, r2, m, i, r1*(1-m) interaction
DEFAULT_MOS_COEFFS = (40.0, 18.0, 4.0, 12.0, 8.0, 10.0)


@dataclass(frozen=True)
class SynthConfig:
    n_contents: int = 10
    n_patterns: int = 6
    width: int = 64
    height: int = 64
    fps: float = 5.0
    frames_range: tuple[int, int] = (60, 120)
    stall_count_range: tuple[int, int] = (0, 2)
    stall_duration_range: tuple[float, float] = (0.5, 4.0)
    bitrate_ladder: tuple[float, ...] = (100.0, 175.0, 250.0)
    mos_noise_sigma: float = 0.0
    mos_scale: tuple[float, float] = (0.0, 100.0)
    mos_coeffs: tuple[float, ...] = DEFAULT_MOS_COEFFS
    seed: int = 0

    def __post_init__(self):
        if self.n_contents < 1 or self.n_patterns < 1:
            raise ValueError("need at least one content and one pattern")
        if self.frames_range[0] > self.frames_range[1] or self.frames_range[0] < 1:
            raise ValueError("bad frames_range")
        if self.stall_count_range[0] > self.stall_count_range[1] or self.stall_count_range[0] < 0:
            raise ValueError("bad stall_count_range")
        if self.stall_duration_range[0] > self.stall_duration_range[1]:
            raise ValueError("bad stall_duration_range")
        if not self.bitrate_ladder:
            raise ValueError("bitrate ladder must not be empty")
        if self.mos_noise_sigma < 0:
            raise ValueError("mos_noise_sigma must be >= 0")
        if len(self.mos_coeffs) != 6:
            raise ValueError("mos_coeffs needs 6 entries")

    @property
    def reference_bitrate(self) -> float:
        return max(self.bitrate_ladder)


def gen_pattern(
    cfg: SynthConfig, rng: np.random.Generator, pattern_id: str = "p0",
    n_frames: int | None = None,
) -> PlayoutPattern:
    """A random valid pattern: contiguous ladder-bitrate segments plus 0..max
    stalls at random non-trailing positions."""
    if n_frames is None:
        n_frames = int(rng.integers(cfg.frames_range[0], cfg.frames_range[1] + 1))
    n_segments = int(rng.integers(1, min(4, n_frames) + 1))
    if n_segments > 1:
        cuts = np.sort(rng.choice(np.arange(1, n_frames), size=n_segments - 1, replace=False))
    else:
        cuts = np.array([], dtype=int)
    bounds = [0, *cuts.tolist(), n_frames]
    events: list = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        bitrate = float(rng.choice(np.asarray(cfg.bitrate_ladder)))
        events.append(Play(first_src_frame=a, last_src_frame=b - 1, bitrate_kbps=bitrate))
    n_stalls = int(rng.integers(cfg.stall_count_range[0], cfg.stall_count_range[1] + 1))
    n_stalls = min(n_stalls, n_frames)
    if n_stalls:
        positions = np.sort(rng.choice(n_frames, size=n_stalls, replace=False))
        lo, hi = cfg.stall_duration_range
        for pos in positions:
            events.append(Stall(at_src_frame=int(pos), duration_s=float(rng.uniform(lo, hi))))
    return PlayoutPattern(
        pattern_id=pattern_id,
        fps=cfg.fps,
        source_frame_count=n_frames,
        reference_bitrate_kbps=cfg.reference_bitrate,
        events=tuple(events),
    )


def _box3(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out += padded[dy : dy + img.shape[0], dx : dx + img.shape[1]]
    return out / 9.0


def gen_video_pair(
    cfg: SynthConfig, pattern: PlayoutPattern, rng: np.random.Generator
) -> tuple[FrameSequence, FrameSequence]:
    """Reference plus distorted sequence for one session.

    The rng draws depend only on the frame count, never on the pattern's
    bitrates or stalls, so sessions of the same content stay pixel-comparable
    across patterns.
    """
    n = pattern.source_frame_count
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w]
    fx = float(rng.uniform(0.5, 2.0))
    fy = float(rng.uniform(0.5, 2.0))
    speed = float(rng.uniform(0.05, 0.25))
    phases = speed * np.arange(n)
    texture = rng.normal(0.0, 6.0, size=(n, h, w))
    dist_noise = rng.normal(0.0, 24.0, size=(n, h, w))

    grid = 2.0 * np.pi * (fx * xx / w + fy * yy / h)
    ref = np.empty((n, h, w), dtype=np.uint8)
    degraded = np.empty((n, h, w), dtype=np.uint8)
    rates = pattern.bitrate_of_source_frame()
    strengths = 1.0 - rates / pattern.reference_bitrate_kbps
    for f in range(n):
        clean = 128.0 + 80.0 * np.sin(grid + 2.0 * np.pi * phases[f]) + texture[f]
        clean = np.clip(clean, 0.0, 255.0)
        ref[f] = np.rint(clean).astype(np.uint8)
        s = strengths[f]
        if s == 0.0:
            degraded[f] = ref[f]
        else:
            base = ref[f].astype(np.float64)
            noisy = (1.0 - s) * base + s * _box3(base) + s * dist_noise[f]
            degraded[f] = np.rint(np.clip(noisy, 0.0, 255.0)).astype(np.uint8)

    align = build_alignment(pattern)
    shown = degraded[align.source_index]
    ref_seq = FrameSequence(width=w, height=h, fps=cfg.fps, frames=ref)
    dist_seq = FrameSequence(width=w, height=h, fps=cfg.fps, frames=shown)
    return ref_seq, dist_seq


def synth_mos(
    f: FeatureVector,
    cfg: SynthConfig,
    rng: np.random.Generator | None = None,
    vqa_norm: tuple[float, float] = (0.0, 1.0),
    higher_is_better: bool = True,
) -> float:
    """Oracle MOS: a fixed function of the features plus optional Gaussian
    noise, clamped to the configured scale. vqa is min-max normalized with
    the given bounds (and inverted for distortion metrics) before use."""
    a0, a1, a2, a3, a4, a5 = cfg.mos_coeffs
    lo, hi = vqa_norm
    q = (f.vqa - lo) / (hi - lo) if hi > lo else 1.0
    if not higher_is_better:
        q = 1.0 - q
    g = a0 * q - a1 * f.r1 - a2 * f.r2 + a3 * f.m - a4 * f.i - a5 * f.r1 * (1.0 - f.m)
    if cfg.mos_noise_sigma > 0:
        if rng is None:
            raise ValueError("noise requested but no rng supplied")
        g += float(rng.normal(0.0, cfg.mos_noise_sigma))
    return float(np.clip(g, cfg.mos_scale[0], cfg.mos_scale[1]))


def _content_rng(cfg: SynthConfig, content_idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, content_idx]))


def _pattern_rng(cfg: SynthConfig, content_idx: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, content_idx, slot]))


def _mos_rng(cfg: SynthConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))


def _session_plan(cfg: SynthConfig):
    """Deterministic (content, slot, pattern) triples for the whole dataset."""
    plan = []
    for ci in range(cfg.n_contents):
        n_frames = int(
            _content_rng(cfg, ci).integers(cfg.frames_range[0], cfg.frames_range[1] + 1)
        )
        for slot in range(cfg.n_patterns):
            pattern = gen_pattern(
                cfg, _pattern_rng(cfg, ci, slot), pattern_id=f"p{slot}", n_frames=n_frames
            )
            plan.append((ci, slot, pattern))
    return plan


def gen_feature_table(
    cfg: SynthConfig,
    metrics: tuple[str, ...],
    pooling: PoolingConfig,
) -> dict[str, list[tuple[str, str, FeatureVector]]]:
    """Features for every session, for several metrics over one video pass."""
    for metric in metrics:
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
    tables: dict[str, list] = {m: [] for m in metrics}
    for ci, slot, pattern in _session_plan(cfg):
        ref, dist = gen_video_pair(cfg, pattern, _content_rng(cfg, ci))
        align = build_alignment(pattern)
        for metric in metrics:
            ts = score_sequence(ref, dist, align, metric)
            feats = extract_features(ts, pattern, pooling)
            tables[metric].append((f"c{ci}", pattern.pattern_id, feats))
    return tables


def _assemble_dataset(
    cfg: SynthConfig, metric: str, rows: list[tuple[str, str, FeatureVector]]
) -> Dataset:
    vqas = [f.vqa for _, _, f in rows]
    norm = (min(vqas), max(vqas))
    rng = _mos_rng(cfg)
    higher = METRICS[metric][1]
    samples = [
        QoESample(
            content_id=c, pattern_id=p, features=f,
            mos=synth_mos(f, cfg, rng, vqa_norm=norm, higher_is_better=higher),
        )
        for c, p, f in rows
    ]
    return Dataset(
        name=f"synth-{metric}",
        samples=samples,
        mos_scale=cfg.mos_scale,
        vqa_higher_is_better=higher,
    )


def gen_dataset(
    cfg: SynthConfig, metric: str = "psnr", pooling: PoolingConfig | None = None
) -> Dataset:
    """Generate sessions, score them with one metric and attach oracle MOS."""
    return gen_dataset_multi(cfg, (metric,), pooling)[metric]


def gen_dataset_multi(
    cfg: SynthConfig, metrics: tuple[str, ...], pooling: PoolingConfig | None = None
) -> dict[str, Dataset]:
    """Like gen_dataset but scores each session with several metrics in one
    video pass. Each metric gets its own oracle MOS tied to its own features."""
    pooling = pooling or PoolingConfig()
    tables = gen_feature_table(cfg, tuple(metrics), pooling)
    return {m: _assemble_dataset(cfg, m, tables[m]) for m in metrics}


def with_oracle_mos(dataset: Dataset, cfg: SynthConfig) -> Dataset:
    """Regenerate the oracle MOS of an existing synthetic dataset under new
    coefficients/noise without redoing video or metric work."""
    vqas = [s.features.vqa for s in dataset.samples]
    norm = (min(vqas), max(vqas))
    rng = _mos_rng(cfg)
    samples = [
        replace(
            s,
            mos=synth_mos(
                s.features, cfg, rng, vqa_norm=norm,
                higher_is_better=dataset.vqa_higher_is_better,
            ),
        )
        for s in dataset.samples
    ]
    return Dataset(
        name=dataset.name,
        samples=samples,
        mos_scale=cfg.mos_scale,
        vqa_higher_is_better=dataset.vqa_higher_is_better,
        m_variant=dataset.m_variant,
    )


def with_m_stall(dataset: Dataset, cfg: SynthConfig) -> Dataset:
    """Swap the m column for its stall-only variant (needs the patterns, so
    this regenerates them from the same seeds)."""
    by_session = {}
    for ci, slot, pattern in _session_plan(cfg):
        by_session[(f"c{ci}", pattern.pattern_id)] = pattern
    samples = []
    for s in dataset.samples:
        pattern = by_session[(s.content_id, s.pattern_id)]
        f = s.features
        samples.append(
            replace(s, features=FeatureVector(vqa=f.vqa, r1=f.r1, r2=f.r2,
                                              m=extract_m_stall(pattern), i=f.i))
        )
    return Dataset(
        name=dataset.name,
        samples=samples,
        mos_scale=dataset.mos_scale,
        vqa_higher_is_better=dataset.vqa_higher_is_better,
        m_variant="stall",
    )


def write_dataset(
    cfg: SynthConfig,
    out_dir: str | Path,
    metric: str = "psnr",
    pooling: PoolingConfig | None = None,
) -> Path:
    """Emit the dataset as files: raw YUV videos, pattern JSONs and a manifest
    (the same formats the ingestion pipeline consumes). Returns the manifest
    path."""
    pooling = pooling or PoolingConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    sessions = []
    for ci, slot, pattern in _session_plan(cfg):
        ref, dist = gen_video_pair(cfg, pattern, _content_rng(cfg, ci))
        align = build_alignment(pattern)
        ts = score_sequence(ref, dist, align, metric)
        feats = extract_features(ts, pattern, pooling)
        rows.append((f"c{ci}", pattern.pattern_id, feats))

        ref_name = f"c{ci}_ref.yuv"
        dist_name = f"c{ci}_{pattern.pattern_id}.yuv"
        pattern_name = f"c{ci}_{pattern.pattern_id}.json"
        if slot == 0:
            write_yuv(out_dir / ref_name, ref)
        write_yuv(out_dir / dist_name, dist)
        save_pattern(pattern, out_dir / pattern_name)
        sessions.append(
            {
                "content_id": f"c{ci}",
                "pattern_id": pattern.pattern_id,
                "pattern_file": pattern_name,
                "ref_video": ref_name,
                "dist_video": dist_name,
            }
        )

    vqas = [f.vqa for _, _, f in rows]
    norm = (min(vqas), max(vqas))
    rng = _mos_rng(cfg)
    higher = METRICS[metric][1]
    for session, (_, _, feats) in zip(sessions, rows):
        session["mos"] = synth_mos(
            feats, cfg, rng, vqa_norm=norm, higher_is_better=higher
        )

    manifest = {"width": cfg.width, "height": cfg.height, "sessions": sessions}
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path

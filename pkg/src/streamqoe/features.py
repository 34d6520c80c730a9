"""Session-level QoE features, standardization and dataset plumbing.

Five features per session:
  vqa - pooled objective quality
  r1  - total stall time / displayed duration
  r2  - number of stall events
  m   - trailing clean playback at the reference bitrate / displayed duration
  i   - play time below the reference bitrate / displayed duration
All time fractions use the displayed duration (content + stalls) as the
denominator so they share one time base and stay in [0, 1].
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import StreamQoEError
from .metrics import METRICS, QualityTimeSeries, ingest_scores, score_sequence
from .pooling import PoolingConfig, pool
from .video import PlayoutPattern, build_alignment, displayed_duration, load_pattern, read_yuv

FEATURE_NAMES = ("vqa", "r1", "r2", "m", "i")


@dataclass(frozen=True)
class FeatureVector:
    vqa: float
    r1: float
    r2: int
    m: float
    i: float

    def as_array(self, subset: tuple[str, ...] = FEATURE_NAMES) -> np.ndarray:
        return np.array([float(getattr(self, name)) for name in subset])


@dataclass(frozen=True)
class QoESample:
    content_id: str
    pattern_id: str
    features: FeatureVector
    mos: float


@dataclass
class Dataset:
    """A named set of per-session samples plus the metadata the evaluation
    protocols need (MOS scale, metric polarity, which memory variant the m
    column holds)."""

    name: str
    samples: list[QoESample]
    mos_scale: tuple[float, float] = (0.0, 100.0)
    vqa_higher_is_better: bool = True
    m_variant: str = "full"  # "full" (quality-aware) or "stall" (stalls only)

    def contents(self) -> list[str]:
        return sorted({s.content_id for s in self.samples})

    def patterns(self) -> list[str]:
        return sorted({s.pattern_id for s in self.samples})

    def subset_by_content(self, content_ids) -> list[QoESample]:
        wanted = set(content_ids)
        return [s for s in self.samples if s.content_id in wanted]

    def feature_matrix(
        self, subset: tuple[str, ...] = FEATURE_NAMES, samples: list[QoESample] | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        rows = self.samples if samples is None else samples
        X = np.array([s.features.as_array(subset) for s in rows], dtype=np.float64)
        y = np.array([s.mos for s in rows], dtype=np.float64)
        return X.reshape(len(rows), len(subset)), y


def normalize_subset(subset) -> tuple[str, ...]:
    """Canonicalize a feature subset to the (vqa, r1, r2, m, i) order."""
    names = list(subset)
    unknown = [n for n in names if n not in FEATURE_NAMES]
    if unknown:
        raise ValueError(f"unknown feature names {unknown}; valid: {FEATURE_NAMES}")
    if not names:
        raise ValueError("feature subset must not be empty")
    return tuple(n for n in FEATURE_NAMES if n in names)


def extract_features(
    ts: QualityTimeSeries, pattern: PlayoutPattern, pooling: PoolingConfig
) -> FeatureVector:
    """Compute the five session features from a scored series and its pattern."""
    align_len = len(build_alignment(pattern))
    if len(ts) != align_len:
        raise ValueError(
            f"series has {len(ts)} frames but the pattern displays {align_len}"
        )
    duration = displayed_duration(pattern)
    stalls = pattern.stalls()
    fps = pattern.fps

    stall_total = sum(s.duration_s for s in stalls)
    r1 = stall_total / duration
    r2 = len(stalls)

    # content-clock time at which the last impairment completed
    last_impairment_end = 0.0
    for s in stalls:
        last_impairment_end = max(last_impairment_end, s.at_src_frame / fps)
    low_time = 0.0
    for p in pattern.plays():
        if p.bitrate_kbps < pattern.reference_bitrate_kbps:
            low_time += (p.last_src_frame - p.first_src_frame + 1) / fps
            last_impairment_end = max(last_impairment_end, (p.last_src_frame + 1) / fps)
    content_time = pattern.source_frame_count / fps
    m = (content_time - last_impairment_end) / duration
    i = low_time / duration

    vqa = pool(ts, pooling, fps)
    return FeatureVector(vqa=vqa, r1=r1, r2=r2, m=m, i=i)


def extract_m_stall(pattern: PlayoutPattern) -> float:
    """Memory variant that ignores bitrate: trailing clean playback after the
    last stall, over the displayed duration. 1.0 when the session never stalls."""
    pattern.validate()
    duration = displayed_duration(pattern)
    fps = pattern.fps
    last_stall_end = 0.0
    for s in pattern.stalls():
        last_stall_end = max(last_stall_end, s.at_src_frame / fps)
    content_time = pattern.source_frame_count / fps
    return (content_time - last_stall_end) / duration


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        if mean.shape != scale.shape or mean.ndim != 1:
            raise ValueError("mean and scale must be 1-D and equal length")
        if np.any(scale <= 0):
            raise ValueError("scales must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]


def standardize_fit(rows, ddof: int = 0) -> Standardizer:
    """Per-column mean/std from training rows only. Zero-variance columns get
    scale 1 so constant features map to zeros instead of dividing by zero."""
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=ddof)
    scale = np.where(std > 0, std, 1.0)
    return Standardizer(mean=mean, scale=scale)


def standardize_apply(s: Standardizer, rows) -> np.ndarray:
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != s.n_features:
        raise ValueError(
            f"expected {s.n_features} columns, got shape {X.shape}"
        )
    return (X - s.mean) / s.scale


# --- dataset manifest -------------------------------------------------------


@dataclass(frozen=True)
class ManifestSession:
    content_id: str
    pattern_id: str
    pattern_file: Path
    mos: float
    ref_video: Path | None = None
    dist_video: Path | None = None
    scores_csv: Path | None = None


@dataclass(frozen=True)
class Manifest:
    sessions: tuple[ManifestSession, ...]
    width: int | None = None
    height: int | None = None


def load_manifest(path: str | Path) -> Manifest:
    """Read a dataset manifest: either a bare JSON list of sessions, or an
    object {"width", "height", "sessions": [...]} carrying the raw-video
    geometry alongside."""
    path = Path(path)
    base = path.parent
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, list):
        rows, width, height = data, None, None
    else:
        rows = data["sessions"]
        width = data.get("width")
        height = data.get("height")

    def resolve(name):
        return (base / name) if name else None

    sessions = []
    for row in rows:
        sessions.append(
            ManifestSession(
                content_id=str(row["content_id"]),
                pattern_id=str(row["pattern_id"]),
                pattern_file=resolve(row["pattern_file"]),
                mos=float(row["mos"]),
                ref_video=resolve(row.get("ref_video")),
                dist_video=resolve(row.get("dist_video")),
                scores_csv=resolve(row.get("scores_csv")),
            )
        )
    return Manifest(sessions=tuple(sessions), width=width, height=height)


def extract_dataset(
    manifest: Manifest | str | Path,
    metric: str,
    pooling: PoolingConfig,
    width: int | None = None,
    height: int | None = None,
    name: str = "dataset",
    mos_scale: tuple[float, float] = (0.0, 100.0),
    m_variant: str = "full",
    csv_higher_is_better: bool = True,
) -> Dataset:
    """Run the full feature pipeline over every session of a manifest."""
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    width = width or manifest.width
    height = height or manifest.height

    higher = METRICS[metric][1] if metric in METRICS else csv_higher_is_better
    ref_cache: dict[tuple[Path, float], object] = {}
    samples = []
    for sess in manifest.sessions:
        try:
            pattern = load_pattern(sess.pattern_file)
            align = build_alignment(pattern)
            if sess.scores_csv is not None:
                ts = ingest_scores(
                    sess.scores_csv,
                    align,
                    metric_name=metric,
                    higher_is_better=csv_higher_is_better,
                )
            else:
                if metric not in METRICS:
                    raise ValueError(
                        f"metric {metric!r} needs a scores_csv for this session"
                    )
                if not width or not height:
                    raise ValueError(
                        "raw video sessions need width/height from the manifest "
                        "or the command line"
                    )
                key = (sess.ref_video, pattern.fps)
                if key not in ref_cache:
                    ref_cache[key] = read_yuv(sess.ref_video, width, height, pattern.fps)
                ref = ref_cache[key]
                dist = read_yuv(sess.dist_video, width, height, pattern.fps)
                ts = score_sequence(ref, dist, align, metric)
            feats = extract_features(ts, pattern, pooling)
            if m_variant == "stall":
                feats = FeatureVector(
                    vqa=feats.vqa,
                    r1=feats.r1,
                    r2=feats.r2,
                    m=extract_m_stall(pattern),
                    i=feats.i,
                )
        except Exception as exc:
            raise StreamQoEError(
                f"session {sess.content_id}/{sess.pattern_id}: {exc}"
            ) from exc
        samples.append(
            QoESample(
                content_id=sess.content_id,
                pattern_id=sess.pattern_id,
                features=feats,
                mos=sess.mos,
            )
        )
    return Dataset(
        name=name,
        samples=samples,
        mos_scale=mos_scale,
        vqa_higher_is_better=higher,
        m_variant=m_variant,
    )


FEATURE_CSV_HEADER = ["content_id", "pattern_id", "vqa", "r1", "r2", "m", "i", "mos"]


def write_feature_csv(path: str | Path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FEATURE_CSV_HEADER)
        for s in dataset.samples:
            f = s.features
            writer.writerow(
                [
                    s.content_id,
                    s.pattern_id,
                    repr(f.vqa),
                    repr(f.r1),
                    f.r2,
                    repr(f.m),
                    repr(f.i),
                    repr(s.mos),
                ]
            )


def read_feature_csv(
    path: str | Path,
    name: str | None = None,
    mos_scale: tuple[float, float] = (0.0, 100.0),
    vqa_higher_is_better: bool = True,
    m_variant: str = "full",
) -> Dataset:
    path = Path(path)
    samples = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FEATURE_CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(FEATURE_CSV_HEADER)}")
        for row in reader:
            if not row:
                continue
            samples.append(
                QoESample(
                    content_id=row[0],
                    pattern_id=row[1],
                    features=FeatureVector(
                        vqa=float(row[2]),
                        r1=float(row[3]),
                        r2=int(float(row[4])),
                        m=float(row[5]),
                        i=float(row[6]),
                    ),
                    mos=float(row[7]),
                )
            )
    return Dataset(
        name=name or path.stem,
        samples=samples,
        mos_scale=mos_scale,
        vqa_higher_is_better=vqa_higher_is_better,
        m_variant=m_variant,
    )

"""Full-reference per-frame quality kernels on luma, plus sequence scoring.

All kernels take two equal-size luma planes (uint8 or float, range 0..255)
and return a scalar. Scoring a whole session walks the frame alignment so
that every displayed frame is compared against its synchronized source
frame; stalled frames carry no score.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d
from scipy.signal import convolve2d

from .errors import AlignmentError, EmptySeriesError, FrameSizeError, ScoreIngestError
from .video import FrameAlignment, FrameSequence

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 255.0

# canonical 5-scale exponents; fewer scales use a renormalized prefix
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

GMSD_C = 170.0


def _as_float_pair(ref, dist) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(dist, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr_frame(ref, dist) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for identical frames."""
    a, b = _as_float_pair(ref, dist)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(DYNAMIC_RANGE**2 / mse))


_GAUSS_1D = None


def _gauss_window() -> np.ndarray:
    global _GAUSS_1D
    if _GAUSS_1D is None:
        r = SSIM_WINDOW // 2
        x = np.arange(-r, r + 1, dtype=np.float64)
        w = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
        _GAUSS_1D = w / w.sum()
    return _GAUSS_1D


def _filter_valid(img: np.ndarray) -> np.ndarray:
    # separable Gaussian; cropping the half-window border yields the exact
    # valid-region (no padding) result
    w = _gauss_window()
    out = correlate1d(img, w, axis=0, mode="constant")
    out = correlate1d(out, w, axis=1, mode="constant")
    r = SSIM_WINDOW // 2
    return out[r:-r, r:-r]


def _ssim_and_cs(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mu1 = _filter_valid(a)
    mu2 = _filter_valid(b)
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu12 = mu1 * mu2
    sigma1_sq = _filter_valid(a * a) - mu1_sq
    sigma2_sq = _filter_valid(b * b) - mu2_sq
    sigma12 = _filter_valid(a * b) - mu12
    cs_map = (2.0 * sigma12 + c2) / (sigma1_sq + sigma2_sq + c2)
    lum_map = (2.0 * mu12 + c1) / (mu1_sq + mu2_sq + c1)
    ssim_map = lum_map * cs_map
    return float(ssim_map.mean()), float(cs_map.mean())


def ssim_frame(ref, dist) -> float:
    """Mean structural similarity over 11x11 Gaussian-weighted local windows."""
    a, b = _as_float_pair(ref, dist)
    if min(a.shape) < SSIM_WINDOW:
        raise FrameSizeError(
            f"frame {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    return _ssim_and_cs(a, b)[0]


def _downsample2(img: np.ndarray) -> np.ndarray:
    # 2x2 block mean; odd trailing row/column cropped first
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def msssim_weights(scales: int) -> np.ndarray:
    if not 1 <= scales <= len(MSSSIM_WEIGHTS):
        raise ValueError(f"scales must be in [1, {len(MSSSIM_WEIGHTS)}]")
    w = np.array(MSSSIM_WEIGHTS[:scales], dtype=np.float64)
    if scales == len(MSSSIM_WEIGHTS):
        return w
    return w / w.sum()


def msssim_frame(ref, dist, scales: int = 5) -> float:
    """Multi-scale SSIM: contrast/structure at every dyadic scale, luminance
    only at the coarsest, combined with the canonical exponents."""
    a, b = _as_float_pair(ref, dist)
    weights = msssim_weights(scales)
    need = SSIM_WINDOW * 2 ** (scales - 1)
    if min(a.shape) < need:
        raise FrameSizeError(
            f"frame {a.shape} supports fewer than {scales} scales "
            f"(needs min side >= {need})"
        )
    value = 1.0
    for level in range(scales):
        ssim, cs = _ssim_and_cs(a, b)
        w = weights[level]
        if level == scales - 1:
            term = ssim if w == 1.0 else max(ssim, 0.0) ** w
        else:
            term = max(cs, 0.0) ** w
        value *= term
        if level < scales - 1:
            a = _downsample2(a)
            b = _downsample2(b)
    return float(value)


_PREWITT_DX = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0


def gmsd_frame(ref, dist, c: float = GMSD_C) -> float:
    """Gradient-magnitude similarity deviation (a distortion score, lower is
    better): 2x mean-downsample, Prewitt gradients, then the standard
    deviation of the pointwise similarity map."""
    a, b = _as_float_pair(ref, dist)
    ave = np.ones((2, 2)) / 4.0
    a = convolve2d(a, ave, mode="same", boundary="symm")[0::2, 0::2]
    b = convolve2d(b, ave, mode="same", boundary="symm")[0::2, 0::2]
    gx_a = convolve2d(a, _PREWITT_DX, mode="same", boundary="symm")
    gy_a = convolve2d(a, _PREWITT_DX.T, mode="same", boundary="symm")
    gx_b = convolve2d(b, _PREWITT_DX, mode="same", boundary="symm")
    gy_b = convolve2d(b, _PREWITT_DX.T, mode="same", boundary="symm")
    grad_a = np.sqrt(gx_a**2 + gy_a**2)
    grad_b = np.sqrt(gx_b**2 + gy_b**2)
    gms = (2.0 * grad_a * grad_b + c) / (grad_a**2 + grad_b**2 + c)
    return float(np.std(gms))


@dataclass(frozen=True)
class QualityTimeSeries:
    """Per-displayed-frame objective quality with the stall mask."""

    metric_name: str
    higher_is_better: bool
    values: np.ndarray  # float, NaN on stalled frames
    stalled: np.ndarray  # bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        stalled = np.asarray(self.stalled, dtype=bool)
        if values.shape != stalled.shape or values.ndim != 1:
            raise ValueError("values and stalled must be 1-D and equal length")
        if not np.all(np.isfinite(values[~stalled])):
            raise ValueError("non-stalled frames must carry finite scores")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "stalled", stalled)

    def __len__(self) -> int:
        return self.values.shape[0]

    def clean_values(self) -> np.ndarray:
        out = self.values[~self.stalled]
        if out.size == 0:
            raise EmptySeriesError("every frame of the series is stalled")
        return out


# metric id -> (frame kernel, higher_is_better)
METRICS = {
    "psnr": (psnr_frame, True),
    "ssim": (ssim_frame, True),
    "msssim": (msssim_frame, True),
    "gmsd": (gmsd_frame, False),
}


def score_sequence(
    ref: FrameSequence,
    dist: FrameSequence,
    align: FrameAlignment,
    metric: str,
) -> QualityTimeSeries:
    """Score every non-stalled displayed frame against its source frame."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    fn, higher = METRICS[metric]
    if (ref.width, ref.height) != (dist.width, dist.height):
        raise ValueError(
            f"geometry mismatch: ref {ref.width}x{ref.height} vs "
            f"dist {dist.width}x{dist.height}"
        )
    if len(dist) != len(align):
        raise AlignmentError(
            f"distorted sequence has {len(dist)} frames but alignment expects "
            f"{len(align)}"
        )
    if len(ref) != align.n_source:
        raise AlignmentError(
            f"reference has {len(ref)} frames but alignment maps "
            f"{align.n_source} source frames"
        )
    values = np.full(len(align), np.nan)
    for d in np.flatnonzero(~align.stalled):
        values[d] = fn(ref.frames[align.source_index[d]], dist.frames[d])
    return QualityTimeSeries(
        metric_name=metric, higher_is_better=higher, values=values, stalled=align.stalled
    )


SCORE_CSV_HEADER = ["displayed_frame_index", "score"]


def ingest_scores(
    path: str | Path,
    align: FrameAlignment,
    metric_name: str = "csv",
    higher_is_better: bool = True,
) -> QualityTimeSeries:
    """Build a quality series from an externally computed per-frame score CSV.

    Rows addressing stalled frames are ignored (the stall mask wins); every
    non-stalled displayed frame must be covered.
    """
    path = Path(path)
    n = len(align)
    values = np.full(n, np.nan)
    seen = np.zeros(n, dtype=bool)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SCORE_CSV_HEADER:
            raise ScoreIngestError(
                f"{path}: expected header {','.join(SCORE_CSV_HEADER)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                idx = int(row[0])
                score = float(row[1])
            except (ValueError, IndexError) as exc:
                raise ScoreIngestError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if not 0 <= idx < n:
                raise ScoreIngestError(
                    f"{path}:{lineno}: frame index {idx} outside [0, {n})"
                )
            if seen[idx]:
                raise ScoreIngestError(f"{path}:{lineno}: duplicate frame index {idx}")
            seen[idx] = True
            if align.stalled[idx]:
                warnings.warn(
                    f"{path}: score for stalled frame {idx} ignored", stacklevel=2
                )
                continue
            if not np.isfinite(score):
                raise ScoreIngestError(f"{path}:{lineno}: non-finite score {score}")
            values[idx] = score
    missing = np.flatnonzero(~align.stalled & ~seen)
    if missing.size:
        raise ScoreIngestError(
            f"{path}: missing scores for {missing.size} non-stalled frames "
            f"(first missing index {missing[0]})"
        )
    return QualityTimeSeries(
        metric_name=metric_name,
        higher_is_better=higher_is_better,
        values=values,
        stalled=align.stalled,
    )

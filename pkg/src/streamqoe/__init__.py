"""Streaming-video QoE prediction toolkit.

Pipeline: raw video + playout pattern -> stall-aware frame alignment ->
per-frame quality -> temporal pooling -> session features -> regression
against MOS -> correlation-based evaluation protocols.
"""

from .errors import StreamQoEError
from .features import (
    FEATURE_NAMES,
    Dataset,
    FeatureVector,
    QoESample,
    Standardizer,
    extract_features,
    extract_m_stall,
    standardize_apply,
    standardize_fit,
)
from .metrics import (
    METRICS,
    QualityTimeSeries,
    gmsd_frame,
    ingest_scores,
    msssim_frame,
    psnr_frame,
    score_sequence,
    ssim_frame,
)
from .pooling import PoolingConfig, pool, pool_hysteresis, pool_mean, pool_vq
from .video import (
    FrameAlignment,
    FrameSequence,
    Play,
    PlayoutPattern,
    Stall,
    build_alignment,
    displayed_duration,
    load_pattern,
    read_yuv,
    save_pattern,
    write_yuv,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FEATURE_NAMES",
    "FeatureVector",
    "FrameAlignment",
    "FrameSequence",
    "METRICS",
    "Play",
    "PlayoutPattern",
    "PoolingConfig",
    "QoESample",
    "QualityTimeSeries",
    "Stall",
    "Standardizer",
    "StreamQoEError",
    "build_alignment",
    "displayed_duration",
    "extract_features",
    "extract_m_stall",
    "gmsd_frame",
    "ingest_scores",
    "load_pattern",
    "msssim_frame",
    "pool",
    "pool_hysteresis",
    "pool_mean",
    "pool_vq",
    "psnr_frame",
    "read_yuv",
    "save_pattern",
    "score_sequence",
    "ssim_frame",
    "standardize_apply",
    "standardize_fit",
    "write_yuv",
]

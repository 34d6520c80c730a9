"""Raw video I/O, playout patterns and stall-aware frame alignment.

A playout pattern describes one streaming session as an ordered set of play
segments (each at some bitrate of the encoding ladder) plus stall events.
The alignment maps every *displayed* frame of the session back to its
source frame, with frozen frames inserted for each stall so that per-frame
quality metrics always compare synchronized content.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidPatternError, VideoFormatError

MIN_FRAME_SIDE = 16


def _stall_frame_count(duration_s: float, fps: float) -> int:
    # nearest integer, ties round up, so the displayed timeline stays integral
    return int(math.floor(duration_s * fps + 0.5))


@dataclass(frozen=True)
class FrameSequence:
    """Ordered 8-bit luma planes with fixed geometry."""

    width: int
    height: int
    fps: float
    frames: np.ndarray  # (n_frames, height, width) uint8

    def __post_init__(self):
        if self.width < MIN_FRAME_SIDE or self.height < MIN_FRAME_SIDE:
            raise VideoFormatError(
                f"frame geometry {self.width}x{self.height} below minimum "
                f"{MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"
            )
        if self.fps <= 0:
            raise VideoFormatError("fps must be positive")
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[1:] != (self.height, self.width):
            raise VideoFormatError(
                f"frame array shape {frames.shape} does not match "
                f"{self.height}x{self.width}"
            )
        object.__setattr__(self, "frames", frames.astype(np.uint8, copy=False))

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class Play:
    """Contiguous run of source frames played at one bitrate."""

    first_src_frame: int
    last_src_frame: int
    bitrate_kbps: float


@dataclass(frozen=True)
class Stall:
    """Playback interruption immediately before ``at_src_frame`` is shown."""

    at_src_frame: int
    duration_s: float


PlayoutEvent = Play | Stall


@dataclass(frozen=True)
class PlayoutPattern:
    """Timeline of play segments and stalls defining a distorted session."""

    pattern_id: str
    fps: float
    source_frame_count: int
    reference_bitrate_kbps: float
    events: tuple[PlayoutEvent, ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        self.validate()

    def validate(self) -> None:
        if self.fps <= 0:
            raise InvalidPatternError("fps must be positive")
        if self.source_frame_count <= 0:
            raise InvalidPatternError("source_frame_count must be positive")
        if self.reference_bitrate_kbps <= 0:
            raise InvalidPatternError("reference bitrate must be positive")

        plays = self.plays()
        if not plays:
            raise InvalidPatternError("pattern has no play segments")
        expected_first = 0
        for p in plays:
            if p.first_src_frame != expected_first:
                raise InvalidPatternError(
                    f"play segments must tile the source range: expected "
                    f"segment starting at {expected_first}, got {p.first_src_frame}"
                )
            if p.last_src_frame < p.first_src_frame:
                raise InvalidPatternError("play segment ends before it starts")
            if p.bitrate_kbps <= 0 or p.bitrate_kbps > self.reference_bitrate_kbps:
                raise InvalidPatternError(
                    f"bitrate {p.bitrate_kbps} outside (0, "
                    f"{self.reference_bitrate_kbps}]"
                )
            expected_first = p.last_src_frame + 1
        if expected_first != self.source_frame_count:
            raise InvalidPatternError(
                f"play segments cover [0, {expected_first}) but pattern declares "
                f"{self.source_frame_count} source frames"
            )

        for s in self.stalls():
            if s.duration_s <= 0:
                raise InvalidPatternError("stall duration must be positive")
            if s.at_src_frame == self.source_frame_count:
                raise InvalidPatternError(
                    "trailing stall (after the last source frame) is not a "
                    "valid session"
                )
            if not 0 <= s.at_src_frame < self.source_frame_count:
                raise InvalidPatternError(
                    f"stall position {s.at_src_frame} outside the covered "
                    f"source range [0, {self.source_frame_count})"
                )

    def plays(self) -> list[Play]:
        return [e for e in self.events if isinstance(e, Play)]

    def stalls(self) -> list[Stall]:
        return [e for e in self.events if isinstance(e, Stall)]

    def bitrate_of_source_frame(self) -> np.ndarray:
        """Per-source-frame bitrate in kbps."""
        rates = np.empty(self.source_frame_count, dtype=float)
        for p in self.plays():
            rates[p.first_src_frame : p.last_src_frame + 1] = p.bitrate_kbps
        return rates


@dataclass(frozen=True)
class FrameAlignment:
    """Displayed-frame to source-frame map with stalled frames marked."""

    source_index: np.ndarray  # int64, one entry per displayed frame
    stalled: np.ndarray  # bool, same length

    def __post_init__(self):
        src = np.asarray(self.source_index, dtype=np.int64)
        stl = np.asarray(self.stalled, dtype=bool)
        if src.shape != stl.shape or src.ndim != 1:
            raise ValueError("source_index and stalled must be 1-D and equal length")
        object.__setattr__(self, "source_index", src)
        object.__setattr__(self, "stalled", stl)

    def __len__(self) -> int:
        return self.source_index.shape[0]

    @property
    def n_source(self) -> int:
        """Number of distinct source frames shown (non-stalled entries)."""
        return int((~self.stalled).sum())

    def offsets(self) -> np.ndarray:
        """j = displayed index minus source index, per displayed frame."""
        return np.arange(len(self), dtype=np.int64) - self.source_index


def build_alignment(pattern: PlayoutPattern) -> FrameAlignment:
    """Insert frozen frames for each stall and map displayed to source frames.

    Frozen frames repeat the source frame displayed immediately before the
    stall; a stall before any playback repeats the first upcoming frame.
    """
    pattern.validate()
    frozen_at: dict[int, int] = {}
    for s in pattern.stalls():
        frozen_at[s.at_src_frame] = frozen_at.get(s.at_src_frame, 0) + _stall_frame_count(
            s.duration_s, pattern.fps
        )

    source: list[int] = []
    stalled: list[bool] = []
    for k in range(pattern.source_frame_count):
        n_frozen = frozen_at.get(k, 0)
        if n_frozen:
            shown = source[-1] if source else k
            source.extend([shown] * n_frozen)
            stalled.extend([True] * n_frozen)
        source.append(k)
        stalled.append(False)
    return FrameAlignment(np.array(source, dtype=np.int64), np.array(stalled, dtype=bool))


def displayed_duration(pattern: PlayoutPattern) -> float:
    """Session length in seconds: content time plus total stall time."""
    pattern.validate()
    return pattern.source_frame_count / pattern.fps + sum(
        s.duration_s for s in pattern.stalls()
    )


def read_yuv(path: str | Path, width: int, height: int, fps: float) -> FrameSequence:
    """Read headerless planar YUV 4:2:0 (8-bit) and keep only the luma plane."""
    if width < MIN_FRAME_SIDE or height < MIN_FRAME_SIDE or width % 2 or height % 2:
        raise VideoFormatError(
            f"invalid 4:2:0 geometry {width}x{height}: sides must be even and "
            f">= {MIN_FRAME_SIDE}"
        )
    path = Path(path)
    frame_bytes = width * height * 3 // 2
    size = path.stat().st_size
    if size == 0 or size % frame_bytes:
        raise VideoFormatError(
            f"{path}: size {size} is not a multiple of the frame size "
            f"{frame_bytes} ({width}x{height} 4:2:0)"
        )
    raw = np.fromfile(path, dtype=np.uint8)
    n_frames = size // frame_bytes
    luma = raw.reshape(n_frames, frame_bytes)[:, : width * height]
    frames = luma.reshape(n_frames, height, width)
    return FrameSequence(width=width, height=height, fps=fps, frames=frames)


def write_yuv(path: str | Path, seq: FrameSequence) -> None:
    """Write luma planes as planar YUV 4:2:0 with neutral (128) chroma."""
    chroma = np.full((seq.width * seq.height) // 2, 128, dtype=np.uint8)
    with open(path, "wb") as fh:
        for frame in seq.frames:
            fh.write(frame.tobytes())
            fh.write(chroma.tobytes())


def pattern_to_dict(pattern: PlayoutPattern) -> dict:
    events = []
    for e in pattern.events:
        if isinstance(e, Play):
            events.append(
                {
                    "type": "play",
                    "first": e.first_src_frame,
                    "last": e.last_src_frame,
                    "bitrate_kbps": e.bitrate_kbps,
                }
            )
        else:
            events.append({"type": "stall", "at": e.at_src_frame, "duration_s": e.duration_s})
    return {
        "pattern_id": pattern.pattern_id,
        "fps": pattern.fps,
        "source_frame_count": pattern.source_frame_count,
        "reference_bitrate_kbps": pattern.reference_bitrate_kbps,
        "events": events,
    }


def pattern_from_dict(data: dict) -> PlayoutPattern:
    events: list[PlayoutEvent] = []
    for e in data["events"]:
        if e["type"] == "play":
            events.append(Play(int(e["first"]), int(e["last"]), float(e["bitrate_kbps"])))
        elif e["type"] == "stall":
            events.append(Stall(int(e["at"]), float(e["duration_s"])))
        else:
            raise InvalidPatternError(f"unknown event type {e['type']!r}")
    return PlayoutPattern(
        pattern_id=str(data["pattern_id"]),
        fps=float(data["fps"]),
        source_frame_count=int(data["source_frame_count"]),
        reference_bitrate_kbps=float(data["reference_bitrate_kbps"]),
        events=tuple(events),
    )


def load_pattern(path: str | Path) -> PlayoutPattern:
    with open(path, encoding="utf-8") as fh:
        return pattern_from_dict(json.load(fh))


def save_pattern(pattern: PlayoutPattern, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pattern_to_dict(pattern), fh, indent=2, sort_keys=True)
        fh.write("\n")

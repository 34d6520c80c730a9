import numpy as np
import pytest

from streamqoe.metrics import QualityTimeSeries
from streamqoe.video import Play, PlayoutPattern, Stall


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_pattern(
    n_frames=20,
    fps=5.0,
    reference=250.0,
    plays=None,
    stalls=(),
    pattern_id="p0",
):
    """Convenience constructor: single max-bitrate segment unless plays given."""
    if plays is None:
        plays = [(0, n_frames - 1, reference)]
    events = [Play(a, b, r) for a, b, r in plays]
    events += [Stall(at, dur) for at, dur in stalls]
    return PlayoutPattern(
        pattern_id=pattern_id,
        fps=fps,
        source_frame_count=n_frames,
        reference_bitrate_kbps=reference,
        events=tuple(events),
    )


def make_series(values, stalled=None, metric_name="test", higher_is_better=True):
    values = np.asarray(values, dtype=np.float64)
    if stalled is None:
        stalled = np.zeros(values.shape, dtype=bool)
    return QualityTimeSeries(
        metric_name=metric_name,
        higher_is_better=higher_is_better,
        values=values,
        stalled=np.asarray(stalled, dtype=bool),
    )

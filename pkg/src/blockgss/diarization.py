"""Speaker-activity annotations: parsing and frame alignment.

Segment file format, one segment per line::

    <label> <start_sec> <end_sec>    # trailing comments allowed
"""

import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .stft import StftConfig

NOISE_LABEL = "<noise>"


class Segment(NamedTuple):
    label: str
    start_sec: float
    end_sec: float


class SegmentParseError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def parse_segments(stream) -> list[Segment]:
    """Parse a segment list from a text stream, path-free string or file object."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    segments = []
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise SegmentParseError(lineno, f"expected 'label start end', got {line!r}")
        label = parts[0]
        try:
            start, end = float(parts[1]), float(parts[2])
        except ValueError:
            raise SegmentParseError(lineno, f"non-numeric time in {line!r}") from None
        if not (math.isfinite(start) and math.isfinite(end)) or start < 0:
            raise SegmentParseError(lineno, f"invalid times in {line!r}")
        if end <= start:
            raise SegmentParseError(lineno, f"end {end} <= start {start}")
        segments.append(Segment(label, start, end))
    return segments


def format_segments(segments) -> str:
    return "".join(f"{s.label} {s.start_sec:.6f} {s.end_sec:.6f}\n" for s in segments)


def _frame_range(seg: Segment, cfg: StftConfig, num_frames: int):
    # frame t is active iff start <= t*hop/sr < end
    per_frame = cfg.hop_samples / cfg.sample_rate_hz
    first = math.ceil(seg.start_sec / per_frame - 1e-9)
    stop = math.ceil(seg.end_sec / per_frame - 1e-9)
    return max(first, 0), min(stop, num_frames)


@dataclass
class ActivityMatrix:
    """Binary frame activities; column 0 is noise and is always one.

    ``labels[k]`` names source k (``labels[0]`` is the noise placeholder).
    """

    matrix: np.ndarray  # T x K, uint8
    labels: list = field(default_factory=lambda: [NOISE_LABEL])

    @property
    def num_frames(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_sources(self) -> int:
        return self.matrix.shape[1]

    def index(self, label) -> int:
        return self.labels.index(label)

    def first_active(self) -> np.ndarray:
        active = self.matrix.any(axis=0)
        first = np.argmax(self.matrix, axis=0)
        return np.where(active, first, self.num_frames)

    def block(self, start: int, stop: int) -> np.ndarray:
        """Rows ``[start, stop)`` restricted to sources seen before ``stop``."""
        width = int(np.sum(self.first_active() < stop))
        return self.matrix[start:stop, :max(width, 1)]


def segments_to_activities(segments, stft: StftConfig, num_frames: int) -> ActivityMatrix:
    """Frame-align segments into an :class:`ActivityMatrix`.

    Speaker indices start at 1 and follow the order in which speakers first
    become active (ties broken by segment start time, then file order).
    Labels whose segments cover no frame start go last.
    """
    ranges = {}
    order = {}
    for pos, seg in enumerate(segments):
        first, stop = _frame_range(seg, stft, num_frames)
        ranges.setdefault(seg.label, []).append((first, stop))
        key = (first if stop > first else math.inf, seg.start_sec, pos)
        if seg.label not in order or key < order[seg.label]:
            order[seg.label] = key
    labels = sorted(order, key=order.get)
    mat = np.zeros((num_frames, len(labels) + 1), dtype=np.uint8)
    mat[:, 0] = 1
    for k, label in enumerate(labels, start=1):
        for first, stop in ranges[label]:
            if stop > first:
                mat[first:stop, k] = 1
    return ActivityMatrix(mat, [NOISE_LABEL] + labels)


def runs(row) -> list[tuple[int, int]]:
    """Maximal runs of ones as inclusive ``(start, end)`` frame pairs."""
    row = np.asarray(row).astype(np.int8)
    padded = np.concatenate([[0], row, [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def activities_to_segments(acts: ActivityMatrix, stft: StftConfig) -> list[Segment]:
    per_frame = stft.hop_samples / stft.sample_rate_hz
    out = []
    for k in range(1, acts.num_sources):
        for s, e in runs(acts.matrix[:, k]):
            out.append(Segment(acts.labels[k], s * per_frame, (e + 1) * per_frame))
    return sorted(out, key=lambda seg: (seg.start_sec, seg.label))


def utterances(acts: ActivityMatrix):
    """All utterances as ``(speaker_index, t_start, t_end)`` sorted by start."""
    out = [(k, s, e) for k in range(1, acts.num_sources) for s, e in runs(acts.matrix[:, k])]
    return sorted(out, key=lambda u: (u[1], u[0]))

"""Parsing, validation and windowing of 3D point streams.

The canonical on-disk format is a CSV with header
``frame,timestamp,<name>_x,<name>_y,<name>_z,...`` in layout order, one row
per frame, coordinates in meters.  External corpora (MSRC-12 and friends) are
read through a :class:`ColumnMapping` that picks the source columns for each
layout point.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, MappingError, ParseError, ValidationError

DEFAULT_FRAME_RATE = 20.0
DEFAULT_WINDOW = 100
MODALITIES = ("face", "head", "hand", "body")

HAND_POINTS = (
    "left_hand", "left_wrist", "left_elbow", "left_shoulder",
    "right_hand", "right_wrist", "right_elbow", "right_shoulder",
)
BODY_POINTS = ("spine", "hip_center", "left_hip", "right_hip") + HAND_POINTS


@dataclass(frozen=True)
class PointId:
    modality: str
    name: str
    index: int


@dataclass(frozen=True)
class ModalityLayout:
    modality: str
    points: tuple[PointId, ...]

    def __post_init__(self):
        names = [p.name for p in self.points]
        if not names:
            raise ConfigError("layout needs at least one point")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate point names in {self.modality} layout")
        if [p.index for p in self.points] != list(range(len(names))):
            raise ConfigError("point indices must be 0..P-1 in order")

    @classmethod
    def from_names(cls, modality: str, names: Sequence[str]) -> "ModalityLayout":
        return cls(modality, tuple(PointId(modality, n, i) for i, n in enumerate(names)))

    @property
    def expected_count(self) -> int:
        return len(self.points)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.points)

    def index_of(self, name: str) -> int:
        for p in self.points:
            if p.name == name:
                return p.index
        raise KeyError(f"{name!r} not in {self.modality} layout")

    def header(self) -> list[str]:
        cols = ["frame", "timestamp"]
        for n in self.names:
            cols += [f"{n}_x", f"{n}_y", f"{n}_z"]
        return cols


def default_layout(modality: str) -> ModalityLayout:
    """Stock layouts: face 60, head 12, hand 8, body 12 points."""
    if modality == "face":
        names = [f"face_{i:02d}" for i in range(60)]
    elif modality == "head":
        names = [f"head_{i:02d}" for i in range(12)]
    elif modality == "hand":
        names = list(HAND_POINTS)
    elif modality == "body":
        names = list(BODY_POINTS)
    else:
        raise ConfigError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
    return ModalityLayout.from_names(modality, names)


@dataclass(frozen=True)
class SkeletonFrame:
    frame_index: int
    timestamp: float
    coords: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True, eq=False)
class SkeletonStream:
    """Immutable stream of frames; ``coords`` has shape (frames, points, 3)."""

    layout: ModalityLayout
    frame_indices: np.ndarray
    timestamps: np.ndarray
    coords: np.ndarray
    frame_rate_hz: float = DEFAULT_FRAME_RATE

    def __post_init__(self):
        for arr in (self.frame_indices, self.timestamps, self.coords):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def frames(self) -> list[SkeletonFrame]:
        return [
            SkeletonFrame(int(i), float(t), tuple(tuple(map(float, p)) for p in c))
            for i, t, c in zip(self.frame_indices, self.timestamps, self.coords)
        ]

    def track(self, name: str) -> np.ndarray:
        return self.coords[:, self.layout.index_of(name), :]

    def same_as(self, other: "SkeletonStream", atol: float = 0.0) -> bool:
        return (
            self.layout == other.layout
            and np.array_equal(self.frame_indices, other.frame_indices)
            and np.allclose(self.timestamps, other.timestamps, rtol=0, atol=atol)
            and np.allclose(self.coords, other.coords, rtol=0, atol=atol)
            and math.isclose(self.frame_rate_hz, other.frame_rate_hz, rel_tol=1e-12)
        )


def make_stream(
    layout: ModalityLayout,
    coords,
    frame_rate_hz: float = DEFAULT_FRAME_RATE,
    timestamps=None,
    frame_indices=None,
) -> SkeletonStream:
    """Build and validate a stream from an array of shape (frames, points, 3)."""
    coords = np.array(coords, dtype=float)
    n = coords.shape[0] if coords.ndim else 0
    if timestamps is None:
        timestamps = np.arange(n) / frame_rate_hz
    if frame_indices is None:
        frame_indices = np.arange(n)
    stream = SkeletonStream(
        layout,
        np.array(frame_indices, dtype=np.int64),
        np.array(timestamps, dtype=float),
        coords,
        float(frame_rate_hz),
    )
    validate_stream(stream)
    return stream


def validate_stream(stream: SkeletonStream) -> None:
    """Raise :class:`ValidationError` if any stream invariant is broken."""
    p = stream.layout.expected_count
    if stream.coords.ndim != 3 or stream.coords.shape[1:] != (p, 3):
        raise ValidationError(
            f"coords shape {stream.coords.shape} does not match {p} layout points"
        )
    n = stream.coords.shape[0]
    if len(stream.timestamps) != n or len(stream.frame_indices) != n:
        raise ValidationError("frame, timestamp and coordinate counts differ")
    if not (stream.frame_rate_hz > 0 and math.isfinite(stream.frame_rate_hz)):
        raise ValidationError(f"frame rate must be positive, got {stream.frame_rate_hz}")
    if not np.all(np.isfinite(stream.coords)):
        bad = int(np.argwhere(~np.isfinite(stream.coords))[0][0])
        raise ValidationError(f"non-finite coordinate in frame {stream.frame_indices[bad]}")
    if not np.all(np.isfinite(stream.timestamps)) or np.any(stream.timestamps < 0):
        raise ValidationError("timestamps must be finite and non-negative")
    if np.any(stream.frame_indices < 0):
        raise ValidationError("frame indices must be non-negative")
    if n > 1:
        if np.any(np.diff(stream.timestamps) <= 0):
            k = int(np.argmax(np.diff(stream.timestamps) <= 0)) + 1
            raise ValidationError(f"timestamps not strictly increasing at frame {k}")
        if np.any(np.diff(stream.frame_indices) <= 0):
            raise ValidationError("frame indices not strictly increasing")


def infer_frame_rate(timestamps: np.ndarray, default: float = DEFAULT_FRAME_RATE) -> float:
    if len(timestamps) < 2:
        return default
    delta = float(np.median(np.diff(timestamps)))
    if delta <= 0:
        raise ValidationError("cannot infer frame rate from non-increasing timestamps")
    return 1.0 / delta


def _float(cell: str, line: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r} in column {column}", line) from None


def parse_stream(
    source: str | bytes,
    layout: ModalityLayout,
    frame_rate_hz: float | None = None,
) -> SkeletonStream:
    """Parse canonical skeleton CSV text.

    The frame rate is ``1 / median(timestamp delta)`` unless given explicitly.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if not source.strip():
        raise ParseError("empty input")
    rows = csv.reader(io.StringIO(source))
    header = next(rows)
    expected = layout.header()
    if [h.strip() for h in header] != expected:
        raise ParseError(
            f"header does not match {layout.modality} layout "
            f"(expected {len(expected)} columns starting {expected[:5]})",
            1,
        )
    frame_idx, stamps, coords = [], [], []
    for line, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(expected):
            raise ParseError(f"expected {len(expected)} columns, found {len(row)}", line)
        values = [_float(c, line, expected[k]) for k, c in enumerate(row)]
        if not values[0].is_integer():
            raise ParseError(f"frame index {row[0]!r} is not an integer", line)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"line {line}: non-finite value")
        frame_idx.append(int(values[0]))
        stamps.append(values[1])
        coords.append(np.reshape(values[2:], (-1, 3)))
    if not frame_idx:
        raise ParseError("no data rows")
    stamps_arr = np.array(stamps)
    if frame_rate_hz is None:
        frame_rate_hz = infer_frame_rate(stamps_arr)
    return make_stream(layout, np.array(coords), frame_rate_hz, stamps_arr, frame_idx)


def read_stream(path: str | Path, layout: ModalityLayout, frame_rate_hz: float | None = None) -> SkeletonStream:
    return parse_stream(Path(path).read_text(encoding="utf-8"), layout, frame_rate_hz)


def serialize_stream(stream: SkeletonStream) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(stream.layout.header())
    for i, t, c in zip(stream.frame_indices, stream.timestamps, stream.coords):
        writer.writerow([int(i), repr(float(t))] + [repr(float(v)) for v in c.ravel()])
    return buf.getvalue()


def write_stream(stream: SkeletonStream, path: str | Path) -> None:
    Path(path).write_text(serialize_stream(stream), encoding="utf-8")


@dataclass(frozen=True)
class ColumnMapping:
    """Where each layout point lives in an external corpus row.

    ``points`` maps point name to the (x, y, z) source column indices.  Either
    ``timestamp_column`` or ``frame_rate_hz`` must be given.  ``unit_scale``
    multiplies raw values into meters (0.001 for millimeters).
    """

    points: Mapping[str, tuple[int, int, int]]
    timestamp_column: int | None = None
    frame_rate_hz: float | None = None
    frame_column: int | None = None
    unit_scale: float = 1.0
    time_scale: float = 1.0
    delimiter: str | None = ","
    skip_rows: int = 0

    def __post_init__(self):
        if not self.unit_scale > 0:
            raise ConfigError(f"unit_scale must be > 0, got {self.unit_scale}")
        if not self.time_scale > 0:
            raise ConfigError(f"time_scale must be > 0, got {self.time_scale}")
        if self.timestamp_column is None and self.frame_rate_hz is None:
            raise ConfigError("mapping needs timestamp_column or frame_rate_hz")
        if self.frame_rate_hz is not None and not self.frame_rate_hz > 0:
            raise ConfigError(f"frame_rate_hz must be > 0, got {self.frame_rate_hz}")
        if self.skip_rows < 0:
            raise ConfigError("skip_rows must be >= 0")
        for name, cols in self.points.items():
            if len(cols) != 3 or any(int(c) < 0 for c in cols):
                raise ConfigError(f"point {name!r} needs three non-negative column indices")

    @classmethod
    def identity(cls, layout: ModalityLayout) -> "ColumnMapping":
        """Mapping that reads the canonical CSV format."""
        pts = {n: (2 + 3 * i, 3 + 3 * i, 4 + 3 * i) for i, n in enumerate(layout.names)}
        return cls(points=pts, timestamp_column=1, frame_column=0, skip_rows=1)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ColumnMapping":
        try:
            points = {str(k): tuple(int(c) for c in v) for k, v in doc["points"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"mapping 'points' is missing or malformed: {exc}") from None
        known = {"timestamp_column", "frame_rate_hz", "frame_column", "unit_scale",
                 "time_scale", "delimiter", "skip_rows"}
        unknown = set(doc) - known - {"points"}
        if unknown:
            raise ConfigError(f"unknown mapping keys: {sorted(unknown)}")
        return cls(points=points, **{k: doc[k] for k in known if k in doc})

    def to_dict(self) -> dict:
        return {
            "points": {k: list(v) for k, v in self.points.items()},
            "timestamp_column": self.timestamp_column,
            "frame_rate_hz": self.frame_rate_hz,
            "frame_column": self.frame_column,
            "unit_scale": self.unit_scale,
            "time_scale": self.time_scale,
            "delimiter": self.delimiter,
            "skip_rows": self.skip_rows,
        }


def load_mapping(path: str | Path) -> ColumnMapping:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return ColumnMapping.from_dict(doc)


def _split_rows(text: str, delimiter: str | None) -> Iterator[tuple[int, list[str]]]:
    if delimiter is None:
        for line, raw in enumerate(text.splitlines(), start=1):
            yield line, raw.split()
    else:
        yield from enumerate(csv.reader(io.StringIO(text), delimiter=delimiter), start=1)


def adapt_corpus(
    source: str | bytes,
    mapping: ColumnMapping,
    layout: ModalityLayout,
) -> SkeletonStream:
    """Read an external corpus file into ``layout`` via ``mapping``."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    missing = [n for n in layout.names if n not in mapping.points]
    if missing:
        raise MappingError(f"mapping lacks layout points {missing}")
    cols = np.array([mapping.points[n] for n in layout.names], dtype=int)
    needed = int(cols.max())
    for extra in (mapping.timestamp_column, mapping.frame_column):
        if extra is not None:
            needed = max(needed, extra)

    frame_idx, stamps, coords = [], [], []
    for line, row in _split_rows(source, mapping.delimiter):
        if line <= mapping.skip_rows or not row or all(not c.strip() for c in row):
            continue
        if needed >= len(row):
            raise MappingError(
                f"line {line}: mapping references column {needed} but row has {len(row)} columns"
            )
        picked = np.empty(cols.shape)
        for idx in np.ndindex(cols.shape):
            picked[idx] = _float(row[cols[idx]], line, f"#{cols[idx]}")
        coords.append(picked * mapping.unit_scale)
        if mapping.timestamp_column is not None:
            stamps.append(_float(row[mapping.timestamp_column], line, "timestamp") * mapping.time_scale)
        if mapping.frame_column is not None:
            value = _float(row[mapping.frame_column], line, "frame")
            if not value.is_integer():
                raise ParseError(f"frame index {value} is not an integer", line)
            frame_idx.append(int(value))
    if not coords:
        raise ParseError("no data rows")
    n = len(coords)
    rate = mapping.frame_rate_hz
    if mapping.timestamp_column is not None:
        ts = np.array(stamps)
        if rate is None:
            rate = infer_frame_rate(ts)
    else:
        ts = np.arange(n) / rate
    return make_stream(
        layout, np.array(coords), rate, ts, frame_idx if frame_idx else np.arange(n)
    )


@dataclass(frozen=True, eq=False)
class Window:
    """Contiguous slice ``[start_frame, start_frame + length_frames)`` of a stream."""

    stream: SkeletonStream
    start_frame: int
    length_frames: int
    tag: str | None = field(default=None, compare=False)

    @property
    def coords(self) -> np.ndarray:
        return self.stream.coords[self.start_frame:self.start_frame + self.length_frames]

    @property
    def timestamps(self) -> np.ndarray:
        return self.stream.timestamps[self.start_frame:self.start_frame + self.length_frames]

    @property
    def frame_rate_hz(self) -> float:
        return self.stream.frame_rate_hz

    @property
    def layout(self) -> ModalityLayout:
        return self.stream.layout

    @property
    def duration_s(self) -> float:
        return self.length_frames / self.stream.frame_rate_hz

    def track(self, name: str) -> np.ndarray:
        return self.coords[:, self.layout.index_of(name), :]


def windows(
    stream: SkeletonStream,
    length_frames: int = DEFAULT_WINDOW,
    stride_frames: int | None = None,
) -> list[Window]:
    """Cut ``stream`` into windows; tumbling when ``stride_frames`` is None.

    Returns an empty list when the stream is shorter than one window.
    """
    if stride_frames is None:
        stride_frames = length_frames
    if length_frames < 1 or stride_frames < 1:
        raise ConfigError("window length and stride must be positive")
    n = len(stream)
    if length_frames > n:
        return []
    count = (n - length_frames) // stride_frames + 1
    return [Window(stream, k * stride_frames, length_frames) for k in range(count)]

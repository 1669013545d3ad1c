"""Geometric descriptors over analysis windows.

A window of P tracked points yields, in this order:

* x, y, z of every point in the window's last frame (3P values, meters)
* distance between every pair i < j (C(P,2) values, meters)
* angle of every pair i < j with the horizontal axis (C(P,2) values, degrees)
* mean speed of every point (P values, m/s)
* net displacement of every point (P values, meters)

Extra descriptors (per-axis velocity, movement frequency, joint angles) are
appended only when asked for, which is how rule bundles pull in what they need.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ParseError
from .skeleton_io import ModalityLayout, Window

AXES = ("x", "y", "z")
KINDS = (
    "coordinate", "pair_distance", "pair_angle", "velocity", "velocity_component",
    "displacement", "frequency", "joint_angle",
)
UNITS = {
    "coordinate": "m",
    "pair_distance": "m",
    "pair_angle": "deg",
    "velocity": "m/s",
    "velocity_component": "m/s",
    "displacement": "m",
    "frequency": "Hz",
    "joint_angle": "deg",
}
_ARITY = {
    "coordinate": 1, "velocity": 1, "velocity_component": 1, "displacement": 1,
    "frequency": 1, "pair_distance": 2, "pair_angle": 2, "joint_angle": 3,
}
_NEEDS_AXIS = {"coordinate", "velocity_component", "frequency"}
_PREFIX = {
    "pair_distance": "dist", "pair_angle": "angle", "velocity": "speed",
    "velocity_component": "vel", "displacement": "disp", "frequency": "freq",
    "joint_angle": "joint",
}
_KIND_OF = {v: k for k, v in _PREFIX.items()}


@dataclass(frozen=True)
class FeatureDescriptor:
    """One named quantity; ``name`` is its stable column label.

    Names look like ``left_wrist_y``, ``dist:a:b``, ``angle:a:b``, ``speed:a``,
    ``vel_x:a``, ``disp:a``, ``freq_y:a`` and ``joint:a:b:c`` (angle at b).
    """

    kind: str
    operands: tuple[str, ...]
    axis: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        if len(self.operands) != _ARITY[self.kind]:
            raise ValueError(f"{self.kind} takes {_ARITY[self.kind]} operand(s)")
        if len(set(self.operands)) != len(self.operands):
            raise ValueError(f"{self.kind} operands must be distinct")
        if (self.axis is not None) != (self.kind in _NEEDS_AXIS):
            raise ValueError(f"axis {'required' if self.kind in _NEEDS_AXIS else 'not allowed'} for {self.kind}")
        if self.axis is not None and self.axis not in AXES:
            raise ValueError(f"bad axis {self.axis!r}")

    @property
    def name(self) -> str:
        if self.kind == "coordinate":
            return f"{self.operands[0]}_{self.axis}"
        head = _PREFIX[self.kind]
        if self.axis is not None:
            head = f"{head}_{self.axis}"
        return ":".join((head,) + self.operands)

    @property
    def unit(self) -> str:
        return UNITS[self.kind]

    @classmethod
    def parse(cls, name: str) -> "FeatureDescriptor":
        if ":" not in name:
            point, sep, axis = name.rpartition("_")
            if not sep or axis not in AXES or not point:
                raise ValueError(f"cannot parse descriptor name {name!r}")
            return cls("coordinate", (point,), axis)
        head, *ops = name.split(":")
        axis = None
        if "_" in head:
            head, axis = head.split("_", 1)
        if head not in _KIND_OF:
            raise ValueError(f"cannot parse descriptor name {name!r}")
        return cls(_KIND_OF[head], tuple(ops), axis)

    def __str__(self) -> str:
        return self.name


def _point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,):
        raise DomainError(f"expected a 3D point, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite point {arr}")
    return arr


def pair_distance(a, b) -> float:
    """Euclidean distance in meters."""
    return float(np.linalg.norm(_point(b) - _point(a)))


def pair_angle(a, b, with_flag: bool = False):
    """Angle of the a->b segment with the horizontal, in degrees (-180, 180].

    Measured in the frontal x-y plane; z is ignored.  A pair that coincides in
    that plane gets 0 degrees and, with ``with_flag``, a True degenerate flag.
    """
    a, b = _point(a), _point(b)
    dx, dy = b[0] - a[0], b[1] - a[1]
    degenerate = dx == 0 and dy == 0
    angle = 0.0 if degenerate else math.degrees(math.atan2(dy, dx))
    if angle <= -180.0:
        angle = 180.0
    return (angle, degenerate) if with_flag else angle


def joint_angle(a, b, c) -> float:
    """Interior angle at ``b`` of the chain a-b-c, degrees in [0, 180]."""
    a, b, c = _point(a), _point(b), _point(c)
    u, v = a - b, c - b
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    cos = float(np.dot(u, v) / (nu * nv))
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


@dataclass(frozen=True)
class Velocity:
    speed: float
    vx: float
    vy: float
    vz: float


def _track(track, min_frames: int) -> np.ndarray:
    arr = np.asarray(track, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DomainError(f"expected a (frames, 3) track, got shape {arr.shape}")
    if len(arr) < min_frames:
        raise DomainError(f"need at least {min_frames} frame(s), got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite value in track")
    return arr


def velocity(track, frame_rate_hz: float) -> Velocity:
    """Mean speed and mean signed per-axis velocity over a track."""
    arr = _track(track, 2)
    if not frame_rate_hz > 0:
        raise DomainError("frame rate must be positive")
    steps = np.diff(arr, axis=0)
    speed = float(np.mean(np.linalg.norm(steps, axis=1)) * frame_rate_hz)
    vx, vy, vz = (np.mean(steps, axis=0) * frame_rate_hz).tolist()
    return Velocity(speed, vx, vy, vz)


def displacement(track) -> float:
    arr = _track(track, 1)
    return float(np.linalg.norm(arr[-1] - arr[0]))


def movement_frequency(component, frame_rate_hz: float) -> float:
    """Oscillation frequency of one coordinate over a window, in Hz.

    Per-frame deltas are smoothed with a 3-frame moving average and
    mean-centered; each sign change is a half cycle, so the count is divided
    by twice the window duration.
    """
    y = np.asarray(component, dtype=float).ravel()
    if len(y) < 3:
        raise DomainError(f"need at least 3 frames, got {len(y)}")
    if not np.all(np.isfinite(y)):
        raise DomainError("non-finite value in track")
    if not frame_rate_hz > 0:
        raise DomainError("frame rate must be positive")
    d = np.diff(y)
    if len(d) >= 3:
        d = np.convolve(d, np.ones(3) / 3, mode="valid")
    d = d - d.mean()
    # round-off on a steady ramp must not read as oscillation
    scale = float(np.max(np.abs(np.diff(y))))
    eps = 1e-6 * scale + 1e-12
    signs = np.sign(d[np.abs(d) > eps])
    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    duration = len(y) / frame_rate_hz
    return changes / (2.0 * duration)


def canonical_descriptors(layout: ModalityLayout) -> list[FeatureDescriptor]:
    names = layout.names
    out = [FeatureDescriptor("coordinate", (n,), ax) for n in names for ax in AXES]
    pairs = list(combinations(names, 2))
    out += [FeatureDescriptor("pair_distance", p) for p in pairs]
    out += [FeatureDescriptor("pair_angle", p) for p in pairs]
    out += [FeatureDescriptor("velocity", (n,)) for n in names]
    out += [FeatureDescriptor("displacement", (n,)) for n in names]
    return out


def feature_dimension(n_points: int) -> int:
    return 3 * n_points + 2 * math.comb(n_points, 2) + 2 * n_points


@dataclass(frozen=True, eq=False)
class WindowFeatures:
    """Feature vector for one window; ``values[i]`` belongs to ``descriptors[i]``."""

    descriptors: tuple[FeatureDescriptor, ...]
    values: np.ndarray
    start_frame: int | None = None
    tag: str | None = None
    label: int | None = None
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.descriptors) != len(self.values):
            raise ValueError("descriptor and value counts differ")
        object.__setattr__(self, "_index", {d.name: i for i, d in enumerate(self.descriptors)})

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.descriptors]

    @property
    def units(self) -> list[str]:
        return [d.unit for d in self.descriptors]

    def __contains__(self, name) -> bool:
        return str(name) in self._index

    def __getitem__(self, name) -> float:
        return float(self.values[self._index[str(name)]])

    def get(self, name, default=None):
        i = self._index.get(str(name))
        return default if i is None else float(self.values[i])

    def __len__(self) -> int:
        return len(self.values)


def _descriptor_value(d: FeatureDescriptor, window: Window, last: np.ndarray) -> float:
    idx = [window.layout.index_of(n) for n in d.operands]
    if d.kind == "coordinate":
        return float(last[idx[0], AXES.index(d.axis)])
    if d.kind == "pair_distance":
        return pair_distance(last[idx[0]], last[idx[1]])
    if d.kind == "pair_angle":
        return pair_angle(last[idx[0]], last[idx[1]])
    if d.kind == "joint_angle":
        return joint_angle(*(last[i] for i in idx))
    track = window.coords[:, idx[0], :]
    if d.kind == "velocity":
        return velocity(track, window.frame_rate_hz).speed
    if d.kind == "velocity_component":
        return getattr(velocity(track, window.frame_rate_hz), "v" + d.axis)
    if d.kind == "displacement":
        return displacement(track)
    return movement_frequency(track[:, AXES.index(d.axis)], window.frame_rate_hz)


def extract_window_features(
    window: Window,
    layout: ModalityLayout | None = None,
    extra: Iterable[FeatureDescriptor | str] = (),
    label: int | None = None,
) -> WindowFeatures:
    """Compute the canonical descriptor vector (plus any ``extra``) for a window."""
    layout = layout or window.layout
    if layout != window.layout:
        raise ValueError("window does not belong to the given layout")
    coords = window.coords
    last = coords[-1]
    p = layout.expected_count
    iu, ju = np.triu_indices(p, k=1)
    delta = last[ju] - last[iu]
    dists = np.linalg.norm(delta, axis=1)
    angles = np.degrees(np.arctan2(delta[:, 1], delta[:, 0]))
    angles[(delta[:, 0] == 0) & (delta[:, 1] == 0)] = 0.0
    angles[angles <= -180.0] = 180.0
    if len(coords) >= 2:
        speeds = np.linalg.norm(np.diff(coords, axis=0), axis=2).mean(axis=0) * window.frame_rate_hz
    else:
        raise DomainError("velocity needs at least 2 frames per window")
    disps = np.linalg.norm(coords[-1] - coords[0], axis=1)
    values = np.concatenate([last.ravel(), dists, angles, speeds, disps])

    descriptors = canonical_descriptors(layout)
    seen = {d.name for d in descriptors}
    extras, extra_values = [], []
    for d in extra:
        d = FeatureDescriptor.parse(d) if isinstance(d, str) else d
        if d.name in seen:
            continue
        for n in d.operands:
            if n not in layout.names:
                raise KeyError(f"descriptor {d.name} uses {n!r}, not in {layout.modality} layout")
        seen.add(d.name)
        extras.append(d)
        extra_values.append(_descriptor_value(d, window, last))
    if extras:
        descriptors += extras
        values = np.concatenate([values, extra_values])
    if not np.all(np.isfinite(values)):
        raise DomainError("non-finite feature value")
    return WindowFeatures(tuple(descriptors), values, window.start_frame, window.tag, label)


# -- CSV --------------------------------------------------------------------

META_COLUMNS = ("tag", "label")


def features_to_csv(
    rows: Sequence[WindowFeatures],
    header_comment: str | None = None,
) -> str:
    """One row per window; ``tag``/``label`` columns only when some row has them."""
    if not rows:
        raise ValueError("no feature rows to write")
    names = rows[0].names
    for r in rows[1:]:
        if r.names != names:
            raise ValueError("feature rows have differing descriptor sets")
    with_tag = any(r.tag is not None for r in rows)
    with_label = any(r.label is not None for r in rows)
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names + (["tag"] if with_tag else []) + (["label"] if with_label else []))
    for r in rows:
        cells = [repr(float(v)) for v in r.values]
        if with_tag:
            cells.append(r.tag or "")
        if with_label:
            cells.append("" if r.label is None else str(r.label))
        w.writerow(cells)
    return buf.getvalue()


def features_from_csv(text: str) -> list[WindowFeatures]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ParseError("empty feature file")
    reader = csv.reader(lines)
    header = next(reader)
    meta = {c: header.index(c) for c in META_COLUMNS if c in header}
    feat_cols = [i for i, c in enumerate(header) if c not in meta]
    try:
        descriptors = tuple(FeatureDescriptor.parse(header[i]) for i in feat_cols)
    except ValueError as exc:
        raise ParseError(str(exc), 1) from None
    out = []
    for line, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, found {len(row)}", line)
        try:
            values = np.array([float(row[i]) for i in feat_cols])
            label = int(row[meta["label"]]) if "label" in meta and row[meta["label"]] != "" else None
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
        tag = row[meta["tag"]] or None if "tag" in meta else None
        out.append(WindowFeatures(descriptors, values, None, tag, label))
    return out


def read_features(path: str | Path) -> list[WindowFeatures]:
    return features_from_csv(Path(path).read_text(encoding="utf-8"))

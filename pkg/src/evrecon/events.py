"""Event data model, temporal windowing and integration into intensity-change maps.

Timestamps are integer microseconds. Images and maps are ``(height, width)``
float arrays indexed ``[y, x]``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Immutable, time-sorted batch of events on a ``width x height`` sensor."""

    width: int
    height: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        x = np.ascontiguousarray(self.x, dtype=np.int64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        p = np.ascontiguousarray(self.p, dtype=np.int8)
        n = t.shape[0]
        if t.ndim != 1 or x.shape != (n,) or y.shape != (n,) or p.shape != (n,):
            raise DimensionMismatchError("event field arrays must be 1-D and equally long")
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError(f"bad sensor geometry {self.width}x{self.height}")
        if n:
            if np.any(np.diff(t) < 0):
                raise InvalidParameterError("events must be sorted by timestamp")
            if t[0] < 0:
                raise InvalidParameterError("timestamps must be non-negative")
            if x.min() < 0 or x.max() >= self.width or y.min() < 0 or y.max() >= self.height:
                raise InvalidParameterError("event outside sensor geometry")
            if np.any((p != 1) & (p != -1)):
                raise InvalidParameterError("polarity must be -1 or +1")
        for name, arr in (("t", t), ("x", x), ("y", y), ("p", p)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(width, height, z, z, z, z)

    @classmethod
    def from_unsorted(cls, width, height, t, x, y, p) -> "EventStream":
        """Build a stream from arrays in arbitrary order (stable sort by t)."""
        t = np.asarray(t, dtype=np.int64)
        order = np.argsort(t, kind="stable")
        return cls(width, height, t[order], np.asarray(x)[order],
                   np.asarray(y)[order], np.asarray(p)[order])

    @classmethod
    def from_events(cls, width: int, height: int, events) -> "EventStream":
        events = list(events)
        if not events:
            return cls.empty(width, height)
        x, y, t, p = (np.array(col) for col in zip(*events))
        return cls.from_unsorted(width, height, t, x, y, p)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.t, other.t) and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y) and np.array_equal(self.p, other.p))

    def __repr__(self) -> str:
        return f"EventStream({self.width}x{self.height}, n={len(self)})"

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def pixel_index(self) -> np.ndarray:
        return self.y * self.width + self.x

    def select(self, mask_or_index) -> "EventStream":
        """Sub-stream from a boolean mask, a slice or a sorted index array (order kept)."""
        idx = mask_or_index if isinstance(mask_or_index, slice) else np.asarray(mask_or_index)
        return EventStream(self.width, self.height, self.t[idx], self.x[idx], self.y[idx], self.p[idx])

    def with_polarity(self, p) -> "EventStream":
        return EventStream(self.width, self.height, self.t, self.x, self.y, p)

    def span(self) -> tuple[int, int]:
        if not len(self):
            raise InvalidParameterError("empty stream has no time span")
        return int(self.t[0]), int(self.t[-1])


def window(stream: EventStream, t_start, t_end) -> EventStream:
    """Events with ``t_start < t <= t_end``."""
    if t_start > t_end:
        raise InvalidParameterError(f"inverted window ({t_start}, {t_end}]")
    lo, hi = _window_bounds(stream.t, t_start, t_end)
    return stream.select(slice(lo, hi))


def _window_bounds(t: np.ndarray, t_start, t_end) -> tuple[int, int]:
    lo = int(np.searchsorted(t, t_start, side="right"))
    hi = int(np.searchsorted(t, t_end, side="right"))
    return lo, hi


def integrate(stream: EventStream, t_end, tau, c: float = 1.0) -> np.ndarray:
    """Quantized log-intensity change over ``(t_end - tau, t_end]``.

    Each pixel holds ``c * (n_on - n_off)``. Polarities are accumulated as
    integers first, so the result does not depend on summation order.
    """
    if not tau > 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    if not c > 0:
        raise InvalidParameterError(f"contrast threshold must be positive, got {c}")
    lo, hi = _window_bounds(stream.t, t_end - tau, t_end)
    return _accumulate(stream, lo, hi) * float(c)


def _accumulate(stream: EventStream, lo: int = 0, hi: int | None = None) -> np.ndarray:
    sl = slice(lo, hi)
    idx = stream.pixel_index[sl]
    counts = np.zeros(stream.width * stream.height, dtype=np.int64)
    np.add.at(counts, idx, stream.p[sl].astype(np.int64))
    return counts.reshape(stream.height, stream.width).astype(np.float64)


def exposure_window_for_frame(t_b, tau) -> tuple:
    """Exposure interval ``[t_b - tau/2, t_b + tau/2]`` of a frame stamped ``t_b``.

    The prior for that frame is integrated up to the returned end time.
    """
    if not tau > 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    half = tau // 2 if tau % 2 == 0 else tau / 2
    return t_b - half, t_b + half


def normalize_prior(prior: np.ndarray, grad_h: np.ndarray, grad_v: np.ndarray) -> np.ndarray:
    """Rescale an intensity map to the dynamic range of an image gradient.

    The magnitude is set so ``max|prior|`` equals the largest absolute
    gradient component. The sign is chosen to correlate positively with
    ``grad_h + grad_v``: events accumulated along a motion path carry the
    opposite sign of the spatial gradient for positive velocities.
    """
    peak = np.abs(prior).max() if prior.size else 0.0
    if peak == 0:
        return np.zeros_like(prior, dtype=np.float64)
    target = max(np.abs(grad_h).max(), np.abs(grad_v).max())
    sign = -1.0 if np.sum(prior * (grad_h + grad_v)) < 0 else 1.0
    return prior * (sign * target / peak)


# ---------------------------------------------------------------------------
# text format: "t_us,x,y,p" per line, optional "# width,height" header

def read_events(path, width: int | None = None, height: int | None = None) -> EventStream:
    with open(path) as fh:
        first = fh.readline()
    skip = 0
    if first.startswith("#"):
        skip = 1
        w, h = (int(v) for v in first.lstrip("#").split(",")[:2])
        if (width, height) != (None, None) and (width, height) != (w, h):
            raise DimensionMismatchError(f"{path}: header geometry {w}x{h} differs from {width}x{height}")
        width, height = w, h
    if width is None or height is None:
        raise InvalidParameterError(f"{path}: no '# width,height' header and no geometry given")
    data = np.loadtxt(path, delimiter=",", comments="#", dtype=np.int64, ndmin=2)
    if data.size == 0:
        return EventStream.empty(width, height)
    if data.shape[1] < 4:
        raise InvalidParameterError(f"{path}: expected 't_us,x,y,p' columns")
    t, x, y, p = data[:, 0], data[:, 1], data[:, 2], data[:, 3]
    p = np.where(p == 0, -1, p)
    return EventStream.from_unsorted(width, height, t, x, y, p)


def write_events(path, stream: EventStream, extra: np.ndarray | None = None,
                 extra_name: str | None = None) -> None:
    """Write a stream as text; ``extra`` adds a fifth integer column (e.g. kept/label flags)."""
    cols = [stream.t, stream.x, stream.y, stream.p.astype(np.int64)]
    if extra is not None:
        extra = np.asarray(extra).astype(np.int64)
        if extra.shape != (len(stream),):
            raise DimensionMismatchError("extra column length differs from event count")
        cols.append(extra)
    header = f"# {stream.width},{stream.height}"
    if extra_name:
        header += f"\n# t_us,x,y,p,{extra_name}"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    table = np.column_stack(cols) if len(stream) else np.zeros((0, len(cols)), dtype=np.int64)
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        if len(stream):
            np.savetxt(fh, table, fmt="%d", delimiter=",")

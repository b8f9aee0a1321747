"""Gradient-supervised event denoising and a nearest-neighbour baseline.

Events survive when their pixel carries a gradient of the deblurred image
that stands out from the dominant (modal) gradient value, or when they lie
within a small space-time neighbourhood of such an event.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError
from .events import EventStream
from .imagecore import GradientField

HIST_BINS = 256


@dataclass(frozen=True)
class DenoiseParams:
    omega: float = 0.05
    mu: int = 2  # spatial radius, pixels (Chebyshev)
    nu: int = 5000  # temporal radius, µs
    normalize: bool = True  # supervise with gradient magnitude scaled to max 1
    min_support: int = 2  # nn_filter only

    def __post_init__(self):
        if not self.omega >= 0:
            raise InvalidParameterError(f"omega must be >= 0, got {self.omega}")
        if self.mu < 0 or self.nu < 0:
            raise InvalidParameterError("mu and nu must be >= 0")
        if self.min_support < 1:
            raise InvalidParameterError("min_support must be >= 1")

    def as_dict(self) -> dict:
        return asdict(self)


def modal_value(values: np.ndarray, bins: int = HIST_BINS) -> float:
    """Most frequent value: mean of the fullest bin of a histogram over the data range.

    Ties go to the lower bin.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = values.min(), values.max()
    if lo == hi:
        return float(lo)
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    b = int(np.argmax(counts))
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)
    return float(values[idx == b].mean())


def build_mask(grad: GradientField, omega: float, normalize: bool = False) -> np.ndarray:
    """Gradient magnitude with the band ``(q - omega, q + omega)`` around the mode zeroed."""
    mag = grad.magnitude()
    if not np.all(np.isfinite(mag)):
        raise InvalidParameterError("gradient field contains non-finite values")
    if normalize and mag.max() > 0:
        mag = mag / mag.max()
    q = modal_value(mag)
    suppressed = (mag > q - omega) & (mag < q + omega)
    return np.where(suppressed, 0.0, mag)


def mask_filter(stream: EventStream, mask: np.ndarray) -> EventStream:
    """Keep events at pixels where the mask is non-zero."""
    mask = np.asarray(mask)
    if mask.shape != stream.shape:
        raise DimensionMismatchError(f"mask {mask.shape} does not match sensor {stream.shape}")
    return stream.select(mask[stream.y, stream.x] != 0)


class _PixelTimeIndex:
    """Events sorted by (pixel, time) for range queries around arbitrary points."""

    def __init__(self, stream: EventStream, t0: int, span: int):
        self.width, self.height = stream.width, stream.height
        self.m = span + 1
        keys = stream.pixel_index * self.m + (stream.t - t0)
        self.keys = np.sort(keys)
        self.t0 = t0

    def count(self, x, y, t, dx: int, dy: int, nu: int) -> np.ndarray:
        """For each query point, number of indexed events at ``(x+dx, y+dy)`` with ``|dt| <= nu``."""
        nx, ny = x + dx, y + dy
        ok = (nx >= 0) & (nx < self.width) & (ny >= 0) & (ny < self.height)
        out = np.zeros(x.shape[0], dtype=np.int64)
        if not ok.any():
            return out
        base = (ny[ok] * self.width + nx[ok]) * self.m
        rel = t[ok] - self.t0
        lo = base + np.maximum(rel - nu, 0)
        hi = base + np.minimum(rel + nu, self.m - 1)
        out[ok] = np.searchsorted(self.keys, hi, side="right") - np.searchsorted(self.keys, lo, side="left")
        return out


def _time_frame(*streams: EventStream) -> tuple[int, int]:
    ts = [s.t for s in streams if len(s)]
    t0 = min(int(t[0]) for t in ts)
    t1 = max(int(t[-1]) for t in ts)
    return t0, t1 - t0


def _offsets(mu: int):
    r = range(-mu, mu + 1)
    return [(dx, dy) for dy in r for dx in r]


def expand_neighbors(raw: EventStream, seeds: EventStream, mu: int, nu: int) -> EventStream:
    """Seeds plus every raw event within Chebyshev radius ``mu`` and time radius ``nu`` of a seed."""
    if (raw.width, raw.height) != (seeds.width, seeds.height):
        raise DimensionMismatchError("raw and seed streams have different geometry")
    if not len(seeds) or not len(raw):
        return seeds
    t0, span = _time_frame(raw, seeds)
    index = _PixelTimeIndex(seeds, t0, span)
    hit = np.zeros(len(raw), dtype=bool)
    for dx, dy in _offsets(mu):
        todo = ~hit
        if not todo.any():
            break
        hit[todo] = index.count(raw.x[todo], raw.y[todo], raw.t[todo], dx, dy, nu) > 0
    return raw.select(hit)


def nn_filter(raw: EventStream, mu: int = 2, nu: int = 5000, min_support: int = 2) -> EventStream:
    """Keep events with at least ``min_support`` other events in their space-time window."""
    if min_support < 1:
        raise InvalidParameterError("min_support must be >= 1")
    if not len(raw):
        return raw
    t0, span = _time_frame(raw)
    index = _PixelTimeIndex(raw, t0, span)
    support = np.full(len(raw), -1, dtype=np.int64)  # the event itself is counted once
    for dx, dy in _offsets(mu):
        support += index.count(raw.x, raw.y, raw.t, dx, dy, nu)
    return raw.select(support >= min_support)


def denoise(raw: EventStream, grad: GradientField, params: DenoiseParams | None = None) -> EventStream:
    params = params or DenoiseParams()
    if grad.shape != raw.shape:
        raise DimensionMismatchError(f"gradient {grad.shape} does not match sensor {raw.shape}")
    mask = build_mask(grad, params.omega, normalize=params.normalize)
    return expand_neighbors(raw, mask_filter(raw, mask), params.mu, params.nu)

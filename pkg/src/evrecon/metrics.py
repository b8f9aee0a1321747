"""Image fidelity, denoising classification and kernel similarity."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

from .errors import ConsistencyError, DegenerateInputError, DimensionMismatchError, InvalidParameterError
from .events import EventStream

SSIM_WIN = 11
SSIM_SIGMA = 1.5


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def _gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    r = g.size // 2
    return out[r:-r, r:-r]


def ssim(a, b, data_range: float = 1.0) -> float:
    """Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), mean over valid windows."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WIN:
        raise InvalidParameterError(f"SSIM needs at least {SSIM_WIN}x{SSIM_WIN} images, got {a.shape}")
    g = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_region(a, b, box: tuple[slice, slice]) -> float:
    """SSIM restricted to a rectangular region."""
    return ssim(np.asarray(a)[box], np.asarray(b)[box])


def total_variation(img) -> float:
    img = np.asarray(img, dtype=np.float64)
    return float(np.abs(np.diff(img, axis=0)).sum() + np.abs(np.diff(img, axis=1)).sum())


@dataclass(frozen=True)
class ClassificationReport:
    """Signal is the positive class. Undefined rates are NaN (not 0)."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @staticmethod
    def _ratio(num, den) -> float:
        return num / den if den else math.nan

    @property
    def tpr(self) -> float:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def fpr(self) -> float:
        return self._ratio(self.fp, self.fp + self.tn)

    @property
    def ppv(self) -> float:
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def acc(self) -> float:
        return self._ratio(self.tp + self.tn, self.total)


def _keys(stream: EventStream) -> np.ndarray:
    return np.rec.fromarrays([stream.t, stream.y, stream.x, stream.p], names="t,y,x,p")


def classify_report(kept: EventStream, labeled) -> ClassificationReport:
    """Confusion counts of a filtered stream against labelled ground truth.

    Events are matched by value ``(t, x, y, p)`` as a multiset. When an exact
    duplicate carries both labels, kept copies are attributed to signal first.
    """
    ref = labeled.stream
    if (kept.width, kept.height) != (ref.width, ref.height):
        raise ConsistencyError("kept stream geometry differs from the labelled stream")
    n_sig = int(labeled.signal.sum())
    n_noise = len(ref) - n_sig
    if not len(kept):
        return ClassificationReport(0, 0, n_noise, n_sig)
    ref_keys = _keys(ref)
    # order by value, signal before noise within equal values
    order = np.lexsort((~labeled.signal, ref.p, ref.x, ref.y, ref.t))
    ref_sorted = ref_keys[order]
    sig_sorted = labeled.signal[order]
    kept_keys = np.sort(_keys(kept), order=["t", "y", "x", "p"])
    lo = np.searchsorted(ref_sorted, kept_keys, side="left")
    hi = np.searchsorted(ref_sorted, kept_keys, side="right")
    if np.any(hi == lo):
        raise ConsistencyError("kept stream contains events absent from the labelled stream")
    # k-th copy of a value in kept maps to the k-th copy in the reference
    first = np.r_[True, kept_keys[1:] != kept_keys[:-1]]
    group_start = np.maximum.accumulate(np.where(first, np.arange(len(kept_keys)), 0))
    rank = np.arange(len(kept_keys)) - group_start
    pos = lo + rank
    if np.any(pos >= hi):
        raise ConsistencyError("kept stream has more copies of an event than the labelled stream")
    tp = int(sig_sorted[pos].sum())
    fp = len(kept_keys) - tp
    return ClassificationReport(tp, fp, n_noise - fp, n_sig - tp)


def kernel_similarity(k1, k2) -> float:
    """Cosine similarity of two kernels, maximized over integer shifts within half the size."""
    k1 = np.asarray(k1, dtype=np.float64)
    k2 = np.asarray(k2, dtype=np.float64)
    size = max(k1.shape + k2.shape)
    k1, k2 = _pad_to(k1, size), _pad_to(k2, size)
    n1, n2 = np.linalg.norm(k1), np.linalg.norm(k2)
    if n1 == 0 or n2 == 0:
        raise DegenerateInputError("kernel with zero energy")
    corr = signal.correlate(k1, k2, mode="full", method="direct")
    c = size - 1
    r = size // 2
    return float(corr[c - r:c + r + 1, c - r:c + r + 1].max() / (n1 * n2))


def _pad_to(k: np.ndarray, size: int) -> np.ndarray:
    if k.shape == (size, size):
        return k
    out = np.zeros((size, size))
    oy, ox = (size - k.shape[0]) // 2, (size - k.shape[1]) // 2
    out[oy:oy + k.shape[0], ox:ox + k.shape[1]] = k
    return out

"""Event-regularized blind deblurring.

The latent image ``S`` and kernel ``k`` are estimated alternately.  The
``S`` step minimizes

    ||k*S - B||^2 + alpha*(||Dh S - I||^2 + ||Dv S - I||^2) + beta*||grad S||_0

by half-quadratic splitting: an auxiliary gradient ``z`` is hard-thresholded,
then ``S`` has a closed form in the Fourier domain.  ``k`` is updated by a
ridge-regularized least-squares fit between the gradients of ``S`` and ``B``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict, replace
from typing import NamedTuple

import numpy as np

from . import imagecore as ic
from .errors import (DegenerateInputError, DimensionMismatchError,
                     InvalidParameterError, SolverDivergedError)
from .events import normalize_prior
from .imagecore import GradientField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeblurParams:
    alpha: float = 0.24
    beta: float = 0.004
    sigma: float = 1.0
    gamma0: float | None = None  # None -> 2 * beta
    gamma_max: float = 1e5
    gamma_scale: float = 2.0
    l_max: int = 5
    kernel_size: int = 25
    pad: int | None = None  # None -> 2 * kernel_size
    normalize_prior: bool = True
    kernel_prune: float = 0.05  # weights below this fraction of the peak are zeroed

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_max"):
            if not getattr(self, name) >= 0:
                raise InvalidParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.sigma > 0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.gamma_scale > 1:
            raise InvalidParameterError(f"gamma_scale must be > 1, got {self.gamma_scale}")
        if self.l_max < 1:
            raise InvalidParameterError(f"l_max must be >= 1, got {self.l_max}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidParameterError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if not self.start_gamma > 0:
            raise InvalidParameterError("initial gamma must be positive (set gamma0 or beta > 0)")
        if self.start_gamma > self.gamma_max:
            raise InvalidParameterError(f"gamma0 {self.start_gamma} exceeds gamma_max {self.gamma_max}")
        if not 0 <= self.kernel_prune < 1:
            raise InvalidParameterError(f"kernel_prune must lie in [0, 1), got {self.kernel_prune}")
        if self.pad is not None and self.pad < 0:
            raise InvalidParameterError("pad must be >= 0")

    @property
    def start_gamma(self) -> float:
        return 2 * self.beta if self.gamma0 is None else self.gamma0

    @property
    def padding(self) -> int:
        return 2 * self.kernel_size if self.pad is None else self.pad

    def replace(self, **changes) -> "DeblurParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


class IterationLog(NamedTuple):
    iter: int
    fidelity: float
    event_term: float
    l0_count: int
    total: float


class DeblurResult(NamedTuple):
    sharp: np.ndarray
    kernel: np.ndarray
    history: list


def delta_kernel(size: int) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def finalize_kernel(k) -> np.ndarray:
    """Zero negative weights and normalize to unit sum."""
    k = np.where(np.asarray(k, dtype=np.float64) > 0, k, 0.0)
    total = k.sum()
    if not total > 0 or not np.isfinite(total):
        raise DegenerateInputError("kernel has no positive mass")
    return k / total


def prune_kernel(k, fraction: float) -> np.ndarray:
    """Zero weights below ``fraction`` of the peak and renormalize."""
    k = np.asarray(k, dtype=np.float64)
    if fraction <= 0:
        return k
    return finalize_kernel(np.where(k >= fraction * k.max(), k, 0.0))


def threshold_gradients(grad: GradientField, beta: float, gamma: float) -> GradientField:
    """Hard-threshold gradient vectors whose squared magnitude is at most ``beta / gamma``."""
    if not gamma > 0:
        raise InvalidParameterError(f"gamma must be positive, got {gamma}")
    keep = grad.magnitude_sq() > beta / gamma
    return GradientField(np.where(keep, grad.gh, 0.0), np.where(keep, grad.gv, 0.0))


def solve_latent(B, k, prior, z: GradientField, alpha: float, gamma: float) -> np.ndarray:
    """Closed-form minimizer of the quadratic latent-image subproblem (circular boundary)."""
    B = ic.as_image(B)
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != B.shape or z.shape != B.shape:
        raise DimensionMismatchError(
            f"shapes differ: B {B.shape}, prior {prior.shape}, z {z.shape}")
    h, w = B.shape
    K = ic.psf2otf(k, B.shape)
    Dh, Dv = ic.derivative_spectra(w, h)
    num = np.conj(K) * np.fft.fft2(B)
    if alpha:
        num = num + alpha * (np.conj(Dh) + np.conj(Dv)) * np.fft.fft2(prior)
    if gamma:
        num = num + gamma * ic.fhat(z.gh, z.gv)
    den = np.abs(K) ** 2 + (alpha + gamma) * (np.abs(Dh) ** 2 + np.abs(Dv) ** 2)
    safe = den != 0
    spec = np.where(safe, num / np.where(safe, den, 1.0), 0.0)
    return ic.real_part(np.fft.ifft2(spec))


def estimate_kernel(grad_s: GradientField, grad_b: GradientField, sigma: float,
                    kernel_size: int) -> np.ndarray:
    """Ridge-regularized kernel fit in the gradient domain, both components stacked."""
    if grad_s.shape != grad_b.shape:
        raise DimensionMismatchError(f"gradient fields differ: {grad_s.shape} vs {grad_b.shape}")
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    if not np.any(grad_s.gh) and not np.any(grad_s.gv):
        raise DegenerateInputError("sharp-image gradient is identically zero")
    h, w = grad_s.shape
    if kernel_size > min(h, w):
        raise InvalidParameterError(f"kernel_size {kernel_size} exceeds image size {grad_s.shape}")
    Sh, Sv = np.fft.fft2(grad_s.gh), np.fft.fft2(grad_s.gv)
    Bh, Bv = np.fft.fft2(grad_b.gh), np.fft.fft2(grad_b.gv)
    num = np.conj(Sh) * Bh + np.conj(Sv) * Bv
    den = np.abs(Sh) ** 2 + np.abs(Sv) ** 2 + sigma
    k = ic.otf2psf(num / den, kernel_size)
    return finalize_kernel(k)


class BlindDeblurrer:
    """Stateful alternation between latent-image and kernel updates.

    One call to :meth:`step` is one outer iteration: a full gamma
    continuation for ``S`` followed by a kernel update.
    """

    def __init__(self, B, prior, params: DeblurParams, kernel=None):
        B = ic.as_image(B)
        if prior is None:
            prior = np.zeros_like(B)
        prior = np.asarray(prior, dtype=np.float64)
        if prior.shape != B.shape:
            raise DimensionMismatchError(f"prior {prior.shape} does not match image {B.shape}")
        self.params = params
        self.shape = B.shape
        self.pad = params.padding
        self.B = ic.pad_and_taper(B, self.pad)
        self.grad_B = ic.gradient(self.B)
        self.set_prior(prior)
        self.kernel = delta_kernel(params.kernel_size) if kernel is None else finalize_kernel(kernel)
        self.S = self.B.copy()
        self.history: list[IterationLog] = []

    def set_prior(self, prior) -> None:
        prior = np.asarray(prior, dtype=np.float64)
        if self.params.normalize_prior:
            inner = ic.gradient(ic.crop(self.B, self.pad)) if self.pad else self.grad_B
            prior = normalize_prior(prior, inner.gh, inner.gv)
        self.prior = np.pad(prior, self.pad) if self.pad else prior.copy()

    @property
    def sharp(self) -> np.ndarray:
        return ic.crop(self.S, self.pad)

    def objective(self, S, z: GradientField) -> IterationLog:
        p = self.params
        resid = ic.circular_convolve(S, self.kernel) - self.B
        fidelity = float(np.sum(resid**2))
        g = ic.gradient(S)
        event = float(p.alpha * (np.sum((g.gh - self.prior) ** 2) + np.sum((g.gv - self.prior) ** 2)))
        l0 = int(np.count_nonzero((z.gh != 0) | (z.gv != 0)))
        total = fidelity + event + p.beta * l0
        return IterationLog(len(self.history) + 1, fidelity, event, l0, total)

    def update_latent(self) -> GradientField:
        p = self.params
        S = self.B.copy()
        gamma = p.start_gamma
        z = GradientField(np.zeros_like(S), np.zeros_like(S))
        while gamma <= p.gamma_max:
            z = threshold_gradients(ic.gradient(S), p.beta, gamma)
            S = solve_latent(self.B, self.kernel, self.prior, z, p.alpha, gamma)
            gamma *= p.gamma_scale
        self.S = S
        return z

    def step(self) -> IterationLog:
        z = self.update_latent()
        k = estimate_kernel(ic.gradient(self.S), self.grad_B, self.params.sigma,
                            self.params.kernel_size)
        self.kernel = prune_kernel(k, self.params.kernel_prune)
        entry = self.objective(self.S, z)
        if not np.isfinite(entry.total):
            raise SolverDivergedError(f"objective became non-finite at iteration {entry.iter}")
        self.history.append(entry)
        log.debug("outer iteration %d: %s", entry.iter, entry)
        return entry


def deblur_blind(B, prior, params: DeblurParams | None = None) -> DeblurResult:
    params = params or DeblurParams()
    solver = BlindDeblurrer(B, prior, params)
    for _ in range(params.l_max):
        solver.step()
    return DeblurResult(solver.sharp, solver.kernel, list(solver.history))


# ---------------------------------------------------------------------------
# patch-wise (non-uniform) mode

def tile_starts(n: int, patch: int, overlap: int) -> list[int]:
    if n <= patch:
        return [0]
    stride = patch - overlap
    starts = list(range(0, n - patch, stride))
    starts.append(n - patch)
    return starts


def _ramp(length: int, overlap: int, lead: bool, trail: bool) -> np.ndarray:
    w = np.ones(length)
    if overlap > 0:
        r = (np.arange(length) + 0.5) / overlap
        if lead:
            w = np.minimum(w, r)
        if trail:
            w = np.minimum(w, r[::-1])
    return w


class PatchGrid:
    """Overlapping tiling of an image with linear feathering weights."""

    def __init__(self, shape: tuple[int, int], patch: int, overlap: int):
        self.shape = shape
        self.patch = patch
        self.overlap = overlap
        self.rows = tile_starts(shape[0], patch, overlap)
        self.cols = tile_starts(shape[1], patch, overlap)

    def boxes(self):
        for i, r in enumerate(self.rows):
            for j, c in enumerate(self.cols):
                yield i, j, (slice(r, min(r + self.patch, self.shape[0])),
                             slice(c, min(c + self.patch, self.shape[1])))

    def weight(self, i: int, j: int) -> np.ndarray:
        h = min(self.patch, self.shape[0])
        w = min(self.patch, self.shape[1])
        wr = _ramp(h, self.overlap, i > 0, i < len(self.rows) - 1)
        wc = _ramp(w, self.overlap, j > 0, j < len(self.cols) - 1)
        return np.outer(wr, wc)

    def blend(self, patches: dict) -> np.ndarray:
        acc = np.zeros(self.shape)
        norm = np.zeros(self.shape)
        for i, j, box in self.boxes():
            wgt = self.weight(i, j)
            acc[box] += wgt * patches[i, j]
            norm[box] += wgt
        return acc / norm


def check_patch_params(params: DeblurParams, patch: int, overlap: int) -> None:
    if patch < 2 * params.kernel_size:
        raise InvalidParameterError(
            f"patch {patch} must be at least twice the kernel size {params.kernel_size}")
    if not 0 <= overlap < patch / 2:
        raise InvalidParameterError(f"overlap {overlap} must lie in [0, patch/2)")


class NonUniformResult(NamedTuple):
    sharp: np.ndarray
    kernels: list  # kernels[i][j] for tile row i, column j
    grid: PatchGrid
    history: list


def deblur_nonuniform(B, prior, params: DeblurParams | None = None, patch: int = 128,
                      overlap: int = 16) -> NonUniformResult:
    params = params or DeblurParams()
    B = ic.as_image(B)
    check_patch_params(params, patch, overlap)
    if prior is None:
        prior = np.zeros_like(B)
    grid = PatchGrid(B.shape, patch, overlap)
    solvers = {(i, j): BlindDeblurrer(B[box], np.asarray(prior)[box], params)
               for i, j, box in grid.boxes()}
    history = []
    for _ in range(params.l_max):
        history.append({key: s.step() for key, s in solvers.items()})
    sharp = grid.blend({key: s.sharp for key, s in solvers.items()})
    kernels = [[solvers[i, j].kernel for j in range(len(grid.cols))] for i in range(len(grid.rows))]
    return NonUniformResult(sharp, kernels, grid, history)


# ---------------------------------------------------------------------------
# export

def write_kernel_text(path, k) -> None:
    np.savetxt(path, np.asarray(k), fmt="%.17g", delimiter=" ")


def read_kernel_text(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path))


def write_kernel_pgm(path, k) -> None:
    k = np.asarray(k, dtype=np.float64)
    peak = k.max()
    ic.write_pgm(path, k / peak if peak > 0 else k)


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("iter,fidelity,event_term,l0_count,total\n")
        for e in history:
            fh.write(f"{e.iter},{e.fidelity:.10g},{e.event_term:.10g},{e.l0_count},{e.total:.10g}\n")

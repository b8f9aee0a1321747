"""Joint reconstruction of a sharp frame and a denoised event stream.

Each outer iteration refreshes the latent image and kernel, then uses the
gradient of the new image to re-select events from the raw stream.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, asdict
from typing import NamedTuple

import numpy as np

from . import imagecore as ic
from .deblur import BlindDeblurrer, DeblurParams, PatchGrid, check_patch_params
from .denoise import DenoiseParams, denoise
from .errors import DimensionMismatchError, InvalidParameterError
from .events import EventStream, exposure_window_for_frame, integrate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class JointParams:
    deblur: DeblurParams = field(default_factory=DeblurParams)
    denoise: DenoiseParams = field(default_factory=DenoiseParams)
    tau: int = 6000  # event-integration window, µs, centred on the frame timestamp
    c: float = 1.0
    reuse_denoised_prior: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidParameterError(f"tau must be positive, got {self.tau}")
        if not self.c > 0:
            raise InvalidParameterError(f"c must be positive, got {self.c}")

    def as_dict(self) -> dict:
        return asdict(self)


class IterationStats(NamedTuple):
    objective: float
    retained: int


@dataclass
class JointResult:
    sharp: np.ndarray
    kernel: object  # 2-D array, or list of lists of arrays in patch mode
    denoised: EventStream
    per_iteration: list
    iterates: list = field(default_factory=list)  # latent image after each iteration
    denoised_iterates: list = field(default_factory=list)
    prior: np.ndarray | None = None
    grid: PatchGrid | None = None


def event_prior(raw: EventStream, t_b, params: JointParams) -> tuple[np.ndarray, int]:
    """Intensity-change map over the window centred on ``t_b``, and its event count."""
    _, t_end = exposure_window_for_frame(t_b, params.tau)
    prior = integrate(raw, t_end, params.tau, params.c)
    lo = np.searchsorted(raw.t, t_end - params.tau, side="right")
    hi = np.searchsorted(raw.t, t_end, side="right")
    return prior, int(hi - lo)


def _prepare(B, raw: EventStream, t_b, params: JointParams):
    B = ic.as_image(B)
    if B.shape != raw.shape:
        raise DimensionMismatchError(f"frame {B.shape} does not match sensor {raw.shape}")
    prior, n_window = event_prior(raw, t_b, params)
    dparams = params.deblur
    if n_window == 0:
        warnings.warn("no events in the exposure window; falling back to L0-only deblurring",
                      RuntimeWarning, stacklevel=3)
        dparams = dparams.replace(alpha=0.0)
    return B, prior, dparams


def _refresh_prior(denoised: EventStream, t_b, params: JointParams):
    prior, n = event_prior(denoised, t_b, params)
    return prior if n else None


def reconstruct(B, raw: EventStream, t_b, params: JointParams | None = None) -> JointResult:
    params = params or JointParams()
    B, prior, dparams = _prepare(B, raw, t_b, params)
    solver = BlindDeblurrer(B, prior, dparams)
    result = JointResult(B, None, raw, [], prior=prior)
    for _ in range(dparams.l_max):
        entry = solver.step()
        sharp = solver.sharp
        kept = denoise(raw, ic.gradient(sharp), params.denoise)
        result.per_iteration.append(IterationStats(entry.total, len(kept)))
        result.iterates.append(sharp)
        result.denoised_iterates.append(kept)
        log.info("iteration %d: objective %.6g, retained %d events", entry.iter, entry.total, len(kept))
        if params.reuse_denoised_prior:
            new_prior = _refresh_prior(kept, t_b, params)
            if new_prior is not None:
                solver.set_prior(new_prior)
    result.sharp = solver.sharp
    result.kernel = solver.kernel
    result.denoised = result.denoised_iterates[-1]
    result.history = solver.history
    return result


def reconstruct_nonuniform(B, raw: EventStream, t_b, params: JointParams | None = None,
                           patch: int = 128, overlap: int = 16) -> JointResult:
    params = params or JointParams()
    check_patch_params(params.deblur, patch, overlap)
    B, prior, dparams = _prepare(B, raw, t_b, params)
    grid = PatchGrid(B.shape, patch, overlap)
    solvers = {(i, j): BlindDeblurrer(B[box], prior[box], dparams) for i, j, box in grid.boxes()}
    result = JointResult(B, None, raw, [], prior=prior, grid=grid)
    for it in range(dparams.l_max):
        total = sum(s.step().total for s in solvers.values())
        sharp = grid.blend({key: s.sharp for key, s in solvers.items()})
        kept = denoise(raw, ic.gradient(sharp), params.denoise)
        result.per_iteration.append(IterationStats(total, len(kept)))
        result.iterates.append(sharp)
        result.denoised_iterates.append(kept)
        log.info("iteration %d: objective %.6g, retained %d events", it + 1, total, len(kept))
        if params.reuse_denoised_prior:
            new_prior = _refresh_prior(kept, t_b, params)
            if new_prior is not None:
                for i, j, box in grid.boxes():
                    solvers[i, j].set_prior(new_prior[box])
    result.sharp = result.iterates[-1]
    result.kernel = [[solvers[i, j].kernel for j in range(len(grid.cols))] for i in range(len(grid.rows))]
    result.denoised = result.denoised_iterates[-1]
    return result

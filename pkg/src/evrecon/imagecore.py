"""Image rasters, periodic gradients and the FFT substrate used by the solvers.

All operators assume circular boundary conditions, which is what makes the
latent-image and kernel updates closed-form in the Fourier domain.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from PIL import Image as PILImage

from .errors import DimensionMismatchError, InvalidParameterError


@dataclass(frozen=True)
class GradientField:
    """Forward differences ``gh = I[:, x+1] - I[:, x]`` and ``gv = I[y+1, :] - I[y, :]``."""

    gh: np.ndarray
    gv: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.gh.shape

    def magnitude_sq(self) -> np.ndarray:
        return self.gh**2 + self.gv**2

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.magnitude_sq())

    def __add__(self, other: "GradientField") -> "GradientField":
        return GradientField(self.gh + other.gh, self.gv + other.gv)


def as_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise InvalidParameterError(f"expected a non-empty 2-D image, got shape {img.shape}")
    return img


def gradient(img) -> GradientField:
    img = as_image(img)
    return GradientField(np.roll(img, -1, axis=1) - img, np.roll(img, -1, axis=0) - img)


def divergence_adjoint(gh: np.ndarray, gv: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`gradient` applied to ``(gh, gv)``, i.e. ``Dh^T gh + Dv^T gv``."""
    return (np.roll(gh, 1, axis=1) - gh) + (np.roll(gv, 1, axis=0) - gv)


def fft2(img) -> np.ndarray:
    return np.fft.fft2(img)


def ifft2(spec) -> np.ndarray:
    return np.fft.ifft2(spec)


def real_part(spec_inverse: np.ndarray) -> np.ndarray:
    """Drop the imaginary residue of an inverse transform of a Hermitian spectrum."""
    out = np.real(spec_inverse)
    out = np.where(np.isfinite(out), out, 0.0)
    return out


@lru_cache(maxsize=32)
def _derivative_spectra(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    dh = np.zeros((height, width))
    dh[0, 0] = -1.0
    dh[0, -1 % width] += 1.0
    dv = np.zeros((height, width))
    dv[0, 0] = -1.0
    dv[-1 % height, 0] += 1.0
    Dh, Dv = np.fft.fft2(dh), np.fft.fft2(dv)
    Dh.flags.writeable = False
    Dv.flags.writeable = False
    return Dh, Dv


def derivative_spectra(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Transfer functions of the periodic forward differences.

    ``fft2(gradient(I).gh) == Dh * fft2(I)``; along a row ``Dh[k] = exp(2j*pi*k/W) - 1``.
    """
    if width < 1 or height < 1:
        raise InvalidParameterError("spectrum dimensions must be >= 1")
    return _derivative_spectra(int(width), int(height))


def fhat(theta0, theta1) -> np.ndarray:
    """``conj(Dh) F(theta0) + conj(Dv) F(theta1)`` for spatial-domain inputs."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    theta1 = np.asarray(theta1, dtype=np.float64)
    if theta0.shape != theta1.shape or theta0.ndim != 2:
        raise DimensionMismatchError(f"fhat shapes differ: {theta0.shape} vs {theta1.shape}")
    Dh, Dv = derivative_spectra(theta0.shape[1], theta0.shape[0])
    return np.conj(Dh) * np.fft.fft2(theta0) + np.conj(Dv) * np.fft.fft2(theta1)


def gradient_energy_spectrum(width: int, height: int) -> np.ndarray:
    """``|Dh|^2 + |Dv|^2``, the transfer function of the negative Laplacian."""
    Dh, Dv = derivative_spectra(width, height)
    return np.abs(Dh) ** 2 + np.abs(Dv) ** 2


def psf2otf(kernel, shape: tuple[int, int]) -> np.ndarray:
    """Transfer function of ``kernel`` (centre at ``size // 2``) zero-padded to ``shape``."""
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    if kh > shape[0] or kw > shape[1]:
        raise DimensionMismatchError(f"kernel {kernel.shape} larger than image {shape}")
    buf = np.zeros(shape)
    buf[:kh, :kw] = kernel
    buf = np.roll(buf, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(buf)


def otf2psf(otf: np.ndarray, size: int) -> np.ndarray:
    """Inverse of :func:`psf2otf`: the centred ``size x size`` window around the origin."""
    full = np.real(np.fft.ifft2(otf))
    full = np.roll(full, (size // 2, size // 2), axis=(0, 1))
    return full[:size, :size].copy()


def circular_convolve(img, kernel) -> np.ndarray:
    img = as_image(img)
    return np.real(np.fft.ifft2(np.fft.fft2(img) * psf2otf(kernel, img.shape)))


def _taper_axis(img: np.ndarray, pad: int, axis: int) -> np.ndarray:
    """Replicate-pad along one axis, then cosine-blend the pad band so it wraps smoothly."""
    widths = [(0, 0), (0, 0)]
    widths[axis] = (pad, pad)
    out = np.pad(img, widths, mode="edge")
    n = out.shape[axis]
    first = np.take(img, [0], axis=axis)
    last = np.take(img, [-1], axis=axis)
    # the wrapped band runs from the last image sample (right/bottom pad) into
    # the first one (left/top pad); s in (0, 1) along that band
    s = (np.arange(2 * pad) + 0.5) / (2 * pad)
    w = 0.5 * (1 - np.cos(np.pi * s))
    shape = [1, 1]
    shape[axis] = 2 * pad
    band = last + (first - last) * w.reshape(shape)
    idx_right = np.arange(n - pad, n)
    idx_left = np.arange(0, pad)
    if axis == 0:
        out[idx_right, :] = band[:pad]
        out[idx_left, :] = band[pad:]
    else:
        out[:, idx_right] = band[:, :pad]
        out[:, idx_left] = band[:, pad:]
    return out


def pad_and_taper(img, pad: int) -> np.ndarray:
    """Pad by ``pad`` pixels per side so the result is close to periodic."""
    img = as_image(img)
    if pad < 0:
        raise InvalidParameterError(f"pad must be >= 0, got {pad}")
    if pad == 0:
        return img.copy()
    return _taper_axis(_taper_axis(img, pad, 0), pad, 1)


def crop(img: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return img.copy()
    return img[pad:-pad, pad:-pad].copy()


# ---------------------------------------------------------------------------
# grayscale I/O, pixels mapped linearly to [0, 1]

def read_image(path) -> np.ndarray:
    path = os.fspath(path)
    if path.lower().endswith((".pgm", ".pnm")):
        return read_pgm(path)
    with PILImage.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return arr / (65535.0 if arr.max() > 255 else 255.0)
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_image(path, img, bits: int = 8) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if path.lower().endswith((".pgm", ".pnm")):
        write_pgm(path, img, bits=bits)
        return
    PILImage.fromarray(quantize(img, 8)).save(path)


def quantize(img, bits: int = 8) -> np.ndarray:
    maxval = (1 << bits) - 1
    q = np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * maxval)
    return q.astype(np.uint8 if bits == 8 else np.uint16)


def _pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens, pos = [], 2
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b"\r", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise InvalidParameterError(f"{path}: not a binary PGM")
    (w, h, maxval), pos = _pgm_tokens(data, 3)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return arr.astype(np.float64) / maxval


def write_pgm(path, img, bits: int = 8) -> None:
    if bits not in (8, 16):
        raise InvalidParameterError("PGM depth must be 8 or 16 bits")
    q = quantize(img, bits)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{(1 << bits) - 1}\n".encode("ascii"))
        fh.write(q.astype(">u2").tobytes() if bits == 16 else q.tobytes())

"""Synthetic ground truth: test patterns, blur, event simulation and noise injection."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import imagecore as ic
from .deblur import finalize_kernel, write_kernel_text
from .errors import InvalidParameterError
from .events import EventStream, write_events

DAVIS346 = (346, 260)
LOG_EPS = 1e-3


@dataclass(frozen=True)
class MotionSpec:
    """Constant image-plane velocity in pixels per millisecond over ``duration`` ms."""

    vh: float
    vv: float
    duration: float

    def __post_init__(self):
        if not (np.isfinite(self.vh) and np.isfinite(self.vv) and np.isfinite(self.duration)):
            raise InvalidParameterError("motion must be finite")
        if not self.duration > 0:
            raise InvalidParameterError(f"duration must be positive, got {self.duration}")


@dataclass(frozen=True, eq=False)
class LabeledStream:
    stream: EventStream
    signal: np.ndarray  # True for signal events, False for injected noise

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=bool)
        if sig.shape != (len(self.stream),):
            raise InvalidParameterError("one label per event required")
        object.__setattr__(self, "signal", sig)

    def __len__(self):
        return len(self.stream)


# ---------------------------------------------------------------------------
# kernels and blur

def motion_kernel(length: float, angle_deg: float = 0.0, size: int | None = None) -> np.ndarray:
    """Linear motion-blur kernel of ``length`` pixels, supersampled and normalized."""
    if length <= 1:
        size = size or 1
        k = np.zeros((size, size))
        k[size // 2, size // 2] = 1.0
        return k
    if size is None:
        size = int(np.ceil(length)) | 1
    k = np.zeros((size, size))
    c = size // 2
    th = np.deg2rad(angle_deg)
    n = int(np.ceil(length)) * 16
    s = (np.arange(n) + 0.5) / n * length - length / 2
    xs = c + s * np.cos(th)
    ys = c - s * np.sin(th)
    x0, y0 = np.floor(xs).astype(int), np.floor(ys).astype(int)
    fx, fy = xs - x0, ys - y0
    for dx, dy, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < size) & (yi >= 0) & (yi < size)
        np.add.at(k, (yi[ok], xi[ok]), wgt[ok])
    return finalize_kernel(k)


def box_kernel(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / (size * size))


def blur_synthesize(S, k) -> np.ndarray:
    """Circular convolution ``S * k`` clamped to [0, 1]."""
    return np.clip(ic.circular_convolve(S, k), 0.0, 1.0)


# ---------------------------------------------------------------------------
# event simulation

def translate(S, dh: float, dv: float) -> np.ndarray:
    """Bilinear periodic translation so that ``out(x, y) = S(x - dh, y - dv)``."""
    return ndimage.shift(np.asarray(S, dtype=np.float64), (dv, dh), order=1, mode="grid-wrap")


def simulate_events(S, motion: MotionSpec, c: float, dt: float = 0.05,
                    t_ref: float = 0.0) -> EventStream:
    """Idealized DVS: threshold crossings of log intensity while ``S`` translates.

    ``S`` is the scene at time ``t_ref`` (ms); frames are sampled every ``dt`` ms
    over ``[0, motion.duration]`` and events are stamped with the sample time.
    Each pixel keeps its own reference level, so residuals carry over between
    samples and counts match the integrated log change.
    """
    S = ic.as_image(S)
    if not c > 0:
        raise InvalidParameterError(f"contrast threshold must be positive, got {c}")
    if not 0 < dt <= motion.duration:
        raise InvalidParameterError(f"dt must lie in (0, duration], got {dt}")
    height, width = S.shape
    n_steps = int(round(motion.duration / dt))

    def log_frame(t_ms):
        return np.log(translate(S, motion.vh * (t_ms - t_ref), motion.vv * (t_ms - t_ref)) + LOG_EPS)

    ref = log_frame(0.0)
    ts, xs, ys, ps = [], [], [], []
    for step in range(1, n_steps + 1):
        t_ms = step * dt
        diff = log_frame(t_ms) - ref
        n = np.floor(np.abs(diff) / c).astype(np.int64)
        hit = np.flatnonzero(n)
        if hit.size == 0:
            continue
        pol = np.sign(diff.ravel()[hit]).astype(np.int8)
        counts = n.ravel()[hit]
        ref.ravel()[hit] += pol * counts * c
        idx = np.repeat(hit, counts)
        ts.append(np.full(idx.size, int(round(t_ms * 1000)), dtype=np.int64))
        xs.append(idx % width)
        ys.append(idx // width)
        ps.append(np.repeat(pol, counts))
    if not ts:
        return EventStream.empty(width, height)
    return EventStream(width, height, np.concatenate(ts), np.concatenate(xs),
                       np.concatenate(ys), np.concatenate(ps))


def inject_noise(stream: EventStream, ratio: float, seed: int = 0,
                 t_range: tuple[int, int] | None = None) -> LabeledStream:
    """Add ``floor(ratio * len(stream))`` uniform random events, labelled as noise."""
    if not ratio >= 0:
        raise InvalidParameterError(f"noise ratio must be >= 0, got {ratio}")
    n_noise = int(np.floor(ratio * len(stream)))
    if n_noise == 0:
        return LabeledStream(stream, np.ones(len(stream), dtype=bool))
    if t_range is None:
        t_range = stream.span()
    rng = np.random.default_rng(seed)
    x = rng.integers(0, stream.width, n_noise)
    y = rng.integers(0, stream.height, n_noise)
    t = rng.integers(t_range[0], t_range[1], n_noise, endpoint=True)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), n_noise)
    return _merge(stream, t, x, y, p)


def inject_hot_pixels(stream: EventStream, n_pixels: int, rate_hz: float, seed: int = 0,
                      t_range: tuple[int, int] | None = None) -> LabeledStream:
    """Add fixed pixels that fire at a constant high rate (alternating polarity)."""
    if t_range is None:
        t_range = stream.span()
    rng = np.random.default_rng(seed)
    pix = rng.choice(stream.width * stream.height, size=n_pixels, replace=False)
    period = max(int(round(1e6 / rate_hz)), 1)
    t0 = np.arange(t_range[0], t_range[1] + 1, period)
    t = np.tile(t0, n_pixels)
    pix = np.repeat(pix, t0.size)
    p = np.where(np.arange(t.size) % 2 == 0, 1, -1)
    return _merge(stream, t, pix % stream.width, pix // stream.width, p)


def _merge(stream: EventStream, t, x, y, p) -> LabeledStream:
    t_all = np.concatenate([stream.t, t])
    order = np.argsort(t_all, kind="stable")
    merged = EventStream(stream.width, stream.height, t_all[order],
                         np.concatenate([stream.x, x])[order],
                         np.concatenate([stream.y, y])[order],
                         np.concatenate([stream.p, p])[order])
    labels = np.concatenate([np.ones(len(stream), bool), np.zeros(len(t), bool)])[order]
    return LabeledStream(merged, labels)


# ---------------------------------------------------------------------------
# test patterns (8-bit grey levels so the on-disk bundle is exact)

SHAPE_INKS = (20 / 255.0, 230 / 255.0)
SHAPE_BACKGROUND = 60 / 255.0


def _supersample(render, width: int, height: int, factor: int = 4) -> np.ndarray:
    """Render at ``factor`` x resolution and box-average down (anti-aliased edges)."""
    yy, xx = np.mgrid[0:height * factor, 0:width * factor]
    big = render((xx + 0.5) / factor - 0.5, (yy + 0.5) / factor - 0.5)
    return big.reshape(height, factor, width, factor).mean(axis=(1, 3))


def pattern_shapes(width: int, height: int, rng, margin: int = 12, count: int = 200,
                   radius: tuple[int, int] = (3, 12)) -> np.ndarray:
    """Overlapping discs, boxes, triangles and rings, dark or bright on a grey ground."""
    specs = []
    r_cap = max(1, (min(width, height) - 2 * margin - 1) // 2)
    for _ in range(count):
        level = SHAPE_INKS[int(rng.integers(0, len(SHAPE_INKS)))]
        kind = int(rng.integers(0, 4))
        r = min(int(rng.integers(radius[0], radius[1] + 1)), r_cap)
        cx = int(rng.integers(margin + r, width - margin - r))
        cy = int(rng.integers(margin + r, height - margin - r))
        rh = int(rng.integers(max(2, r // 3), r + 1))
        specs.append((kind, r, rh, cx, cy, level))

    def render(xx, yy):
        img = np.full(xx.shape, SHAPE_BACKGROUND)
        for kind, r, rh, cx, cy, level in specs:
            dx, dy = xx - cx, yy - cy
            if kind == 0:
                m = dx**2 + dy**2 <= r * r
            elif kind == 1:
                m = (np.abs(dx) <= r) & (np.abs(dy) <= rh)
            elif kind == 2:
                m = (np.abs(dy) <= r) & (np.abs(dx) <= (dy + r) / 2)
            else:
                d2 = dx**2 + dy**2
                m = (d2 <= r * r) & (d2 >= (r / 2) ** 2)
            img[m] = level
        return img

    return _supersample(render, width, height)


def pattern_sparse_shapes(width: int, height: int, rng) -> np.ndarray:
    return pattern_shapes(width, height, rng, count=80)


def pattern_bars(width: int, height: int, rng, margin: int = 24) -> np.ndarray:
    img = np.full((height, width), 40 / 255.0)
    x = margin
    while x < width - margin - 4:
        w = int(rng.integers(2, 12))
        img[margin:height - margin, x:x + w] = rng.integers(120, 236) / 255.0
        x += w + int(rng.integers(3, 14))
    return img


def pattern_glyphs(width: int, height: int, rng, margin: int = 24) -> np.ndarray:
    """Rows of block 'letters' built from random strokes on a 3x5 grid."""
    img = np.full((height, width), 220 / 255.0)
    ink = 30 / 255.0
    cell, stroke = 14, 3
    for top in range(margin, height - margin - 5 * 4, 30):
        for left in range(margin, width - margin - 3 * 4, cell + 4):
            glyph = rng.random((5, 3)) < 0.5
            for gy, gx in zip(*np.nonzero(glyph)):
                y0, x0 = top + gy * 4, left + gx * 4
                img[y0:y0 + stroke + 1, x0:x0 + stroke + 1] = ink
    return img


PATTERNS = {"shapes": pattern_shapes, "sparse_shapes": pattern_sparse_shapes, "bars": pattern_bars, "glyphs": pattern_glyphs}


def make_pattern(name: str, width: int, height: int, seed: int = 0) -> np.ndarray:
    try:
        fn = PATTERNS[name]
    except KeyError:
        raise InvalidParameterError(f"unknown pattern {name!r}; choose from {sorted(PATTERNS)}") from None
    return fn(width, height, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# fixture bundles

@dataclass
class Case:
    name: str
    sharp: np.ndarray
    blurry: np.ndarray
    kernel: np.ndarray
    labeled: LabeledStream
    t_b: int
    meta: dict = field(default_factory=dict)

    @property
    def stream(self) -> EventStream:
        return self.labeled.stream

    def write(self, out_dir) -> str:
        d = os.path.join(out_dir, self.name)
        os.makedirs(d, exist_ok=True)
        ic.write_pgm(os.path.join(d, "sharp.pgm"), self.sharp)
        ic.write_pgm(os.path.join(d, "blurry.pgm"), self.blurry)
        write_events(os.path.join(d, "events.csv"), self.stream)
        write_events(os.path.join(d, "labels.csv"), self.stream, self.labeled.signal, "signal")
        write_kernel_text(os.path.join(d, "kernel.txt"), self.kernel)
        write_meta(os.path.join(d, "meta.txt"), self.meta)
        return d


def write_meta(path, meta: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        for key in sorted(meta):
            fh.write(f"{key}={meta[key]}\n")


def read_meta(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#") and "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
    return out


def make_case(name: str, pattern: str = "shapes", geometry: tuple[int, int] = DAVIS346,
              motion: MotionSpec | None = None, kernel=None, c: float = 0.25,
              tau: float = 6.0, noise_ratio: float = 0.5, seed: int = 0,
              dt: float = 0.05, exposure: float = 36.0, out_dir=None) -> Case:
    """Deterministic end-to-end fixture.

    The sharp frame is the scene at the middle of the motion interval and
    the blurry frame integrates ``exposure`` ms of that motion (a linear
    motion kernel unless ``kernel`` is given). ``tau`` is the event window
    recommended for the prior and is only recorded in the metadata. Times
    are in ms except ``Case.t_b``, which is in µs.
    """
    width, height = geometry
    if motion is None:
        motion = MotionSpec(0.25, 0.0, 20.0)
    if not tau > 0 or not exposure > 0:
        raise InvalidParameterError("tau and exposure must be positive")
    sharp = ic.quantize(make_pattern(pattern, width, height, seed)).astype(np.float64) / 255.0
    if kernel is None:
        length = np.hypot(motion.vh, motion.vv) * exposure
        angle = np.rad2deg(np.arctan2(-motion.vv, motion.vh))
        kernel = motion_kernel(length, angle, size=int(np.ceil(length)) | 1)
    kernel = finalize_kernel(kernel)
    blurry = ic.quantize(blur_synthesize(sharp, kernel)).astype(np.float64) / 255.0
    t_mid = motion.duration / 2
    clean = simulate_events(sharp, motion, c, dt=dt, t_ref=t_mid)
    labeled = inject_noise(clean, noise_ratio, seed=seed + 1,
                           t_range=(0, int(round(motion.duration * 1000))))
    t_b = int(round(t_mid * 1000))
    meta = dict(name=name, pattern=pattern, width=width, height=height, vh=motion.vh,
                vv=motion.vv, duration_ms=motion.duration, c=c, tau_ms=tau,
                exposure_ms=exposure, noise_ratio=noise_ratio, seed=seed, dt_ms=dt,
                t_b_us=t_b, kernel_size=kernel.shape[0], signal_events=len(clean),
                noise_events=len(labeled) - len(clean))
    case = Case(name, sharp, blurry, kernel, labeled, t_b, meta)
    if out_dir is not None:
        case.write(out_dir)
    return case


def make_two_region_case(name: str = "two_region", geometry: tuple[int, int] = DAVIS346,
                         split: float = 0.4, speed: float = 0.25, exposure: float = 36.0,
                         duration: float = 20.0, c: float = 0.25, noise_ratio: float = 0.0,
                         seed: int = 0, dt: float = 0.05) -> Case:
    """Moving foreground (columns left of ``split * width``) over a static background.

    The foreground is blurred by a horizontal motion kernel and fires events;
    the background is sharp in the frame and silent. ``meta['foreground']``
    holds the foreground column count.
    """
    width, height = geometry
    xs = int(round(split * width))
    if not 0 < xs < width:
        raise InvalidParameterError(f"split must leave both regions non-empty, got {split}")
    sharp = ic.quantize(make_pattern("shapes", width, height, seed)).astype(np.float64) / 255.0
    motion = MotionSpec(speed, 0.0, duration)
    length = speed * exposure
    kernel = motion_kernel(length, 0.0, size=int(np.ceil(length)) | 1)
    moving = blur_synthesize(sharp, kernel)
    blurry = sharp.copy()
    blurry[:, :xs] = moving[:, :xs]
    blurry = ic.quantize(blurry).astype(np.float64) / 255.0
    t_mid = duration / 2
    events = simulate_events(sharp, motion, c, dt=dt, t_ref=t_mid)
    events = events.select(events.x < xs)
    labeled = inject_noise(events, noise_ratio, seed=seed + 1,
                           t_range=(0, int(round(duration * 1000))))
    t_b = int(round(t_mid * 1000))
    meta = dict(name=name, pattern="shapes", width=width, height=height, vh=speed, vv=0.0,
                duration_ms=duration, c=c, exposure_ms=exposure, noise_ratio=noise_ratio,
                seed=seed, dt_ms=dt, t_b_us=t_b, kernel_size=kernel.shape[0],
                foreground=xs, signal_events=len(events),
                noise_events=len(labeled) - len(events))
    return Case(name, sharp, blurry, kernel, labeled, t_b, meta)

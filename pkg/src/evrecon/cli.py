"""Command-line front end: ``evrecon simulate|deblur|denoise|reconstruct|evaluate``.

Durations on the command line (tau, nu, frame time) are in milliseconds and
are converted to integer microseconds before they reach the library.
Every subcommand accepts ``--config FILE`` with ``key=value`` lines; keys are
flag names (dashes or underscores) and explicit flags override them.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import imagecore as ic
from .deblur import (DeblurParams, check_patch_params, deblur_blind, deblur_nonuniform,
                     read_kernel_text, write_history_csv, write_kernel_pgm, write_kernel_text)
from .denoise import DenoiseParams, denoise, nn_filter
from .errors import EvReconError, InvalidParameterError
from .events import EventStream, integrate, exposure_window_for_frame, read_events, write_events
from .joint import JointParams, reconstruct, reconstruct_nonuniform
from .metrics import classify_report, kernel_similarity, mse, ssim
from .synth import DAVIS346, PATTERNS, LabeledStream, MotionSpec, make_case, read_meta, write_meta

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("evrecon")


class UsageError(Exception):
    pass


def ms_to_us(ms: float) -> int:
    return int(round(float(ms) * 1000))


# ---------------------------------------------------------------------------
# argument definitions

def _add_deblur_args(p):
    g = p.add_argument_group("deblurring")
    g.add_argument("--alpha", type=float, default=0.24, help="event-prior weight")
    g.add_argument("--beta", type=float, default=0.004, help="L0 gradient weight")
    g.add_argument("--sigma", type=float, default=1.0, help="kernel ridge weight")
    g.add_argument("--gamma-max", type=float, default=1e5)
    g.add_argument("--gamma-scale", type=float, default=2.0)
    g.add_argument("--l-max", type=int, default=5, help="outer iterations")
    g.add_argument("--kernel-size", type=int, default=25)
    g.add_argument("--pad", type=int, default=None, help="boundary padding (default 2 x kernel size)")
    g.add_argument("--kernel-prune", type=float, default=0.05)
    g.add_argument("--no-prior-normalization", dest="normalize_prior", action="store_false")
    g.add_argument("--nonuniform", action="store_true", help="patch-wise deblurring")
    g.add_argument("--patch", type=int, default=128)
    g.add_argument("--overlap", type=int, default=16)


def _add_event_args(p):
    g = p.add_argument_group("events")
    g.add_argument("--tau", type=float, default=6.0, help="event window for the prior, ms")
    g.add_argument("--c", type=float, default=None, help="contrast threshold (default 1, or the fixture's)")
    g.add_argument("--t-b", type=float, default=None, help="frame timestamp, ms")


def _add_denoise_args(p):
    g = p.add_argument_group("denoising")
    g.add_argument("--omega", type=float, default=0.05, help="gradient supervision level")
    g.add_argument("--mu", type=int, default=2, help="spatial radius, px")
    g.add_argument("--nu", type=float, default=5.0, help="temporal radius, ms")
    g.add_argument("--min-support", type=int, default=2, help="NN-filter support")
    g.add_argument("--raw-gradient", dest="normalize", action="store_false",
                   help="supervise with the unnormalized gradient magnitude")


def _add_io(p, *names):
    for name in names:
        p.add_argument(f"--{name}", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evrecon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic fixture bundle")
    p.add_argument("--out", required=True, help="output directory (created)")
    p.add_argument("--name", default="shapes")
    p.add_argument("--pattern", default="shapes", choices=sorted(PATTERNS))
    p.add_argument("--width", type=int, default=DAVIS346[0])
    p.add_argument("--height", type=int, default=DAVIS346[1])
    p.add_argument("--vh", type=float, default=0.25, help="px/ms")
    p.add_argument("--vv", type=float, default=0.0, help="px/ms")
    p.add_argument("--duration", type=float, default=20.0, help="ms")
    p.add_argument("--exposure", type=float, default=36.0, help="frame exposure, ms")
    p.add_argument("--tau", type=float, default=6.0, help="recommended prior window, ms")
    p.add_argument("--c", type=float, default=0.25)
    p.add_argument("--dt", type=float, default=0.05, help="simulation step, ms")
    p.add_argument("--noise-ratio", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("deblur", help="event-regularized blind deblurring only")
    _add_io(p, "fixture", "blurry", "events", "out")
    _add_event_args(p)
    _add_deblur_args(p)

    p = sub.add_parser("denoise", help="gradient-supervised denoising only")
    _add_io(p, "fixture", "events", "image", "out")
    p.add_argument("--nn-filter", action="store_true", help="run the nearest-neighbour baseline instead")
    p.add_argument("--write-labels", action="store_true", help="also write t_us,x,y,p,kept for every raw event")
    _add_denoise_args(p)

    p = sub.add_parser("reconstruct", help="joint deblurring and denoising")
    _add_io(p, "fixture", "blurry", "events", "out")
    _add_event_args(p)
    _add_deblur_args(p)
    _add_denoise_args(p)
    p.add_argument("--reuse-denoised-prior", action="store_true",
                   help="re-integrate the prior from the denoised events each iteration")
    p.add_argument("--snapshots", action="store_true", help="write per-iteration images and events")

    p = sub.add_parser("evaluate", help="metrics CSV (case,mse,ssim,tpr,fpr,ppv,acc,kernel_sim)")
    p.add_argument("--pair", nargs=2, action="append", default=[], metavar=("FIXTURE", "RESULT"),
                   help="fixture bundle and result directory; repeatable")
    _add_io(p, "reference", "image", "kernel", "true-kernel", "labels", "denoised", "name", "out")

    for sp in sub.choices.values():
        sp.add_argument("--config", default=None, help="key=value defaults file (flags win)")
    return parser


# ---------------------------------------------------------------------------
# config handling

def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _convert(action, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        flag = raw.lower() in ("1", "true", "yes", "on")
        if not flag and raw.lower() not in ("0", "false", "no", "off"):
            raise UsageError(f"{action.dest}: expected a boolean, got {raw!r}")
        # store_false flags keep the positive dest name; the config value is the dest value
        return flag
    if action.nargs not in (None, "?"):
        raise UsageError(f"{action.dest} cannot be set from a config file")
    try:
        return action.type(raw) if action.type else raw
    except ValueError:
        raise UsageError(f"{action.dest}: bad value {raw!r}") from None


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        try:
            cfg = read_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        unknown = sorted(set(cfg) - set(actions))
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        sub.set_defaults(**{k: _convert(actions[k], v) for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# helpers

def _require_file(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{what} file not found: {path}")
    return path


def _fill_from_fixture(args, *fields):
    """Default blurry/events/t_b/c from a fixture bundle when --fixture is given."""
    if not getattr(args, "fixture", None):
        return
    d = args.fixture
    if not os.path.isdir(d):
        raise UsageError(f"fixture directory not found: {d}")
    meta = read_meta(os.path.join(d, "meta.txt")) if os.path.isfile(os.path.join(d, "meta.txt")) else {}
    files = {"blurry": "blurry.pgm", "events": "events.csv", "image": "sharp.pgm"}
    for f in fields:
        if f in files and getattr(args, f, None) is None:
            setattr(args, f, os.path.join(d, files[f]))
    if "t_b" in fields and args.t_b is None and "t_b_us" in meta:
        args.t_b = int(meta["t_b_us"]) / 1000.0
    if "c" in fields and args.c is None and "c" in meta:
        args.c = float(meta["c"])


def deblur_params(args) -> DeblurParams:
    return DeblurParams(alpha=args.alpha, beta=args.beta, sigma=args.sigma,
                        gamma_max=args.gamma_max, gamma_scale=args.gamma_scale,
                        l_max=args.l_max, kernel_size=args.kernel_size, pad=args.pad,
                        normalize_prior=args.normalize_prior, kernel_prune=args.kernel_prune)


def denoise_params(args) -> DenoiseParams:
    return DenoiseParams(omega=args.omega, mu=args.mu, nu=ms_to_us(args.nu),
                         normalize=args.normalize, min_support=args.min_support)


def _effective(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "verbose")}


def _write_meta(out, args, extra=None):
    meta = _effective(args)
    meta.update(extra or {})
    write_meta(os.path.join(out, "meta.txt"), meta)


def _write_kernels(out, kernel):
    if isinstance(kernel, list):
        for i, row in enumerate(kernel):
            for j, k in enumerate(row):
                write_kernel_text(os.path.join(out, f"kernel_{i}_{j}.txt"), k)
                write_kernel_pgm(os.path.join(out, f"kernel_{i}_{j}.pgm"), k)
    else:
        write_kernel_text(os.path.join(out, "kernel.txt"), kernel)
        write_kernel_pgm(os.path.join(out, "kernel.pgm"), kernel)


def _write_image(out, name, img):
    ic.write_pgm(os.path.join(out, name + ".pgm"), img, bits=16)
    ic.write_image(os.path.join(out, name + ".png"), img)


def _load_frame_and_events(args):
    blurry = ic.read_image(_require_file(args.blurry, "blurry"))
    raw = read_events(_require_file(args.events, "events"), width=blurry.shape[1], height=blurry.shape[0])
    return blurry, raw


def _check_event_args(args):
    if args.t_b is None:
        raise UsageError("--t-b is required (or --fixture with t_b_us in its meta)")
    if args.c is None:
        args.c = 1.0
    if not args.tau > 0:
        raise UsageError("--tau must be positive")


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args):
    geometry = (args.width, args.height)
    motion = MotionSpec(args.vh, args.vv, args.duration)
    os.makedirs(args.out, exist_ok=True)
    case = make_case(args.name, pattern=args.pattern, geometry=geometry, motion=motion,
                     c=args.c, tau=args.tau, noise_ratio=args.noise_ratio, seed=args.seed,
                     dt=args.dt, exposure=args.exposure, out_dir=args.out)
    print(os.path.join(args.out, case.name))


def cmd_deblur(args):
    _fill_from_fixture(args, "blurry", "events", "t_b", "c")
    _check_event_args(args)
    if args.out is None:
        raise UsageError("--out is required")
    params = deblur_params(args)
    if args.nonuniform:
        check_patch_params(params, args.patch, args.overlap)
    blurry, raw = _load_frame_and_events(args)
    tau = ms_to_us(args.tau)
    _, t_end = exposure_window_for_frame(ms_to_us(args.t_b), tau)
    prior = integrate(raw, t_end, tau, args.c)
    if not np.any(prior):
        warnings.warn("no events in the exposure window; the event term has no effect", RuntimeWarning)
    os.makedirs(args.out, exist_ok=True)
    if args.nonuniform:
        res = deblur_nonuniform(blurry, prior, params, patch=args.patch, overlap=args.overlap)
        _write_kernels(args.out, res.kernels)
    else:
        res = deblur_blind(blurry, prior, params)
        _write_kernels(args.out, res.kernel)
        write_history_csv(os.path.join(args.out, "history.csv"), res.history)
    _write_image(args.out, "sharp", res.sharp)
    _write_meta(args.out, args, {"tau_us": tau, "t_b_us": ms_to_us(args.t_b)})


def cmd_denoise(args):
    _fill_from_fixture(args, "events", "image")
    if args.out is None:
        raise UsageError("--out is required")
    params = denoise_params(args)
    if args.nn_filter:
        if args.image is not None and not args.fixture:
            raise UsageError("--nn-filter does not use --image")
        if args.events is None:
            raise UsageError("--events is required")
        raw = read_events(_require_file(args.events, "events"))
        kept = nn_filter(raw, params.mu, params.nu, params.min_support)
    else:
        img = ic.read_image(_require_file(args.image, "image"))
        raw = read_events(_require_file(args.events, "events"), width=img.shape[1], height=img.shape[0])
        kept = denoise(raw, ic.gradient(img), params)
    os.makedirs(args.out, exist_ok=True)
    write_events(os.path.join(args.out, "denoised.csv"), kept)
    if args.write_labels:
        write_events(os.path.join(args.out, "kept.csv"), raw, _kept_flags(raw, kept), "kept")
    _write_meta(args.out, args, {"nu_us": params.nu, "raw_events": len(raw), "kept_events": len(kept)})


def _kept_flags(raw: EventStream, kept: EventStream) -> np.ndarray:
    """Per raw event, 1 if it survives; kept is an order-preserving subset of raw."""
    flags = np.zeros(len(raw), dtype=np.int64)
    j = 0
    for i in range(len(raw)):
        if j < len(kept) and (raw.t[i], raw.x[i], raw.y[i], raw.p[i]) == (kept.t[j], kept.x[j], kept.y[j], kept.p[j]):
            flags[i] = 1
            j += 1
    return flags


def cmd_reconstruct(args):
    _fill_from_fixture(args, "blurry", "events", "t_b", "c")
    _check_event_args(args)
    if args.out is None:
        raise UsageError("--out is required")
    dparams = deblur_params(args)
    if args.nonuniform:
        check_patch_params(dparams, args.patch, args.overlap)
    params = JointParams(deblur=dparams, denoise=denoise_params(args), tau=ms_to_us(args.tau),
                         c=args.c, reuse_denoised_prior=args.reuse_denoised_prior)
    blurry, raw = _load_frame_and_events(args)
    t_b = ms_to_us(args.t_b)
    if args.nonuniform:
        res = reconstruct_nonuniform(blurry, raw, t_b, params, patch=args.patch, overlap=args.overlap)
    else:
        res = reconstruct(blurry, raw, t_b, params)
    out = args.out
    os.makedirs(out, exist_ok=True)
    _write_image(out, "sharp", res.sharp)
    _write_kernels(out, res.kernel)
    write_events(os.path.join(out, "denoised.csv"), res.denoised)
    with open(os.path.join(out, "telemetry.csv"), "w", newline="\n") as fh:
        fh.write("iter,objective,retained\n")
        for n, s in enumerate(res.per_iteration, 1):
            fh.write(f"{n},{s.objective:.10g},{s.retained}\n")
    if getattr(res, "history", None):
        write_history_csv(os.path.join(out, "history.csv"), res.history)
    if args.snapshots:
        snap = os.path.join(out, "snapshots")
        os.makedirs(snap, exist_ok=True)
        for n, (img, ev) in enumerate(zip(res.iterates, res.denoised_iterates), 1):
            _write_image(snap, f"sharp_{n}", img)
            write_events(os.path.join(snap, f"denoised_{n}.csv"), ev)
    _write_meta(out, args, {"tau_us": params.tau, "t_b_us": t_b, "nu_us": params.denoise.nu,
                            "raw_events": len(raw), "kept_events": len(res.denoised)})


CSV_HEADER = "case,mse,ssim,tpr,fpr,ppv,acc,kernel_sim"


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.6f}"


def evaluate_row(name, reference=None, image=None, kernel=None, true_kernel=None,
                 labels=None, denoised=None) -> str:
    vals = dict.fromkeys(("mse", "ssim", "tpr", "fpr", "ppv", "acc", "kernel_sim"))
    if reference is not None and image is not None:
        a, b = ic.read_image(image), ic.read_image(reference)
        vals["mse"], vals["ssim"] = mse(a, b), ssim(a, b)
    if labels is not None and denoised is not None:
        stream, signal = read_labeled(labels)
        rep = classify_report(read_events(denoised), LabeledStream(stream, signal))
        vals.update(tpr=rep.tpr, fpr=rep.fpr, ppv=rep.ppv, acc=rep.acc)
    if kernel is not None and true_kernel is not None:
        vals["kernel_sim"] = kernel_similarity(read_kernel_text(kernel), read_kernel_text(true_kernel))
    return ",".join([name] + [_fmt(vals[k]) for k in CSV_HEADER.split(",")[1:]])


def read_labeled(path):
    data = np.loadtxt(path, delimiter=",", comments="#", dtype=np.int64, ndmin=2)
    with open(path) as fh:
        w, h = (int(v) for v in fh.readline().lstrip("#").split(",")[:2])
    if data.size == 0:
        return EventStream.empty(w, h), np.zeros(0, dtype=bool)
    # the file is written in stream order, so no re-sorting is needed
    p = np.where(data[:, 3] == 0, -1, data[:, 3])
    return EventStream(w, h, data[:, 0], data[:, 1], data[:, 2], p), data[:, 4].astype(bool)


def _maybe(path):
    return path if path and os.path.isfile(path) else None


def cmd_evaluate(args):
    rows = []
    for fixture, result in args.pair:
        for d in (fixture, result):
            if not os.path.isdir(d):
                raise UsageError(f"directory not found: {d}")
        rows.append(evaluate_row(
            os.path.basename(os.path.normpath(fixture)),
            reference=_maybe(os.path.join(fixture, "sharp.pgm")),
            image=_maybe(os.path.join(result, "sharp.pgm")),
            kernel=_maybe(os.path.join(result, "kernel.txt")),
            true_kernel=_maybe(os.path.join(fixture, "kernel.txt")),
            labels=_maybe(os.path.join(fixture, "labels.csv")),
            denoised=_maybe(os.path.join(result, "denoised.csv"))))
    if args.reference or args.image or args.labels or args.denoised:
        if bool(args.reference) != bool(args.image):
            raise UsageError("--reference and --image go together")
        if bool(args.labels) != bool(args.denoised):
            raise UsageError("--labels and --denoised go together")
        if bool(args.kernel) != bool(args.true_kernel):
            raise UsageError("--kernel and --true-kernel go together")
        for f in (args.reference, args.image, args.labels, args.denoised, args.kernel, args.true_kernel):
            if f is not None:
                _require_file(f, "input")
        rows.append(evaluate_row(args.name or "case", args.reference, args.image, args.kernel,
                                 args.true_kernel, args.labels, args.denoised))
    if not rows:
        raise UsageError("nothing to evaluate: give --pair or --reference/--image")
    text = "\n".join([CSV_HEADER] + rows) + "\n"
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)


COMMANDS = {"simulate": cmd_simulate, "deblur": cmd_deblur, "denoise": cmd_denoise,
            "reconstruct": cmd_reconstruct, "evaluate": cmd_evaluate}


def _fail(code: int, exc: BaseException) -> int:
    msg = str(exc).replace("\n", " ")
    print(f"evrecon: error: exit={code} kind={type(exc).__name__} message={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except SystemExit as exc:  # argparse: --help exits 0, bad flags exit 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, InvalidParameterError) as exc:
        return _fail(EXIT_USAGE, exc)
    except (EvReconError, OSError, ValueError, RuntimeError) as exc:
        return _fail(EXIT_RUNTIME, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

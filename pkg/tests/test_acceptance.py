"""Acceptance criteria 1-11 on synthetic fixtures.

Run under pytest (one test per criterion; a PASS/FAIL line per criterion is
printed in the terminal summary) or directly with ``python3 tests/test_acceptance.py``.
Runtimes include fixture generation the first time a fixture is used.
"""
import filecmp
import functools
import os
import sys
import tempfile
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from evrecon import cli, imagecore as ic, synth  # noqa: E402
from evrecon.deblur import DeblurParams, estimate_kernel, solve_latent, threshold_gradients  # noqa: E402
from evrecon.denoise import DenoiseParams, denoise, nn_filter  # noqa: E402
from evrecon.imagecore import GradientField  # noqa: E402
from evrecon.joint import JointParams, reconstruct, reconstruct_nonuniform  # noqa: E402
from evrecon.metrics import classify_report, kernel_similarity, ssim, ssim_region  # noqa: E402

import oracles  # noqa: E402

RESULTS = []  # (number, passed, detail, seconds, limit)


@functools.lru_cache(maxsize=None)
def clean_case():
    return synth.make_case("shapes", pattern="shapes", noise_ratio=0.0)


@functools.lru_cache(maxsize=None)
def noisy_case():
    return synth.make_case("sparse_noisy", pattern="sparse_shapes", noise_ratio=0.5)


def joint_params(**kw):
    deblur = kw.pop("deblur", DeblurParams())
    return JointParams(deblur=deblur, tau=kw.pop("tau", 6000), c=0.25, **kw)


@functools.lru_cache(maxsize=None)
def noisy_run():
    case = noisy_case()
    return reconstruct(case.blurry, case.stream, case.t_b, joint_params())


# ---------------------------------------------------------------------------

def crit1():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        B = rng.random((8, 8))
        k = rng.random((3, 3))
        k /= k.sum()
        prior = rng.normal(size=(8, 8)) * 0.1
        zh, zv = rng.normal(size=(2, 8, 8)) * 0.1
        alpha, gamma = rng.uniform(0.01, 1), rng.uniform(0.01, 10)
        S = solve_latent(B, k, prior, GradientField(zh, zv), alpha, gamma)
        ref = oracles.latent_normal_equations(B, k, prior, zh, zv, alpha, gamma)
        worst = max(worst, np.abs(S - ref).max())
    return worst < 1e-6, f"max abs deviation {worst:.2e} (limit 1e-6)"


def crit2():
    S = synth.make_pattern("shapes", 64, 64, seed=3)
    box = np.full((5, 5), 1 / 25)
    B = ic.circular_convolve(S, box)
    k = estimate_kernel(ic.gradient(S), ic.gradient(B), sigma=1e-4, kernel_size=5)
    sim = kernel_similarity(k, box)
    return sim >= 0.99, f"kernel similarity {sim:.6f} (need >= 0.99)"


def crit3():
    rng = np.random.default_rng(0)
    n = 1_000_000
    gh, gv = rng.normal(size=(2, n)) * 0.1
    beta, gamma = 0.25, 1.0
    gh[:1000], gv[:1000] = 0.5, 0.0  # exactly on the boundary: 0.5^2 == 0.25
    grad = GradientField(gh.reshape(1000, 1000), gv.reshape(1000, 1000))
    z = threshold_gradients(grad, beta, gamma * 10)  # random pixels against beta/gamma = 0.025
    zb = threshold_gradients(grad, beta, gamma)
    exact = True
    for out, thr in ((z, beta / (gamma * 10)), (zb, beta / gamma)):
        zeroed = (out.gh == 0) & (out.gv == 0)
        kept = (out.gh == grad.gh) & (out.gv == grad.gv)
        exact &= bool(np.all(zeroed | kept)) and bool(np.all(zeroed == (grad.magnitude_sq() <= thr)))
    boundary = bool(np.all(zb.gh.ravel()[:1000] == 0))
    return exact and boundary, f"exact={exact}, boundary zeroed={boundary}"


def crit4():
    case = clean_case()
    base = ssim(case.blurry, case.sharp)
    s_def = ssim(reconstruct(case.blurry, case.stream, case.t_b, joint_params()).sharp, case.sharp)
    s_l0 = ssim(reconstruct(case.blurry, case.stream, case.t_b,
                            joint_params(deblur=DeblurParams(alpha=0.0))).sharp, case.sharp)
    ok = s_def - base >= 0.10 and s_def - s_l0 >= 0.02
    return ok, (f"SSIM blurry {base:.4f}, alpha=0.24 {s_def:.4f} (+{s_def - base:.4f}, need +0.10), "
                f"alpha=0 {s_l0:.4f} (margin {s_def - s_l0:+.4f}, need +0.02)")


def crit5():
    case = clean_case()
    vals = {}
    for tau_ms in (2, 6, 16):
        res = reconstruct(case.blurry, case.stream, case.t_b, joint_params(tau=tau_ms * 1000))
        vals[tau_ms] = ssim(res.sharp, case.sharp)
    ok = vals[6] >= vals[2] - 1e-3 and vals[6] >= vals[16] - 1e-3
    return ok, "SSIM by tau: " + ", ".join(f"{t} ms {v:.4f}" for t, v in vals.items())


def crit6():
    case = noisy_case()
    res = noisy_run()
    acc = classify_report(res.denoised, case.labeled).acc
    acc_nn = classify_report(nn_filter(case.stream, 2, 5000, 2), case.labeled).acc
    return acc >= 0.85 and acc > acc_nn, f"ACC joint {acc:.4f} (need >= 0.85), NN-filter {acc_nn:.4f}"


def crit7():
    case = noisy_case()
    grad = ic.gradient(noisy_run().sharp)
    counts = [len(denoise(case.stream, grad, DenoiseParams(omega=w))) for w in (0.01, 0.05, 0.2)]
    ok = counts[0] >= counts[1] >= counts[2]
    return ok, f"retained for omega 0.01/0.05/0.2: {counts}"


def crit8():
    img = np.full((16, 24), 0.2)
    img[:, 12:] = 0.8
    par = synth.simulate_events(img, synth.MotionSpec(0.0, 0.5, 10), c=0.2, dt=0.1)
    perp = synth.simulate_events(img, synth.MotionSpec(0.5, 0.0, 10), c=0.2, dt=0.1)
    return len(par) == 0 and len(perp) > 0, f"parallel {len(par)} events, perpendicular {len(perp)}"


def crit9():
    case = noisy_case()
    res = noisy_run()
    counts = [s.retained for s in res.per_iteration]
    steady = all(b >= 0.95 * a for a, b in zip(counts, counts[1:]))
    first, final = ssim(res.iterates[0], case.sharp), ssim(res.iterates[-1], case.sharp)
    ok = len(counts) == 5 and steady and final >= first
    return ok, f"retained {counts}, SSIM first {first:.4f} final {final:.4f}"


def crit10():
    case = synth.make_two_region_case()
    fg = (slice(None), slice(0, case.meta["foreground"]))
    p = joint_params()
    uni = reconstruct(case.blurry, case.stream, case.t_b, p)
    patch = reconstruct_nonuniform(case.blurry, case.stream, case.t_b, p, patch=128, overlap=16)
    su, sp = ssim_region(uni.sharp, case.sharp, fg), ssim_region(patch.sharp, case.sharp, fg)
    return sp - su >= 0.02, f"foreground SSIM uniform {su:.4f}, patch-wise {sp:.4f} ({sp - su:+.4f}, need +0.02)"


def _pipeline(root):
    cwd = os.getcwd()
    os.chdir(root)
    try:
        rcs = [cli.main(["simulate", "--out", "fixtures", "--name", "case", "--pattern", "sparse_shapes",
                         "--seed", "5"]),
               cli.main(["reconstruct", "--fixture", "fixtures/case", "--out", "result"])]
    finally:
        os.chdir(cwd)
    return rcs


def crit11():
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        rcs = _pipeline(a) + _pipeline(b)
        names, same = [], True
        for sub in ("fixtures/case", "result"):
            cmp = filecmp.dircmp(os.path.join(a, sub), os.path.join(b, sub))
            names += cmp.common_files
            match, mismatch, errors = filecmp.cmpfiles(os.path.join(a, sub), os.path.join(b, sub),
                                                       cmp.common_files, shallow=False)
            same &= not mismatch and not errors and not cmp.left_only and not cmp.right_only
    ok = same and rcs == [0, 0, 0, 0]
    return ok, f"{len(names)} files compared, identical={same}, exit codes {rcs}"


CRITERIA = [
    (1, "spectral solver matches dense normal equations", crit1, 5),
    (2, "kernel recovery from true gradients", crit2, 1),
    (3, "hard-threshold exactness", crit3, 1),
    (4, "end-to-end deblurring gain and alpha ordering", crit4, 60),
    (5, "tau curve peaks at the interior point", crit5, 180),
    (6, "denoising ACC and NN-filter comparison", crit6, 30),
    (7, "omega monotonicity", crit7, 10),
    (8, "edge-trigger physics", crit8, 1),
    (9, "iteration behaviour", crit9, 90),
    (10, "patch-wise beats uniform on the moving foreground", crit10, 180),
    (11, "determinism of the full pipeline", crit11, 120),
]


def evaluate(number):
    _, name, fn, limit = CRITERIA[number - 1]
    t0 = time.perf_counter()
    passed, detail = fn()
    dt = time.perf_counter() - t0
    in_time = dt < limit
    RESULTS.append((number, passed and in_time, f"{name}: {detail}", dt, limit))
    return passed, in_time, detail, dt, limit


def format_result(number, passed, detail, dt, limit):
    return f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}  [{dt:.1f} s / {limit} s]"


@pytest.mark.slow
@pytest.mark.parametrize("number", [c[0] for c in CRITERIA])
def test_criterion(number):
    passed, in_time, detail, dt, limit = evaluate(number)
    print(format_result(number, passed and in_time, detail, dt, limit))
    assert passed, detail
    assert in_time, f"took {dt:.1f} s, limit {limit} s"


if __name__ == "__main__":
    failures = 0
    for number, *_ in CRITERIA:
        passed, in_time, detail, dt, limit = evaluate(number)
        print(format_result(number, passed and in_time, detail, dt, limit), flush=True)
        failures += not (passed and in_time)
    sys.exit(1 if failures else 0)

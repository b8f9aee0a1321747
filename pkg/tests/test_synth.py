import hashlib

import numpy as np
import pytest
from scipy import stats

from evrecon import imagecore as ic, synth
from evrecon.errors import InvalidParameterError
from evrecon.events import EventStream, integrate

import oracles


def step_edge(width=24, height=16, lo=0.2, hi=0.8, vertical=True):
    img = np.full((height, width), lo)
    if vertical:
        img[:, width // 2:] = hi
    else:
        img[height // 2:, :] = hi
    return img


# -- blur -------------------------------------------------------------------------

def test_blur_delta_and_uniform():
    S = np.random.default_rng(0).random((12, 12))
    assert np.abs(synth.blur_synthesize(S, np.ones((1, 1))) - S).max() < 1e-12
    B = synth.blur_synthesize(S, np.full((12, 12), 1 / 144))
    np.testing.assert_allclose(B, S.mean(), atol=1e-12)


def test_blur_matches_direct_convolution():
    rng = np.random.default_rng(1)
    S, k = rng.random((20, 20)), synth.motion_kernel(5, 30, 7)
    np.testing.assert_allclose(synth.blur_synthesize(S, k), np.clip(oracles.circ_conv_direct(S, k), 0, 1), atol=1e-8)


def test_motion_kernel_shape():
    k = synth.motion_kernel(9, 0, 9)
    assert k.shape == (9, 9) and abs(k.sum() - 1) < 1e-12
    assert abs(k[4].sum() - 1) < 1e-12 and not np.delete(k, 4, axis=0).any()
    assert np.allclose(k[4], k[4, ::-1])


# -- simulator ----------------------------------------------------------------------

def test_parallel_motion_gives_no_events():
    s = synth.simulate_events(step_edge(), synth.MotionSpec(0.0, 0.5, 10), c=0.2, dt=0.1)
    assert len(s) == 0


def test_perpendicular_motion_counts_match_closed_form():
    lo, hi, c = 0.2, 0.8, 0.2
    img = step_edge(lo=lo, hi=hi)
    # 2 px to the right in total: the falling edge sweeps columns 12-13 and the
    # rising edge created by the periodic wrap sweeps columns 0-1
    s = synth.simulate_events(img, synth.MotionSpec(0.5, 0.0, 4), c=c, dt=0.05)
    n = oracles.step_edge_counts(lo, hi, c)
    counts = np.zeros(img.shape, int)
    np.add.at(counts, (s.y, s.x), 1)
    assert set(np.unique(s.x)) == {0, 1, 12, 13}
    assert np.all(counts[:, [0, 1, 12, 13]] == n)
    assert np.all(s.p[s.x >= 12] == -1) and np.all(s.p[s.x <= 1] == 1)


def test_doubling_threshold_halves_counts():
    img = step_edge(lo=0.05, hi=0.95)
    m = synth.MotionSpec(0.5, 0.0, 4)
    a = synth.simulate_events(img, m, 0.1, 0.05)
    b = synth.simulate_events(img, m, 0.2, 0.05)
    ca, cb = np.zeros(img.shape, int), np.zeros(img.shape, int)
    np.add.at(ca, (a.y, a.x), 1)
    np.add.at(cb, (b.y, b.x), 1)
    assert np.all(np.abs(ca - 2 * cb) <= 1)


def test_events_colocate_with_edges(clean_case):
    s = clean_case.stream
    mag = ic.gradient(clean_case.sharp).magnitude()
    # dilate by one pixel, and along the 10 ms half-path of the motion
    near = np.zeros_like(mag, bool)
    for dx in range(-4, 5):
        for dy in (-1, 0, 1):
            near |= np.roll(mag > 0, (dy, dx), axis=(0, 1))
    assert np.mean(near[s.y, s.x]) >= 0.99


def test_integrated_events_match_log_difference():
    S = synth.make_pattern("shapes", 48, 40, seed=2)
    m, c = synth.MotionSpec(0.25, 0.1, 8), 0.15
    s = synth.simulate_events(S, m, c, dt=0.05)
    change = integrate(s, 8000, 8001, c)
    first = np.log(synth.translate(S, 0, 0) + synth.LOG_EPS)
    last = np.log(synth.translate(S, m.vh * 8, m.vv * 8) + synth.LOG_EPS)
    assert np.abs(change - (last - first)).max() <= c + 1e-9


def test_simulate_rejects_bad_args():
    with pytest.raises(InvalidParameterError):
        synth.simulate_events(step_edge(), synth.MotionSpec(1, 0, 1), c=0.0)
    with pytest.raises(InvalidParameterError):
        synth.simulate_events(step_edge(), synth.MotionSpec(1, 0, 1), c=0.1, dt=2.0)
    with pytest.raises(InvalidParameterError):
        synth.MotionSpec(1, 0, 0)


# -- noise ----------------------------------------------------------------------------

def test_noise_ratio_zero_and_half():
    s = EventStream(10, 10, np.arange(1000), np.zeros(1000, int), np.zeros(1000, int), np.ones(1000, int))
    z = synth.inject_noise(s, 0.0)
    assert z.stream == s and z.signal.all()
    half = synth.inject_noise(s, 0.5, seed=4)
    assert len(half) == 1500 and (~half.signal).sum() == 500
    again = synth.inject_noise(s, 0.5, seed=4)
    assert again.stream == half.stream and np.array_equal(again.signal, half.signal)


def test_noise_is_uniform_over_pixels():
    s = EventStream(10, 8, np.arange(20_000), np.zeros(20_000, int), np.zeros(20_000, int), np.ones(20_000, int))
    ls = synth.inject_noise(s, 1.0, seed=11)
    noise = ls.stream.select(~ls.signal)
    counts = np.bincount(noise.pixel_index, minlength=80)
    assert stats.chisquare(counts).pvalue > 0.01


def test_hot_pixels_labelled_noise():
    s = EventStream(10, 8, [0, 10_000], [0, 1], [0, 1], [1, 1])
    ls = synth.inject_hot_pixels(s, 2, 1000.0, seed=1)
    noise = ls.stream.select(~ls.signal)
    assert len(np.unique(noise.pixel_index)) == 2 and len(noise) == 2 * 11


# -- fixtures --------------------------------------------------------------------------

def _digest(d):
    h = hashlib.sha256()
    for name in sorted(p.name for p in d.iterdir()):
        h.update(name.encode() + (d / name).read_bytes())
    return h.hexdigest()


def test_make_case_deterministic_bundle(tmp_path):
    kw = dict(geometry=(64, 48), noise_ratio=0.5, seed=3)
    a = synth.make_case("c", out_dir=tmp_path / "a", **kw)
    synth.make_case("c", out_dir=tmp_path / "b", **kw)
    da, db = tmp_path / "a" / "c", tmp_path / "b" / "c"
    assert sorted(p.name for p in da.iterdir()) == ["blurry.pgm", "events.csv", "kernel.txt",
                                                      "labels.csv", "meta.txt", "sharp.pgm"]
    assert _digest(da) == _digest(db)
    meta = synth.read_meta(da / "meta.txt")
    assert meta["noise_ratio"] == "0.5" and int(meta["t_b_us"]) == a.t_b


def test_shapes_fixture_geometry(clean_case):
    assert clean_case.sharp.shape == (260, 346)
    assert clean_case.kernel.shape == (9, 9)
    assert clean_case.labeled.signal.all()


def test_zero_motion_is_pure_noise():
    case = synth.make_case("still", geometry=(40, 30), motion=synth.MotionSpec(0, 0, 5), noise_ratio=0.5)
    assert case.meta["signal_events"] == 0 and len(case.stream) == 0


def test_two_region_case():
    case = synth.make_two_region_case(geometry=(120, 80))
    xs = case.meta["foreground"]
    assert np.all(case.stream.x < xs)
    assert np.array_equal(case.blurry[:, xs:], ic.quantize(case.sharp[:, xs:]) / 255.0)


def test_unknown_pattern():
    with pytest.raises(InvalidParameterError):
        synth.make_pattern("zebra", 10, 10)

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visiongru.scan import ScanPair, compose, inject_fault, scan_parallel, scan_sequential, scan_vjp
from visiongru.tensor import ShapeError

LENGTHS = [1, 2, 3, 17, 256, 4096]


def random_pairs(r, t, lanes, dtype=np.float64):
    return ScanPair(r.uniform(0, 1, (t, lanes)).astype(dtype), r.standard_normal((t, lanes)).astype(dtype))


def relerr(got, want):
    return np.max(np.abs(got - want)) / max(1.0, np.max(np.abs(want)))


def test_compose_identity(rng):
    q = (rng.uniform(size=5), rng.standard_normal(5))
    for got in (compose((1.0, 0.0), q), compose(q, (1.0, 0.0))):
        assert np.array_equal(got[0], q[0]) and np.array_equal(got[1], q[1])


@settings(max_examples=200)
@given(seed=st.integers(0, 2**31))
def test_compose_associative(seed):
    r = np.random.default_rng(seed)
    p, q, s = [(r.uniform(size=4), r.standard_normal(4)) for _ in range(3)]
    left = compose(compose(p, q), s)
    right = compose(p, compose(q, s))
    assert np.max(np.abs(left[0] - right[0])) <= 1e-12
    assert np.max(np.abs(left[1] - right[1])) <= 1e-12


def test_scan_pair_validates_shapes():
    with pytest.raises(ShapeError):
        ScanPair(np.ones((3, 2)), np.ones((3, 3)))
    with pytest.raises(ShapeError):
        ScanPair(np.ones(3), np.ones(3))


@pytest.mark.parametrize("scan", [scan_sequential, scan_parallel])
def test_scan_trivial_cases(scan, rng):
    b = rng.standard_normal((9, 3))
    assert np.array_equal(scan(ScanPair(np.zeros((9, 3)), b)), b)
    h0 = rng.standard_normal(3)
    assert np.array_equal(scan(ScanPair(np.ones((9, 3)), np.zeros((9, 3))), h0), np.tile(h0, (9, 1)))
    h = scan(ScanPair(np.full((12, 1), 0.5), np.zeros((12, 1))), np.ones(1))
    assert np.array_equal(h[:, 0], 0.5 ** np.arange(1, 13))


def test_single_step(rng):
    p = random_pairs(rng, 1, 5)
    h0 = rng.standard_normal(5)
    assert np.allclose(scan_parallel(p, h0)[0], p.a[0] * h0 + p.b[0], rtol=0, atol=1e-15)


def test_zero_h0_equals_drive_prefix(rng):
    p = random_pairs(rng, 17, 4)
    assert np.array_equal(scan_parallel(p), scan_parallel(p, np.zeros(4)))


@settings(max_examples=240)
@given(t=st.sampled_from(LENGTHS), lanes=st.integers(1, 8), seed=st.integers(0, 2**31), with_h0=st.booleans())
def test_parallel_equals_sequential_64bit(t, lanes, seed, with_h0):
    r = np.random.default_rng(seed)
    p = random_pairs(r, t, lanes)
    h0 = r.standard_normal(lanes) if with_h0 else None
    assert relerr(scan_parallel(p, h0), scan_sequential(p, h0)) <= 1e-10


@settings(max_examples=60)
@given(t=st.sampled_from(LENGTHS), lanes=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_parallel_equals_sequential_32bit(t, lanes, seed):
    r = np.random.default_rng(seed)
    p = random_pairs(r, t, lanes, np.float32)
    h0 = r.standard_normal(lanes).astype(np.float32)
    out = scan_parallel(p, h0)
    assert out.dtype == np.float32
    assert relerr(out, scan_sequential(p, h0)) <= 1e-5


@settings(max_examples=30)
@given(t=st.integers(1, 300), seed=st.integers(0, 2**31))
def test_non_power_of_two_lengths(t, seed):
    p = random_pairs(np.random.default_rng(seed), t, 3)
    assert relerr(scan_parallel(p), scan_sequential(p)) <= 1e-10


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_result_independent_of_worker_count(workers, rng):
    p = random_pairs(rng, 1000, 37)
    h0 = rng.standard_normal(37)
    assert np.array_equal(scan_parallel(p, h0, workers=1), scan_parallel(p, h0, workers=workers))


@settings(max_examples=100)
@given(t=st.integers(1, 200), lanes=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_convex_combination_bound(t, lanes, seed):
    r = np.random.default_rng(seed)
    z = r.uniform(1e-6, 1 - 1e-6, (t, lanes))
    cand = r.standard_normal((t, lanes)) * r.uniform(0.1, 100)
    h0 = r.standard_normal(lanes) * r.uniform(0.1, 100)
    h = scan_parallel(ScanPair(1 - z, z * cand), h0)
    bound = max(np.max(np.abs(h0)), np.max(np.abs(cand)))
    assert np.max(np.abs(h)) <= bound * (1 + 1e-12)


def test_fault_hook_breaks_equivalence(rng):
    p = random_pairs(rng, 17, 4)
    with inject_fault("compose_sign"):
        bad = scan_parallel(p)
    assert relerr(bad, scan_sequential(p)) > 1e-3
    assert relerr(scan_parallel(p), scan_sequential(p)) <= 1e-10


def test_vjp_matches_finite_differences(rng):
    t, lanes = 11, 3
    p = random_pairs(rng, t, lanes)
    h0 = rng.standard_normal(lanes)
    w = rng.standard_normal((t, lanes))

    def loss(a, b, h):
        return float((scan_sequential(ScanPair(a, b), h) * w).sum())

    h = scan_parallel(p, h0)
    ga, gb, gh0 = scan_vjp(p, h0, h, w)
    eps = 1e-6
    for arr, grad, which in ((p.a, ga, 0), (p.b, gb, 1)):
        for idx in [(0, 0), (5, 1), (t - 1, 2)]:
            args = [p.a.copy(), p.b.copy(), h0]
            args[which][idx] += eps
            up = loss(*args)
            args[which][idx] -= 2 * eps
            assert grad[idx] == pytest.approx((up - loss(*args)) / (2 * eps), rel=1e-6, abs=1e-9)
    for i in range(lanes):
        hp, hm = h0.copy(), h0.copy()
        hp[i] += eps
        hm[i] -= eps
        assert gh0[i] == pytest.approx((loss(p.a, p.b, hp) - loss(p.a, p.b, hm)) / (2 * eps), rel=1e-6)


def _doubling_ratio(t, lanes=64, rounds=9):
    """Median of back-to-back time(2t)/time(t) ratios at the default precision."""
    r = np.random.default_rng(0)
    short, long = random_pairs(r, t, lanes, np.float32), random_pairs(r, 2 * t, lanes, np.float32)
    scan_parallel(short), scan_parallel(long)
    ratios = []
    for _ in range(rounds):
        t0 = time.perf_counter()
        scan_parallel(short)
        t1 = time.perf_counter()
        scan_parallel(long)
        ratios.append((time.perf_counter() - t1) / (t1 - t0))
    return float(np.median(ratios))


@pytest.mark.slow
def test_doubling_length_costs_at_most_linear():
    for t in (4096, 8192, 16384):
        assert _doubling_ratio(t) <= 2.4

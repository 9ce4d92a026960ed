import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visiongru import tensor as T


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def naive_dwconv(x, k, bias):
    b, h, w, c = x.shape
    ks = k.shape[0]
    p = ks // 2
    out = np.zeros_like(x)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    s = bias[ch]
                    for di in range(ks):
                        for dj in range(ks):
                            ii, jj = i + di - p, j + dj - p
                            if 0 <= ii < h and 0 <= jj < w:
                                s += x[n, ii, jj, ch] * k[di, dj, ch]
                    out[n, i, j, ch] = s
    return out


def two_pass_layer_norm(x, gamma, beta, eps=1e-6):
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty_like(flat)
    for r, row in enumerate(flat):
        mean = sum(row) / len(row)
        var = sum((v - mean) ** 2 for v in row) / len(row)
        out[r] = (row - mean) / np.sqrt(var + eps) * gamma + beta
    return out.reshape(x.shape)


def relerr(got, want):
    return np.max(np.abs(got - want)) / max(1.0, np.max(np.abs(want)))


# --- matmul ------------------------------------------------------------------


def test_matmul_identity_and_zero():
    m = np.array([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(T.matmul(np.eye(2), m), m)
    assert np.array_equal(T.matmul(np.array([[1.0, 2.0]]), np.zeros((2, 1))), [[0.0]])


def test_matmul_reference_is_bitwise_naive_loop(rng):
    for _ in range(20):
        a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
        assert np.array_equal(T.matmul_reference(a, b), naive_matmul(a, b))


def test_matmul_blas_close_to_naive_loop(rng):
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    assert relerr(T.matmul(a, b), naive_matmul(a, b)) < 1e-13


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(np.ones((2, 3)), np.ones((4, 5)))


@settings(max_examples=100)
@given(m=st.integers(1, 6), k=st.integers(1, 6), n=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_matmul_matches_oracle(m, k, n, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((m, k)), r.standard_normal((k, n))
    assert relerr(T.matmul(a, b), naive_matmul(a, b)) <= 1e-6


def test_ops_are_pure(rng):
    a, b = rng.standard_normal((9, 11)), rng.standard_normal((11, 4))
    assert np.array_equal(T.matmul(a, b), T.matmul(a, b))
    x = rng.standard_normal((2, 5, 5, 3))
    k, bias = rng.standard_normal((3, 3, 3)), rng.standard_normal(3)
    assert np.array_equal(T.depthwise_conv2d(x, k, bias), T.depthwise_conv2d(x, k, bias))


# --- sigmoid -----------------------------------------------------------------


def test_sigmoid_examples():
    assert T.sigmoid(np.array(0.0)) == 0.5
    assert T.sigmoid(np.array(10.0)) == pytest.approx(0.9999546, abs=1e-6)
    x = np.linspace(-20, 20, 101)
    assert np.allclose(T.sigmoid(x) + T.sigmoid(-x), 1.0, atol=1e-15)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=50))
def test_sigmoid_monotone_and_strictly_inside_unit_interval(xs):
    x = np.sort(np.array(xs))
    s = T.sigmoid(x)
    assert np.all(np.diff(s) >= 0)
    assert np.all((s > 0) & (s < 1))


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=50))
def test_sigmoid_finite_inputs_stay_in_closed_interval(xs):
    # past |x| ~ 37 the result rounds to exactly 0 or 1 in 64-bit
    s = T.sigmoid(np.array(xs))
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))


# --- layer norm --------------------------------------------------------------


def test_layer_norm_constant_vector_gives_zero():
    out = T.layer_norm(np.full((3, 8), 2.5), np.ones(8), np.zeros(8))
    assert np.array_equal(out, np.zeros((3, 8)))


def test_layer_norm_output_statistics(rng):
    x = rng.standard_normal((50, 64)) * 3 + 1
    gamma, beta = np.full(64, -2.0), np.full(64, 0.5)
    out = T.layer_norm(x, gamma, beta)
    assert np.allclose(out.mean(axis=-1), 0.5, atol=1e-10)
    assert np.allclose(out.std(axis=-1), 2.0, atol=1e-5)


@settings(max_examples=100)
@given(shape=st.tuples(st.integers(1, 4), st.integers(1, 9)), seed=st.integers(0, 2**31))
def test_layer_norm_matches_two_pass_oracle(shape, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal(shape) * r.uniform(0.1, 10)
    gamma, beta = r.standard_normal(shape[-1]), r.standard_normal(shape[-1])
    assert relerr(T.layer_norm(x, gamma, beta), two_pass_layer_norm(x, gamma, beta)) <= 1e-6


# --- depthwise conv ----------------------------------------------------------


def test_depthwise_delta_kernel_is_identity(rng):
    x = rng.standard_normal((2, 5, 4, 3))
    k = np.zeros((3, 3, 3))
    k[1, 1] = 1.0
    assert np.array_equal(T.depthwise_conv2d(x, k, np.zeros(3)), x)


def test_depthwise_ones_kernel_sums_window():
    out = T.depthwise_conv2d(np.ones((1, 5, 5, 2)), np.ones((3, 3, 2)), np.zeros(2))
    assert np.all(out[:, 1:-1, 1:-1] == 9)
    assert out[0, 0, 0, 0] == 4  # zero padding at the corner


def test_depthwise_even_kernel_rejected():
    with pytest.raises(T.ShapeError, match="odd"):
        T.depthwise_conv2d(np.ones((1, 4, 4, 2)), np.ones((2, 2, 2)), np.zeros(2))


@settings(max_examples=100)
@given(
    b=st.integers(1, 2), h=st.integers(1, 5), w=st.integers(1, 5), c=st.integers(1, 3),
    ks=st.sampled_from([1, 3, 5]), seed=st.integers(0, 2**31),
)
def test_depthwise_matches_six_loop_oracle(b, h, w, c, ks, seed):
    r = np.random.default_rng(seed)
    x, k, bias = r.standard_normal((b, h, w, c)), r.standard_normal((ks, ks, c)), r.standard_normal(c)
    assert relerr(T.depthwise_conv2d(x, k, bias), naive_dwconv(x, k, bias)) <= 1e-6


def test_dense_conv_matches_loop(rng):
    x = rng.standard_normal((1, 6, 6, 2))
    w, bias = rng.standard_normal((3, 3, 2, 4)), rng.standard_normal(4)
    out = T.conv2d(x, w, bias, stride=2)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    want = np.zeros((1, 3, 3, 4))
    for i in range(3):
        for j in range(3):
            patch = xp[0, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3, :]
            want[0, i, j] = np.einsum("abc,abcd->d", patch, w) + bias
    assert relerr(out, want) < 1e-12


# --- pooling -----------------------------------------------------------------


def test_avg_pool_examples(rng):
    assert np.allclose(T.avg_pool_global(np.full((2, 3, 4, 5), 7.0)), 7.0)
    x = rng.standard_normal((3, 1, 1, 4))
    assert np.array_equal(T.avg_pool_global(x), x[:, 0, 0])


@settings(max_examples=100)
@given(shape=st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.integers(1, 4)), seed=st.integers(0, 2**31))
def test_avg_pool_matches_summation(shape, seed):
    x = np.random.default_rng(seed).standard_normal(shape)
    want = np.zeros((shape[0], shape[3]))
    for n in range(shape[0]):
        for c in range(shape[3]):
            want[n, c] = sum(x[n, i, j, c] for i in range(shape[1]) for j in range(shape[2])) / (shape[1] * shape[2])
    assert relerr(T.avg_pool_global(x), want) <= 1e-7


# --- plumbing ----------------------------------------------------------------


def test_shape4_rejects_bad_rank_and_empty():
    assert T.Shape4.of(np.zeros((1, 2, 3, 4))) == (1, 2, 3, 4)
    with pytest.raises(T.ShapeError):
        T.Shape4.of(np.zeros((2, 3, 4)))
    with pytest.raises(T.ShapeError):
        T.Shape4.of(np.zeros((1, 0, 3, 4)))


def test_precision_switch():
    assert T.get_dtype() == np.float32
    with T.precision("float64"):
        assert T.asarray([1, 2]).dtype == np.float64
    assert T.asarray([1, 2]).dtype == np.float32


def test_debug_mode_flags_non_finite():
    a = np.array([[1e308, 1e308]])
    b = np.array([[10.0], [10.0]])
    with np.errstate(over="ignore"):
        T.matmul(a, b)  # silent outside debug mode
        with T.debug(), pytest.raises(T.NonFiniteError, match="matmul"):
            T.matmul(a, b)


def test_resize_bilinear_identity_and_constant(rng):
    x = rng.standard_normal((2, 4, 4, 3))
    assert np.array_equal(T.resize_bilinear(x, 4, 4), x)
    assert np.allclose(T.resize_bilinear(np.ones((1, 4, 4, 2)), 8, 6), 1.0)


def test_cross_entropy_uniform_logits():
    assert T.cross_entropy(np.zeros((4, 10)), np.arange(4), 0.1) == pytest.approx(np.log(10))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_fd, max_rel_err
from yflow import autodiff as ad


def grad_of(fn, *values):
    tape = ad.Tape()
    leaves = [tape.watch(v) for v in values]
    return tape.gradient(fn(*leaves), leaves)


def fd_of(fn, *values, h=1e-5):
    vals = [np.array(v, dtype=float) for v in values]
    return central_fd(lambda: float(fn(*[ad.Tensor(v) for v in vals]).value), vals, h)


def test_matmul_identity_and_orthogonal():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(np.eye(2), m).value, m)
    assert np.array_equal(ad.matmul([[1.0, 0.0]], [[0.0], [1.0]]).value, [[0.0]])


def test_matmul_gradient_matches_fd():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    f = lambda x, y: ad.sum(ad.matmul(x, y))
    assert max_rel_err(grad_of(f, a, b), fd_of(f, a, b)) < 1e-6


def test_matmul_shape_mismatch_is_descriptive():
    with pytest.raises(ValueError, match="matmul"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_silu_tanh_at_origin():
    assert ad.silu(np.zeros(1)).value[0] == 0.0
    assert ad.tanh(np.zeros(1)).value[0] == 0.0


def test_silu_gradient_at_one():
    f = lambda x: ad.sum(ad.silu(x))
    assert max_rel_err(grad_of(f, np.array([1.0])), fd_of(f, np.array([1.0]), h=1e-6)) < 1e-7


def test_smooth_norm_power_examples():
    # delta -> 0 recovers the plain norm
    assert ad.smooth_norm_power(np.array([[3.0, 4.0]]), 1.0, 1e-300).value[0] == pytest.approx(5.0, abs=1e-12)
    for alpha in (0.1, 0.5, 1.0, 2.0):
        assert ad.smooth_norm_power(np.zeros((1, 3)), alpha).value[0] == 0.0
    # with delta = 1e-8 the -delta^alpha shift is 1e-4 at alpha = 0.5
    val = ad.smooth_norm_power(np.array([[1.0, 0.0]]), 0.5, 1e-8).value[0]
    assert val == pytest.approx((1.0 + 1e-16) ** 0.25 - 1e-4, abs=1e-15)
    assert ad.smooth_norm_power(np.array([[1.0, 0.0]]), 0.5, 1e-30).value[0] == pytest.approx(1.0, abs=1e-7)


def test_smooth_norm_power_rejects_bad_delta():
    with pytest.raises(ValueError):
        ad.smooth_norm_power(np.ones((1, 2)), 0.5, 0.0)
    with pytest.raises(ValueError):
        ad.smooth_norm_power(np.ones((1, 2)), 2.5, 1e-8)


def test_smooth_norm_gradient_finite_at_origin():
    g = grad_of(lambda v: ad.sum(ad.smooth_norm_power(v, 0.5)), np.zeros((2, 2)))[0]
    assert np.all(np.isfinite(g))


def test_backward_linear_and_quadratic():
    theta = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(grad_of(ad.sum, theta)[0], np.ones(3))
    assert np.allclose(grad_of(lambda t: ad.sum(ad.square(t)), theta)[0], 2 * theta, rtol=0, atol=0)


def test_backward_rejects_nonscalar_and_detached():
    tape = ad.Tape()
    x = tape.watch(np.ones(3))
    with pytest.raises(ValueError):
        tape.backward(ad.scale(x, 2.0))
    with pytest.raises(ValueError):
        tape.backward(ad.sum(x).detach())
    with pytest.raises(ValueError):
        ad.Tape().backward(ad.sum(x))


def test_detached_tensor_gets_no_gradient():
    tape = ad.Tape()
    x = tape.watch(np.ones(3))
    y = x.detach()
    loss = ad.sum(ad.mul(x, y))
    grads = tape.backward(loss)
    assert np.array_equal(grads[x.node], np.ones(3))
    assert y.node is None


def test_no_record_builds_nothing():
    tape = ad.Tape()
    x = tape.watch(np.ones(2))
    with ad.no_record():
        y = ad.sum(ad.square(x))
    assert y.tape is None and len(tape) == 0


def test_rowwise_matmul_rows_are_independent():
    rng = np.random.default_rng(3)
    for n, k, m in [(5, 7, 3), (13, 256, 2), (17, 100, 100), (1, 64, 256)]:
        a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
        full = ad.rowwise_matmul(a, b).value
        rows = np.vstack([ad.rowwise_matmul(a[i : i + 1], b).value for i in range(n)])
        assert np.array_equal(full, rows)
        assert np.allclose(full, a @ b, rtol=1e-12, atol=1e-12)


def test_sqdist_transpose_is_exact():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
    assert np.array_equal(ad.sqdist(x, y).value, ad.sqdist(y, x).value.T)


def test_replay_is_bitwise_deterministic():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    f = lambda x, y: ad.sum(ad.tanh(ad.matmul(x, y)))
    g1, g2 = grad_of(f, a, b), grad_of(f, a, b)
    assert all(np.array_equal(u, v) for u, v in zip(g1, g2))


unit = arrays(np.float64, (3, 2), elements=st.floats(-2, 2))
UNARY = {
    "silu": ad.silu,
    "tanh": ad.tanh,
    "square": ad.square,
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "neg": ad.neg,
    "scale": lambda x: ad.scale(x, -1.7),
    "logsumexp": lambda x: ad.logsumexp(x, axis=1),
    "norm_power": lambda x: ad.smooth_norm_power(x, 0.7, 1e-3),
}
BINARY = {"add": ad.add, "sub": ad.sub, "mul": ad.mul, "sqdist": ad.sqdist}


@settings(max_examples=25, deadline=None)
@given(x=unit, name=st.sampled_from(sorted(UNARY)))
def test_unary_ops_match_fd(x, name):
    op = UNARY[name]
    shape = op(ad.Tensor(x)).shape
    weights = np.arange(1.0, 1.0 + np.prod(shape)).reshape(shape)
    f = lambda t: ad.sum(ad.mul(op(t), weights))
    num = fd_of(f, x, h=1e-6)
    got = grad_of(f, x)
    err = np.max(np.abs(got[0] - num[0]) / (np.abs(num[0]) + 1e-8))
    assert err < 1e-5 or np.max(np.abs(got[0] - num[0])) < 1e-9


@settings(max_examples=25, deadline=None)
@given(x=unit, y=unit, name=st.sampled_from(sorted(BINARY)))
def test_binary_ops_match_fd(x, y, name):
    op = BINARY[name]
    f = lambda a, b: ad.sum(ad.square(op(a, b)))
    num = fd_of(f, x, y, h=1e-6)
    got = grad_of(f, x, y)
    for g, n in zip(got, num):
        assert np.all(np.abs(g - n) <= 1e-5 * (np.abs(n) + 1e-8) + 1e-8)


@settings(max_examples=50, deadline=None)
@given(
    r=st.floats(1e-3, 10.0),
    ratio=st.floats(1.01, 3.0),
    alpha=st.floats(0.05, 0.99),
    direction=st.floats(0, 2 * np.pi),
)
def test_smooth_norm_monotone_and_concave(r, ratio, alpha, direction):
    u = np.array([np.cos(direction), np.sin(direction)])
    f = lambda s: ad.smooth_norm_power((s * u)[None, :], alpha, 1e-8).value[0]
    assert f(r * ratio) >= f(r)
    h = 1e-3 * r
    assert f(r + h) - 2 * f(r) + f(r - h) <= 1e-10

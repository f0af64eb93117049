import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_fd, mlp_param_count
from yflow import autodiff as ad
from yflow.velocity import VelocityNet, VelocityNetConfig, init_params, param_count, param_shapes


def small(dim=2, **kw):
    base = dict(hidden_width=16, hidden_layers=2, time_embed_dim=8)
    base.update(kw)
    return VelocityNetConfig(dim=dim, **base)


def test_config_validation():
    for bad in (dict(dim=0), dict(dim=2, hidden_layers=0), dict(dim=2, time_embed_dim=0),
                dict(dim=2, activation="relu"), dict(dim=2, time_embed_kind="fourier")):
        with pytest.raises(ValueError):
            VelocityNetConfig(**bad)


def test_init_is_deterministic_with_zero_biases():
    cfg = small()
    a, b = init_params(cfg, 42), init_params(cfg, 42)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    for (name, _), p in zip(param_shapes(cfg), a):
        if name.endswith("bias"):
            assert not p.any()
    assert any(x.tobytes() != y.tobytes() for x, y in zip(a, init_params(cfg, 43)))


def test_init_bounds_are_glorot():
    cfg = small()
    for (name, shape), p in zip(param_shapes(cfg), init_params(cfg, 0)):
        if not name.endswith("bias"):
            assert np.max(np.abs(p)) <= np.sqrt(6.0 / sum(shape))


def test_default_param_count_matches_shape_walk():
    cfg = VelocityNetConfig(dim=2)
    # the shape walk gives 149,378: 149,250 in the MLP plus 128 in the time layer
    assert param_count(cfg) == mlp_param_count(2, 256, 3, 64, learned_embed=True) == 149_378
    sin = VelocityNetConfig(dim=2, time_embed_kind="sinusoidal")
    assert param_count(sin) == mlp_param_count(2, 256, 3, 64, learned_embed=False) == 149_250


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 6), w=st.integers(1, 40), layers=st.integers(1, 4), e=st.integers(1, 5),
       kind=st.sampled_from(["learned-linear", "sinusoidal"]))
def test_param_count_property(d, w, layers, e, kind):
    e = 2 * e
    cfg = VelocityNetConfig(dim=d, hidden_width=w, hidden_layers=layers, time_embed_dim=e, time_embed_kind=kind)
    assert param_count(cfg) == mlp_param_count(d, w, layers, e, kind == "learned-linear")
    assert sum(p.size for p in init_params(cfg, 1)) == param_count(cfg)


def test_sinusoidal_embedding_at_zero():
    net = VelocityNet.initialize(small(time_embed_kind="sinusoidal"), 0)
    emb = net.time_embed(0.0).value[0]
    assert np.all(emb[:4] == 0.0) and np.all(emb[4:] == 1.0)


def test_learned_embedding_with_zero_weight_is_activation_of_bias():
    net = VelocityNet.initialize(small(), 0)
    net.params[0] = np.zeros_like(net.params[0])
    net.params[1] = np.linspace(-1, 1, 8)
    b = net.params[1]
    expected = b / (1 + np.exp(-b))
    for t in (0.0, 0.3, 1.0):
        assert np.allclose(net.time_embed(t).value[0], expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind", ["learned-linear", "sinusoidal"])
def test_embedding_is_continuous(kind):
    net = VelocityNet.initialize(small(time_embed_kind=kind), 0)
    for t in np.linspace(0, 1 - 1e-6, 11):
        diff = net.time_embed(t + 1e-6).value - net.time_embed(t).value
        assert np.max(np.abs(diff)) < 1e-4


def test_time_outside_unit_interval_rejected():
    net = VelocityNet.initialize(small(), 0)
    for t in (-0.1, 1.5):
        with pytest.raises(ValueError):
            net(np.zeros((2, 2)), t)


def test_zero_head_gives_zero_field():
    net = VelocityNet.initialize(small(), 0)
    net.params[-2] = np.zeros_like(net.params[-2])
    out = net(np.random.default_rng(0).normal(size=(5, 2)), 0.4).value
    assert not out.any()


def test_dimension_mismatch_rejected():
    net = VelocityNet.initialize(small(), 0)
    with pytest.raises(ValueError):
        net(np.zeros((3, 3)), 0.5)


@pytest.mark.parametrize("cfg", [small(), VelocityNetConfig(dim=2), small(dim=17, hidden_width=100),
                                 small(time_embed_kind="sinusoidal", activation="tanh")])
def test_batch_rows_independent_bitwise(cfg):
    net = VelocityNet.initialize(cfg, 1)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(37, cfg.dim))
    full = net(x, 0.3).value
    single = np.vstack([net(x[i : i + 1], 0.3).value for i in range(len(x))])
    assert np.array_equal(full, single)
    perm = rng.permutation(len(x))
    assert np.array_equal(net(x[perm], 0.3).value, full[perm])
    t = rng.uniform(size=len(x))
    per_row = net(x, t).value
    assert np.array_equal(per_row, np.vstack([net(x[i : i + 1], t[i]).value for i in range(len(x))]))


def test_jvp_matches_fd():
    net = VelocityNet.initialize(small(), 3)
    x = np.array([[0.3, -0.7]])
    r = np.array([[0.6, 0.8]])
    tape = ad.Tape()
    xt = tape.watch(x)
    out = net(xt, 0.5)
    # J r via two reverse passes, one per output coordinate
    jr = np.array([tape.gradient(ad.sum(ad.take(ad.transpose(out), i)), [xt])[0][0] @ r[0] for i in range(2)])
    h = 1e-6
    fd = (net(x + h * r, 0.5).value - net(x - h * r, 0.5).value)[0] / (2 * h)
    assert np.max(np.abs(jr - fd) / (np.abs(fd) + 1e-8)) < 1e-5


def test_parameter_gradient_matches_fd():
    cfg = small(hidden_width=6, time_embed_dim=4)
    net = VelocityNet.initialize(cfg, 5)
    x = np.random.default_rng(1).normal(size=(4, 2))
    tape = ad.Tape()
    live = net.on_tape(tape)
    got = tape.gradient(ad.sum(ad.square(live(x, 0.7))), live.params)
    arrays = net.arrays()
    probe = VelocityNet(cfg, arrays)
    num = central_fd(lambda: float(np.sum(probe(x, 0.7).value ** 2)), arrays, 1e-6)
    for g, n in zip(got, num):
        assert np.all(np.abs(g - n) <= 1e-5 * (np.abs(n) + 1e-8) + 1e-9)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedgmcc import nn
from fedgmcc.data import gen_base_task, minmax_bounds, minmax_scale
from fedgmcc.nn import ModelArch, ShapeError


def fd_grad(f, w, h=1e-4):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def ce_oracle(arch, w, x, y):
    """Scalar loop re-implementation of forward + cross-entropy."""
    layers = nn.unflatten(arch, w)
    total = 0.0
    for row, label in zip(x, y):
        a = list(row)
        for li, (W, b) in enumerate(layers):
            z = [sum(W[o, i] * a[i] for i in range(len(a))) + b[o] for o in range(W.shape[0])]
            a = [max(v, 0.0) for v in z] if li < len(layers) - 1 else z
        m = max(a)
        e = [np.exp(v - m) for v in a]
        total += -np.log(e[label] / sum(e))
    return total / len(y)


def test_param_count_and_roundtrip():
    arch = ModelArch((3, 5, 4, 2))
    assert arch.n_params == 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2
    w = arch.init(1)
    assert np.array_equal(nn.flatten(nn.unflatten(arch, w)), w)


@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_flatten_unflatten_identity(sizes, seed):
    sizes[-1] = max(sizes[-1], 2)
    arch = ModelArch(tuple(sizes))
    w = arch.init(seed)
    assert len(w) == arch.n_params
    assert np.array_equal(nn.flatten(nn.unflatten(arch, w)), w)


def test_arch_validation():
    with pytest.raises(ValueError):
        ModelArch((3,))
    with pytest.raises(ValueError):
        ModelArch((3, 1))


def test_zero_weights_give_uniform_rows():
    arch = ModelArch((2, 4, 3))
    p = nn.forward(arch, arch.zeros(), np.random.default_rng(0).normal(size=(5, 2)))
    assert np.allclose(p, 1 / 3)


def test_linear_softmax_hand_computed():
    arch = ModelArch((2, 2))
    w = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])  # identity weights, zero bias
    p = nn.forward(arch, w, np.array([[1.0, 0.0]]))
    expected = np.exp(1) / (np.exp(1) + 1)
    assert p[0, 0] == pytest.approx(expected, abs=1e-15)
    assert p[0, 0] > p[0, 1]


def test_forward_deterministic_and_rejects_bad_dims():
    arch = ModelArch((2, 3, 2))
    w = arch.init(0)
    x = np.random.default_rng(1).normal(size=(4, 2))
    assert np.array_equal(nn.forward(arch, w, x), nn.forward(arch, w, x))
    with pytest.raises(ShapeError):
        nn.forward(arch, w, np.ones((4, 3)))
    with pytest.raises(ShapeError):
        nn.forward(arch, w[:-1], x)


@given(st.integers(0, 10_000), st.floats(0.1, 50.0))
@settings(max_examples=50, deadline=None)
def test_rows_are_stochastic(seed, scale):
    arch = ModelArch((3, 6, 4))
    rng = np.random.default_rng(seed)
    w = scale * rng.normal(size=arch.n_params)
    p = nn.forward(arch, w, rng.normal(size=(7, 3)))
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_cross_entropy_values():
    arch = ModelArch((2, 2))
    assert nn.cross_entropy_loss(arch, arch.zeros(), np.ones((3, 2)), [0, 1, 1]) == pytest.approx(np.log(2))
    # logits of +-40 make the output one-hot up to 1e-35
    w = np.array([40.0, 0.0, -40.0, 0.0, 0.0, 0.0])
    assert nn.cross_entropy_loss(arch, w, np.array([[1.0, 0.0]]), [0]) == pytest.approx(0.0, abs=1e-30)


def test_cross_entropy_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    arch = ModelArch((3, 4, 3))
    for _ in range(5):
        w = rng.normal(size=arch.n_params)
        x = rng.normal(size=(6, 3))
        y = rng.integers(0, 3, size=6)
        assert nn.cross_entropy_loss(arch, w, x, y) == pytest.approx(ce_oracle(arch, w, x, y), abs=1e-10)


def test_mse_output_loss_brute_force():
    arch = ModelArch((2, 3, 2))
    rng = np.random.default_rng(5)
    wa, wb = rng.normal(size=arch.n_params), rng.normal(size=arch.n_params)
    probe = rng.uniform(size=(4, 2))
    total = 0.0
    for row in probe:
        pa = nn.forward(arch, wa, row)[0]
        pb = nn.forward(arch, wb, row)[0]
        total += sum((pa[c] - pb[c]) ** 2 for c in range(2))
    assert nn.mse_output_loss(arch, wa, wb, probe) == pytest.approx(total / 4, abs=1e-14)
    assert nn.mse_output_loss(arch, wa, wb, probe) == nn.mse_output_loss(arch, wb, wa, probe)
    assert nn.mse_output_loss(arch, wa, wa, probe) == 0.0


@pytest.mark.parametrize("sizes", [(2, 3), (3, 5, 3), (2, 4, 4, 3)])
def test_ce_gradient_finite_differences(sizes):
    arch = ModelArch(sizes)
    rng = np.random.default_rng(sum(sizes))
    w = rng.normal(size=arch.n_params)
    x = rng.normal(size=(8, sizes[0]))
    y = rng.integers(0, sizes[-1], size=8)
    g = nn.grad_loss(arch, w, x, y)
    fd = fd_grad(lambda v: nn.cross_entropy_loss(arch, v, x, y), w)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)


def test_mse_gradient_finite_differences_and_zero_at_match():
    arch = ModelArch((2, 5, 3))
    rng = np.random.default_rng(9)
    w, t = rng.normal(size=arch.n_params), rng.normal(size=arch.n_params)
    probe = rng.uniform(size=(10, 2))
    g = nn.grad_loss(arch, w, probe, kind="mse", target=t)
    fd = fd_grad(lambda v: nn.mse_output_loss(arch, v, t, probe), w)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-9)
    assert np.all(nn.grad_loss(arch, t, probe, kind="mse", target=t) == 0.0)


def test_gradient_vanishes_at_perfect_model():
    arch = ModelArch((2, 2))
    w = np.array([40.0, 0.0, -40.0, 0.0, 0.0, 0.0])
    x = np.array([[1.0, 0.0], [-1.0, 0.0]])
    g = nn.grad_loss(arch, w, x, [0, 1])
    assert np.linalg.norm(g) < 1e-6


def test_gradient_respects_log_floor():
    # the second row's true class has probability e^-80, below the floor
    arch = ModelArch((2, 2))
    w = np.array([40.0, 0.0, -40.0, 0.0, 0.0, 0.0])
    x = np.array([[1.0, 0.0], [1.0, 0.0]])
    y = [0, 1]
    g = nn.grad_loss(arch, w, x, y)
    assert np.linalg.norm(g) < 1e-30
    fd = fd_grad(lambda v: nn.cross_entropy_loss(arch, v, x, y), w, h=1e-3)
    np.testing.assert_allclose(g, fd, atol=1e-12)
    loss, g2 = nn.loss_and_grad_ce(arch, w, x, np.array(y))
    assert np.array_equal(g, g2) and loss == pytest.approx(-np.log(1e-12) / 2)


def _blobs():
    d = gen_base_task(400, 2, seed=0, separation=6.0)
    lo, hi = minmax_bounds(d.x)
    return minmax_scale(d, lo, hi)


def test_sgd_zero_lr_is_identity():
    arch = ModelArch((2, 8, 2))
    d = _blobs()
    w0 = arch.init(0)
    assert np.array_equal(nn.sgd_train(arch, w0, d.x, d.y, 3, 64, 0.0, seed=0), w0)


def test_sgd_huge_proximal_pins_to_anchor():
    arch = ModelArch((2, 8, 2))
    d = _blobs()
    w0 = arch.init(0)
    out = nn.sgd_train(arch, w0, d.x, d.y, 5, 64, 0.05, seed=0, proximal=(1e6, w0))
    assert np.linalg.norm(out - w0) < 1e-3


def test_sgd_fits_separable_blobs_and_is_deterministic():
    arch = ModelArch((2, 8, 2))
    d = _blobs()
    a = nn.sgd_train(arch, arch.init(0), d.x, d.y, 50, 64, 0.1, seed=4)
    b = nn.sgd_train(arch, arch.init(0), d.x, d.y, 50, 64, 0.1, seed=4)
    assert np.array_equal(a, b)
    assert nn.accuracy(arch, a, d.x, d.y) > 0.95


def test_sgd_rejects_empty_data():
    arch = ModelArch((2, 2))
    with pytest.raises(ShapeError):
        nn.sgd_train(arch, arch.zeros(), np.zeros((0, 2)), np.zeros(0, dtype=int), 1, 4, 0.1, 0)

import numpy as np
import pytest

from netdecode import dataset as D
from netdecode.decoder import decode_nodal
from netdecode.errors import DimensionMismatch, Diverged, ParseError, SchemaMismatch
from netdecode.network import build_flow_structure, embedded_case
from netdecode.surrogate import (
    Mlp,
    TrainConfig,
    hamming_surrogate,
    load_weights,
    loss,
    loss_gradient,
    nodal_targets,
    save_weights,
    train,
)


def stable_point(mlp, rng, h=1e-5, tries=100):
    """A random input whose activation pattern is constant on the +-h stencil."""
    n = mlp.input_dim
    for _ in range(tries):
        x = rng.standard_normal(n)
        pat = mlp.activation_pattern(x)
        if all(all(np.array_equal(a, b) for a, b in zip(pat, mlp.activation_pattern(x + s * h * e)))
               for e in np.eye(n) for s in (-1, 1)):
            return x
    raise RuntimeError("no stable point found")


def test_zero_network_outputs_zero():
    mlp = Mlp([3, 5, 1])
    assert mlp.forward(np.array([1.0, -2.0, 3.0])) == 0.0


def test_linear_layer():
    w, beta = np.array([[0.5, -1.0, 2.0]]), np.array([0.25])
    mlp = Mlp([3, 1], weights=[w], biases=[beta])
    x = np.array([1.0, 2.0, 3.0])
    assert mlp.forward(x) == pytest.approx(w[0] @ x + beta[0])
    np.testing.assert_array_equal(mlp.input_gradient(x), w[0])


def test_dead_relus_give_zero_gradient():
    mlp = Mlp.init([3, 4, 1], seed=0)
    mlp.biases[0][:] = -1e6
    np.testing.assert_array_equal(mlp.input_gradient(np.ones(3)), np.zeros(3))


def test_dimension_mismatch():
    mlp = Mlp.init([3, 4, 1])
    with pytest.raises(DimensionMismatch):
        mlp.forward(np.ones(4))
    with pytest.raises(DimensionMismatch):
        mlp.input_gradient(np.ones(2))


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for seed in range(10):
        mlp = Mlp.init([4, 8, 6, 1], seed=seed)
        mlp.in_mean = rng.standard_normal(4)
        mlp.in_std = rng.uniform(0.5, 2.0, 4)
        x = stable_point(mlp, rng)
        h = 1e-5
        fd = np.array([(mlp.forward(x + h * e) - mlp.forward(x - h * e)) / (2 * h) for e in np.eye(4)])
        np.testing.assert_allclose(mlp.input_gradient(x), fd, rtol=1e-6, atol=1e-9)


def test_affine_within_cell():
    rng = np.random.default_rng(2)
    mlp = Mlp.init([3, 6, 1], seed=3)
    x = stable_point(mlp, rng, h=1e-3)
    d = rng.standard_normal(3) * 1e-4
    mid = mlp.forward(x)
    assert mid == pytest.approx(0.5 * (mlp.forward(x - d) + mlp.forward(x + d)), abs=1e-9)


def test_hamming_surrogate_values():
    val, _ = hamming_surrogate(np.array([0.0]), np.array([1]), 0.05)
    assert val[0] == pytest.approx(0.0025)
    val, _ = hamming_surrogate(np.array([-0.2, 0.2, 0.01]), np.array([-1, 1, 0]), 0.05)
    np.testing.assert_array_equal(val, 0.0)


def test_zero_surrogate_certifies_nodal_decode():
    rng = np.random.default_rng(4)
    margin = 0.05
    for _ in range(200):
        st = rng.integers(-1, 2, 6)
        gap = np.where(st > 0, margin + rng.uniform(0, 1, 6),
                       np.where(st < 0, -margin - rng.uniform(0, 1, 6), rng.uniform(-margin / 2, margin / 2, 6)))
        val, _ = hamming_surrogate(gap, st, margin)
        assert np.all(val == 0.0)
        c = rng.uniform(1, 3, 6)
        for eps in (margin / 2, 0.75 * margin, 0.999 * margin):
            got, _ = decode_nodal(c + gap, c, eps)
            np.testing.assert_array_equal(got, st)


def linear_problem():
    """A linear model with matching labels: zero loss when statuses agree with the gaps."""
    w = np.array([[1.0, 2.0, 3.0]])
    mlp = Mlp([3, 1], weights=[w], biases=[np.array([0.5])])
    rng = np.random.default_rng(0)
    L = rng.uniform(0, 1, (5, 3))
    J = L @ w[0] + 0.5
    mu = np.tile(w[0], (5, 1))
    cost = np.array([1.0, 1.0, 4.0])  # gaps 0, +1, -1
    active = np.zeros((5, 2 * 3 + 2), dtype=bool)
    active[:, 2] = True       # node 3 at zero
    active[:, 3 + 1] = True   # node 2 at upper
    return mlp, L, J, mu, active, cost


def test_perfect_predictor_zero_loss():
    mlp, L, J, mu, active, cost = linear_problem()
    lb = loss(mlp, L, J, mu, active, cost, TrainConfig())
    assert lb.total == pytest.approx(0.0, abs=1e-20)


def test_loss_terms_combine():
    mlp, L, J, mu, active, cost = linear_problem()
    cfg = TrainConfig(gamma1=0.0, gamma2=0.0)
    lb = loss(mlp, L, J + 1.0, mu + 0.5, active, cost + 2.0, cfg)
    assert lb.total == pytest.approx(lb.cost_term)
    cfg = TrainConfig(gamma1=0.7, gamma2=3.0)
    lb = loss(mlp, L, J + 1.0, mu + 0.5, active, cost + 2.0, cfg)
    assert lb.total == pytest.approx(lb.cost_term + 0.7 * lb.grad_term + 3.0 * lb.hamming_term)
    assert min(lb.cost_term, lb.grad_term, lb.hamming_term) >= 0


def _fd_check(mlp, L, J, mu, active, cost, cfg, h=1e-6):
    gW, gb, _ = loss_gradient(mlp, L, J, mu, active, cost, cfg)
    analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gW, gb)])
    theta = mlp.parameters()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        vals = []
        for s in (1, -1):
            t = theta.copy()
            t[i] += s * h
            mlp.set_parameters(t)
            vals.append(loss(mlp, L, J, mu, active, cost, cfg).total)
        fd[i] = (vals[0] - vals[1]) / (2 * h)
    mlp.set_parameters(theta)
    return analytic, fd


def toy_batch(seed):
    rng = np.random.default_rng(seed)
    mlp = Mlp.init([3, 5, 4, 1], seed=seed)
    mlp.biases[0][:] = rng.uniform(0.5, 1.0, 5)
    L = rng.uniform(0.5, 1.5, (6, 3))
    mlp.set_normalization(L)
    J = rng.uniform(1, 2, 6)
    mu = rng.uniform(0, 2, (6, 3))
    cost = rng.uniform(0.5, 1.5, 3)
    active = np.zeros((6, 2 * 3 + 2 * 3), dtype=bool)
    active[:, :3] = rng.random((6, 3)) < 0.3
    active[:, 3:6] = (rng.random((6, 3)) < 0.3) & ~active[:, :3]
    return mlp, L, J, mu, active, cost


def _patterns_stable(mlp, L, h):
    theta = mlp.parameters()
    base = mlp.activation_pattern(L)
    for i in range(theta.size):
        for s in (1, -1):
            t = theta.copy()
            t[i] += s * h
            mlp.set_parameters(t)
            if not all(np.array_equal(a, b) for a, b in zip(base, mlp.activation_pattern(L))):
                mlp.set_parameters(theta)
                return False
    mlp.set_parameters(theta)
    return True


@pytest.mark.parametrize("g1,g2", [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 0.1)])
def test_loss_gradient_finite_differences(g1, g2):
    cfg = TrainConfig(gamma1=g1, gamma2=g2)
    checked = 0
    for seed in range(10):
        mlp, L, J, mu, active, cost = toy_batch(seed)
        if not _patterns_stable(mlp, L, 1e-6):
            continue
        a, fd = _fd_check(mlp, L, J, mu, active, cost, cfg)
        assert np.linalg.norm(a - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)
        checked += 1
    assert checked >= 3


def test_gradient_reduces_to_mse_backprop():
    mlp, L, J, mu, active, cost = toy_batch(0)
    gW, gb, _ = loss_gradient(mlp, L, J, mu, active, cost, TrainConfig(gamma1=0.0, gamma2=0.0))
    r = mlp.forward(L) - J
    bW, bb = mlp.backward(L, (2.0 * r / len(L))[:, None])
    for a, b in zip(gW + gb, bW + bb):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_zero_network_gradient_of_grad_term_vanishes():
    mlp = Mlp([3, 4, 1])
    L = np.ones((2, 3))
    cfg = TrainConfig(gamma1=1.0, gamma2=0.0)
    gW, gb, _ = loss_gradient(mlp, L, np.zeros(2), np.ones((2, 3)), np.zeros((2, 12), bool), np.ones(3), cfg)
    np.testing.assert_array_equal(gW[0], 0.0)


@pytest.fixture(scope="module")
def three_bus_data():
    net = embedded_case("three_bus")
    st = build_flow_structure(net)
    ds = D.generate(net, st, D.SamplingConfig("low", 400, seed=0))
    return net, ds.arrays("train")


def test_train_lr_zero_keeps_parameters(three_bus_data):
    net, (L, J, M, A) = three_bus_data
    mlp = Mlp.init([3, 8, 1], seed=0)
    mlp.set_normalization(L)
    before = mlp.parameters()
    train(mlp, L, J, M, A, net.cost, TrainConfig(learning_rate=0.0, epochs=2), normalize=False)
    np.testing.assert_array_equal(mlp.parameters(), before)


def test_train_huge_lr_diverges(three_bus_data):
    net, (L, J, M, A) = three_bus_data
    with pytest.raises(Diverged):
        with np.errstate(all="ignore"):
            train(Mlp.init([3, 8, 1], seed=0), L, J, M, A, net.cost, TrainConfig(learning_rate=1e6, epochs=5))


def test_train_loss_trend_and_determinism(three_bus_data):
    net, (L, J, M, A) = three_bus_data
    cfg = TrainConfig(epochs=50, seed=1)
    _, hist = train(Mlp.init([3, 20, 10, 1], seed=1), L, J, M, A, net.cost, cfg)
    first = np.median([h["train"]["total"] for h in hist[:5]])
    last = np.median([h["train"]["total"] for h in hist[-5:]])
    assert last < first
    assert "holdout" in hist[0]
    m2, hist2 = train(Mlp.init([3, 20, 10, 1], seed=1), L, J, M, A, net.cost, cfg)
    assert hist2[-1]["train"]["total"] == hist[-1]["train"]["total"]


def test_weights_roundtrip(tmp_path):
    mlp = Mlp.init([4, 7, 3, 1], seed=5)
    mlp.set_normalization(np.random.default_rng(0).uniform(0, 1, (20, 4)))
    path = tmp_path / "w.bin"
    save_weights(mlp, path)
    back = load_weights(path)
    x = np.random.default_rng(1).standard_normal((5, 4))
    np.testing.assert_array_equal(back.forward(x), mlp.forward(x))
    with pytest.raises(SchemaMismatch):
        load_weights(path, widths=[4, 8, 1])
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(ParseError):
        load_weights(path)
    path.write_bytes(b"garbage")
    with pytest.raises(ParseError):
        load_weights(path)


def test_nodal_targets():
    active = np.zeros((1, 2 * 2 + 2), dtype=bool)
    active[0, 1] = True
    active[0, 2] = True
    np.testing.assert_array_equal(nodal_targets(active, 2), [[1, -1]])

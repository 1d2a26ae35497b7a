import numpy as np
import pytest

from releaseflow import nnengine as nn
from releaseflow.errors import ValidationError


ARCH = nn.MlpArchitecture()
SMALL = nn.MlpArchitecture(hidden_layers=2, neurons_per_layer=8)


def test_default_architecture():
    assert ARCH.dims == (2, 20, 20, 20, 20, 20, 1)
    assert ARCH.n_params == 1761


def test_param_count_formula():
    # 2*8+8 + 8*8+8 + 8*1+1 = 105
    assert SMALL.n_params == 105


def test_arch_round_trip():
    back = nn.MlpArchitecture.from_dict(SMALL.to_dict())
    assert back == SMALL


def test_init_params_seeded_and_glorot():
    p1 = nn.init_params(ARCH, seed=0)
    p2 = nn.init_params(ARCH, seed=0)
    p3 = nn.init_params(ARCH, seed=1)
    np.testing.assert_array_equal(p1.values, p2.values)
    assert not np.array_equal(p1.values, p3.values)
    # biases start at zero
    for layer in range(6):
        np.testing.assert_array_equal(p1.biases(layer), 0.0)
    # hidden-layer weights follow Glorot: std near sqrt(2/(20+20))
    w = p1.weights(2)
    assert float(np.std(w)) == pytest.approx(np.sqrt(2.0 / 40.0), rel=0.35)


def test_flatten_round_trip():
    p = nn.init_params(SMALL, seed=3)
    q = nn.MlpParams.from_flat(SMALL, p.flatten())
    np.testing.assert_array_equal(p.values, q.values)
    for layer in range(3):
        np.testing.assert_array_equal(p.weights(layer), q.weights(layer))
        np.testing.assert_array_equal(p.biases(layer), q.biases(layer))


def test_weight_views_share_storage():
    p = nn.init_params(SMALL, seed=3)
    p.weights(0)[0, 0] = 42.0
    assert p.values[0] == 42.0


def test_forward_matches_manual_small_net():
    arch = nn.MlpArchitecture(hidden_layers=1, neurons_per_layer=3)
    p = nn.init_params(arch, seed=5)
    x, t = 0.3, 0.7
    h = np.tanh(p.weights(0) @ np.array([x, t]) + p.biases(0))
    want = float((p.weights(1) @ h + p.biases(1))[0])
    got = nn.forward(p, x, t)
    assert got == pytest.approx(want, rel=1e-14)


def test_forward_batch_shape():
    p = nn.init_params(SMALL, seed=0)
    X = np.random.default_rng(0).uniform(size=(17, 2))
    u = nn.forward_batch(p, X)
    assert u.shape == (17,)
    assert u[3] == pytest.approx(nn.forward(p, X[3, 0], X[3, 1]))


def test_grad_params_against_finite_differences():
    p = nn.init_params(SMALL, seed=7)
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(11, 2))
    adj = rng.normal(size=11)

    grad = nn.grad_params(p, X, adj)
    assert grad.shape == (SMALL.n_params,)

    def loss(values):
        q = nn.MlpParams.from_flat(SMALL, values)
        return float(np.dot(adj, nn.forward_batch(q, X)))

    idx = rng.choice(SMALL.n_params, size=40, replace=False)
    for i in idx:
        h = 1e-6
        vp, vm = p.values.copy(), p.values.copy()
        vp[i] += h
        vm[i] -= h
        fd = (loss(vp) - loss(vm)) / (2 * h)
        denom = max(abs(fd), abs(grad[i]), 1e-10)
        assert abs(grad[i] - fd) / denom < 1e-5, f"param {i}"


def test_input_derivatives_against_finite_differences():
    p = nn.init_params(SMALL, seed=2)
    x, t = 0.42, 0.31
    X = np.array([[x, t]])
    u, ux, ut, uxx = (float(a[0]) for a in nn.input_derivatives_batch(p, X))

    h = 1e-5
    fd_x = (nn.forward(p, x + h, t) - nn.forward(p, x - h, t)) / (2 * h)
    fd_t = (nn.forward(p, x, t + h) - nn.forward(p, x, t - h)) / (2 * h)
    fd_xx = (nn.forward(p, x + h, t) - 2 * nn.forward(p, x, t)
             + nn.forward(p, x - h, t)) / h**2

    assert u == pytest.approx(nn.forward(p, x, t), rel=1e-14)
    assert ux == pytest.approx(fd_x, rel=1e-8)
    assert ut == pytest.approx(fd_t, rel=1e-8)
    assert uxx == pytest.approx(fd_xx, rel=1e-4)

    # the single-point convenience returns (u, u_t, u_xx)
    su, sut, suxx = nn.input_derivatives(p, x, t)
    assert (su, sut, suxx) == (u, ut, uxx)


def test_second_derivative_closed_form_single_layer():
    # one tanh layer: u = sum_j v_j tanh(w_j . a + b_j) + c, so u_xx has
    # the closed form sum_j v_j * (-2 h_j s_j) * w_jx^2
    arch = nn.MlpArchitecture(hidden_layers=1, neurons_per_layer=6)
    p = nn.init_params(arch, seed=9)
    x, t = 0.6, 0.2
    z = p.weights(0) @ np.array([x, t]) + p.biases(0)
    h, s = np.tanh(z), 1.0 / np.cosh(z) ** 2
    wx = p.weights(0)[:, 0]
    v = p.weights(1)[0]
    want_xx = float(np.dot(v, -2.0 * h * s * wx**2))
    _, _, uxx = nn.input_derivatives(p, x, t)
    assert uxx == pytest.approx(want_xx, rel=1e-12)


def test_input_gradient_consistency():
    # the first-order-only JVP path must agree with the extended pass
    p = nn.init_params(ARCH, seed=4)
    X = np.random.default_rng(2).uniform(size=(9, 2))
    _, ux, ut, _ = nn.input_derivatives_batch(p, X)
    for i in range(len(X)):
        gx, gt = nn.input_gradient(p, X[i, 0], X[i, 1])
        assert gx == pytest.approx(ux[i], rel=1e-12, abs=1e-14)
        assert gt == pytest.approx(ut[i], rel=1e-12, abs=1e-14)


def test_dropout_mask_shapes_and_seeding():
    m1 = nn.DropoutMask.draw(ARCH, p_keep=0.98, seed=0)
    m2 = nn.DropoutMask.draw(ARCH, p_keep=0.98, seed=0)
    m3 = nn.DropoutMask.draw(ARCH, p_keep=0.98, seed=1)
    assert m1.masks.shape == (5, 20)
    np.testing.assert_array_equal(m1.masks, m2.masks)
    assert not np.array_equal(m1.masks, m3.masks)
    assert set(np.unique(m1.masks)) <= {0.0, 1.0}


def test_dropout_scaling_preserves_expectation():
    p_keep = 0.8
    acc = np.zeros((5, 20))
    n = 4000
    for seed in range(n):
        acc += nn.DropoutMask.draw(ARCH, p_keep, seed=seed).scaled()
    mean = acc / n
    # inverted dropout: E[mask/p_keep] = 1
    assert float(np.abs(mean - 1.0).max()) < 0.06


def test_dropout_forward_zeroes_units():
    p = nn.init_params(SMALL, seed=1)
    mask = nn.DropoutMask.draw(SMALL, p_keep=0.5, seed=3)
    X = np.array([[0.3, 0.4]])
    u_masked = nn.forward_batch(p, X, mask=mask)
    u_clean = nn.forward_batch(p, X)
    assert u_masked[0] != pytest.approx(u_clean[0])
    # p_keep = 1 keeps every unit and is exactly the clean pass
    full = nn.DropoutMask.draw(SMALL, p_keep=1.0, seed=3)
    np.testing.assert_array_equal(nn.forward_batch(p, X, mask=full), u_clean)


def test_dropout_gradient_against_finite_differences():
    p = nn.init_params(SMALL, seed=7)
    mask = nn.DropoutMask.draw(SMALL, p_keep=0.7, seed=5)
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(6, 2))
    adj = rng.normal(size=6)
    grad = nn.grad_params(p, X, adj, mask=mask)

    def loss(values):
        q = nn.MlpParams.from_flat(SMALL, values)
        return float(np.dot(adj, nn.forward_batch(q, X, mask=mask)))

    for i in rng.choice(SMALL.n_params, size=25, replace=False):
        vp, vm = p.values.copy(), p.values.copy()
        vp[i] += 1e-6
        vm[i] -= 1e-6
        fd = (loss(vp) - loss(vm)) / 2e-6
        denom = max(abs(fd), abs(grad[i]), 1e-10)
        assert abs(grad[i] - fd) / denom < 1e-5


def test_checkpoint_round_trip(tmp_path):
    p = nn.init_params(ARCH, seed=12)
    path = tmp_path / "params.bin"
    p.save(path)
    q = nn.MlpParams.load(path)
    assert q.arch == ARCH
    np.testing.assert_array_equal(p.values, q.values)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValidationError):
        nn.MlpParams.load(path)

    p = nn.init_params(SMALL, seed=0)
    good = tmp_path / "good.bin"
    p.save(good)
    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(good.read_bytes()[:-16])
    with pytest.raises(ValidationError):
        nn.MlpParams.load(truncated)


def test_adam_first_step_magnitude():
    # with bias correction the very first Adam step is lr * sign(g)
    state = nn.AdamState.fresh(3, learning_rate=1e-3)
    values = np.zeros(3)
    grad = np.array([0.5, -2.0, 1e-4])
    new = nn.adam_step(state, values, grad)
    np.testing.assert_allclose(new, -1e-3 * np.sign(grad), rtol=1e-3)
    assert state.step == 1


def test_adam_minimizes_quadratic():
    target = np.array([1.0, -2.0, 0.5, 3.0])
    state = nn.AdamState.fresh(4, learning_rate=0.05)
    values = np.zeros(4)
    for _ in range(2000):
        values = nn.adam_step(state, values, 2.0 * (values - target))
    np.testing.assert_allclose(values, target, atol=1e-4)


def test_input_derivatives_requires_2d_input():
    arch = nn.MlpArchitecture(input_dim=3, hidden_layers=1, neurons_per_layer=4)
    p = nn.init_params(arch, seed=0)
    with pytest.raises(ValidationError):
        nn.input_derivatives_batch(p, np.zeros((2, 3)))

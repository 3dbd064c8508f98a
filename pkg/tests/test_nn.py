import numpy as np
import pytest

from hiercause.errors import TrainingDivergenceError
from hiercause.nn import (
    AdamState,
    MlpGrads,
    MlpParams,
    adam_init,
    adam_step,
    backward,
    forward_cached,
    load_params,
    mlp_forward,
    mlp_grad,
    mlp_init,
    save_params,
)


def finite_difference_grads(params, x, y, h=1e-5):
    """Central-difference oracle for the MSE gradient."""

    def loss_at(p):
        out = mlp_forward(p, x)
        return ((out - y) ** 2).sum() / x.shape[0]

    g_w, g_b = [], []
    for k in range(params.n_layers):
        gw = np.zeros_like(params.weights[k])
        for idx in np.ndindex(*gw.shape):
            p = params.copy()
            p.weights[k][idx] += h
            up = loss_at(p)
            p.weights[k][idx] -= 2 * h
            down = loss_at(p)
            gw[idx] = (up - down) / (2 * h)
        g_w.append(gw)
        gb = np.zeros_like(params.biases[k])
        for idx in np.ndindex(*gb.shape):
            p = params.copy()
            p.biases[k][idx] += h
            up = loss_at(p)
            p.biases[k][idx] -= 2 * h
            down = loss_at(p)
            gb[idx] = (up - down) / (2 * h)
        g_b.append(gb)
    return MlpGrads(g_w, g_b)


def max_rel_error(analytic, numeric):
    worst = 0.0
    for ga, gn in zip(analytic.weights + analytic.biases,
                      numeric.weights + numeric.biases):
        denom = np.maximum(np.abs(gn), 1e-8)
        worst = max(worst, float(np.max(np.abs(ga - gn) / denom)))
    return worst


class TestInit:
    def test_deterministic(self):
        a = mlp_init([2, 4, 2], seed=7)
        b = mlp_init([2, 4, 2], seed=7)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_single_linear_layer_is_affine(self):
        p = mlp_init([3, 3], seed=0)
        x = np.random.default_rng(0).standard_normal((5, 3))
        np.testing.assert_allclose(mlp_forward(p, x),
                                   x @ p.weights[0].T + p.biases[0])

    def test_paper_shape_accepted(self):
        # 4 layers at 30x the 2-d input
        p = mlp_init([2, 60, 60, 60, 2], seed=1)
        assert p.n_layers == 4 and p.in_dim == 2 and p.out_dim == 2

    def test_rejects_empty_and_nonpositive(self):
        with pytest.raises(ValueError):
            mlp_init([3])
        with pytest.raises(ValueError):
            mlp_init([3, 0, 2])


class TestForward:
    def test_zero_weights_give_bias(self):
        p = MlpParams([np.zeros((3, 2)), np.zeros((2, 3))],
                      [np.zeros(3), np.array([1.5, -2.0])])
        out = mlp_forward(p, np.ones((4, 2)))
        np.testing.assert_allclose(out, np.tile([1.5, -2.0], (4, 1)))

    def test_leaky_relu_negative_branch(self):
        # identity weight followed by identity output layer: activation applied once
        p = MlpParams([np.eye(1), np.eye(1)], [np.zeros(1), np.zeros(1)], alpha=0.2)
        assert mlp_forward(p, np.array([[-1.0]]))[0, 0] == pytest.approx(-0.2)
        assert mlp_forward(p, np.array([[1.0]]))[0, 0] == pytest.approx(1.0)

    def test_width_mismatch(self):
        p = mlp_init([3, 3], seed=0)
        with pytest.raises(ValueError):
            mlp_forward(p, np.zeros((2, 4)))

    def test_piecewise_linear_within_activation_region(self):
        p = mlp_init([2, 5, 2], seed=3)
        rng = np.random.default_rng(3)
        # nudge both points into the same activation pattern
        x1 = np.abs(rng.standard_normal((1, 2))) + 0.1
        x2 = x1 + 1e-4 * rng.standard_normal((1, 2))
        lam = 0.3
        lhs = mlp_forward(p, lam * x1 + (1 - lam) * x2)
        rhs = lam * mlp_forward(p, x1) + (1 - lam) * mlp_forward(p, x2)
        pat1 = (x1 @ p.weights[0].T + p.biases[0]) > 0
        pat2 = (x2 @ p.weights[0].T + p.biases[0]) > 0
        if (pat1 == pat2).all():
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestGrad:
    def test_perfect_fit_zero_gradient(self):
        p = mlp_init([2, 3, 2], seed=5)
        x = np.random.default_rng(5).standard_normal((6, 2))
        grads, loss = mlp_grad(p, x, mlp_forward(p, x))
        assert loss == 0.0
        for g in grads.weights + grads.biases:
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_matches_finite_differences(self):
        p = mlp_init([2, 3, 2], seed=11)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((5, 2))
        # keep pre-activations away from the Leaky-ReLU kink
        z = x @ p.weights[0].T + p.biases[0]
        x = x[np.abs(z).min(axis=1) > 1e-3]
        y = rng.standard_normal((x.shape[0], 2))
        analytic, _ = mlp_grad(p, x, y)
        numeric = finite_difference_grads(p, x, y)
        assert max_rel_error(analytic, numeric) <= 1e-4

    def test_linear_layer_matches_closed_form(self):
        # single linear layer: grad_W = (2/n) (Wx + b - y)^T x, scales with y
        p = mlp_init([3, 2], seed=2)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((8, 3))
        y = rng.standard_normal((8, 2))
        for c in (1.0, 3.0):
            grads, _ = mlp_grad(p, x, c * y)
            resid = x @ p.weights[0].T + p.biases[0] - c * y
            np.testing.assert_allclose(grads.weights[0],
                                       2.0 / 8 * resid.T @ x, atol=1e-12)

    def test_shape_mismatch(self):
        p = mlp_init([2, 2], seed=0)
        with pytest.raises(ValueError):
            mlp_grad(p, np.zeros((4, 2)), np.zeros((4, 3)))

    def test_backward_input_gradient(self):
        p = mlp_init([2, 4, 3], seed=9)
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 2)) + 0.05
        out, cache = forward_cached(p, x)
        dy = rng.standard_normal(out.shape)
        _, dx = backward(p, cache, dy)
        h = 1e-6
        num = np.zeros_like(x)
        for idx in np.ndindex(*x.shape):
            xp = x.copy(); xp[idx] += h
            xm = x.copy(); xm[idx] -= h
            num[idx] = ((mlp_forward(p, xp) * dy).sum()
                        - (mlp_forward(p, xm) * dy).sum()) / (2 * h)
        np.testing.assert_allclose(dx, num, rtol=1e-5, atol=1e-7)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = mlp_init([2, 2], seed=0)
        before = p.copy()
        st = adam_init(p)
        zero = MlpGrads([np.zeros_like(w) for w in p.weights],
                        [np.zeros_like(b) for b in p.biases])
        st, p = adam_step(st, p, zero)
        assert st.step == 1
        for wa, wb in zip(p.weights, before.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_first_step_is_signed_lr(self):
        p = mlp_init([1, 1], seed=0)
        w0 = p.weights[0].copy()
        st = adam_init(p, lr=1e-3)
        g = MlpGrads([np.array([[0.37]])], [np.array([0.0])])
        adam_step(st, p, g)
        assert p.weights[0][0, 0] == pytest.approx(w0[0, 0] - 1e-3, abs=1e-9)

    def test_constant_gradient_update_magnitude_approaches_lr(self):
        # scalar simulation: with a constant gradient the Adam step -> lr
        p = MlpParams([np.array([[0.0]])], [np.zeros(1)])
        st = adam_init(p, lr=1e-3)
        g = MlpGrads([np.array([[0.8]])], [np.zeros(1)])
        prev = p.weights[0][0, 0]
        for _ in range(100):
            prev = p.weights[0][0, 0]
            adam_step(st, p, g)
        last_update = abs(p.weights[0][0, 0] - prev)
        assert last_update == pytest.approx(1e-3, rel=0.05)

    def test_nonfinite_gradient_raises(self):
        p = mlp_init([1, 1], seed=0)
        st = adam_init(p)
        g = MlpGrads([np.array([[np.nan]])], [np.zeros(1)])
        with pytest.raises(TrainingDivergenceError):
            adam_step(st, p, g)

    def test_deterministic_given_same_gradients(self):
        runs = []
        for _ in range(2):
            p = mlp_init([2, 3, 1], seed=4)
            st = adam_init(p)
            rng = np.random.default_rng(4)
            for _ in range(10):
                g, _ = mlp_grad(p, rng.standard_normal((8, 2)),
                                rng.standard_normal((8, 1)))
                adam_step(st, p, g)
            runs.append(p)
        for wa, wb in zip(runs[0].weights, runs[1].weights):
            np.testing.assert_array_equal(wa, wb)


class TestGradcheckSweep:
    @pytest.mark.parametrize("dims,seed", [
        ([2, 3, 2], 0), ([3, 5, 4, 2], 1), ([1, 8, 1], 2), ([4, 4], 3),
    ])
    def test_gradcheck(self, dims, seed):
        p = mlp_init(dims, seed=seed)
        rng = np.random.default_rng(seed + 100)
        x = rng.standard_normal((5, dims[0]))
        y = rng.standard_normal((5, dims[-1]))
        analytic, _ = mlp_grad(p, x, y)
        numeric = finite_difference_grads(p, x, y)
        assert max_rel_error(analytic, numeric) <= 1e-4


def test_params_roundtrip(tmp_path):
    p = mlp_init([3, 7, 2], alpha=0.3, seed=12)
    save_params(p, tmp_path / "ckpt")
    q = load_params(tmp_path / "ckpt")
    assert q.alpha == p.alpha
    for wa, wb in zip(p.weights + p.biases, q.weights + q.biases):
        np.testing.assert_array_equal(wa, wb)

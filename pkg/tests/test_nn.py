import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from core.errors import NonFiniteError, ShapeError
from core.nn import AdamState, Layer, Mlp, adam_step, clip_grad_norm, global_norm, mlp_backward, mlp_forward


def linear(weight, bias):
    return Mlp([Layer(np.array(weight, dtype=float), np.array(bias, dtype=float))])


def straight_line_forward(net, x):
    h = np.array(x, dtype=float)
    for layer in net.layers:
        out = []
        for r in range(layer.weight.shape[0]):
            out.append(sum(layer.weight[r, c] * h[c] for c in range(layer.weight.shape[1])) + layer.bias[r])
        out = np.array(out)
        if layer.activation == "relu":
            out = np.where(out > 0, out, 0.0)
        elif layer.activation == "tanh":
            out = np.tanh(out)
        h = out
    return h


def numeric_param_grads(net, x, upstream, h=1e-6):
    params = net.parameters()
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            _, out_p, _ = mlp_forward(net.with_parameters(plus), x)
            _, out_m, _ = mlp_forward(net.with_parameters(minus), x)
            g[idx] = np.sum(upstream * (out_p - out_m)) / (2 * h)
        grads.append(g)
    return grads


class TestForward:
    def test_zero_weights_give_final_bias(self, rng):
        net = Mlp.build(4, [8], 3, rng)
        params = [np.zeros_like(p) for p in net.parameters()]
        params[-1] = np.array([0.5, -1.0, 2.0])
        _, out, _ = mlp_forward(net.with_parameters(params), rng.normal(size=(6, 4)))
        np.testing.assert_array_equal(out, np.tile([0.5, -1.0, 2.0], (6, 1)))

    def test_single_identity_layer(self):
        _, out, _ = mlp_forward(linear([[2.0]], [1.0]), np.array([3.0]))
        assert out.tolist() == [[7.0]]

    def test_matches_straight_line_evaluation(self, rng):
        net = Mlp.build(3, [5], 2, rng)
        xs = rng.normal(size=(5, 3))
        _, out, _ = mlp_forward(net, xs)
        for x, row in zip(xs, out):
            np.testing.assert_allclose(row, straight_line_forward(net, x), rtol=1e-12)

    def test_latent_consistency(self, rng):
        net = Mlp.build(3, [7, 4], 2, rng, activation="tanh")
        latent, out, _ = mlp_forward(net, rng.normal(size=(9, 3)))
        last = net.layers[-1]
        np.testing.assert_allclose(out, latent @ last.weight.T + last.bias, rtol=1e-12, atol=1e-15)

    def test_deterministic(self, rng):
        net = Mlp.build(3, [7], 2, rng)
        x = rng.normal(size=(4, 3))
        assert np.array_equal(mlp_forward(net, x)[1], mlp_forward(net, x)[1])

    def test_wrong_width_raises(self, rng):
        net = Mlp.build(3, [4], 1, rng)
        with pytest.raises(ShapeError):
            mlp_forward(net, np.zeros((2, 5)))

    def test_layers_must_chain(self):
        with pytest.raises(ShapeError):
            Mlp([Layer(np.zeros((3, 2)), np.zeros(3), "relu"), Layer(np.zeros((1, 4)), np.zeros(1))])

    def test_init_bounds(self, rng):
        net = Mlp.build(16, [32], 4, rng)
        assert np.all(np.abs(net.layers[0].weight) <= 1 / np.sqrt(16))
        assert np.all(np.abs(net.layers[1].weight) <= 1 / np.sqrt(32))


class TestBackward:
    def test_zero_upstream(self, rng):
        net = Mlp.build(3, [5], 2, rng)
        _, out, tape = mlp_forward(net, rng.normal(size=(4, 3)))
        grads, d_input = mlp_backward(net, tape, np.zeros_like(out))
        assert all(not np.any(g) for g in grads)
        assert not np.any(d_input)

    def test_linear_layer_calculus(self):
        net = linear([[1.0, -2.0], [0.5, 3.0]], [0.1, 0.2])
        x = np.array([[0.3, -0.7]])
        g = np.array([[1.5, -0.5]])
        _, _, tape = mlp_forward(net, x)
        (dw, db), d_input = mlp_backward(net, tape, g)
        np.testing.assert_allclose(dw, g.T @ x)
        np.testing.assert_allclose(db, g[0])
        np.testing.assert_allclose(d_input, g @ net.layers[0].weight)

    def test_relu_net_matches_finite_differences(self, rng):
        net = Mlp.build(4, [6], 3, rng)
        x = rng.normal(size=(5, 4))
        upstream = rng.normal(size=(5, 3))
        _, _, tape = mlp_forward(net, x)
        grads, _ = mlp_backward(net, tape, upstream)
        for analytic, numeric in zip(grads, numeric_param_grads(net, x, upstream)):
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    @settings(max_examples=15, deadline=None)
    @given(
        st.integers(1, 6), st.integers(1, 8), st.integers(1, 4), st.integers(1, 5),
        st.sampled_from(["tanh", "identity"]), st.integers(0, 2 ** 31 - 1),
    )
    def test_smooth_nets_match_finite_differences(self, n_in, hidden, n_out, batch, activation, seed):
        rng = np.random.default_rng(seed)
        net = Mlp.build(n_in, [hidden], n_out, rng, activation=activation)
        x = rng.normal(size=(batch, n_in))
        upstream = rng.normal(size=(batch, n_out))
        _, _, tape = mlp_forward(net, x)
        grads, _ = mlp_backward(net, tape, upstream)
        for analytic, numeric in zip(grads, numeric_param_grads(net, x, upstream)):
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    def test_latent_upstream_adds_to_latent_gradient(self, rng):
        net = Mlp.build(3, [4], 2, rng, activation="tanh")
        x = rng.normal(size=(2, 3))
        _, out, tape = mlp_forward(net, x)
        extra = rng.normal(size=(2, 4))
        with_extra, _ = mlp_backward(net, tape, np.zeros_like(out), latent_upstream=extra)
        # only the hidden layer sees the latent gradient
        assert not np.any(with_extra[2]) and not np.any(with_extra[3])
        d_pre = extra * (1 - np.tanh(tape.pre_activations[0]) ** 2)
        np.testing.assert_allclose(with_extra[0], d_pre.T @ x)

    def test_upstream_shape_checked(self, rng):
        net = Mlp.build(3, [4], 2, rng)
        _, _, tape = mlp_forward(net, np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            mlp_backward(net, tape, np.zeros((2, 3)))


def scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = [np.array([1.0, -2.0])]
        state = AdamState.for_params(params, 1e-3)
        new, _ = adam_step(params, [np.zeros(2)], state)
        np.testing.assert_array_equal(new[0], params[0])

    def test_first_step_is_sign_step(self):
        g = np.array([0.3, -2.0, 1e-3])
        state = AdamState.for_params([np.zeros(3)], 0.01)
        new, state = adam_step([np.zeros(3)], [g], state)
        np.testing.assert_allclose(new[0], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
        assert state.step == 1

    def test_matches_scalar_reference(self, rng):
        grads = rng.normal(size=10)
        params = [np.array([0.7])]
        state = AdamState.for_params(params, 0.05)
        for g in grads:
            params, state = adam_step(params, [np.array([g])], state)
        assert params[0][0] == pytest.approx(scalar_adam(0.7, grads, 0.05), rel=1e-12)

    def test_permutation_invariance(self, rng):
        params = [rng.normal(size=(2, 3)), rng.normal(size=4)]
        grads = [rng.normal(size=(2, 3)), rng.normal(size=4)]
        a, _ = adam_step(params, grads, AdamState.for_params(params, 1e-2))
        b, _ = adam_step(params[::-1], grads[::-1], AdamState.for_params(params[::-1], 1e-2))
        for x, y in zip(a, b[::-1]):
            np.testing.assert_array_equal(x, y)

    def test_non_finite_gradient_rejected(self):
        state = AdamState.for_params([np.zeros(2)], 1e-3)
        with pytest.raises(NonFiniteError):
            adam_step([np.zeros(2)], [np.array([np.nan, 0.0])], state)


class TestClipGradNorm:
    def test_small_norm_unchanged(self):
        g = [np.array([0.06, 0.08])]
        np.testing.assert_array_equal(clip_grad_norm(g, 0.5)[0], g[0])

    def test_three_four_five(self):
        np.testing.assert_allclose(clip_grad_norm([np.array([3.0, 4.0])], 1.0)[0], [0.6, 0.8], rtol=1e-12)

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)), st.floats(1e-3, 1e2))
    def test_post_clip_norm(self, grad, max_norm):
        before = global_norm([grad])
        after = global_norm(clip_grad_norm([grad], max_norm))
        assert after == pytest.approx(min(before, max_norm), rel=1e-12, abs=1e-12)

    def test_non_positive_max_norm(self):
        with pytest.raises(ValueError):
            clip_grad_norm([np.ones(2)], 0.0)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsvae.errors import NumericError, ShapeError
from rsvae.gradnet import (
    IDENTITY, RELU, AdamState, LinearLayer, MlpSpec, activation_apply, activation_grad, adam_step,
    grad_check, layer_arrays, leaky_relu, mlp_backward, mlp_forward,
)


def loop_forward(spec, params, x):
    """Independent oracle: explicit loops, no matrix products."""
    h = list(map(float, x))
    for i, layer in enumerate(params):
        act = spec.activation(i)
        out = []
        for r in range(layer.out_dim):
            s = layer.bias[r]
            for c in range(layer.in_dim):
                s += layer.weights[r, c] * h[c]
            if act.kind == "relu":
                s = max(0.0, s)
            elif act.kind == "leaky_relu" and s < 0:
                s = act.slope * s
            out.append(s)
        h = out
    return np.array(h)


def test_activation_examples():
    assert activation_apply(RELU, [-2.0, 3.5]).tolist() == [0.0, 3.5]
    assert activation_apply(leaky_relu(0.2), [-2.0]).tolist() == pytest.approx([-0.4])
    assert activation_apply(IDENTITY, [1.0, -1.0]).tolist() == [1.0, -1.0]


@pytest.mark.parametrize("act", [RELU, leaky_relu(0.2), leaky_relu(0.01), IDENTITY])
def test_activation_grad_matches_fd(act):
    x = np.random.default_rng(0).uniform(-3, 3, 500)
    x = x[np.abs(x) > 1e-3]
    h = 1e-6
    fd = (activation_apply(act, x + h) - activation_apply(act, x - h)) / (2 * h)
    np.testing.assert_allclose(activation_grad(act, x), fd, atol=1e-6)


def test_zero_network_gives_zero():
    spec = MlpSpec((3, 4, 2), output_activation=RELU)
    params = [LinearLayer.zeros(3, 4), LinearLayer.zeros(4, 2)]
    out, _ = mlp_forward(spec, params, np.array([1.0, -2.0, 5.0]))
    assert out.tolist() == [0.0, 0.0]


def test_single_layer_example():
    spec = MlpSpec((1, 1), output_activation=RELU)
    out, _ = mlp_forward(spec, [LinearLayer([[2.0]], [1.0])], np.array([3.0]))
    assert out.tolist() == [7.0]


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(1)
    spec = MlpSpec((5, 7, 3), output_activation=RELU)
    params = spec.init_params(rng)
    for layer in params:
        layer.bias[:] = rng.normal(size=layer.out_dim)
    for _ in range(10):
        x = rng.normal(size=5)
        out, _ = mlp_forward(spec, params, x)
        np.testing.assert_allclose(out, loop_forward(spec, params, x), rtol=0, atol=1e-12)


def test_batched_forward_equals_rowwise():
    rng = np.random.default_rng(2)
    spec = MlpSpec((4, 6, 6, 2))
    params = spec.init_params(rng)
    x = rng.normal(size=(9, 4))
    batched, _ = mlp_forward(spec, params, x)
    rows = np.stack([mlp_forward(spec, params, r)[0] for r in x])
    np.testing.assert_allclose(batched, rows, atol=1e-14)


def test_shape_error_names_layer():
    spec = MlpSpec((3, 4, 2))
    params = spec.init_params(np.random.default_rng(0))
    with pytest.raises(ShapeError, match="layer 0"):
        mlp_forward(spec, params, np.ones(5))
    bad = [params[0], LinearLayer.zeros(5, 2)]
    with pytest.raises(ShapeError, match="layer 1"):
        mlp_forward(spec, bad, np.ones(3))


def test_backward_zero_upstream():
    rng = np.random.default_rng(3)
    spec = MlpSpec((3, 5, 2))
    params = spec.init_params(rng)
    _, cache = mlp_forward(spec, params, rng.normal(size=3))
    grads, gin = mlp_backward(spec, params, cache, np.zeros(2))
    assert all(not g.weights.any() and not g.bias.any() for g in grads)
    assert not gin.any()


def test_backward_single_linear_layer():
    spec = MlpSpec((3, 2))
    layer = LinearLayer(np.arange(6.0).reshape(2, 3), np.zeros(2))
    x = np.array([1.0, -2.0, 0.5])
    up = np.array([0.3, -1.2])
    _, cache = mlp_forward(spec, [layer], x)
    (g,), gin = mlp_backward(spec, [layer], cache, up)
    np.testing.assert_allclose(g.weights, np.outer(up, x))
    np.testing.assert_allclose(g.bias, up)
    np.testing.assert_allclose(gin, layer.weights.T @ up)


def test_backward_cache_mismatch():
    spec = MlpSpec((3, 4, 2))
    params = spec.init_params(np.random.default_rng(0))
    _, cache = mlp_forward(spec, params, np.ones(3))
    with pytest.raises(ShapeError):
        mlp_backward(spec, params, cache[:1], np.ones(2))


def _mlp_loss(spec, params, x, target):
    def fn():
        out, cache = mlp_forward(spec, params, x)
        diff = out - target
        grads, _ = mlp_backward(spec, params, cache, diff)
        return 0.5 * float(np.sum(diff * diff)), layer_arrays(grads)
    return fn


def _random_mlp(rng, dims):
    spec = MlpSpec(tuple(int(v) for v in dims), leaky_relu(0.2), IDENTITY)
    params = spec.init_params(rng)
    for layer in params:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.out_dim)
    x = rng.normal(size=(3, spec.layer_dims[0]))
    target = rng.normal(size=(3, spec.layer_dims[-1]))
    _, cache = mlp_forward(spec, params, x)
    hidden = [z for _, z in cache[:-1]]
    kink = min((np.abs(z).min() for z in hidden), default=np.inf)
    return params, _mlp_loss(spec, params, x, target), kink


def _fd_entries(fn, params, h=1e-5):
    """Per-entry (analytic, central FD) pairs."""
    _, grads = fn()
    out = []
    for arr, g in zip(params, grads):
        flat, gflat = arr.reshape(-1), np.asarray(g).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = fn()[0]
            flat[j] = orig - h
            down = fn()[0]
            flat[j] = orig
            out.append((gflat[j], (up - down) / (2 * h)))
    return np.array(out)


def test_backward_is_exact_on_random_networks():
    # The pure relative error is ill-conditioned in two ways that have nothing
    # to do with backprop: a pre-activation within h of the kink, and entries
    # whose true gradient (~1e-7) is comparable to FD rounding (~1e-11).
    # Kinks are screened out; rounding-limited failures must be rare and
    # every one of them must be explained by a tiny gradient entry.
    checked = failed = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        dims = rng.integers(1, 33, size=rng.integers(2, 5))
        params, fn, kink = _random_mlp(rng, dims)
        if kink < 1e-3:
            continue
        checked += 1
        arrays = layer_arrays(params)
        if grad_check(fn, arrays) < 1e-5:
            continue
        failed += 1
        pairs = _fd_entries(fn, arrays)
        bad = np.abs(pairs[:, 0] - pairs[:, 1]) > 1e-5 * np.abs(pairs).sum(axis=1)
        assert np.all(np.abs(pairs[bad, 0]) < 1e-5), seed
        assert np.all(np.abs(pairs[bad, 0] - pairs[bad, 1]) < 1e-9), seed
    assert checked >= 80
    assert failed <= 0.05 * checked


@settings(max_examples=25, deadline=None)
@given(dims=st.lists(st.integers(1, 32), min_size=2, max_size=4), seed=st.integers(0, 2**31))
def test_backward_matches_fd_everywhere(dims, seed):
    params, fn, kink = _random_mlp(np.random.default_rng(seed), dims)
    if kink < 1e-3:
        return
    pairs = _fd_entries(fn, layer_arrays(params))
    err = np.abs(pairs[:, 0] - pairs[:, 1])
    assert np.all(err <= 1e-5 * np.abs(pairs).sum(axis=1) + 1e-9)


def test_backward_fd_with_relu_output():
    rng = np.random.default_rng(7)
    spec = MlpSpec((6, 10, 4), leaky_relu(0.2), RELU)
    params = spec.init_params(rng)
    x = rng.normal(size=6)
    target = rng.normal(size=4)
    assert grad_check(_mlp_loss(spec, params, x, target), layer_arrays(params)) < 1e-5


def test_identity_network_is_affine():
    rng = np.random.default_rng(4)
    spec = MlpSpec((4, 5, 3), IDENTITY, IDENTITY)
    params = spec.init_params(rng)
    for layer in params:
        layer.bias[:] = rng.normal(size=layer.out_dim)
    x = rng.normal(size=4)
    f0 = mlp_forward(spec, params, np.zeros(4))[0]
    for alpha in (-2.0, 0.5, 3.0):
        lhs = mlp_forward(spec, params, alpha * x)[0]
        rhs = alpha * mlp_forward(spec, params, x)[0] - (alpha - 1) * f0
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_init_bounds_and_zero_bias():
    layer = LinearLayer.init(16, 8, np.random.default_rng(0))
    assert np.all(np.abs(layer.weights) <= 0.25) and not layer.bias.any()


def test_adam_zero_grad_fresh_state():
    params = [LinearLayer(np.array([[1.0, 2.0]]), np.array([3.0]))]
    before = params[0].copy()
    state = AdamState.zeros_like(params)
    adam_step(params, [params[0].zeros_like()], state, 1e-3)
    np.testing.assert_array_equal(params[0].weights, before.weights)
    np.testing.assert_array_equal(params[0].bias, before.bias)
    assert state.step_count == 1


def test_adam_first_step_moves_by_lr():
    params = [LinearLayer(np.array([[1.0]]), np.array([0.0]))]
    state = AdamState.zeros_like(params)
    adam_step(params, [LinearLayer(np.array([[0.5]]), np.array([-2.0]))], state, 1e-4)
    assert params[0].weights[0, 0] == pytest.approx(1.0 - 1e-4, abs=1e-10)
    assert params[0].bias[0] == pytest.approx(1e-4, abs=1e-10)


def textbook_adam(w, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return w


def test_adam_minimizes_quadratic():
    expected = textbook_adam(1.0, lambda w: 2 * w, 0.05, 200)
    params = [LinearLayer(np.array([[1.0]]), np.array([0.0]))]
    state = AdamState.zeros_like(params)
    for _ in range(200):
        w = params[0].weights[0, 0]
        adam_step(params, [LinearLayer(np.array([[2 * w]]), np.array([0.0]))], state, 0.05)
    assert params[0].weights[0, 0] == pytest.approx(expected, abs=1e-12)
    assert abs(params[0].weights[0, 0]) < 0.05
    assert state.step_count == 200
    assert all((v.weights >= 0).all() for v in state.second_moment)


def test_adam_deterministic():
    rng = np.random.default_rng(5)
    spec = MlpSpec((3, 4, 2))
    base = spec.init_params(rng)
    grads = [LinearLayer(rng.normal(size=p.weights.shape), rng.normal(size=p.bias.shape)) for p in base]
    results = []
    for _ in range(2):
        params = [p.copy() for p in base]
        state = AdamState.zeros_like(params)
        for _ in range(3):
            adam_step(params, grads, state, 1e-2)
        results.append(b"".join(a.tobytes() for a in layer_arrays(params)))
    assert results[0] == results[1]


def test_adam_rejects_nonfinite():
    params = [LinearLayer.zeros(2, 1), LinearLayer.zeros(1, 1)]
    state = AdamState.zeros_like(params)
    grads = [LinearLayer.zeros(2, 1), LinearLayer(np.array([[np.nan]]), np.zeros(1))]
    with pytest.raises(NumericError, match="layer 1"):
        adam_step(params, grads, state, 1e-3)


def test_grad_check_examples():
    w = np.array([3.0])
    assert grad_check(lambda: (float(w[0] ** 2), [2 * w]), [w]) < 1e-9
    c = np.array([1.0, 2.0])
    assert grad_check(lambda: (5.0, [np.zeros(2)]), [c]) == 0.0


def test_grad_check_nonfinite():
    w = np.array([1.0])
    with pytest.raises(NumericError):
        grad_check(lambda: (float("nan"), [np.zeros(1)]), [w])

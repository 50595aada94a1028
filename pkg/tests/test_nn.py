import numpy as np
import pytest

from acorn import nn


def test_init_params_deterministic():
    spec = nn.MlpSpec((3, 5, 2))
    a = nn.init_params(spec, seed=42)
    b = nn.init_params(spec, seed=42)
    np.testing.assert_array_equal(a.flat, b.flat)
    assert np.any(nn.init_params(spec, seed=43).flat != a.flat)


def test_init_params_biases_zero():
    spec = nn.MlpSpec((4, 6, 3))
    params = nn.init_params(spec, seed=0)
    for layer in range(spec.n_layers):
        np.testing.assert_array_equal(params.biases(layer), 0.0)


def test_init_params_glorot_mean():
    # one big layer: uniform(+-b) with b = sqrt(6/(fan_in+fan_out))
    spec = nn.MlpSpec((100, 100))
    params = nn.init_params(spec, seed=1)
    w = params.weights(0)
    bound = np.sqrt(6.0 / 200.0)
    se = bound / np.sqrt(3.0 * w.size)
    assert abs(w.mean()) < 3.0 * se
    assert np.abs(w).max() <= bound


def test_spec_validation():
    with pytest.raises(ValueError):
        nn.MlpSpec((3,))
    with pytest.raises(ValueError):
        nn.MlpSpec((3, 0, 2))
    with pytest.raises(ValueError):
        nn.MlpSpec((3, 2), activation="sigmoid")


def test_forward_zero_params():
    spec = nn.MlpSpec((3, 4, 2))
    params = nn.ParamVector.zeros(spec)
    out, _ = nn.forward(params, spec, np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(out, np.zeros(2))


def test_forward_identity_single_layer():
    spec = nn.MlpSpec((3, 3))
    params = nn.ParamVector.zeros(spec)
    params.weights(0)[...] = np.eye(3)
    x = np.array([0.5, -1.5, 2.0])
    out, _ = nn.forward(params, spec, x)
    np.testing.assert_array_equal(out, x)


def test_forward_matches_hand_matrix_algebra():
    # 3-4-2 tanh net against an explicit matrix-multiply oracle
    spec = nn.MlpSpec((3, 4, 2), activation="tanh")
    params = nn.init_params(spec, seed=7)
    x = np.array([0.3, -0.8, 1.1])
    w1, b1 = params.weights(0), params.biases(0)
    w2, b2 = params.weights(1), params.biases(1)
    expected = w2 @ np.tanh(w1 @ x + b1) + b2
    out, _ = nn.forward(params, spec, x)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_forward_rejects_bad_width():
    spec = nn.MlpSpec((3, 2))
    params = nn.ParamVector.zeros(spec)
    with pytest.raises(ValueError):
        nn.forward(params, spec, np.zeros(4))


def test_backward_zero_grad_output():
    spec = nn.MlpSpec((3, 4, 2))
    params = nn.init_params(spec, seed=3)
    _, tape = nn.forward(params, spec, np.array([1.0, 2.0, 3.0]))
    grads, grad_in = nn.backward(params, spec, tape, np.zeros(2))
    np.testing.assert_array_equal(grads.flat, 0.0)
    np.testing.assert_array_equal(grad_in, 0.0)


def test_backward_linear_closed_form():
    # single linear layer: d(out.g)/dW = outer(g, x), d/db = g, d/dx = W^T g
    spec = nn.MlpSpec((3, 2))
    params = nn.init_params(spec, seed=5)
    x = np.array([0.7, -0.2, 1.3])
    g = np.array([0.5, -1.0])
    _, tape = nn.forward(params, spec, x)
    grads, grad_in = nn.backward(params, spec, tape, g)
    np.testing.assert_allclose(grads.weights(0), np.outer(g, x), atol=1e-14)
    np.testing.assert_allclose(grads.biases(0), g, atol=1e-14)
    np.testing.assert_allclose(grad_in, params.weights(0).T @ g, atol=1e-14)


def test_backward_matches_finite_differences_randomized():
    # randomized specs (widths <= 8, depth <= 3), 100 trials
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        depth = int(rng.integers(1, 4))
        widths = tuple(int(rng.integers(1, 9)) for _ in range(depth + 1))
        spec = nn.MlpSpec(widths, activation="tanh")
        params = nn.init_params(spec, seed=int(rng.integers(1 << 30)))
        x = rng.standard_normal(widths[0])
        g = rng.standard_normal(widths[-1])

        def loss_fn(flat):
            p = nn.ParamVector(flat, spec.layout())
            out, tape = nn.forward(p, spec, x)
            grads, _ = nn.backward(p, spec, tape, g)
            return float(out @ g), grads.flat

        worst = max(worst, nn.grad_check(loss_fn, params.flat, eps=1e-5))
    assert worst < 1e-4


def test_backward_relu_matches_finite_differences():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 20:
        widths = (3, 6, 4)
        spec = nn.MlpSpec(widths, activation="relu")
        params = nn.init_params(spec, seed=int(rng.integers(1 << 30)))
        x = rng.standard_normal(3)
        _, tape = nn.forward(params, spec, x)
        # skip kink-adjacent instances: FD straddles the relu corner there
        if min(np.abs(t).min() for t in tape.pre[:-1]) < 1e-3:
            continue
        g = rng.standard_normal(4)

        def loss_fn(flat):
            p = nn.ParamVector(flat, spec.layout())
            out, tp = nn.forward(p, spec, x)
            grads, _ = nn.backward(p, spec, tp, g)
            return float(out @ g), grads.flat

        assert nn.grad_check(loss_fn, params.flat, eps=1e-6) < 1e-4
        checked += 1


def test_backward_batch_sums_over_samples():
    spec = nn.MlpSpec((3, 5, 2))
    params = nn.init_params(spec, seed=11)
    xs = np.random.default_rng(0).standard_normal((4, 3))
    g = np.ones((4, 2))
    _, tape = nn.forward(params, spec, xs)
    grads, _ = nn.backward(params, spec, tape, g)
    acc = np.zeros_like(params.flat)
    for i in range(4):
        _, t1 = nn.forward(params, spec, xs[i])
        g1, _ = nn.backward(params, spec, t1, g[i])
        acc += g1.flat
    np.testing.assert_allclose(grads.flat, acc, atol=1e-12)


def test_grad_check_quadratic_is_exact():
    def loss_fn(p):
        return float(0.5 * p @ p), p.copy()

    params = np.random.default_rng(1).standard_normal(20)
    assert nn.grad_check(loss_fn, params, eps=1e-5) < 1e-8


def test_grad_check_catches_corrupted_gradient():
    def loss_fn(p):
        grad = p.copy()
        grad[3] += 1.0
        return float(0.5 * p @ p), grad

    params = np.random.default_rng(2).standard_normal(10)
    assert nn.grad_check(loss_fn, params, eps=1e-5) > 0.1


def test_adam_zero_gradient_fresh_state():
    spec = nn.MlpSpec((2, 2))
    params = nn.init_params(spec, seed=0)
    state = nn.AdamState.zeros(params.flat.size)
    new, state2 = nn.adam_step(params, nn.ParamVector.zeros(spec), state, nn.AdamConfig())
    np.testing.assert_array_equal(new.flat, params.flat)
    np.testing.assert_array_equal(state2.m, 0.0)
    np.testing.assert_array_equal(state2.v, 0.0)
    assert state2.t == 1


def test_adam_zero_gradient_decays_moments():
    spec = nn.MlpSpec((2, 2))
    params = nn.init_params(spec, seed=0)
    state = nn.AdamState(m=np.full(params.flat.size, 0.5), v=np.full(params.flat.size, 0.25), t=3)
    cfg = nn.AdamConfig()
    _, state2 = nn.adam_step(params, nn.ParamVector.zeros(spec), state, cfg)
    np.testing.assert_allclose(state2.m, 0.5 * cfg.beta1)
    np.testing.assert_allclose(state2.v, 0.25 * cfg.beta2)


def test_adam_first_step_magnitude():
    # constant gradient, fresh state: update is ~ lr * sign(g)
    spec = nn.MlpSpec((2, 3))
    params = nn.ParamVector.zeros(spec)
    grads = nn.ParamVector(np.full(spec.n_params, 0.7), spec.layout())
    grads.flat[::2] *= -1.0
    cfg = nn.AdamConfig(lr=1e-3)
    new, _ = nn.adam_step(params, grads, nn.AdamState.zeros(spec.n_params), cfg)
    np.testing.assert_allclose(new.flat, -cfg.lr * np.sign(grads.flat), rtol=1e-6)


def test_adam_deterministic():
    spec = nn.MlpSpec((3, 3))
    rng = np.random.default_rng(9)
    gsteps = [rng.standard_normal(spec.n_params) for _ in range(5)]

    def run():
        p = nn.init_params(spec, seed=4)
        st = nn.AdamState.zeros(spec.n_params)
        for g in gsteps:
            p, st = nn.adam_step(p, nn.ParamVector(g.copy(), spec.layout()), st, nn.AdamConfig())
        return p.flat

    np.testing.assert_array_equal(run(), run())


def test_param_file_round_trip(tmp_path):
    spec = nn.MlpSpec((4, 7, 3), activation="relu")
    params = nn.init_params(spec, seed=123)
    path = tmp_path / "net.params.json"
    nn.save_params(path, spec, params, seed=123, steps=77)
    spec2, params2, seed, steps = nn.load_params(path)
    assert spec2 == spec and seed == 123 and steps == 77
    np.testing.assert_array_equal(params2.flat, params.flat)


def test_param_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ValueError):
        nn.load_params(path)

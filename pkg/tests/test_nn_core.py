"""Network engine tests: hand-computed forwards and Jacobians, finite
difference gradient oracles, Adam closed forms, determinism, serialization."""

import numpy as np
import pytest

from odeident import nn_core
from odeident.nn_core import (AdamState, EulerResidualLoss,
                              LipschitzPenalizedMse, MlpModel, MlpSpec,
                              MseLoss, ShapeError, SpecError, adam_step, fit,
                              lrelu, mlp_forward, mlp_init,
                              mlp_input_jacobian, mlp_param_gradients)


def affine_model(w, b):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    spec = MlpSpec(w.shape[1], w.shape[0], ())
    return MlpModel(spec, [w], [np.asarray(b, dtype=float)])


def test_lrelu_values():
    assert lrelu(0.0, 0.01) == 0.0
    assert lrelu(2.0, 0.01) == 2.0
    assert lrelu(-1.0, 0.01) == pytest.approx(-0.01, abs=0)


def test_spec_validation():
    with pytest.raises(SpecError):
        MlpSpec(1, 1, (10, 0, 10))
    with pytest.raises(SpecError):
        MlpSpec(0, 1, (10,))
    with pytest.raises(SpecError):
        MlpSpec(1, 1, (10,), lrelu_slope=1.5)
    assert MlpSpec(1, 1, (20,) * 8).layer_widths == (1,) + (20,) * 8 + (1,)
    assert MlpSpec(2, 2, (60,) * 5).layer_widths == (2,) + (60,) * 5 + (2,)


def test_init_deterministic():
    spec = MlpSpec(1, 1, (10, 10), seed=7)
    a, b = mlp_init(spec), mlp_init(spec)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(a.biases, b.biases):
        assert np.array_equal(ba, bb)
    assert all(np.all(bv == 0.0) for bv in a.biases)


def test_forward_single_affine_layer():
    model = affine_model([[2.0]], [1.0])
    assert mlp_forward(model, [3.0]) == pytest.approx([7.0], abs=0)


def test_forward_two_layer_hand_case():
    spec = MlpSpec(1, 1, (1,))
    model = MlpModel(spec, [np.array([[1.0]]), np.array([[3.0]])],
                     [np.array([-2.0]), np.array([0.0])])
    # pre-activation 1 - 2 = -1, lrelu -> -0.01, times 3 -> -0.03
    assert mlp_forward(model, [1.0]) == pytest.approx([-0.03], rel=1e-15)


def test_forward_zero_model():
    spec = MlpSpec(3, 2, (4,))
    model = MlpModel(spec, [np.zeros((4, 3)), np.zeros((2, 4))],
                     [np.zeros(4), np.zeros(2)])
    assert np.array_equal(mlp_forward(model, [5.0, -1.0, 2.0]), np.zeros(2))


def test_forward_errors():
    model = affine_model([[2.0]], [1.0])
    with pytest.raises(ShapeError):
        mlp_forward(model, [1.0, 2.0])
    with pytest.raises(ShapeError):
        mlp_forward(model, [np.nan])


def test_jacobian_affine_equals_weights():
    w = np.array([[1.5, -2.0], [0.5, 3.0]])
    model = affine_model(w, [0.1, -0.2])
    assert np.array_equal(mlp_input_jacobian(model, [0.3, 0.7]), w)


def test_jacobian_two_layer_hand_case():
    spec = MlpSpec(1, 1, (1,))
    model = MlpModel(spec, [np.array([[1.0]]), np.array([[3.0]])],
                     [np.array([-2.0]), np.array([0.0])])
    assert mlp_input_jacobian(model, [1.0])[0, 0] == pytest.approx(0.03, rel=1e-15)


def test_jacobian_matches_finite_differences():
    model = mlp_init(MlpSpec(2, 2, (10,), seed=3))
    rng = np.random.default_rng(0)
    h = 1e-5
    checked = 0
    for _ in range(20):
        x = rng.uniform(-1, 1, size=2)
        # keep every pre-activation away from its kink
        _, pre_acts, _ = nn_core._forward_cached(model, x[None, :])
        if min(np.min(np.abs(a)) for a in pre_acts[:-1]) < 1e-3:
            continue
        jac = mlp_input_jacobian(model, x)
        for m in range(2):
            xp, xm = x.copy(), x.copy()
            xp[m] += h
            xm[m] -= h
            fd = (mlp_forward(model, xp) - mlp_forward(model, xm)) / (2 * h)
            assert np.max(np.abs(jac[:, m] - fd)) <= 1e-5
        checked += 1
    assert checked >= 5


def test_param_gradients_zero_loss():
    model = mlp_init(MlpSpec(1, 1, (5,), seed=1))
    x = np.array([[0.3], [0.8]])
    y = mlp_forward(model, x)
    value, gw, gb = mlp_param_gradients(model, x, y, MseLoss())
    assert value == 0.0
    assert all(np.max(np.abs(g)) == 0.0 for g in gw + gb)


def test_param_gradient_linear_closed_form():
    model = affine_model([[1.5]], [0.0])
    x, y = np.array([[2.0]]), np.array([[1.0]])
    value, gw, _ = mlp_param_gradients(model, x, y, MseLoss())
    # residual Wx - y = 2; loss 4; dL/dW = 2(Wx - y)x = 8
    assert value == pytest.approx(4.0, abs=0)
    assert gw[0][0, 0] == pytest.approx(2 * (1.5 * 2 - 1) * 2, rel=1e-15)


def _fd_param_check(model, x, y, loss, n_probes=20, h=1e-6, rel_tol=1e-4):
    value, gw, gb = mlp_param_gradients(model, x, y, loss)
    rng = np.random.default_rng(11)
    params = [(True, h_, i, j) for h_, w in enumerate(model.weights)
              for i in range(w.shape[0]) for j in range(w.shape[1])]
    params += [(False, h_, i, None) for h_, b in enumerate(model.biases)
               for i in range(b.shape[0])]
    picks = rng.choice(len(params), size=min(n_probes, len(params)),
                       replace=False)
    for k in picks:
        is_w, layer, i, j = params[k]
        for sgn in (+1, -1):
            m2 = model.copy()
            if is_w:
                m2.weights[layer][i, j] += sgn * h
            else:
                m2.biases[layer][i] += sgn * h
            v = mlp_param_gradients(m2, x, y, loss)[0]
            if sgn > 0:
                vp = v
            else:
                vm = v
        fd = (vp - vm) / (2 * h)
        g = gw[layer][i, j] if is_w else gb[layer][i]
        denom = max(abs(fd), abs(g), 1e-8)
        assert abs(fd - g) / denom <= rel_tol, (is_w, layer, i, j, fd, g)


def test_param_gradients_match_fd_mse():
    model = mlp_init(MlpSpec(2, 2, (8, 8), seed=5))
    rng = np.random.default_rng(2)
    x = rng.uniform(0.1, 1.0, size=(30, 2))
    y = rng.normal(size=(30, 2))
    _fd_param_check(model, x, y, MseLoss())


def test_param_gradients_match_fd_euler():
    model = mlp_init(MlpSpec(2, 2, (8,), seed=6))
    rng = np.random.default_rng(3)
    x = rng.uniform(0.1, 1.0, size=(25, 2))
    y = x + 0.04 * rng.normal(size=(25, 2))
    _fd_param_check(model, x, y, EulerResidualLoss(0.04))


def test_param_gradients_match_fd_lipschitz_penalty():
    model = mlp_init(MlpSpec(2, 1, (8,), seed=9))
    rng = np.random.default_rng(4)
    x = rng.uniform(-1.0, 1.0, size=(20, 2))
    y = rng.normal(size=(20, 1))
    pts = rng.uniform(-1.0, 1.0, size=(50, 2))
    loss = LipschitzPenalizedMse(0.1, pts)
    _fd_param_check(model, x, y, loss, rel_tol=1e-4)


def test_lipschitz_penalty_gradient_value_affine():
    model = affine_model([[3.0, -4.0]], [0.5])
    pts = np.random.default_rng(0).uniform(-1, 1, size=(100, 2))
    value, gw, gb = nn_core.lipschitz_penalty_gradients(model, pts)
    assert value == 4.0
    # d(max |W|)/dW picks out the argmax entry with the sign of the weight
    assert np.array_equal(gw[0], np.array([[0.0, -1.0]]))
    assert np.all(gb[0] == 0.0)


def test_adam_zero_gradients():
    model = mlp_init(MlpSpec(1, 1, (4,), seed=2))
    state = AdamState.initial(model)
    gz_w = [np.zeros_like(w) for w in model.weights]
    gz_b = [np.zeros_like(b) for b in model.biases]
    new_model, new_state = adam_step(model, gz_w, gz_b, state)
    for a, b in zip(model.weights, new_model.weights):
        assert np.array_equal(a, b)
    assert new_state.step_count == 1


def test_adam_first_step_magnitude():
    model = affine_model([[1.0]], [0.0])
    state = AdamState.initial(model, learning_rate=1e-3)
    g = [np.array([[0.37]])]
    gb = [np.array([0.0])]
    new_model, _ = adam_step(model, g, gb, state)
    # bias correction makes mhat/sqrt(vhat) = sign(g) on step one
    assert new_model.weights[0][0, 0] == pytest.approx(1.0 - 1e-3, rel=1e-6)


def test_adam_deterministic():
    model = mlp_init(MlpSpec(1, 1, (4,), seed=2))
    state = AdamState.initial(model)
    g_w = [np.ones_like(w) for w in model.weights]
    g_b = [np.ones_like(b) for b in model.biases]
    m1, s1 = adam_step(model, g_w, g_b, state)
    m2, s2 = adam_step(model, g_w, g_b, state)
    for a, b in zip(m1.weights, m2.weights):
        assert np.array_equal(a, b)
    assert s1.step_count == s2.step_count


def test_fit_decreases_loss_and_is_deterministic():
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, size=(100, 1))
    y = 2.0 * x + 0.3
    def run():
        model = mlp_init(MlpSpec(1, 1, (8,), seed=12))
        return fit(model, x, y, MseLoss(), epochs=500, learning_rate=1e-2)
    r1, r2 = run(), run()
    assert r1.final_loss < r1.initial_loss
    assert r1.final_loss < 1e-3
    for a, b in zip(r1.model.weights, r2.model.weights):
        assert np.array_equal(a, b)


def test_fit_stopping_rules_exclusive():
    model = mlp_init(MlpSpec(1, 1, (4,), seed=0))
    x = np.zeros((5, 1))
    y = np.zeros((5, 1))
    with pytest.raises(ValueError):
        fit(model, x, y, MseLoss())
    with pytest.raises(ValueError):
        fit(model, x, y, MseLoss(), epochs=5, target_mse=1e-3)


def test_output_layer_scaling_property():
    model = mlp_init(MlpSpec(2, 2, (6,), seed=4))
    x = np.random.default_rng(1).uniform(-1, 1, size=(10, 2))
    base = mlp_forward(model, x)
    scaled = nn_core.scale_output_layer(model, 2.5)
    assert np.allclose(mlp_forward(scaled, x), 2.5 * base, rtol=1e-14)


def test_affine_composition_jacobian_is_weight_product():
    # biases shift pre-activations positive over the probe box, so the
    # LReLU acts as the identity and the net is affine there
    spec = MlpSpec(2, 2, (3,))
    w0 = np.array([[0.2, -0.1], [0.3, 0.4], [-0.2, 0.1]])
    w1 = np.array([[1.0, -1.0, 0.5], [0.2, 0.3, -0.4]])
    model = MlpModel(spec, [w0, w1], [np.full(3, 10.0), np.zeros(2)])
    x = np.array([0.3, -0.6])
    assert np.allclose(mlp_input_jacobian(model, x), w1 @ w0, atol=1e-15)


def test_serialization_round_trip(tmp_path):
    model = mlp_init(MlpSpec(3, 2, (7, 5), seed=13, lrelu_slope=0.01))
    p = tmp_path / "model.json"
    nn_core.save_model(model, p)
    loaded = nn_core.load_model(p)
    assert loaded.spec == model.spec
    for a, b in zip(model.weights, loaded.weights):
        assert np.array_equal(a, b)
    for a, b in zip(model.biases, loaded.biases):
        assert np.array_equal(a, b)


def test_serialization_rejects_unknown_version():
    model = mlp_init(MlpSpec(1, 1, (2,), seed=0))
    d = nn_core.model_to_dict(model)
    d["format_version"] = 99
    with pytest.raises(ValueError):
        nn_core.model_from_dict(d)

"""MLP forward against a straight-line oracle; Adam against a scalar
recurrence oracle."""

import numpy as np
import pytest

from adex.nn import AdamState, NonFiniteGradient, adam_step, clip_global_norm
from adex.nn.layers import Layer, init_layer, mlp_forward
from adex.nn.tensor import ShapeError, Tensor, _data
from adex.nn.rng import RngStream


def const_layer(W, b, act="identity"):
    return Layer(Tensor(np.asarray(W, dtype=np.float64)),
                 Tensor(np.asarray(b, dtype=np.float64)), act)


def test_zero_weights_give_activated_bias():
    layer = const_layer(np.zeros((3, 2)), [0.7, -0.2], "relu")
    out = _data(mlp_forward([layer], np.ones((5, 3))))
    assert np.allclose(out, np.maximum([0.7, -0.2], 0.0))


def test_identity_layer_passes_input_through():
    layer = const_layer(np.eye(4), np.zeros(4), "identity")
    x = np.arange(8.0).reshape(2, 4)
    assert np.array_equal(_data(mlp_forward([layer], x)), x)


def test_against_straight_line_oracle(rng):
    # oracle: explicit matrix arithmetic, no Layer machinery
    gen = rng.child("net").gen
    W1 = gen.standard_normal((2, 3))
    b1 = gen.standard_normal(3)
    W2 = gen.standard_normal((3, 1))
    b2 = gen.standard_normal(1)
    x = gen.standard_normal((7, 2))
    layers = [const_layer(W1, b1, "relu"), const_layer(W2, b2, "identity")]
    got = _data(mlp_forward(layers, x))
    expected = np.maximum(x @ W1 + b1, 0.0) @ W2 + b2
    assert np.max(np.abs(got - expected)) < 1e-12


def test_width_mismatch_names_layer():
    layers = [const_layer(np.zeros((3, 2)), np.zeros(2))]
    with pytest.raises(ShapeError, match="layer 0"):
        mlp_forward(layers, np.zeros((1, 4)))


def test_unknown_activation_rejected():
    with pytest.raises(ShapeError, match="activation"):
        mlp_forward([const_layer(np.zeros((2, 2)), np.zeros(2), "tanh")],
                    np.zeros((1, 2)))


def test_init_layer_bounds():
    layer = init_layer(RngStream(0).gen, 64, 32, "relu")
    bound = np.sqrt(6.0 / (64 + 32))
    assert np.all(np.abs(layer.W.data) <= bound)
    assert np.all(layer.b.data == 0)
    assert layer.W.dtype == np.float32


# -- adam ------------------------------------------------------------------------

def params_of(values):
    return {name: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
            for name, v in values.items()}


def test_zero_gradient_leaves_parameters_unchanged():
    p = params_of({"w": [1.0, -2.0]})
    st = AdamState()
    adam_step(p, {"w": np.zeros(2)}, st, lr=0.1)
    assert np.array_equal(p["w"].data, [1.0, -2.0])
    assert st.step == 1


def test_first_step_is_signed_lr():
    p = params_of({"w": [1.0, 1.0]})
    st = AdamState(beta1=0.8, beta2=0.998, eps=1e-8)
    g = np.array([0.3, -4.0])
    adam_step(p, {"w": g}, st, lr=0.01)
    # closed form at t=1: delta = -lr * g / (|g| + eps)
    expected = 1.0 - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p["w"].data, expected, rtol=1e-12)
    assert np.allclose(p["w"].data, 1.0 - 0.01 * np.sign(g), atol=1e-8)


def test_two_steps_match_scalar_recurrence_oracle():
    # oracle: the update recurrence unrolled by hand on a scalar
    lr, b1, b2, eps, g = 0.05, 0.9, 0.999, 1e-8, 0.7
    w = 0.2
    m = v = 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    p = params_of({"w": [0.2]})
    st = AdamState(beta1=b1, beta2=b2, eps=eps)
    adam_step(p, {"w": np.array([g])}, st, lr=lr)
    adam_step(p, {"w": np.array([g])}, st, lr=lr)
    assert p["w"].data[0] == pytest.approx(w, abs=1e-12)
    assert st.step == 2


def test_non_finite_gradient_rejected_with_name():
    p = params_of({"encoder.w": [1.0]})
    st = AdamState()
    with pytest.raises(NonFiniteGradient, match="encoder.w"):
        adam_step(p, {"encoder.w": np.array([np.nan])}, st, lr=0.1)
    assert st.step == 0
    assert p["encoder.w"].data[0] == 1.0


def test_shape_mismatch_rejected():
    p = params_of({"w": [1.0, 2.0]})
    with pytest.raises(ValueError, match="shape"):
        adam_step(p, {"w": np.zeros(3)}, AdamState(), lr=0.1)


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_global_norm(g, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.sqrt(sum(float(np.sum(x ** 2)) for x in g.values())) == pytest.approx(1.0)
    g2 = {"a": np.array([0.3])}
    clip_global_norm(g2, 1.0)
    assert g2["a"][0] == pytest.approx(0.3)

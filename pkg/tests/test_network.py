"""
Unit tests for the perceiver network: initialization, forward pass and
hand-written backward pass.
"""

import numpy as np
import pytest

from src.errors import NonFiniteError
from src.network import (
    DEFAULT_LAYER_SIZES,
    MlpModel,
    backward,
    forward,
    gradient_norm,
    init_model,
    init_scale,
    predict,
    relu,
)

TOY_SIZES = (8, 5, 5, 6)


def test_init_is_deterministic():
    """The same init seed gives identical weights."""
    a, b = init_model(11), init_model(11)
    for p, q in zip(a.params, b.params):
        assert np.array_equal(p, q)
    assert not np.array_equal(a.params[0], init_model(12).params[0])


def test_init_shapes_and_biases():
    """Layer shapes follow the sizes and biases start at zero."""
    model = init_model(11)
    assert [p.shape for p in model.params] == [(200, 2352), (200,), (200, 200), (200,), (1000, 200), (1000,)]
    for bias in model.params[1::2]:
        assert not np.any(bias)


def test_init_weight_scale():
    """Initial weight spread follows the fan-in scale of each layer."""
    model = init_model(11)
    for weights, fan_in in zip(model.params[0::2], DEFAULT_LAYER_SIZES[:-1]):
        assert weights.std() == pytest.approx(init_scale(fan_in), rel=0.2)


def test_output_is_in_tanh_range(rng):
    """Outputs lie strictly inside (-1, 1)."""
    model = init_model(11)
    out = forward(model, rng.uniform(0.0, 1.0, size=2352)).out
    assert out.shape == (1000,)
    assert np.all(np.abs(out) < 1.0)


def test_zero_model_outputs_zero(rng):
    """An all-zero model outputs the zero vector."""
    model = MlpModel.zeros()
    assert not np.any(forward(model, rng.uniform(0.0, 1.0, size=(3, 2352))).out)


def test_forward_validates_input():
    """Inputs of the wrong width or outside [0, 1] are rejected."""
    model = init_model(1, TOY_SIZES)
    with pytest.raises(ValueError):
        forward(model, np.zeros(9))
    with pytest.raises(ValueError):
        forward(model, np.full(8, 1.5))


def test_non_finite_parameters_are_rejected():
    """NaN parameters raise NonFiniteError."""
    model = init_model(1, TOY_SIZES)
    params = [p.copy() for p in model.params]
    params[2][0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        MlpModel(TOY_SIZES, params)
    with pytest.raises(NonFiniteError):
        gradient_norm([np.array([np.inf])])


def test_output_bias_gradient_of_zero_model(rng):
    """For the zero model the output bias gradient equals the upstream gradient."""
    model = MlpModel.zeros(TOY_SIZES)
    trace = forward(model, rng.uniform(0.0, 1.0, size=8))
    direction = rng.normal(size=6)
    grads = backward(model, trace, direction)
    np.testing.assert_array_equal(grads[5], direction)
    assert not np.any(grads[0])


def test_backward_matches_finite_differences(rng):
    """Backward agrees with central differences for every parameter."""
    model = init_model(3, TOY_SIZES)
    for p in model.params[1::2]:
        p += rng.normal(scale=0.1, size=p.shape)
    x = rng.uniform(0.0, 1.0, size=8)
    direction = rng.normal(size=6)

    def loss():
        return float(forward(model, x).out @ direction)

    grads = backward(model, forward(model, x), direction)
    eps = 1e-5
    for p, g in zip(model.params, grads):
        numeric = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            saved = p[idx]
            p[idx] = saved + eps
            up = loss()
            p[idx] = saved - eps
            down = loss()
            p[idx] = saved
            numeric[idx] = (up - down) / (2 * eps)
        rel = np.linalg.norm(g - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert rel < 1e-4


def test_batch_gradients_are_summed(rng):
    """Batch gradients are the sum of per-example gradients."""
    model = init_model(4, TOY_SIZES)
    x = rng.uniform(0.0, 1.0, size=(3, 8))
    g = rng.normal(size=(3, 6))
    batch = backward(model, forward(model, x), g)
    singles = [backward(model, forward(model, x[i]), g[i]) for i in range(3)]
    for k, total in enumerate(batch):
        np.testing.assert_allclose(total, sum(s[k] for s in singles), rtol=1e-12, atol=1e-14)


def test_first_layer_is_positively_homogeneous(rng):
    """Scaling the first layer by a positive factor scales its ReLU activations."""
    model = init_model(5, TOY_SIZES)
    x = rng.uniform(0.0, 1.0, size=8)
    h1 = forward(model, x).h1
    scaled = model.copy()
    scaled.params[0] *= 3.0
    scaled.params[1] *= 3.0
    np.testing.assert_allclose(forward(scaled, x).h1, 3.0 * h1, rtol=1e-12)
    assert np.array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])


def test_predict_matches_forward(rng):
    """predict returns the same outputs as forward."""
    model = init_model(6, TOY_SIZES)
    x = rng.uniform(0.0, 1.0, size=(10, 8))
    np.testing.assert_allclose(predict(model, x, batch_size=3), forward(model, x).out, rtol=1e-12)

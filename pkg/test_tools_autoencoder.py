import math

import numpy as np
import pytest

from tools_autoencoder import (
    NumericError,
    anomaly_score,
    init_model,
    input_gradient,
    mse_loss,
    output_gradient,
    parameter_gradients,
    reconstruct,
    score_and_input_gradient,
    train,
)
from tools_filter import windows_to_array

EPS = 1e-5
REL_TOL = 1e-4
# central differences at EPS cannot resolve differences below this
NOISE_FLOOR = 1e-9


def relative_error(analytic, numeric):
    """Largest elementwise relative error, each entry scaled by max(|analytic|, |numeric|, 1e-8)."""
    diff = np.abs(np.asarray(analytic) - np.asarray(numeric))
    diff = np.where(diff <= NOISE_FLOOR, 0.0, diff)
    return float(np.max(diff / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)))


def numeric_gradient(f, x):
    """Central differences of scalar f around array x."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        plus = x.copy()
        minus = x.copy()
        plus[idx] += EPS
        minus[idx] -= EPS
        grad[idx] = (f(plus) - f(minus)) / (2 * EPS)
    return grad


def random_models(count=20):
    rng = np.random.default_rng(1234)
    for seed in range(count):
        m = int(rng.integers(1, 4))
        l = int(rng.integers(1, 6))
        model = init_model(m, l, hidden_dim=int(rng.integers(1, 5)), latent_dim=int(rng.integers(1, 4)), seed=seed)
        # non-zero biases so every bias path carries gradient
        biased = {name: value + rng.normal(0, 0.1, value.shape)
                  for name, value in model.parameters().items() if name.endswith('bias')}
        yield model.with_parameters(biased), rng.uniform(0, 1, size=(l, m))


def test_init_model_shapes_and_forget_bias():
    model = init_model(3, 5, hidden_dim=4, latent_dim=2, seed=0)

    assert model.encoder.weight_input.shape == (16, 3)
    assert model.decoder.weight_input.shape == (16, 2)
    assert model.latent_weight.shape == (2, 4)
    assert model.output_weight.shape == (3, 4)
    np.testing.assert_array_equal(model.encoder.gate('forget')['bias'], np.ones(4))
    np.testing.assert_array_equal(model.encoder.gate('input')['bias'], np.zeros(4))
    assert np.abs(model.encoder.weight_hidden).max() <= 0.5


def test_init_model_is_seeded():
    a = init_model(2, 3, 4, 2, seed=7)
    b = init_model(2, 3, 4, 2, seed=7)
    c = init_model(2, 3, 4, 2, seed=8)
    for name, value in a.parameters().items():
        np.testing.assert_array_equal(value, b.parameters()[name])
    assert not np.array_equal(a.encoder.weight_input, c.encoder.weight_input)


def test_init_model_rejects_zero_sizes():
    with pytest.raises(ValueError):
        init_model(0, 3)


def lstm_by_hand(inputs, weight_input, weight_hidden, bias):
    """One LSTM layer unit by unit with scalar math; returns the hidden state per step."""
    hidden = len(weight_hidden[0])

    def sigmoid(z):
        return 1.0 / (1.0 + math.exp(-z))

    h = [0.0] * hidden
    c = [0.0] * hidden
    states = []
    for x in inputs:
        pre = [sum(weight_input[r][k] * x[k] for k in range(len(x)))
               + sum(weight_hidden[r][k] * h[k] for k in range(hidden)) + bias[r]
               for r in range(4 * hidden)]
        c = [sigmoid(pre[hidden + u]) * c[u] + sigmoid(pre[u]) * math.tanh(pre[2 * hidden + u])
             for u in range(hidden)]
        h = [sigmoid(pre[3 * hidden + u]) * math.tanh(c[u]) for u in range(hidden)]
        states.append(h)
    return states


def hand_set_model():
    model = init_model(2, 3, hidden_dim=2, latent_dim=2, seed=0)
    return model.with_parameters({
        'encoder.weight_input': np.linspace(-0.8, 0.7, 16).reshape(8, 2),
        'encoder.weight_hidden': np.linspace(0.6, -0.9, 16).reshape(8, 2),
        'encoder.bias': np.array([0.1, -0.2, 1.0, 1.0, 0.0, 0.3, -0.1, 0.2]),
        'decoder.weight_input': np.linspace(-0.5, 0.9, 16).reshape(8, 2),
        'decoder.weight_hidden': np.linspace(0.4, -0.4, 16).reshape(8, 2),
        'decoder.bias': np.array([0.0, 0.2, 1.0, 1.0, -0.3, 0.1, 0.05, -0.05]),
        'latent_weight': np.array([[0.7, -0.3], [0.2, 0.9]]),
        'latent_bias': np.array([0.05, -0.1]),
        'output_weight': np.array([[1.2, -0.4], [0.3, 0.8]]),
        'output_bias': np.array([0.5, -0.25]),
    })


def test_reconstruct_matches_hand_computation():
    model = hand_set_model()
    window = np.array([[0.2, 0.9], [0.4, 0.1], [0.8, 0.5]])
    params = {name: value.tolist() for name, value in model.parameters().items()}

    encoded = lstm_by_hand(window.tolist(), params['encoder.weight_input'], params['encoder.weight_hidden'],
                           params['encoder.bias'])[-1]
    code = [sum(params['latent_weight'][j][k] * encoded[k] for k in range(2)) + params['latent_bias'][j]
            for j in range(2)]
    decoded = lstm_by_hand([code] * 3, params['decoder.weight_input'], params['decoder.weight_hidden'],
                           params['decoder.bias'])
    expected = [[sum(params['output_weight'][j][k] * h[k] for k in range(2)) + params['output_bias'][j]
                 for j in range(2)] for h in decoded]

    np.testing.assert_allclose(reconstruct(model, window), expected, rtol=0, atol=1e-10)


def test_zero_weights_reconstruct_output_bias():
    model = init_model(3, 4, hidden_dim=5, latent_dim=2, seed=1)
    zeros = {name: np.zeros_like(value) for name, value in model.parameters().items()}
    model = model.with_parameters(zeros)
    window = np.random.default_rng(0).uniform(0, 1, size=(4, 3))

    np.testing.assert_array_equal(reconstruct(model, window), np.zeros((4, 3)))
    shifted = model.with_parameters({'output_bias': np.array([0.5, -1.0, 2.0])})
    np.testing.assert_array_equal(reconstruct(shifted, window), np.tile([0.5, -1.0, 2.0], (4, 1)))


def test_hidden_states_stay_bounded_for_extreme_inputs():
    model = hand_set_model()
    scaled = {name: 50.0 * value for name, value in model.parameters().items() if 'weight' in name}
    # identity projection exposes the decoder hidden states
    scaled['output_weight'] = np.eye(2)
    scaled['output_bias'] = np.zeros(2)
    model = model.with_parameters(scaled)
    windows = np.array([np.full((3, 2), 1e6), np.full((3, 2), -1e6), [[1e6, -1e6], [0.0, 1e6], [-1e6, 0.0]]])

    with np.errstate(over='raise', invalid='raise'):
        output = reconstruct(model, windows)
    assert np.all(np.isfinite(output))
    assert np.abs(output).max() <= 1.0


def test_reconstruct_shapes():
    model = init_model(2, 4, 3, 2, seed=0)
    window = np.zeros((4, 2))

    assert reconstruct(model, window).shape == (4, 2)
    assert reconstruct(model, np.zeros((5, 4, 2))).shape == (5, 4, 2)
    with pytest.raises(ValueError):
        reconstruct(model, np.zeros((3, 2)))


def test_mse_loss():
    assert mse_loss(np.ones((2, 2)), np.zeros((2, 2))) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mse_loss(np.ones((2, 2)), np.ones((2, 3)))


def test_parameter_gradients_match_finite_differences():
    for model, window in random_models():
        analytic = parameter_gradients(model, window)
        params = model.parameters()
        for name, value in params.items():
            def loss(candidate, name=name):
                perturbed = model.with_parameters({name: candidate})
                return mse_loss(window, reconstruct(perturbed, window))

            assert relative_error(analytic[name], numeric_gradient(loss, value)) <= REL_TOL, name


def test_input_gradient_matches_finite_differences():
    for model, window in random_models():
        analytic = input_gradient(model, window)
        numeric = numeric_gradient(lambda x: anomaly_score(model, x), window)
        assert relative_error(analytic, numeric) <= REL_TOL


def test_output_gradient_matches_finite_differences():
    for model, window in random_models(5):
        index = window.size - 1
        values, grads = output_gradient(model, window[None], index)
        numeric = numeric_gradient(lambda x: reconstruct(model, x).ravel()[index], window)

        assert values[0] == pytest.approx(reconstruct(model, window).ravel()[index])
        assert relative_error(grads[0], numeric) <= REL_TOL


def test_output_gradient_index_range():
    model = init_model(2, 3, 2, 2, seed=0)
    with pytest.raises(ValueError):
        output_gradient(model, np.zeros((1, 3, 2)), 6)


def test_batched_score_matches_single_windows():
    model = init_model(2, 3, 4, 2, seed=3)
    batch = np.random.default_rng(0).uniform(size=(4, 3, 2))
    scores, grads = score_and_input_gradient(model, batch)

    for i in range(4):
        assert scores[i] == pytest.approx(anomaly_score(model, batch[i]), rel=1e-12)
        np.testing.assert_allclose(grads[i], input_gradient(model, batch[i]), rtol=1e-10, atol=1e-12)


def test_zero_residual_has_zero_gradient():
    model = init_model(2, 3, 4, 2, seed=0)
    zero = model.with_parameters({name: np.zeros_like(value) for name, value in model.parameters().items()})
    window = np.zeros((3, 2))

    assert anomaly_score(zero, window) == 0.0
    np.testing.assert_array_equal(input_gradient(zero, window), np.zeros((3, 2)))


def test_training_reduces_loss(sine_table):
    windows = windows_to_array(sine_table, 4)[:64]
    model = init_model(2, 4, hidden_dim=8, latent_dim=4, seed=0)
    initial = np.mean([mse_loss(w, reconstruct(model, w)) for w in windows])

    trained, history = train(model, windows, epochs=50, learning_rate=1e-2, batch_size=8, seed=0)

    assert history.epochs_run == 50
    assert np.all(np.isfinite(history.losses))
    assert history.losses[-1] < 0.25 * initial
    final = np.mean([mse_loss(w, reconstruct(trained, w)) for w in windows])
    assert final < 0.25 * initial


def test_training_is_deterministic(sine_table):
    windows = windows_to_array(sine_table, 3)[:20]
    model = init_model(2, 3, 4, 2, seed=1)
    first, history_a = train(model, windows, epochs=3, batch_size=4, seed=5)
    second, history_b = train(model, windows, epochs=3, batch_size=4, seed=5)

    assert history_a.losses == history_b.losses
    for name, value in first.parameters().items():
        np.testing.assert_array_equal(value, second.parameters()[name])


def test_zero_epochs_returns_model_unchanged(sine_table):
    model = init_model(2, 3, 2, 2, seed=0)
    trained, history = train(model, windows_to_array(sine_table, 3), epochs=0)
    assert trained is model
    assert history.losses == []


def test_empty_training_set():
    with pytest.raises(ValueError):
        train(init_model(2, 3, 2, 2), np.zeros((0, 3, 2)))


def test_non_finite_loss_raises():
    model = init_model(1, 2, 2, 1, seed=0)
    windows = np.full((4, 2, 1), np.inf)
    with np.errstate(all='ignore'), pytest.raises(NumericError):
        train(model, windows, epochs=1)


def test_gradient_clipping_bounds_update(sine_table):
    windows = windows_to_array(sine_table, 3)[:16]
    model = init_model(2, 3, 4, 2, seed=0)
    trained, history = train(model, windows, epochs=2, batch_size=4, max_grad_norm=1e-3)
    assert history.epochs_run == 2
    assert np.all(np.isfinite(trained.output_bias))

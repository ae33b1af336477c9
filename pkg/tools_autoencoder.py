"""
LSTM autoencoder for sliding windows, written directly in numpy.

Encoder: one LSTM layer over the l timesteps of a window; its last hidden state is projected
linearly to the latent code. Decoder: one LSTM layer that receives the code at every step;
each decoder hidden state is projected to the m output features.

Gate blocks inside the stacked weight matrices follow the order input, forget, cell, output.
Gradients are derived by hand (backpropagation through time through decoder, code and encoder).
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

GATES = ('input', 'forget', 'cell', 'output')

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class NumericError(ArithmeticError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class LstmCellParams:
    """
    Parameters of one LSTM layer.

    Attributes:
        weight_input (np.ndarray): (4 * hidden, in_dim), gate blocks stacked row-wise.
        weight_hidden (np.ndarray): (4 * hidden, hidden).
        bias (np.ndarray): (4 * hidden,).
    """
    weight_input: np.ndarray
    weight_hidden: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        rows = self.weight_input.shape[0]
        if rows % 4 or self.weight_hidden.shape != (rows, rows // 4) or self.bias.shape != (rows,):
            raise ValueError("inconsistent LSTM parameter shapes")

    @property
    def hidden_dim(self) -> int:
        return self.weight_hidden.shape[1]

    @property
    def in_dim(self) -> int:
        return self.weight_input.shape[1]

    def gate(self, name: str) -> Dict[str, np.ndarray]:
        """Views of one gate's input weights, recurrent weights and bias."""
        k = GATES.index(name)
        block = slice(k * self.hidden_dim, (k + 1) * self.hidden_dim)
        return {
            'weight_input': self.weight_input[block],
            'weight_hidden': self.weight_hidden[block],
            'bias': self.bias[block],
        }


@dataclass(frozen=True)
class AutoencoderModel:
    encoder: LstmCellParams
    decoder: LstmCellParams
    latent_weight: np.ndarray
    latent_bias: np.ndarray
    output_weight: np.ndarray
    output_bias: np.ndarray
    window_length: int
    n_features: int
    seed: int = 0

    @property
    def hidden_dim(self) -> int:
        return self.encoder.hidden_dim

    @property
    def latent_dim(self) -> int:
        return self.latent_weight.shape[0]

    def parameters(self) -> Dict[str, np.ndarray]:
        """All trainable arrays keyed by a stable dotted name."""
        return {
            'encoder.weight_input': self.encoder.weight_input,
            'encoder.weight_hidden': self.encoder.weight_hidden,
            'encoder.bias': self.encoder.bias,
            'decoder.weight_input': self.decoder.weight_input,
            'decoder.weight_hidden': self.decoder.weight_hidden,
            'decoder.bias': self.decoder.bias,
            'latent_weight': self.latent_weight,
            'latent_bias': self.latent_bias,
            'output_weight': self.output_weight,
            'output_bias': self.output_bias,
        }

    def with_parameters(self, params: Dict[str, np.ndarray]) -> 'AutoencoderModel':
        """Return a copy of the model with the given arrays swapped in."""
        current = self.parameters()
        for name, value in params.items():
            if name not in current:
                raise KeyError(f"unknown parameter {name!r}")
            if np.shape(value) != current[name].shape:
                raise ValueError(f"parameter {name!r} expects shape {current[name].shape}, got {np.shape(value)}")
        merged = {**current, **{name: np.array(value, dtype=float) for name, value in params.items()}}
        return replace(
            self,
            encoder=LstmCellParams(merged['encoder.weight_input'], merged['encoder.weight_hidden'],
                                   merged['encoder.bias']),
            decoder=LstmCellParams(merged['decoder.weight_input'], merged['decoder.weight_hidden'],
                                   merged['decoder.bias']),
            latent_weight=merged['latent_weight'],
            latent_bias=merged['latent_bias'],
            output_weight=merged['output_weight'],
            output_bias=merged['output_bias'],
        )


@dataclass
class TrainingHistory:
    losses: List[float] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.losses)


def init_model(m: int, l: int, hidden_dim: int = 32, latent_dim: int = 16, seed: int = 0) -> AutoencoderModel:
    """
    Create a randomly initialised autoencoder.

    Weights are uniform in [-s, s] with s = 1 / sqrt(hidden_dim); forget-gate biases start at 1.0,
    every other bias at 0.

    Args:
        m (int): Feature count.
        l (int): Window length.
        hidden_dim (int): LSTM hidden size for encoder and decoder.
        latent_dim (int): Code size.
        seed (int): Seed for numpy's default_rng.

    Returns:
        AutoencoderModel: The new model.
    """
    for name, value in (('m', m), ('l', l), ('hidden_dim', hidden_dim), ('latent_dim', latent_dim)):
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(hidden_dim)

    def uniform(*shape):
        return rng.uniform(-scale, scale, size=shape)

    def lstm(in_dim):
        bias = np.zeros(4 * hidden_dim)
        bias[hidden_dim:2 * hidden_dim] = 1.0
        return LstmCellParams(uniform(4 * hidden_dim, in_dim), uniform(4 * hidden_dim, hidden_dim), bias)

    encoder = lstm(m)
    decoder = lstm(latent_dim)
    return AutoencoderModel(
        encoder=encoder,
        decoder=decoder,
        latent_weight=uniform(latent_dim, hidden_dim),
        latent_bias=np.zeros(latent_dim),
        output_weight=uniform(m, hidden_dim),
        output_bias=np.zeros(m),
        window_length=l,
        n_features=m,
        seed=seed,
    )


def _as_batch(model: AutoencoderModel, windows) -> Tuple[np.ndarray, bool]:
    """Return windows as an (N, l, m) array and whether the caller passed a single window."""
    array = np.asarray(windows, dtype=float)
    single = array.ndim == 2
    if single:
        array = array[None]
    expected = (model.window_length, model.n_features)
    if array.ndim != 3 or array.shape[1:] != expected:
        raise ValueError(f"window shape {array.shape[-2:] if array.ndim >= 2 else array.shape} "
                         f"does not match model (l, m) = {expected}")
    return array, single


def _lstm_forward(inputs: np.ndarray, cell: LstmCellParams):
    n, steps, _ = inputs.shape
    hidden = cell.hidden_dim
    h = np.zeros((n, hidden))
    c = np.zeros((n, hidden))
    hs = np.empty((n, steps, hidden))
    caches = []
    for t in range(steps):
        x = inputs[:, t]
        a = x @ cell.weight_input.T + h @ cell.weight_hidden.T + cell.bias
        i = expit(a[:, :hidden])
        f = expit(a[:, hidden:2 * hidden])
        g = np.tanh(a[:, 2 * hidden:3 * hidden])
        o = expit(a[:, 3 * hidden:])
        c_next = f * c + i * g
        tanh_c = np.tanh(c_next)
        caches.append((x, h, c, i, f, g, o, tanh_c))
        h = o * tanh_c
        c = c_next
        hs[:, t] = h
    return hs, caches


def _lstm_backward(dhs: np.ndarray, cell: LstmCellParams, caches) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    n, steps, _ = dhs.shape
    dx = np.empty((n, steps, cell.in_dim))
    d_weight_input = np.zeros_like(cell.weight_input)
    d_weight_hidden = np.zeros_like(cell.weight_hidden)
    d_bias = np.zeros_like(cell.bias)
    dh_next = np.zeros((n, cell.hidden_dim))
    dc_next = np.zeros((n, cell.hidden_dim))
    for t in reversed(range(steps)):
        x, h_prev, c_prev, i, f, g, o, tanh_c = caches[t]
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1 - tanh_c ** 2)
        da = np.concatenate([
            dc * g * i * (1 - i),
            dc * c_prev * f * (1 - f),
            dc * i * (1 - g ** 2),
            dh * tanh_c * o * (1 - o),
        ], axis=1)
        d_weight_input += da.T @ x
        d_weight_hidden += da.T @ h_prev
        d_bias += da.sum(axis=0)
        dx[:, t] = da @ cell.weight_input
        dh_next = da @ cell.weight_hidden
        dc_next = dc * f
    return dx, {'weight_input': d_weight_input, 'weight_hidden': d_weight_hidden, 'bias': d_bias}


def _forward(model: AutoencoderModel, batch: np.ndarray):
    steps = batch.shape[1]
    enc_hs, enc_caches = _lstm_forward(batch, model.encoder)
    last_hidden = enc_hs[:, -1]
    code = last_hidden @ model.latent_weight.T + model.latent_bias
    dec_inputs = np.repeat(code[:, None, :], steps, axis=1)
    dec_hs, dec_caches = _lstm_forward(dec_inputs, model.decoder)
    output = dec_hs @ model.output_weight.T + model.output_bias
    return output, (enc_caches, last_hidden, dec_hs, dec_caches)


def _backward(model: AutoencoderModel, cache, d_output: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Propagate dL/d(output) back to every parameter and to the input windows."""
    enc_caches, last_hidden, dec_hs, dec_caches = cache
    grads = {
        'output_weight': np.einsum('ntm,nth->mh', d_output, dec_hs),
        'output_bias': d_output.sum(axis=(0, 1)),
    }
    d_dec_hs = d_output @ model.output_weight
    d_dec_inputs, dec_grads = _lstm_backward(d_dec_hs, model.decoder, dec_caches)
    d_code = d_dec_inputs.sum(axis=1)
    grads['latent_weight'] = d_code.T @ last_hidden
    grads['latent_bias'] = d_code.sum(axis=0)

    d_enc_hs = np.zeros((d_output.shape[0], d_output.shape[1], model.hidden_dim))
    d_enc_hs[:, -1] = d_code @ model.latent_weight
    d_input, enc_grads = _lstm_backward(d_enc_hs, model.encoder, enc_caches)
    for name, value in enc_grads.items():
        grads[f'encoder.{name}'] = value
    for name, value in dec_grads.items():
        grads[f'decoder.{name}'] = value
    return grads, d_input


def reconstruct(model: AutoencoderModel, window) -> np.ndarray:
    """
    Reconstruct one (l, m) window or a batch of shape (N, l, m).

    Returns:
        np.ndarray: Reconstruction with the input's shape.
    """
    batch, single = _as_batch(model, window)
    output, _ = _forward(model, batch)
    return output[0] if single else output


def mse_loss(window, reconstruction) -> float:
    """Mean squared error over all l * m cells."""
    window = np.asarray(window, dtype=float)
    reconstruction = np.asarray(reconstruction, dtype=float)
    if window.shape != reconstruction.shape:
        raise ValueError(f"shape mismatch: {window.shape} vs {reconstruction.shape}")
    return float(np.mean((window - reconstruction) ** 2))


def parameter_gradients(model: AutoencoderModel, window) -> Dict[str, np.ndarray]:
    """
    Exact gradients of mse_loss(window, reconstruct(model, window)) for every parameter.

    A batch of shape (N, l, m) gives the gradient of the summed per-window losses.

    Returns:
        dict: Gradient arrays keyed like AutoencoderModel.parameters().
    """
    batch, _ = _as_batch(model, window)
    output, cache = _forward(model, batch)
    cells = model.window_length * model.n_features
    d_output = -2.0 * (batch - output) / cells
    grads, _ = _backward(model, cache, d_output)
    return grads


def anomaly_score(model: AutoencoderModel, window):
    """Anomaly surrogate s(X) = sum((X - reconstruct(X)) ** 2), per window for a batch."""
    batch, single = _as_batch(model, window)
    output, _ = _forward(model, batch)
    scores = ((batch - output) ** 2).sum(axis=(1, 2))
    return float(scores[0]) if single else scores


def score_and_input_gradient(model: AutoencoderModel, windows) -> Tuple[np.ndarray, np.ndarray]:
    """
    Surrogate scores and their input gradients for a batch of windows.

    Args:
        model (AutoencoderModel): Trained model.
        windows (np.ndarray): (N, l, m) batch.

    Returns:
        tuple: scores of shape (N,) and gradients of shape (N, l, m).
    """
    batch, _ = _as_batch(model, windows)
    output, cache = _forward(model, batch)
    residual = batch - output
    _, d_input = _backward(model, cache, -2.0 * residual)
    return (residual ** 2).sum(axis=(1, 2)), 2.0 * residual + d_input


def input_gradient(model: AutoencoderModel, window) -> np.ndarray:
    """
    Exact gradient of s(X) = sum((X - reconstruct(X)) ** 2) with respect to X,
    including the path through the reconstruction.
    """
    batch, single = _as_batch(model, window)
    _, gradients = score_and_input_gradient(model, batch)
    return gradients[0] if single else gradients


def output_gradient(model: AutoencoderModel, windows, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    One cell of the flattened reconstruction and its gradient with respect to the input.

    Args:
        model (AutoencoderModel): Trained model.
        windows (np.ndarray): (N, l, m) batch.
        index (int): Row-major index into the flattened (l * m) reconstruction.

    Returns:
        tuple: values of shape (N,) and gradients of shape (N, l, m).
    """
    batch, _ = _as_batch(model, windows)
    cells = model.window_length * model.n_features
    if not 0 <= index < cells:
        raise ValueError(f"output index must lie in [0, {cells}), got {index}")
    output, cache = _forward(model, batch)
    d_output = np.zeros_like(output)
    t, k = divmod(index, model.n_features)
    d_output[:, t, k] = 1.0
    _, d_input = _backward(model, cache, d_output)
    return output[:, t, k], d_input


def _clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    total = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}


def train(model: AutoencoderModel, windows, epochs: int = 100, learning_rate: float = 1e-3,
          batch_size: int = 32, seed: int = 0,
          max_grad_norm: Optional[float] = None) -> Tuple[AutoencoderModel, TrainingHistory]:
    """
    Fit the autoencoder to normal windows with Adam on the mean MSE of each mini-batch.

    Args:
        model (AutoencoderModel): Starting point; it is not modified.
        windows (np.ndarray): (N, l, m) training windows, N >= 1.
        epochs (int): Passes over the data, >= 0.
        learning_rate (float): Adam step size.
        batch_size (int): Mini-batch size.
        seed (int): Seed of the per-epoch shuffle schedule.
        max_grad_norm (float, optional): Clip the global gradient norm to this value.

    Returns:
        tuple: (trained model, TrainingHistory with the mean per-window loss of each epoch).
    """
    if np.asarray(windows).size == 0:
        raise ValueError("cannot train on an empty window list")
    batch, _ = _as_batch(model, windows)
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    history = TrainingHistory()
    if epochs == 0:
        return model, history

    rng = np.random.default_rng(seed)
    params = {name: value.copy() for name, value in model.parameters().items()}
    first_moment = {name: np.zeros_like(value) for name, value in params.items()}
    second_moment = {name: np.zeros_like(value) for name, value in params.items()}
    cells = model.window_length * model.n_features
    n_windows = batch.shape[0]
    step = 0

    log_every = max(1, epochs // 10)
    for epoch in range(epochs):
        order = rng.permutation(n_windows)
        epoch_loss = 0.0
        for start in range(0, n_windows, batch_size):
            chunk = batch[order[start:start + batch_size]]
            current = model.with_parameters(params)
            output, cache = _forward(current, chunk)
            residual = chunk - output
            epoch_loss += float((residual ** 2).sum()) / cells
            grads, _ = _backward(current, cache, -2.0 * residual / (cells * chunk.shape[0]))
            if max_grad_norm is not None:
                grads = _clip_gradients(grads, max_grad_norm)

            step += 1
            for name, g in grads.items():
                first_moment[name] = ADAM_BETA1 * first_moment[name] + (1 - ADAM_BETA1) * g
                second_moment[name] = ADAM_BETA2 * second_moment[name] + (1 - ADAM_BETA2) * g ** 2
                m_hat = first_moment[name] / (1 - ADAM_BETA1 ** step)
                v_hat = second_moment[name] / (1 - ADAM_BETA2 ** step)
                params[name] = params[name] - learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)

        mean_loss = epoch_loss / n_windows
        if not np.isfinite(mean_loss):
            raise NumericError(f"non-finite training loss at epoch {epoch + 1}")
        history.losses.append(mean_loss)
        if (epoch + 1) % log_every == 0 or epoch == epochs - 1:
            logger.info("Epoch %d/%d: mean loss %.6f", epoch + 1, epochs, mean_loss)

    return model.with_parameters(params), history

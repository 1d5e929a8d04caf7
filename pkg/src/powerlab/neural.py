"""Minimal fully connected network with hand-written backprop and Adam.

Hidden layers use rectified-linear activation, the output layer is linear.
Everything is float64 numpy; forward/backward accept a single input vector
or a batch (one row per sample).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrainingError

CHECKPOINT_MAGIC = b"PLMLPNET"
CHECKPOINT_VERSION = 1


@dataclass
class MlpNetwork:
    layer_dims: list[int]
    weights: list[np.ndarray]  # per layer, shape (fan_in, fan_out)
    biases: list[np.ndarray]


@dataclass
class GradientSet:
    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]

    def global_norm(self) -> float:
        total = sum(float(np.sum(g * g)) for g in self.weight_grads + self.bias_grads)
        return float(np.sqrt(total))

    def scale(self, factor: float) -> None:
        for g in self.weight_grads + self.bias_grads:
            g *= factor


@dataclass
class AdamState:
    first_moments: list[np.ndarray]
    second_moments: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stability: float = 1e-8

    @classmethod
    def for_network(cls, net: MlpNetwork, **kwargs) -> "AdamState":
        params = net.weights + net.biases
        return cls(
            first_moments=[np.zeros_like(p) for p in params],
            second_moments=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def default_layer_dims(n_users: int, num_levels: int) -> list[int]:
    """Standard architecture: gains in, one Q-value per joint action out."""
    return [n_users, 64, 128, num_levels**n_users]


def init_network(layer_dims, rng: np.random.Generator) -> MlpNetwork:
    """Scaled-uniform weight init, bound sqrt(6/(fan_in+fan_out)); zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ConfigError(f"need at least 2 layer dims, got {dims}")
    if any(d < 1 for d in dims):
        raise ConfigError(f"layer dims must be positive, got {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(dims, weights, biases)


def _forward_cached(net: MlpNetwork, x: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    last = len(net.weights) - 1
    pre, acts = [], [x]
    a = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return pre, acts


def forward(net: MlpNetwork, inputs) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.layer_dims[0]:
        raise ValueError(
            f"input dimension {x.shape[1]} does not match layer_dims[0]={net.layer_dims[0]}"
        )
    _, acts = _forward_cached(net, x)
    out = acts[-1]
    return out[0] if single else out


def mse_loss(predicted, target) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {target.shape}")
    diff = predicted - target
    return float(np.mean(diff * diff))


def backward(net: MlpNetwork, inputs, loss_grad_at_output) -> GradientSet:
    """Reverse-mode gradients of a scalar loss w.r.t. all parameters.

    `loss_grad_at_output` is dLoss/dOutput, shaped like the network output
    (vector, or batch rows); batch gradients are accumulated over rows.
    """
    x = np.asarray(inputs, dtype=np.float64)
    gout = np.asarray(loss_grad_at_output, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        gout = gout[None, :]
    if x.shape[1] != net.layer_dims[0] or gout.shape[1] != net.layer_dims[-1]:
        raise ValueError("input/output gradient shapes do not match the network")

    pre, acts = _forward_cached(net, x)
    n_layers = len(net.weights)
    w_grads = [None] * n_layers
    b_grads = [None] * n_layers
    delta = gout
    for i in range(n_layers - 1, -1, -1):
        w_grads[i] = acts[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0)
    return GradientSet(w_grads, b_grads)


def adam_step(
    net: MlpNetwork, grads: GradientSet, opt: AdamState, learning_rate: float
) -> tuple[MlpNetwork, AdamState]:
    """One bias-corrected Adam update, in place; returns (net, opt)."""
    if learning_rate <= 0:
        raise ConfigError(f"learning_rate must be positive, got {learning_rate}")
    flat_grads = grads.weight_grads + grads.bias_grads
    if any(not np.all(np.isfinite(g)) for g in flat_grads):
        raise TrainingError("non-finite gradient encountered in adam_step")
    params = net.weights + net.biases
    opt.step_count += 1
    correction1 = 1.0 - opt.beta1**opt.step_count
    correction2 = 1.0 - opt.beta2**opt.step_count
    for p, g, m, v in zip(params, flat_grads, opt.first_moments, opt.second_moments):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= learning_rate * (m / correction1) / (np.sqrt(v / correction2) + opt.epsilon_stability)
    return net, opt


def copy_parameters(source: MlpNetwork) -> MlpNetwork:
    """Deep copy; later updates to either network leave the other untouched."""
    return MlpNetwork(
        list(source.layer_dims),
        [w.copy() for w in source.weights],
        [b.copy() for b in source.biases],
    )


def save_checkpoint(net: MlpNetwork, path) -> None:
    """Binary checkpoint: magic, format version, dims, then raw float64 params.

    Little-endian throughout; weights are row-major, layer by layer, each
    followed by its bias vector. Loading is bit-exact.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(net.layer_dims)))
        fh.write(np.asarray(net.layer_dims, dtype="<i8").tobytes())
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> MlpNetwork:
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a network checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    version, n_dims = struct.unpack_from("<II", raw, offset)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset += 8
    dims = np.frombuffer(raw, dtype="<i8", count=n_dims, offset=offset)
    offset += 8 * n_dims
    dims = [int(d) for d in dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return MlpNetwork(dims, weights, biases)

"""Dense-network engine: MLP with a recorded forward pass, reverse-mode gradients and Adam."""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import NonFiniteError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")


def _activate(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    return x


def _activation_grad(name, pre):
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - np.tanh(pre) ** 2
    return np.ones_like(pre)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(f"bias of length {self.bias.shape[0]} does not match weight {self.weight.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Mlp:
    """Feed-forward network; the last layer maps the latent features z to the output."""

    layers: List[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an Mlp needs at least one layer")
        for previous, layer in zip(self.layers, self.layers[1:]):
            if layer.weight.shape[1] != previous.weight.shape[0]:
                raise ShapeError(
                    f"layer input {layer.weight.shape[1]} does not chain to previous output {previous.weight.shape[0]}"
                )

    @classmethod
    def build(cls, input_dim, hidden_sizes, output_dim, rng, activation="relu"):
        """Uniform fan-in initialisation in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
        dims = [int(input_dim), *[int(h) for h in hidden_sizes], int(output_dim)]
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            bias = rng.uniform(-bound, bound, size=fan_out)
            is_last = k == len(dims) - 2
            layers.append(Layer(weight, bias, "identity" if is_last else activation))
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[0]

    @property
    def latent_dim(self):
        return self.layers[-1].weight.shape[1]

    def parameters(self) -> List[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend((layer.weight, layer.bias))
        return params

    def with_parameters(self, params: Sequence[np.ndarray]) -> "Mlp":
        if len(params) != 2 * len(self.layers):
            raise ShapeError(f"expected {2 * len(self.layers)} parameter arrays, got {len(params)}")
        layers = []
        for k, layer in enumerate(self.layers):
            weight, bias = params[2 * k], params[2 * k + 1]
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise ShapeError(f"parameter shapes of layer {k} changed")
            layers.append(Layer(weight.copy(), bias.copy(), layer.activation))
        return Mlp(layers)

    def copy(self) -> "Mlp":
        return self.with_parameters(self.parameters())


@dataclass
class ForwardTape:
    """Per-layer inputs and pre-activations of one batch."""

    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]


def mlp_forward(net: Mlp, inputs) -> Tuple[np.ndarray, np.ndarray, ForwardTape]:
    """Run a batch through the network. Returns (latent, output, tape)."""
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != net.input_dim:
        raise ShapeError(f"input width {x.shape[1]} != network input_dim {net.input_dim}")
    tape = ForwardTape([], [])
    h = x
    for layer in net.layers:
        tape.inputs.append(h)
        pre = h @ layer.weight.T + layer.bias
        tape.pre_activations.append(pre)
        h = _activate(layer.activation, pre)
    latent = tape.inputs[-1]
    return latent, h, tape


def mlp_backward(net: Mlp, tape: ForwardTape, upstream, latent_upstream=None):
    """Reverse pass.

    ``upstream`` is dLoss/dOutput; ``latent_upstream`` optionally adds dLoss/dLatent for
    heads that read the latent features directly. Returns (parameter grads aligned with
    ``net.parameters()``, dLoss/dInput).
    """
    if len(tape.inputs) != len(net.layers):
        raise ShapeError("tape was recorded on a network with a different depth")
    grad = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    expected = tape.pre_activations[-1].shape
    if grad.shape != expected:
        raise ShapeError(f"upstream shape {grad.shape} != output shape {expected}")

    param_grads: List[Optional[np.ndarray]] = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if tape.inputs[k].shape[1] != layer.weight.shape[1]:
            raise ShapeError(f"tape layer {k} does not match the network")
        d_pre = grad * _activation_grad(layer.activation, tape.pre_activations[k])
        param_grads[2 * k] = d_pre.T @ tape.inputs[k]
        param_grads[2 * k + 1] = d_pre.sum(axis=0)
        grad = d_pre @ layer.weight
        if k == len(net.layers) - 1 and latent_upstream is not None:
            latent_upstream = np.atleast_2d(np.asarray(latent_upstream, dtype=np.float64))
            if latent_upstream.shape != grad.shape:
                raise ShapeError(f"latent upstream shape {latent_upstream.shape} != latent shape {grad.shape}")
            grad = grad + latent_upstream
    return param_grads, grad


@dataclass
class AdamState:
    learning_rate: float
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate):
        return cls(
            learning_rate=float(learning_rate),
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
        )


def adam_step(params, grads, state: AdamState, learning_rate=None):
    """One bias-corrected Adam update. Returns (new params, new state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state have different lengths")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient passed to adam_step")
    lr = state.learning_rate if learning_rate is None else float(learning_rate)
    step = state.step + 1
    bias1 = 1.0 - state.beta1 ** step
    bias2 = 1.0 - state.beta2 ** step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, m=new_m, v=new_v, step=step)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads)))


def clip_grad_norm(grads, max_norm):
    """Scale all gradients by max_norm / norm when their global L2 norm exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return [np.array(g, dtype=np.float64) for g in grads]
    scale = max_norm / norm
    return [np.asarray(g, dtype=np.float64) * scale for g in grads]

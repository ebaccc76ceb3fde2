"""Sequential MLPs with hand-written reverse-mode gradients and Adam.

Everything is float64. Weights are stored (in, out) so a batch ``x`` of
shape (m, in) maps to ``x @ W + b``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity", "softmax")
CHECKPOINT_FORMAT = "smc-mlp/1"


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class Mlp:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an Mlp needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ValueError("softmax is only allowed as the final activation")
            if layer.bias.shape != (layer.out_dim,):
                raise ValueError(f"layer {i}: bias shape {layer.bias.shape} != ({layer.out_dim},)")
            if i and self.layers[i - 1].out_dim != layer.in_dim:
                raise ValueError(
                    f"layer {i} expects {layer.in_dim} inputs but layer {i - 1} "
                    f"produces {self.layers[i - 1].out_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def __call__(self, x):
        return forward(self, x)


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    hidden: str = "relu",
    output: str = "identity",
    bias_init: str = "zeros",
) -> Mlp:
    """Random network with the given layer widths.

    ReLU layers use He-uniform initialisation, the others Glorot-uniform.
    ``bias_init="uniform"`` draws hidden biases from the same range as the
    weights, which spreads the ReLU kinks of low-dimensional inputs.
    """
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = output if i == len(sizes) - 2 else hidden
        if act == "relu":
            limit = np.sqrt(6.0 / n_in)
        else:
            limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_in, n_out))
        b = np.zeros(n_out)
        if bias_init == "uniform" and act == "relu":
            b = rng.uniform(-limit, limit, size=n_out)
        layers.append(Layer(w, b, act))
    return Mlp(layers)


def identity_mlp(dim: int) -> Mlp:
    return Mlp([Layer(np.eye(dim), np.zeros(dim), "identity")])


def _softmax(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class GradientTape:
    """Activations cached by :func:`forward` for a later :func:`backward`."""

    inputs: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    single: bool = False


def forward(net: Mlp, x, tape: GradientTape | None = None) -> np.ndarray:
    """Evaluate ``net`` on a vector or on each row of a matrix.

    Pass a fresh :class:`GradientTape` to record what :func:`backward` needs.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != net.input_dim:
        raise ValueError(f"expected input dimension {net.input_dim}, got {h.shape[1]}")
    if tape is not None:
        tape.inputs.clear()
        tape.outputs.clear()
        tape.single = single
    for layer in net.layers:
        if tape is not None:
            tape.inputs.append(h)
        a = h @ layer.weight + layer.bias
        if layer.activation == "relu":
            h = np.maximum(a, 0.0)
        elif layer.activation == "softmax":
            h = _softmax(a)
        else:
            h = a
        if tape is not None:
            tape.outputs.append(h)
    return h[0] if single else h


def backward(net: Mlp, tape: GradientTape, upstream) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of ``sum(output * upstream)`` w.r.t. the parameters and the input.

    Parameter gradients come back in :meth:`Mlp.params` order and are summed
    over the batch.
    """
    if len(tape.inputs) != len(net.layers):
        raise ValueError("tape does not belong to this network (run forward with it first)")
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if g.shape != tape.outputs[-1].shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {tape.outputs[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(net.layers))  # type: ignore[list-item]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        out = tape.outputs[i]
        if layer.activation == "relu":
            g = g * (out > 0)
        elif layer.activation == "softmax":
            g = out * (g - np.sum(g * out, axis=1, keepdims=True))
        grads[2 * i] = tape.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weight.T
    return grads, (g[0] if tape.single else g)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[Sequence[np.ndarray], AdamState]:
    """One bias-corrected Adam update. ``params`` and ``state`` are updated in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimiser state must be congruent")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def mlp_to_json(net: Mlp) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "layers": [
            {"in": l.in_dim, "out": l.out_dim, "activation": l.activation} for l in net.layers
        ],
        "params": [
            {"weight": l.weight.ravel(order="C").tolist(), "bias": l.bias.tolist()}
            for l in net.layers
        ],
    }


def mlp_from_json(obj: dict) -> Mlp:
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not an Mlp checkpoint (format={obj.get('format')!r})")
    layers = []
    for spec, p in zip(obj["layers"], obj["params"]):
        w = np.array(p["weight"], dtype=np.float64).reshape(spec["in"], spec["out"])
        layers.append(Layer(w, np.array(p["bias"], dtype=np.float64), spec["activation"]))
    return Mlp(layers)


def save_mlp(path, net: Mlp) -> None:
    with open(path, "w") as fh:
        json.dump(mlp_to_json(net), fh)


def load_mlp(path) -> Mlp:
    with open(path) as fh:
        return mlp_from_json(json.load(fh))

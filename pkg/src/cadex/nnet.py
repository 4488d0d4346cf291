"""Small feed-forward classifier with hand-written backpropagation and Adam."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from cadex._io import atomic_write_text

RELU = "relu"
SOFTMAX = "softmax"
PROB_EPS = 1e-12
FORMAT = "cadex-mlp"
FORMAT_VERSION = 1


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise ValueError("layer dimensions do not chain")
        for layer in self.layers:
            if layer.bias.shape != (layer.weights.shape[0],):
                raise ValueError("bias does not match layer output size")
            if layer.activation not in (RELU, SOFTMAX):
                raise ValueError(f"unknown activation {layer.activation!r}")
        last = self.layers[-1]
        if last.activation != SOFTMAX or last.weights.shape[0] != 2:
            raise ValueError("final layer must be a 2-way softmax")

    @property
    def input_width(self) -> int:
        return self.layers[0].weights.shape[1]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in (layer.weights, layer.bias)]

    def copy(self) -> "Network":
        return Network([Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers])


def init_network(input_width: int, hidden: int, seed: int) -> Network:
    """He-uniform ReLU hidden layer, Glorot-uniform softmax output, zero biases."""
    if input_width < 1 or hidden < 1:
        raise ValueError("input_width and hidden must be >= 1")
    rng = np.random.default_rng(seed)
    he = math.sqrt(6.0 / input_width)
    glorot = math.sqrt(6.0 / (hidden + 2))
    return Network([
        Layer(rng.uniform(-he, he, (hidden, input_width)), np.zeros(hidden), RELU),
        Layer(rng.uniform(-glorot, glorot, (2, hidden)), np.zeros(2), SOFTMAX),
    ])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_width(net: Network, x: np.ndarray) -> None:
    if x.shape[-1] != net.input_width:
        raise ValueError(f"input width {x.shape[-1]} does not match network width {net.input_width}")


def _forward_all(net: Network, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, input first. Works on a vector or a row batch."""
    acts = [x]
    for layer in net.layers:
        z = acts[-1] @ layer.weights.T + layer.bias
        acts.append(np.maximum(z, 0.0) if layer.activation == RELU else _softmax(z))
    return acts


def _backward(net: Network, acts: list[np.ndarray], delta: np.ndarray, need_params: bool = True):
    """Backpropagate ``delta`` = dLoss/d(softmax logits). Returns (param grads, input grad)."""
    grads: list[np.ndarray] = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer, inp = net.layers[i], acts[i]
        if need_params:
            if delta.ndim == 1:
                grads[:0] = [np.outer(delta, inp), delta.copy()]
            else:
                grads[:0] = [delta.T @ inp, delta.sum(axis=0)]
        delta = delta @ layer.weights
        if i > 0 and net.layers[i - 1].activation == RELU:
            delta = delta * (inp > 0)
    return grads, delta


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_width(net, x)
    return _forward_all(net, x)[-1]


def predict(net: Network, x: np.ndarray) -> np.ndarray | int:
    out = np.argmax(forward(net, x), axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def loss(net: Network, x: np.ndarray, target: int) -> float:
    """Cross-entropy of the target class, probabilities clamped at 1e-12."""
    if target not in (0, 1):
        raise ValueError("target must be 0 or 1")
    p = forward(net, x)
    return float(-np.log(max(p[target], PROB_EPS)))


def grad_input(net: Network, x: np.ndarray, target: int) -> np.ndarray:
    """dLoss/dx by backpropagation through the network."""
    if target not in (0, 1):
        raise ValueError("target must be 0 or 1")
    x = np.asarray(x, dtype=float)
    _check_width(net, x)
    acts = _forward_all(net, x)
    delta = acts[-1].copy()
    delta[target] -= 1.0
    return _backward(net, acts, delta, need_params=False)[1]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape, **hyper) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), **hyper)


def adam_step(state: AdamState, params: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state`` and returns the new parameters."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != np.shape(params) or state.m.shape != gradient.shape:
        raise ValueError("parameter, gradient and state shapes must agree")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * gradient
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * gradient * gradient
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 500
    patience: int = 10


@dataclass
class TrainReport:
    epochs: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    best_epoch: int
    history: list[tuple[float, float]] = field(default_factory=list, repr=False)


def mean_loss(net: Network, X: np.ndarray, y: np.ndarray) -> float:
    p = forward(net, X)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], PROB_EPS))))


def accuracy(net: Network, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(net, X) == y))


def train(net: Network, train_set, val_set, config: TrainConfig | None = None) -> TrainReport:
    """Full-batch Adam with early stopping on validation loss.

    Stops after ``patience`` epochs without a new best validation loss and
    restores the best weights seen.
    """
    config = config or TrainConfig()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be nonempty")
    X, y = train_set.X, np.asarray(train_set.y)
    _check_width(net, X)
    onehot = np.eye(2)[y]
    hyper = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    states = [AdamState.zeros(p.shape, **hyper) for p in net.params()]

    best_val, best_epoch, best_net = math.inf, 0, net.copy()
    history, epoch = [], 0
    for epoch in range(1, config.max_epochs + 1):
        acts = _forward_all(net, X)
        delta = (acts[-1] - onehot) / len(y)
        grads, _ = _backward(net, acts, delta)
        for layer_i, layer in enumerate(net.layers):
            layer.weights = adam_step(states[2 * layer_i], layer.weights, grads[2 * layer_i])
            layer.bias = adam_step(states[2 * layer_i + 1], layer.bias, grads[2 * layer_i + 1])
        val = mean_loss(net, val_set.X, val_set.y)
        history.append((mean_loss(net, X, y), val))
        if val < best_val:
            best_val, best_epoch, best_net = val, epoch, net.copy()
        elif epoch - best_epoch >= config.patience:
            break
    net.layers = best_net.layers
    return TrainReport(
        epochs=epoch,
        train_loss=mean_loss(net, X, y),
        val_loss=mean_loss(net, val_set.X, val_set.y),
        val_accuracy=accuracy(net, val_set.X, val_set.y),
        best_epoch=best_epoch,
        history=history,
    )


def network_to_dict(net: Network, metadata: dict[str, Any] | None = None) -> dict[str, Any]:
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "metadata": metadata or {},
        "layers": [
            {
                "activation": l.activation,
                "shape": list(l.weights.shape),
                "weights": l.weights.ravel().tolist(),
                "bias": l.bias.tolist(),
            }
            for l in net.layers
        ],
    }


def network_from_dict(doc: dict[str, Any]) -> tuple[Network, dict[str, Any]]:
    if doc.get("format") != FORMAT:
        raise ValueError("not a cadex model file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')}")
    layers = []
    for entry in doc["layers"]:
        shape = tuple(entry["shape"])
        layers.append(Layer(
            np.array(entry["weights"], dtype=float).reshape(shape),
            np.array(entry["bias"], dtype=float),
            entry["activation"],
        ))
    return Network(layers), doc.get("metadata", {})


def save_network(net: Network, path: str | Path, metadata: dict[str, Any] | None = None) -> None:
    # repr-based float serialization round-trips float64 exactly
    atomic_write_text(path, json.dumps(network_to_dict(net, metadata), indent=1) + "\n")


def load_network(path: str | Path) -> tuple[Network, dict[str, Any]]:
    with open(path) as fh:
        return network_from_dict(json.load(fh))

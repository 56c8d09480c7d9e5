"""Small dense networks with hand-written reverse-mode gradients.

The layer vocabulary is fixed (embedding, linear, leaky_relu, softmax,
gaussian_noise), so each layer caches exactly what its backward pass needs
instead of recording a general tape.
"""
from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DomainError, ShapeError

KINDS = ("embedding", "linear", "leaky_relu", "softmax", "gaussian_noise")

LOG_CLAMP = 1e-12

_net_ids = itertools.count()


@dataclass
class Layer:
    kind: str
    weights: np.ndarray | None = None
    biases: np.ndarray | None = None
    hyper: float = 0.0
    width: int = 0
    cardinalities: tuple = ()

    @property
    def n_in(self):
        if self.kind == "linear":
            return self.weights.shape[0]
        if self.kind == "embedding":
            return len(self.cardinalities)
        return self.width

    @property
    def n_out(self):
        if self.kind == "linear":
            return self.weights.shape[1]
        if self.kind == "embedding":
            return len(self.cardinalities) * self.weights.shape[1]
        return self.width

    def parameters(self):
        if self.kind == "linear":
            return [self.weights, self.biases]
        if self.kind == "embedding":
            return [self.weights]
        return []


def _glorot(rng, fan_in, fan_out, shape):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def linear(n_in, n_out, rng):
    return Layer("linear", _glorot(rng, n_in, n_out, (n_in, n_out)), np.zeros(n_out))


def embedding(cardinalities, dim, rng):
    """One learned ``dim``-vector per category and feature.

    Each feature gets ``cardinality + 1`` rows; the extra row is the shared
    slot for categories not declared at construction.
    """
    cards = tuple(int(c) for c in cardinalities)
    if not cards or min(cards) < 1:
        raise ShapeError("embedding needs at least one feature with >= 1 category")
    blocks = [_glorot(rng, c + 1, dim, (c + 1, dim)) for c in cards]
    return Layer("embedding", np.vstack(blocks), None, cardinalities=cards)


def leaky_relu(width, slope=0.01):
    return Layer("leaky_relu", hyper=float(slope), width=int(width))


def softmax(width):
    return Layer("softmax", width=int(width))


def gaussian_noise(width, sigma):
    return Layer("gaussian_noise", hyper=float(sigma), width=int(width))


class DenseNet:
    """Ordered stack of layers; parameters are updated in place by optimizers."""

    def __init__(self, layers):
        self.layers = list(layers)
        self._id = next(_net_ids)
        self._version = 0
        self._validate()

    def _validate(self):
        if not self.layers:
            raise ShapeError("network has no layers")
        for i, layer in enumerate(self.layers):
            if layer.kind not in KINDS:
                raise ShapeError(f"unknown layer kind {layer.kind!r}")
            if layer.kind == "softmax" and i != len(self.layers) - 1:
                raise ShapeError("softmax may only be the final layer")
            if layer.kind == "embedding" and i != 0:
                raise ShapeError("embedding may only be the first layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(
                    f"layer widths do not compose: {a.kind} emits {a.n_out}, "
                    f"{b.kind} expects {b.n_in}")

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    @property
    def parameter_count(self):
        return int(sum(p.size for p in self.parameters()))

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def index_of_last(self, kind):
        for i in range(len(self.layers) - 1, -1, -1):
            if self.layers[i].kind == kind:
                return i
        raise ShapeError(f"network has no {kind} layer")

    def width_at(self, index):
        return self.layers[index].n_out

    def touch(self):
        """Mark parameters as modified; invalidates outstanding caches."""
        self._version += 1

    def copy(self):
        new = DenseNet(copy.deepcopy(self.layers))
        return new

    def load_parameters(self, other):
        for mine, theirs in zip(self.parameters(), other.parameters()):
            mine[...] = theirs
        self.touch()

    def __repr__(self):
        desc = ", ".join(f"{l.kind}({l.n_in}->{l.n_out})" for l in self.layers)
        return f"DenseNet[{desc}]"


def build_mlp(n_in, hidden, n_out, rng, *, slope=0.01, embedding_spec=None,
              noise_sigma=0.0, output_softmax=True):
    """Linear/leaky-ReLU stack, optionally fronted by an embedding layer.

    ``embedding_spec`` is ``(cardinalities, dim)``; when given, ``n_in`` is
    ignored and the input is a matrix of integer category codes.
    """
    layers = []
    width = n_in
    if embedding_spec is not None:
        cards, dim = embedding_spec
        layers.append(embedding(cards, dim, rng))
        width = layers[-1].n_out
    for h in hidden:
        layers.append(linear(width, h, rng))
        layers.append(leaky_relu(h, slope))
        width = h
    layers.append(linear(width, n_out, rng))
    if noise_sigma > 0:
        layers.append(gaussian_noise(n_out, noise_sigma))
    if output_softmax:
        layers.append(softmax(n_out))
    return DenseNet(layers)


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list
    output: np.ndarray
    tap_layer: int | None


@dataclass
class ForwardResult:
    output: np.ndarray
    tap: np.ndarray | None
    cache: ForwardCache


@dataclass
class Gradients:
    params: list
    input: np.ndarray | None

    def flat(self):
        return [g for layer in self.params for g in layer]


def _embedding_rows(layer, x):
    codes = np.asarray(x)
    if np.any(codes != np.floor(codes)):
        raise ShapeError("embedding input must hold integer category codes")
    codes = codes.astype(np.int64)
    rows = np.empty_like(codes)
    offset = 0
    for j, c in enumerate(layer.cardinalities):
        col = codes[:, j]
        col = np.where((col < 0) | (col >= c), c, col)
        rows[:, j] = col + offset
        offset += c + 1
    return rows


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(net, x, tap_layer=None, *, training=False, rng=None):
    """Run ``x`` through ``net``.

    ``tap_layer`` names a layer index whose output is returned as ``tap``
    (the internal representation handed to an adversary).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.n_in:
        raise ShapeError(f"expected input of width {net.n_in}, got shape {x.shape}")
    if tap_layer is not None and not (0 <= tap_layer < len(net.layers)):
        raise ShapeError(f"tap layer {tap_layer} out of range")
    inputs = []
    tap = None
    h = x
    for i, layer in enumerate(net.layers):
        kind = layer.kind
        if kind == "embedding":
            rows = _embedding_rows(layer, h)
            inputs.append(rows)
            h = layer.weights[rows].reshape(h.shape[0], -1)
        elif kind == "linear":
            inputs.append(h)
            h = h @ layer.weights + layer.biases
        elif kind == "leaky_relu":
            inputs.append(h)
            h = np.where(h > 0, h, layer.hyper * h)
        elif kind == "gaussian_noise":
            inputs.append(None)
            if training and layer.hyper > 0:
                if rng is None:
                    raise ContractError("training-mode noise layer needs an rng")
                h = h + rng.normal(0.0, layer.hyper, size=h.shape)
        elif kind == "softmax":
            inputs.append(None)
            h = _softmax(h)
        if i == tap_layer:
            tap = h
    cache = ForwardCache(net._id, net._version, inputs, h, tap_layer)
    return ForwardResult(h, tap, cache)


def backward(net, cache, loss_grad=None, tap_grad=None):
    """Gradients of a scalar loss given dL/d(output) and/or dL/d(tap).

    Returns per-layer parameter gradients and dL/d(input) (``None`` when
    the network starts with an embedding).
    """
    if cache.net_id != net._id or cache.version != net._version:
        raise ContractError("forward cache is stale for this network")
    if loss_grad is None and tap_grad is None:
        raise ContractError("backward needs a loss gradient or a tap gradient")
    if tap_grad is not None and cache.tap_layer is None:
        raise ContractError("tap gradient given but forward ran without a tap")
    n = cache.output.shape[0]
    g = np.zeros_like(cache.output) if loss_grad is None else np.asarray(loss_grad, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ShapeError(f"loss gradient shape {g.shape} != output shape {cache.output.shape}")
    params = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if i == cache.tap_layer and tap_grad is not None:
            g = g + tap_grad
        kind = layer.kind
        inp = cache.inputs[i]
        if kind == "softmax":
            p = cache.output
            g = p * (g - np.sum(g * p, axis=1, keepdims=True))
            params[i] = []
        elif kind == "gaussian_noise":
            params[i] = []
        elif kind == "leaky_relu":
            g = g * np.where(inp > 0, 1.0, layer.hyper)
            params[i] = []
        elif kind == "linear":
            params[i] = [inp.T @ g, g.sum(axis=0)]
            g = g @ layer.weights.T
        elif kind == "embedding":
            dim = layer.weights.shape[1]
            dw = np.zeros_like(layer.weights)
            np.add.at(dw, cache.inputs[i].ravel(), g.reshape(n * len(layer.cardinalities), dim))
            params[i] = [dw]
            g = None
    return Gradients(params, g)


def _check_probs(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if probs.shape[0] == 0:
        raise DomainError("cross-entropy of an empty batch")
    if probs.shape[0] != labels.shape[0]:
        raise ShapeError("probability rows and labels differ in length")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise DomainError("probability rows must sum to 1")
    return probs, labels


def cross_entropy(probs, labels):
    """Mean of -log p(label), with p clamped at 1e-12."""
    probs, labels = _check_probs(probs, labels)
    picked = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(picked, LOG_CLAMP))))


def cross_entropy_grad(probs, labels):
    """dL/dp for :func:`cross_entropy` (zero where the clamp is active)."""
    probs, labels = _check_probs(probs, labels)
    n = len(labels)
    g = np.zeros_like(probs)
    idx = np.arange(n)
    picked = probs[idx, labels]
    g[idx, labels] = np.where(picked > LOG_CLAMP, -1.0 / (n * np.maximum(picked, LOG_CLAMP)), 0.0)
    return g


def one_hot(labels, n_classes):
    labels = np.asarray(labels).astype(np.int64)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out

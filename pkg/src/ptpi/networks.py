"""Dense feedforward networks and Fourier input features."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("elu", "silu", "sine", "identity")

# activation name -> autodiff unary kind
_KIND = {"elu": "elu", "silu": "silu", "sine": "sin"}


class ConfigurationError(ValueError):
    """Invalid network or run configuration."""


class ShapeError(ValueError):
    """Input does not match a network or basis dimension."""


@dataclass
class DenseNet:
    """Affine layers, each followed by an elementwise activation.

    The last activation is always ``identity``.  Weights are ``(out, in)``.
    ``version`` is bumped by every in-place parameter update; caches keyed on
    it cannot go stale.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    trainable: bool = True
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) != len(self.activations):
            raise ConfigurationError("weights, biases and activations differ in length")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigurationError(f"layer {i} input width does not chain")
        if self.activations[-1] != "identity":
            raise ConfigurationError("last layer activation must be identity")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def freeze(self):
        self.trainable = False

    def unfreeze(self):
        self.trainable = True

    def bump(self):
        self.version += 1

    def set_params(self, params: Sequence[np.ndarray]):
        params = list(params)
        for i in range(len(self.weights)):
            self.weights[i] = np.array(params[2 * i], dtype=np.float64)
            self.biases[i] = np.array(params[2 * i + 1], dtype=np.float64)
        self.bump()

    def copy(self) -> "DenseNet":
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.trainable,
        )

    def __call__(self, x, params=None):
        return net_forward(self, x, params)


def init_dense(widths: Sequence[int], activation: str, seed: int) -> DenseNet:
    """Glorot-uniform weights, zero biases, linear output layer."""
    widths = list(widths)
    if len(widths) < 2 or any(int(w) <= 0 for w in widths):
        raise ConfigurationError(f"bad layer widths {widths}")
    if activation not in ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    acts = [activation] * (len(widths) - 2) + ["identity"]
    return DenseNet(weights, biases, acts)


def _activate(kind: str, z):
    if kind == "identity":
        return z
    return ad.unary(_KIND[kind], z)


def net_forward(net: DenseNet, x, params=None):
    """Evaluate ``net`` on ``x`` of shape ``(..., input_dim)``.

    ``params`` (flat ``[W0, b0, W1, b1, ...]``) may be tape leaves, in which
    case the evaluation is recorded; by default the net's own arrays are used.
    """
    if np.shape(ad.value_of(x))[-1] != net.input_dim:
        raise ShapeError(f"expected input width {net.input_dim}, got {np.shape(ad.value_of(x))}")
    p = net.params() if params is None else params
    h = x
    for i, act in enumerate(net.activations):
        h = _activate(act, ad.linear(h, p[2 * i], p[2 * i + 1]))
    return h


def net_jet(net: DenseNet, jet: ad.Jet, params=None) -> ad.Jet:
    """Push a :class:`~ptpi.autodiff.Jet` through ``net``."""
    p = net.params() if params is None else params
    for i, act in enumerate(net.activations):
        jet = jet.linear(p[2 * i], p[2 * i + 1])
        if act != "identity":
            jet = jet.apply(_KIND[act])
    return jet


@dataclass
class FourierEmbedding:
    """``x -> [sin(2 pi B x), cos(2 pi B x)]`` with a fixed ``(m, d)`` matrix ``B``."""

    B: np.ndarray

    @classmethod
    def sample(cls, m: int, d: int, sigma: float = 1.0, seed: int = 0) -> "FourierEmbedding":
        rng = np.random.default_rng(seed)
        return cls(sigma * rng.standard_normal((m, d)))

    @property
    def output_dim(self) -> int:
        return 2 * self.B.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    def __call__(self, x):
        return fourier_embed(x, self)

    def jet(self, jet: ad.Jet) -> ad.Jet:
        z = jet.linear(2.0 * np.pi * self.B)
        return z.apply("sin").concat(z.apply("cos"))


def fourier_embed(x, emb: FourierEmbedding):
    if np.shape(ad.value_of(x))[-1] != emb.input_dim:
        raise ShapeError(f"expected {emb.input_dim} coordinates, got {np.shape(ad.value_of(x))}")
    z = ad.linear(x, 2.0 * np.pi * emb.B)
    return ad.concat([ad.sin(z), ad.cos(z)], axis=-1)

"""Fully connected networks with clean and noise-injected forward passes.

Node layers are numbered 1..L with layer 1 the input.  ``weights[l - 1]``
(shape ``m_l x m_{l+1}``) connects node layer ``l`` to ``l + 1``.  Noising
layer ``l`` perturbs its nodes independently on every outgoing edge, so the
valid choices are 1..L-1 and the output layer is never noised.
"""
from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import InvalidArgumentError
from .noise import NoiseSpec, Variant, noise_gain, shakeout_weight
from .numerics import RngStream

ACTIVATIONS = ("sigmoid", "softmax", "relu", "identity")


def activate(name: str, u: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return expit(u)
    if name == "softmax":
        z = u - u.max(axis=-1, keepdims=True)
        ez = np.exp(z)
        return ez / ez.sum(axis=-1, keepdims=True)
    if name == "relu":
        return np.maximum(u, 0.0)
    if name == "identity":
        return u
    raise InvalidArgumentError(f"unknown activation {name!r}")


@dataclass
class Mlp:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    def __post_init__(self):
        self.layer_sizes = tuple(int(m) for m in self.layer_sizes)
        self.activations = tuple(self.activations)
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in self.biases]
        L = len(self.layer_sizes)
        if L < 2:
            raise InvalidArgumentError("an Mlp needs at least an input and an output layer")
        if not (len(self.weights) == len(self.biases) == len(self.activations) == L - 1):
            raise InvalidArgumentError("need one weight matrix, bias and activation per layer pair")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[l], self.layer_sizes[l + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise InvalidArgumentError(
                    f"layer {l}: weights {w.shape} / bias {b.shape} do not chain to {expect}"
                )
        for l, a in enumerate(self.activations):
            if a not in ACTIVATIONS:
                raise InvalidArgumentError(f"unknown activation {a!r}")
            if a == "softmax" and l != L - 2:
                raise InvalidArgumentError("softmax is only allowed on the final layer")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activations)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activations": list(self.activations),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls(d["layer_sizes"], d["weights"], d["biases"], d["activations"])

    def to_json(self, **extra) -> str:
        # json writes floats with repr(), the shortest string that round-trips
        return json.dumps({**self.to_dict(), **extra}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Mlp":
        return cls.from_dict(json.loads(text))


def init_weights(rng: RngStream, layer_sizes, std: float = 1.0, activations=None) -> Mlp:
    """I.i.d. ``N(0, std^2)`` weights and zero biases.

    By default hidden layers are sigmoid and the output is linear.
    """
    layer_sizes = tuple(int(m) for m in layer_sizes)
    if len(layer_sizes) == 0:
        raise InvalidArgumentError("layer_sizes must not be empty")
    if len(layer_sizes) < 2:
        raise InvalidArgumentError("layer_sizes needs at least two entries")
    if not std > 0:
        raise InvalidArgumentError("std must be positive")
    if activations is None:
        activations = ("sigmoid",) * (len(layer_sizes) - 2) + ("identity",)
    weights = [rng.normal(0.0, std, size=(a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])]
    biases = [np.zeros(b) for b in layer_sizes[1:]]
    return Mlp(layer_sizes, weights, biases, activations)


def _as_batch(mlp: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != mlp.layer_sizes[0]:
        raise InvalidArgumentError(
            f"input has {X.shape[-1]} features, network expects {mlp.layer_sizes[0]}"
        )
    return X, single


def forward(mlp: Mlp, x) -> np.ndarray:
    """Clean forward pass for one vector or a batch of row vectors."""
    X, single = _as_batch(mlp, x)
    H = X
    for w, b, act in zip(mlp.weights, mlp.biases, mlp.activations):
        H = activate(act, H @ w + b)
    return H[0] if single else H


class NoiseCache(dict):
    """Per noised layer, the raw draws used in one noisy pass.

    Gaussian schemes store unit normals ``e[i, j, k]``; dropout stores the
    scaled keep mask ``m[i, j, 0]`` (one draw per node); shakeout stores the
    per-edge multiplier ``r[i, j, k]``.
    """


def layer_specs(spec, noised_layers, n_layers: int) -> dict[int, NoiseSpec]:
    """Normalize a spec (or a ``{layer: spec}`` mapping) to a dict of noised layers."""
    if isinstance(spec, Mapping):
        specs = {int(l): s for l, s in spec.items()}
    else:
        if spec is None or spec.is_none:
            return {}
        specs = {int(l): spec for l in noised_layers}
    for l in specs:
        if not 1 <= l <= n_layers - 1:
            raise InvalidArgumentError(f"noised layer {l} outside 1..{n_layers - 1}")
    return {l: s for l, s in sorted(specs.items()) if not s.is_none}


def draw_noise(rng: RngStream, mlp: Mlp, specs: dict[int, NoiseSpec], n: int) -> NoiseCache:
    cache = NoiseCache()
    for l, s in specs.items():
        shape = (n,) + mlp.weights[l - 1].shape
        if s.is_gaussian:
            cache[l] = rng.standard_normal(shape)
        elif s.variant is Variant.DROPOUT:
            cache[l] = np.where(rng.random((n, shape[1], 1)) >= s.tau, 1.0 / (1.0 - s.tau), 0.0)
        elif s.variant is Variant.SHAKEOUT:
            cache[l] = np.where(rng.random(shape) >= s.tau, 1.0 / (1.0 - s.tau), 0.0)
        else:
            raise InvalidArgumentError(f"cannot inject {s.variant.value} into a network")
    return cache


def noisy_preactivation(spec: NoiseSpec, H, w, b, draws):
    """Pre-activation ``u`` of one layer given its noise draws."""
    v = spec.variant
    if spec.is_gaussian:
        gain = noise_gain(spec, w)
        if spec.multiplicative:
            return H @ w + b + np.einsum("nj,njk,jk->nk", H, draws, gain)
        return H @ w + b + np.einsum("njk,jk->nk", draws, gain)
    if v is Variant.DROPOUT:
        return (H * draws[:, :, 0]) @ w + b
    if v is Variant.SHAKEOUT:
        return np.einsum("nj,njk->nk", H, shakeout_weight(w, draws, spec.c)) + b
    raise InvalidArgumentError(f"unsupported variant {v}")


def forward_tape(mlp: Mlp, X: np.ndarray, specs: dict[int, NoiseSpec], cache: NoiseCache):
    """Forward pass recording each layer's input and pre-activation."""
    inputs, pre = [], []
    H = X
    for l, (w, b, act) in enumerate(zip(mlp.weights, mlp.biases, mlp.activations), start=1):
        inputs.append(H)
        if l in specs:
            draws = cache[l]
            if draws.shape[0] != H.shape[0]:
                raise InvalidArgumentError(
                    f"noise cache for layer {l} holds {draws.shape[0]} rows, batch has {H.shape[0]}"
                )
            U = noisy_preactivation(specs[l], H, w, b, draws)
        else:
            U = H @ w + b
        pre.append(U)
        H = activate(act, U)
    return H, inputs, pre


def forward_noisy(mlp: Mlp, x, spec, noised_layers=(1,), rng: RngStream | None = None,
                  cache: NoiseCache | None = None):
    """Noise-injected forward pass.

    Returns the output and the :class:`NoiseCache` of draws, which
    ``train.noisy_gradients`` treats as constants.  Passing ``cache``
    replays earlier draws instead of sampling.  For a single input vector
    each cached array has the shape of its weight matrix.
    """
    X, single = _as_batch(mlp, x)
    specs = layer_specs(spec, noised_layers, mlp.n_layers)
    if cache is None:
        if specs and rng is None:
            raise InvalidArgumentError("an RngStream is required to draw noise")
        cache = draw_noise(rng, mlp, specs, X.shape[0]) if specs else NoiseCache()
    elif single:
        cache = NoiseCache({l: a[None] if a.ndim == 2 else a for l, a in cache.items()})
    out, _, _ = forward_tape(mlp, X, specs, cache)
    if single:
        return out[0], NoiseCache({l: a[0] for l, a in cache.items()})
    return out, cache

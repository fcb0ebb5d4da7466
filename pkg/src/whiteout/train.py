"""Backpropagation through noise-injected forward passes, plus momentum SGD.

Noise draws from the forward pass are held fixed while differentiating.  For
Gaussian whiteout the perturbation on edge ``(j, k)`` is ``e_jk * sd(w_jk)``
and enters ``u_k`` multiplied by ``w_jk``, so each weight sees the extra
term ``e_jk * d(w sd(w))/dw`` on top of the usual ``X_j``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .exceptions import DivergenceError, InvalidArgumentError
from .network import (Mlp, NoiseCache, draw_noise, forward_tape,
                      layer_specs)
from .noise import NONE, NoiseSpec, Variant, noise_gain, noise_gain_vjp, shakeout_weight
from .numerics import RngStream

LOSS_KINDS = ("squared-error", "cross-entropy")


@dataclass
class TrainConfig:
    learning_rate: float = 0.2
    momentum: float = 0.5
    epochs: int = 5000
    seed: int = 0
    loss_kind: str = "cross-entropy"
    spec: NoiseSpec | dict = NONE
    noised_layers: tuple[int, ...] = (1,)
    minibatch: int | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError("momentum must lie in [0,1)")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise InvalidArgumentError("epochs must be a non-negative integer")
        self.epochs = int(self.epochs)
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidArgumentError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.minibatch is not None and self.minibatch < 1:
            raise InvalidArgumentError("minibatch must be a positive integer")
        self.noised_layers = tuple(sorted(int(l) for l in self.noised_layers))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, mlp: Mlp) -> "Gradients":
        return cls([np.zeros_like(w) for w in mlp.weights], [np.zeros_like(b) for b in mlp.biases])


@dataclass
class TrainTrace:
    losses: list[float] = field(default_factory=list)
    mlp: Mlp | None = None

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["epoch", "loss"])
        for i, loss in enumerate(self.losses, start=1):
            out.writerow([i, repr(loss)])
        return buf.getvalue()


# -- losses -----------------------------------------------------------------------------

def batch_loss(kind: str, out: np.ndarray, Y: np.ndarray, act: str, U=None) -> float:
    """Mean over rows of the per-example loss ``D``.

    Passing the output pre-activation ``U`` lets cross-entropy work on the
    logits, which avoids cancellation in ``log(1 - out)`` near saturation.
    """
    n = out.shape[0]
    if kind == "squared-error":
        return float(0.5 * np.sum((out - Y) ** 2) / n)
    if act == "softmax":
        if U is not None:
            return float(-np.sum(Y * (U - logsumexp(U, axis=1, keepdims=True))) / n)
        return float(-np.sum(Y * np.log(np.maximum(out, 1e-300))) / n)
    if act == "sigmoid":
        if U is not None:
            return float(np.sum(np.logaddexp(0.0, U) - Y * U) / n)
        return float(-np.sum(Y * np.log(np.maximum(out, 1e-300))
                             + (1 - Y) * np.log(np.maximum(1 - out, 1e-300))) / n)
    raise InvalidArgumentError("cross-entropy needs a softmax or sigmoid output layer")


def network_loss(mlp: Mlp, X, Y, kind: str, specs=None, cache=None) -> float:
    """Batch loss of a (possibly noised) forward pass, from the output logits."""
    out, _, pre = forward_tape(mlp, X, specs or {}, cache or {})
    return batch_loss(kind, out, Y, mlp.activations[-1], pre[-1])


def _act_backward(act: str, U, H, upstream):
    if act == "sigmoid":
        return upstream * H * (1.0 - H)
    if act == "relu":
        return upstream * (U > 0)
    if act == "identity":
        return upstream
    if act == "softmax":
        return H * (upstream - np.sum(upstream * H, axis=1, keepdims=True))
    raise InvalidArgumentError(f"unknown activation {act!r}")


def _output_delta(kind, act, U, out, Y):
    n = out.shape[0]
    if kind == "cross-entropy" and act in ("softmax", "sigmoid"):
        return (out - Y) / n
    if kind == "cross-entropy":
        raise InvalidArgumentError("cross-entropy needs a softmax or sigmoid output layer")
    return _act_backward(act, U, out, (out - Y) / n)


def _check_targets(mlp, X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X, Y = X.reshape(1, -1), Y.reshape(1, -1)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != mlp.layer_sizes[0]:
        raise InvalidArgumentError(f"batch must be n x {mlp.layer_sizes[0]}")
    if Y.shape != (X.shape[0], mlp.layer_sizes[-1]):
        raise InvalidArgumentError(f"targets must be {X.shape[0]} x {mlp.layer_sizes[-1]}")
    return X, Y


# -- gradients --------------------------------------------------------------------------

def _layer_backward(spec: NoiseSpec | None, H, w, draws, delta):
    """Weight gradient and upstream node gradient for one layer."""
    if spec is None:
        return H.T @ delta, delta @ w.T
    if spec.is_gaussian:
        gw = H.T @ delta
        gh = delta @ w.T
        if spec.multiplicative:
            coef = np.einsum("njk,nk->jk", H[:, :, None] * draws, delta)
            gh = gh + np.einsum("nk,njk->nj", delta, draws * noise_gain(spec, w))
        else:
            coef = np.einsum("njk,nk->jk", draws, delta)
        return gw + noise_gain_vjp(spec, w, coef), gh
    if spec.variant is Variant.DROPOUT:
        mask = draws[:, :, 0]
        return (H * mask).T @ delta, (delta @ w.T) * mask
    if spec.variant is Variant.SHAKEOUT:
        # the sign term has zero derivative away from w = 0
        gw = np.einsum("njk,nk->jk", H[:, :, None] * draws, delta)
        gh = np.einsum("nk,njk->nj", delta, shakeout_weight(w, draws, spec.c))
        return gw, gh
    raise InvalidArgumentError(f"unsupported variant {spec.variant}")


def noisy_gradients(mlp: Mlp, X, Y, spec, cache: NoiseCache, loss_kind: str,
                    noised_layers=(1,)) -> tuple[Gradients, float]:
    """Gradient of the batch-mean perturbed loss for frozen noise draws.

    Returns the gradients and the perturbed loss they belong to.
    """
    X, Y = _check_targets(mlp, X, Y)
    specs = layer_specs(spec, noised_layers, mlp.n_layers)
    cache = NoiseCache({l: a[None] if a.ndim == 2 else a for l, a in cache.items()})
    missing = set(specs) - set(cache)
    if missing:
        raise InvalidArgumentError(f"noise cache lacks layers {sorted(missing)}")
    out, inputs, pre = forward_tape(mlp, X, specs, cache)
    loss = batch_loss(loss_kind, out, Y, mlp.activations[-1], pre[-1])
    L = mlp.n_layers - 1
    gws, gbs = [None] * L, [None] * L
    delta = _output_delta(loss_kind, mlp.activations[-1], pre[-1], out, Y)
    for i in range(L - 1, -1, -1):
        gbs[i] = delta.sum(axis=0)
        gws[i], gh = _layer_backward(specs.get(i + 1), inputs[i], mlp.weights[i],
                                     cache.get(i + 1), delta)
        if i > 0:
            delta = _act_backward(mlp.activations[i - 1], pre[i - 1], inputs[i], gh)
    return Gradients(gws, gbs), loss


def sgd_step(mlp: Mlp, grads: Gradients, velocity: Gradients | None, lr: float,
             momentum: float) -> tuple[Mlp, Gradients]:
    """``v <- momentum v + g``; ``p <- p - lr v``."""
    if velocity is None:
        velocity = Gradients.zeros_like(mlp)
    new_v = Gradients([], [])
    new = mlp.copy()
    for store, params, gs, vs in ((new_v.weights, new.weights, grads.weights, velocity.weights),
                                  (new_v.biases, new.biases, grads.biases, velocity.biases)):
        if len(gs) != len(params) or len(vs) != len(params):
            raise InvalidArgumentError("gradient structure does not match the network")
        for i, (g, v) in enumerate(zip(gs, vs)):
            if np.shape(g) != params[i].shape or np.shape(v) != params[i].shape:
                raise InvalidArgumentError(f"gradient shape {np.shape(g)} != {params[i].shape}")
            v = momentum * v + g
            store.append(v)
            params[i] = params[i] - lr * v
    return new, new_v


def train(mlp: Mlp, dataset, config: TrainConfig) -> TrainTrace:
    """Full-batch (or minibatch) momentum SGD on the noise-perturbed loss.

    ``dataset`` is a :class:`whiteout.data.Dataset` or an ``(X, Y)`` pair.
    The trace records the clean batch-mean training loss after each epoch.
    """
    if hasattr(dataset, "target_matrix"):
        X, Y = dataset.X, dataset.target_matrix(mlp.layer_sizes[-1])
    else:
        X, Y = dataset
    X, Y = _check_targets(mlp, X, Y)
    n = X.shape[0]
    if n == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    specs = layer_specs(config.spec, config.noised_layers, mlp.n_layers)
    root = RngStream(config.seed)
    noise_rng, order_rng = root.substream(0), root.substream(1)
    trace = TrainTrace(mlp=mlp)
    velocity = None
    batch = n if config.minibatch is None else min(config.minibatch, n)
    for epoch in range(1, config.epochs + 1):
        order = np.arange(n) if batch == n else order_rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            xb, yb = X[idx], Y[idx]
            cache = draw_noise(noise_rng, mlp, specs, xb.shape[0]) if specs else NoiseCache()
            grads, _ = noisy_gradients(mlp, xb, yb, specs, cache, config.loss_kind)
            mlp, velocity = sgd_step(mlp, grads, velocity, config.learning_rate, config.momentum)
        with np.errstate(over="ignore", invalid="ignore"):
            loss = network_loss(mlp, X, Y, config.loss_kind)
        if not math.isfinite(loss):
            raise DivergenceError(
                f"training loss became {loss} at epoch {epoch}; lower the learning rate "
                f"or the noise level", epoch=epoch)
        trace.losses.append(loss)
    trace.mlp = mlp
    return trace


def clean_loss(mlp: Mlp, X, Y, loss_kind: str) -> float:
    X, Y = _check_targets(mlp, X, Y)
    return network_loss(mlp, X, Y, loss_kind)


__all__ = ["TrainConfig", "TrainTrace", "Gradients", "noisy_gradients", "sgd_step", "train",
           "batch_loss", "network_loss", "clean_loss"]

"""Whiteout penalties for a tiny RBM and a single autoencoder layer.

Both closed forms are second-order expansions of the expected loss under
Gaussian input noise.  All RBM quantities are computed by enumerating every
joint state, so models are limited to ``p, m <= 12`` and ``p + m <= 20``.

RBM convention: ``F(v, h) = -b'v - a'h - v'Wh`` with ``W`` of shape ``p x m``.
Perturbing the visible units, ``v -> v + e``, leaves ``F`` linear in ``e``
with coefficient ``-(b + W h)``.  The perturbed likelihood is normalized
over the shifted energy, so the expected gap is
``1/2 sum_i sum_k V_k (Var_{v,h}(b_k + W_k h) - Var_{h|v_i}(b_k + W_k h))``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .exceptions import InvalidArgumentError
from .noise import NoiseSpec, Variant, edge_variance
from .numerics import RngStream

MAX_UNITS = 12
MAX_TOTAL = 20


@dataclass
class Rbm:
    w: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        p, m = self.w.shape
        if self.a.shape != (m,) or self.b.shape != (p,):
            raise InvalidArgumentError(f"biases must have lengths m={m} (a) and p={p} (b)")
        if p > MAX_UNITS or m > MAX_UNITS or p + m > MAX_TOTAL:
            raise InvalidArgumentError(
                f"RBM with p={p}, m={m} is too large to enumerate (need p, m <= {MAX_UNITS}, "
                f"p + m <= {MAX_TOTAL})"
            )

    @property
    def p(self):
        return self.w.shape[0]

    @property
    def m(self):
        return self.w.shape[1]


@dataclass
class McResult:
    value: float
    std_error: float
    draws: int


def _binary_states(k):
    return np.array(list(itertools.product((0.0, 1.0), repeat=k))).reshape(2**k, k)


def _check_visible(rbm, v, binary=True):
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if v.shape[1] != rbm.p:
        raise InvalidArgumentError(f"visible vectors need {rbm.p} entries, got {v.shape[1]}")
    if binary and not np.all((v == 0) | (v == 1)):
        raise InvalidArgumentError("visible data must be binary")
    return v


def _log_marginal(rbm, v):
    """``log sum_h exp(-F(v, h))`` for real-valued rows ``v``."""
    return v @ rbm.b + np.sum(np.logaddexp(0.0, rbm.a + v @ rbm.w), axis=-1)


def rbm_state_probs(rbm: Rbm):
    """All joint states and their probabilities: ``(V, H, P)`` with ``P[s, t] = P(V[s], H[t])``."""
    V, H = _binary_states(rbm.p), _binary_states(rbm.m)
    neg_f = (V @ rbm.b)[:, None] + (H @ rbm.a)[None, :] + V @ rbm.w @ H.T
    return V, H, np.exp(neg_f - logsumexp(neg_f))


def _log_partition(rbm):
    V, H = _binary_states(rbm.p), _binary_states(rbm.m)
    return float(logsumexp((V @ rbm.b)[:, None] + (H @ rbm.a)[None, :] + V @ rbm.w @ H.T))


def rbm_exact_nll(rbm: Rbm, v_data) -> float:
    v = _check_visible(rbm, v_data)
    return float(-np.sum(_log_marginal(rbm, v)) + v.shape[0] * _log_partition(rbm))


def visible_noise_variance(rbm: Rbm, spec: NoiseSpec) -> np.ndarray:
    """Per-visible-node variance ``sigma2 * wbar_k^-gamma + lambda``.

    ``wbar_k`` is the mean absolute weight leaving node ``k``.  Averaging
    the weights first keeps a single near-zero edge from dominating.
    """
    if spec.is_none:
        return np.zeros(rbm.p)
    if spec.variant is not Variant.ADDITIVE:
        raise InvalidArgumentError("RBM penalties need an additive whiteout spec")
    return edge_variance(spec, np.abs(rbm.w).mean(axis=1))


def rbm_whiteout_penalty(rbm: Rbm, v_data, spec: NoiseSpec) -> float:
    v = _check_visible(rbm, v_data)
    var_e = visible_noise_variance(rbm, spec)
    if not np.any(var_e):
        return 0.0
    _, H, P = rbm_state_probs(rbm)
    ph = P.sum(axis=0)
    proj = H @ rbm.w.T                               # (2^m, p): W_k h for each hidden state
    centered = proj - ph @ proj
    model_var = ph @ (centered * centered)
    q = expit(rbm.a + v @ rbm.w)                       # P(h_j = 1 | v_i)
    cond_var = (q * (1.0 - q)) @ (rbm.w.T ** 2)        # sum_j w_kj^2 q(1-q)
    return float(0.5 * np.sum(var_e * (model_var[None, :] - cond_var)))


def _antithetic_mean(f, rng, shape, sd, draws, chunk):
    """Mean and standard error of ``(f(e) + f(-e)) / 2`` over ``draws // 2`` pairs."""
    pairs = max(1, draws // 2)
    vals = np.empty(pairs)
    done = 0
    while done < pairs:
        c = min(chunk, pairs - done)
        e = rng.standard_normal((c,) + shape) * sd
        vals[done:done + c] = 0.5 * (f(e) + f(-e))
        done += c
    return McResult(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(pairs)), 2 * pairs)


def rbm_mc_perturbed_nll(rbm: Rbm, v_data, spec: NoiseSpec, draws: int, rng: RngStream,
                         chunk: int = 4096) -> McResult:
    """Average exact NLL of ``v + e`` under the noise-shifted normalizer.

    Each case gets its own per-node draw ``e_i``; draws come in antithetic
    pairs ``(e, -e)``.
    """
    v = _check_visible(rbm, v_data)
    if spec.is_none:
        return McResult(rbm_exact_nll(rbm, v), 0.0, int(draws))
    if draws < 2:
        raise InvalidArgumentError("draws must be >= 2")
    sd = np.sqrt(visible_noise_variance(rbm, spec))
    V, H = _binary_states(rbm.p), _binary_states(rbm.m)
    base = (V @ rbm.b)[:, None] + (H @ rbm.a)[None, :] + V @ rbm.w @ H.T   # (2^p, 2^m)
    slope = rbm.b[None, :] + H @ rbm.w.T                                     # (2^m, p)

    def nll(e):                                  # e: (c, n, p)
        shifted = v[None] + e
        log_norm = logsumexp(base[None, None] + (e @ slope.T)[:, :, None, :], axis=(2, 3))
        return np.sum(log_norm - _log_marginal(rbm, shifted), axis=1)

    return _antithetic_mean(nll, rng, v.shape, sd, draws, chunk)


# -- autoencoder ------------------------------------------------------------------------

_AE_ACTS = ("identity", "sigmoid")


@dataclass
class AeLayer:
    """Decoder ``x_hat = g(h w + b)`` with ``w`` of shape ``m x p``."""

    w: np.ndarray
    b: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.b.shape != (self.w.shape[1],):
            raise InvalidArgumentError(f"b must have length {self.w.shape[1]}")
        if self.activation not in _AE_ACTS:
            raise InvalidArgumentError(f"activation must be one of {_AE_ACTS}")

    def g(self, u):
        return u if self.activation == "identity" else expit(u)

    def derivatives(self, u):
        if self.activation == "identity":
            return np.ones_like(u), np.zeros_like(u)
        s = expit(u)
        d1 = s * (1.0 - s)
        return d1, d1 * (1.0 - 2.0 * s)


def _ae_inputs(layer, h, x):
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m, p = layer.w.shape
    if h.shape[1] != m or x.shape[1] != p or h.shape[0] != x.shape[0]:
        raise InvalidArgumentError(
            f"need h: n x {m} and x: n x {p} with equal n, got {h.shape} and {x.shape}"
        )
    return h, x


def _edge_var(layer, h, spec):
    """``V[i, k, j]``: variance of the noise injected into ``h_ik`` on edge ``(k, j)``."""
    if not spec.is_gaussian:
        raise InvalidArgumentError("AE penalties need a Gaussian whiteout spec")
    v = edge_variance(spec, layer.w)[None]
    if spec.multiplicative:
        return v * (h * h)[:, :, None]
    return np.broadcast_to(v, (h.shape[0],) + layer.w.shape)


def ae_clean_loss(layer: AeLayer, h_batch, x_batch) -> float:
    h, x = _ae_inputs(layer, h_batch, x_batch)
    return float(np.sum((x - layer.g(h @ layer.w + layer.b)) ** 2))


def ae_whiteout_penalty(layer: AeLayer, h_batch, x_batch, spec: NoiseSpec) -> float:
    """``sum_ij s_ij ((g')^2 - g'' (x_ij - g))`` with ``s_ij = sum_k w_kj^2 V(e_ijk)``."""
    h, x = _ae_inputs(layer, h_batch, x_batch)
    if spec.is_none:
        return 0.0
    s = np.einsum("kj,ikj->ij", layer.w ** 2, _edge_var(layer, h, spec))
    u = h @ layer.w + layer.b
    d1, d2 = layer.derivatives(u)
    return float(np.sum(s * (d1 * d1 - d2 * (x - layer.g(u)))))


def ae_mc_perturbed_loss(layer: AeLayer, h_batch, x_batch, spec: NoiseSpec, draws: int,
                         rng: RngStream, chunk: int = 2048) -> McResult:
    """Reconstruction loss with per-edge noise on the hidden nodes, averaged over draws."""
    h, x = _ae_inputs(layer, h_batch, x_batch)
    if spec.is_none:
        return McResult(ae_clean_loss(layer, h, x), 0.0, int(draws))
    if draws < 2:
        raise InvalidArgumentError("draws must be >= 2")
    sd = np.sqrt(_edge_var(layer, h, spec))
    u0 = h @ layer.w + layer.b

    def loss(e):                                 # e: (c, n, m, p)
        u = u0[None] + np.einsum("cikj,kj->cij", e, layer.w)
        return np.sum((x[None] - layer.g(u)) ** 2, axis=(1, 2))

    return _antithetic_mean(loss, rng, sd.shape, sd, draws, chunk)

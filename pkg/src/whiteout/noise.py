"""Noise-injection schemes: whiteout (additive / multiplicative / adaptive
lasso / group), dropout and shakeout.

Conventions
-----------
Weights are stored source-major: ``w[j, k]`` connects source node ``j`` to
destination node ``k``.  A 1-D weight vector (a GLM coefficient vector) is
treated as a single destination column.  Gaussian whiteout noise is drawn per
edge, so source node ``j`` is perturbed independently on each outgoing edge.

Every whiteout variance is evaluated at ``max(|w|, EPS)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction

import numpy as np

from .exceptions import InvalidArgumentError, MissingParameterError
from .numerics import EPS, RngStream


class Variant(str, Enum):
    NONE = "none"
    ADDITIVE = "whiteout_additive"
    MULTIPLICATIVE = "whiteout_multiplicative"
    ADAPTIVE_LASSO = "whiteout_adaptive_lasso"
    GROUP = "whiteout_group"
    DROPOUT = "dropout"
    SHAKEOUT = "shakeout"


_WHITEOUT = {Variant.ADDITIVE, Variant.MULTIPLICATIVE, Variant.ADAPTIVE_LASSO, Variant.GROUP}


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Immutable description of one noise-injection scheme.

    Parameters
    ----------
    variant : Variant
    sigma2 : float
        Weight-adaptive variance scale.
    gamma : float
        Exponent on ``|w|``; must lie in (0, 2) whenever ``sigma2 > 0``.
    lam : float
        Constant variance component (serialized as ``"lambda"``).
    tau : float
        Drop probability for dropout and shakeout.
    c : float
        Shakeout l1 weighting.
    w_hat : array, optional
        Pilot weights for the adaptive-lasso variant, same shape as the
        weights the noise is applied to.
    groups : tuple of tuple of int, optional
        Partition of the source-node indices for the group variant.
    kernels : tuple of arrays, optional
        Positive-definite ``K_g`` per group; identity when omitted.
    multiplicative : bool
        Apply an adaptive-lasso or group variance multiplicatively,
        ``x * (1 + e * sd)``.  Always true for ``MULTIPLICATIVE``.
    """

    variant: Variant = Variant.NONE
    sigma2: float = 0.0
    gamma: float = 1.0
    lam: float = 0.0
    tau: float = 0.0
    c: float = 0.0
    w_hat: np.ndarray | None = field(default=None, repr=False)
    groups: tuple[tuple[int, ...], ...] | None = None
    kernels: tuple[np.ndarray, ...] | None = field(default=None, repr=False)
    multiplicative: bool = False

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        for name in ("sigma2", "gamma", "lam", "tau", "c"):
            value = getattr(self, name)
            if not isinstance(value, Fraction):
                value = float(value)
            if not math.isfinite(value):
                raise InvalidArgumentError(f"{_json_name(name)} must be finite")
            object.__setattr__(self, name, value)
        if variant is Variant.MULTIPLICATIVE:
            object.__setattr__(self, "multiplicative", True)
        elif variant not in (Variant.ADAPTIVE_LASSO, Variant.GROUP):
            object.__setattr__(self, "multiplicative", False)
        if self.w_hat is not None:
            w_hat = np.array(self.w_hat, dtype=np.float64)
            w_hat.setflags(write=False)
            object.__setattr__(self, "w_hat", w_hat)
        if self.groups is not None:
            groups = tuple(tuple(int(j) for j in g) for g in self.groups)
            object.__setattr__(self, "groups", groups)
        if self.kernels is not None:
            kernels = tuple(np.atleast_2d(np.array(k, dtype=np.float64)) for k in self.kernels)
            for k in kernels:
                k.setflags(write=False)
            object.__setattr__(self, "kernels", kernels)
        self._validate()

    def _validate(self):
        v = self.variant
        if self.sigma2 < 0 or self.lam < 0:
            raise InvalidArgumentError("sigma2 and lambda must be >= 0")
        if self.c < 0:
            raise InvalidArgumentError("c must be >= 0")
        if v in _WHITEOUT:
            if self.sigma2 > 0 and not 0 < self.gamma < 2:
                raise InvalidArgumentError("gamma must lie in (0,2)")
        if v in (Variant.ADDITIVE, Variant.MULTIPLICATIVE) and self.sigma2 + self.lam <= 0:
            raise InvalidArgumentError("whiteout requires sigma2 + lambda > 0")
        if v in (Variant.ADAPTIVE_LASSO, Variant.GROUP) and self.sigma2 <= 0:
            raise InvalidArgumentError(f"{v.value} requires sigma2 > 0")
        if v in (Variant.DROPOUT, Variant.SHAKEOUT) and not 0 <= self.tau < 1:
            raise InvalidArgumentError("tau must lie in [0,1)")
        if v is Variant.GROUP:
            if not self.groups:
                raise MissingParameterError("group whiteout requires groups")
            flat = [j for g in self.groups for j in g]
            if any(len(g) == 0 for g in self.groups):
                raise InvalidArgumentError("groups must be non-empty")
            if len(flat) != len(set(flat)) or set(flat) != set(range(len(flat))):
                raise InvalidArgumentError(
                    "groups must partition the input indices 0..p-1 (disjoint, covering)"
                )
            if self.kernels is not None:
                if len(self.kernels) != len(self.groups):
                    raise InvalidArgumentError("one kernel per group is required")
                for g, k in zip(self.groups, self.kernels):
                    if k.shape != (len(g), len(g)):
                        raise InvalidArgumentError(
                            f"kernel for group {g} must be {len(g)}x{len(g)}"
                        )
                    if not np.allclose(k, k.T) or np.linalg.eigvalsh(k).min() <= 0:
                        raise InvalidArgumentError("group kernels must be positive definite")

    # -- named members of the family -------------------------------------------------

    @classmethod
    def gab(cls, sigma2, gamma):
        """Gaussian bridge: ``N(0, sigma2 |w|^-gamma)``."""
        return cls(Variant.ADDITIVE, sigma2=sigma2, gamma=gamma)

    @classmethod
    def gala(cls, sigma2):
        return cls(Variant.ADDITIVE, sigma2=sigma2, gamma=1.0)

    @classmethod
    def gar(cls, lam):
        return cls(Variant.ADDITIVE, lam=lam)

    @classmethod
    def gen(cls, sigma2, lam):
        return cls(Variant.ADDITIVE, sigma2=sigma2, gamma=1.0, lam=lam)

    @classmethod
    def gaala(cls, sigma2, gamma, w_hat, multiplicative=False):
        return cls(Variant.ADAPTIVE_LASSO, sigma2=sigma2, gamma=gamma, w_hat=w_hat,
                   multiplicative=multiplicative)

    @classmethod
    def gag(cls, sigma2, groups, kernels=None, multiplicative=False):
        return cls(Variant.GROUP, sigma2=sigma2, groups=groups, kernels=kernels,
                   multiplicative=multiplicative)

    @classmethod
    def multiplicative_whiteout(cls, sigma2, gamma=1.0, lam=0.0):
        return cls(Variant.MULTIPLICATIVE, sigma2=sigma2, gamma=gamma, lam=lam)

    @classmethod
    def dropout(cls, tau):
        return cls(Variant.DROPOUT, tau=tau)

    @classmethod
    def shakeout(cls, tau, c=0.5):
        return cls(Variant.SHAKEOUT, tau=tau, c=c)

    # -- properties ------------------------------------------------------------------

    @property
    def is_none(self) -> bool:
        return self.variant is Variant.NONE

    @property
    def is_gaussian(self) -> bool:
        return self.variant in _WHITEOUT

    def with_params(self, **changes) -> "NoiseSpec":
        return replace(self, **changes)

    def sort_key(self):
        """Less noise sorts first: ``(sigma2, lambda, gamma, tau)``."""
        return (float(self.sigma2), float(self.lam), float(self.gamma), float(self.tau))

    def to_dict(self) -> dict:
        d = {
            "variant": self.variant.value,
            "sigma2": float(self.sigma2),
            "gamma": float(self.gamma),
            "lambda": float(self.lam),
            "tau": float(self.tau),
            "c": float(self.c),
            "groups": [list(g) for g in self.groups] if self.groups is not None else None,
        }
        if self.multiplicative and self.variant is not Variant.MULTIPLICATIVE:
            d["multiplicative"] = True
        if self.w_hat is not None:
            d["w_hat"] = self.w_hat.tolist()
        if self.kernels is not None:
            d["kernels"] = [k.tolist() for k in self.kernels]
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "NoiseSpec":
        if d is None:
            return cls()
        allowed = {"variant", "sigma2", "gamma", "lambda", "tau", "c", "groups",
                   "w_hat", "kernels", "multiplicative"}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidArgumentError(f"unknown noise keys: {sorted(unknown)}")
        try:
            variant = Variant(d.get("variant", "none"))
        except ValueError:
            raise InvalidArgumentError(f"unknown noise variant {d.get('variant')!r}") from None
        return cls(
            variant,
            sigma2=d.get("sigma2", 0.0),
            gamma=d.get("gamma", 1.0),
            lam=d.get("lambda", 0.0),
            tau=d.get("tau", 0.0),
            c=d.get("c", 0.0),
            w_hat=d.get("w_hat"),
            groups=d.get("groups"),
            kernels=d.get("kernels"),
            multiplicative=bool(d.get("multiplicative", False)),
        )


def _json_name(attr):
    return "lambda" if attr == "lam" else attr


NONE = NoiseSpec()


# -- variances -------------------------------------------------------------------------

def _as_columns(w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 0:
        return w.reshape(1, 1), "scalar"
    if w.ndim == 1:
        return w.reshape(-1, 1), "vector"
    if w.ndim == 2:
        return w, "matrix"
    raise InvalidArgumentError(f"weights must be at most 2-D, got shape {w.shape}")


def _restore(a, kind, shape):
    if kind == "scalar":
        return float(a.reshape(()))
    return a.reshape(shape)


def _w_hat_for(spec, w_hat, shape):
    w_hat = spec.w_hat if w_hat is None else w_hat
    if w_hat is None:
        raise MissingParameterError("adaptive-lasso whiteout requires w_hat")
    w_hat = np.asarray(w_hat, dtype=np.float64)
    if w_hat.ndim < 2:
        w_hat = w_hat.reshape(-1, 1)
    try:
        return np.broadcast_to(w_hat, shape)
    except ValueError:
        raise InvalidArgumentError(
            f"w_hat shape {np.shape(w_hat)} does not match weights {shape}"
        ) from None


def _group_norms(spec, w):
    """``N[g, k] = w_g' K_g w_g`` for each group and destination column."""
    if sum(len(g) for g in spec.groups) != w.shape[0]:
        raise InvalidArgumentError(
            f"groups cover {sum(len(g) for g in spec.groups)} inputs, weights have {w.shape[0]}"
        )
    norms = np.empty((len(spec.groups), w.shape[1]))
    for gi, g in enumerate(spec.groups):
        wg = w[list(g), :]
        if spec.kernels is None:
            norms[gi] = np.sum(wg * wg, axis=0)
        else:
            norms[gi] = np.einsum("jk,jl,lk->k", wg, spec.kernels[gi], wg)
    return norms


def _variance_and_elasticity(spec: NoiseSpec, w: np.ndarray, w_hat=None):
    """Edge variances ``v`` and the own-weight term ``w * dv/dw`` (2-D inputs)."""
    a = np.maximum(np.abs(w), EPS)
    unclamped = np.abs(w) > EPS
    v_kind = spec.variant
    if v_kind in (Variant.ADDITIVE, Variant.MULTIPLICATIVE):
        if spec.sigma2 > 0:
            adaptive = spec.sigma2 * a ** (-spec.gamma)
        else:
            adaptive = np.zeros_like(a)
        var = adaptive + spec.lam
        elast = np.where(unclamped, -spec.gamma * adaptive, 0.0)
    elif v_kind is Variant.ADAPTIVE_LASSO:
        ah = np.maximum(np.abs(_w_hat_for(spec, w_hat, w.shape)), EPS)
        var = spec.sigma2 / a * ah ** (-spec.gamma)
        elast = np.where(unclamped, -var, 0.0)
    elif v_kind is Variant.GROUP:
        norms = np.maximum(_group_norms(spec, w), EPS**2)
        var = np.empty_like(w)
        for gi, g in enumerate(spec.groups):
            idx = list(g)
            var[idx, :] = spec.sigma2 * np.sqrt(norms[gi])[None, :] / (len(g) * a[idx, :] ** 2)
        elast = np.where(unclamped, -2.0 * var, 0.0)
    else:
        raise InvalidArgumentError(f"{spec.variant.value} has no Gaussian edge variance")
    return var, elast


def edge_variance(spec: NoiseSpec, w, w_hat=None):
    """Variance of the Gaussian noise on each edge, same shape as ``w``.

    For multiplicative specs this is the variance of the multiplier
    ``epsilon``, i.e. before scaling by the node value.
    """
    cols, kind = _as_columns(w)
    var, _ = _variance_and_elasticity(spec, cols, w_hat)
    return _restore(var, kind, np.shape(w))


def noise_std(spec: NoiseSpec, w, node_value=None, w_hat=None):
    """Standard deviation of the additive perturbation on each edge.

    Multiplicative whiteout is expressed in its equivalent additive form,
    so ``node_value`` is required there and the result scales with
    ``|node_value|``.
    """
    if spec.is_none:
        return 0.0 if np.ndim(w) == 0 else np.zeros(np.shape(w))
    if not spec.is_gaussian:
        raise InvalidArgumentError(f"noise_std is undefined for {spec.variant.value}")
    sd = np.sqrt(edge_variance(spec, w, w_hat))
    if spec.multiplicative:
        if node_value is None:
            raise MissingParameterError("multiplicative whiteout needs the node value")
        sd = np.abs(np.asarray(node_value, dtype=np.float64)) * sd
    if np.ndim(sd) == 0:
        return float(sd)
    return sd


def noise_gain(spec: NoiseSpec, w, w_hat=None) -> np.ndarray:
    """``w * sqrt(v(w))``: the coefficient of a unit normal draw in ``u``."""
    cols, kind = _as_columns(w)
    var, _ = _variance_and_elasticity(spec, cols, w_hat)
    return _restore(cols * np.sqrt(var), kind, np.shape(w))


def noise_gain_vjp(spec: NoiseSpec, w, coef, w_hat=None) -> np.ndarray:
    """Gradient of ``sum(coef * noise_gain(w))`` with respect to ``w``.

    The own-weight part is ``sd + w * dsd/dw``, which for the base variance
    equals ``(2v - gamma sigma2 |w|^-gamma) / (2 sqrt(v))``.  Clamped weights
    contribute ``sd`` only.  The group variant also couples every weight of a
    group through ``w_g' K_g w_g``.
    """
    cols, kind = _as_columns(w)
    coef = np.asarray(coef, dtype=np.float64).reshape(cols.shape)
    var, elast = _variance_and_elasticity(spec, cols, w_hat)
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        own = np.where(sd > 0, sd + elast / (2.0 * np.where(sd > 0, sd, 1.0)), 0.0)
    grad = coef * own
    if spec.variant is Variant.GROUP:
        raw_norms = _group_norms(spec, cols)
        gain = cols * sd
        for gi, g in enumerate(spec.groups):
            idx = list(g)
            live = raw_norms[gi] > EPS**2
            # d gain_j / d N = gain_j / (4 N); dN/dw_g = 2 K w_g
            scale = np.where(live, np.sum(coef[idx] * gain[idx], axis=0)
                             / (4.0 * np.where(live, raw_norms[gi], 1.0)), 0.0)
            kw = cols[idx] if spec.kernels is None else spec.kernels[gi] @ cols[idx]
            grad[idx] += 2.0 * kw * scale[None, :]
    return _restore(grad, kind, np.shape(w))


# -- sampling --------------------------------------------------------------------------

def shakeout_weight(w, r, c):
    """Effective shakeout weight ``r w + c sign(w) (r - 1)``."""
    return r * w + c * np.sign(w) * (r - 1.0)


def perturb_nodes(rng: RngStream, spec: NoiseSpec, x, w_row, w_hat=None) -> np.ndarray:
    """Perturb node values feeding one destination.

    ``x[..., j]`` travels along the edge with weight ``w_row[j]``; leading
    axes of ``x`` are independent replicates.  All schemes are mean
    preserving.
    """
    x = np.asarray(x, dtype=np.float64)
    w_row = np.asarray(w_row, dtype=np.float64)
    if x.shape[-1] != w_row.shape[-1]:
        raise InvalidArgumentError(
            f"x has {x.shape[-1]} nodes but w_row has {w_row.shape[-1]} weights"
        )
    v = spec.variant
    if v is Variant.NONE:
        return x.copy()
    if spec.is_gaussian:
        sd = np.sqrt(edge_variance(spec, w_row, w_hat))
        e = rng.standard_normal(x.shape)
        if spec.multiplicative:
            return x * (1.0 + e * sd)
        return x + e * sd
    keep = 1.0 / (1.0 - spec.tau)
    if v is Variant.DROPOUT:
        mask = rng.random(x.shape) >= spec.tau
        return x * mask * keep
    if v is Variant.SHAKEOUT:
        r = np.where(rng.random(x.shape) >= spec.tau, keep, 0.0)
        w_eff = shakeout_weight(w_row, r, spec.c)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(w_row != 0, w_eff / np.where(w_row != 0, w_row, 1.0), r)
        return x * ratio
    raise InvalidArgumentError(f"unsupported variant {v}")


def matched_tau(sigma2, rule: str):
    """Drop probability giving the same l2 strength as whiteout with ``lambda = sigma2``.

    ``rule="dropout"`` returns ``2 sigma2 / (1 + 2 sigma2)``;
    ``rule="shakeout"`` returns ``sigma2 / (1 + sigma2)``.  A
    :class:`fractions.Fraction` input gives an exact rational result.
    """
    if sigma2 < 0:
        raise InvalidArgumentError("sigma2 must be >= 0")
    if rule == "dropout":
        return 2 * sigma2 / (1 + 2 * sigma2)
    if rule == "shakeout":
        return sigma2 / (1 + sigma2)
    raise InvalidArgumentError(f"rule must be 'dropout' or 'shakeout', got {rule!r}")

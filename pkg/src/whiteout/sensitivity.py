"""Monte Carlo sensitivity of a network to external input perturbations.

For case ``i`` a small perturbation ``d ~ N(0, varpi2 I)`` is added to the
input while one whiteout draw ``e`` is shared by the perturbed and the
unperturbed pass; ``Delta = f(x + d; e) - f(x; e)``.  The sensitivity is
``S = sum_i Var(|Delta_i|) / Var(|d_i|)``, with variances taken over reps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidArgumentError
from .loss import _xy, elf
from .network import Mlp, draw_noise, forward_tape, layer_specs
from .noise import NONE, NoiseSpec
from .numerics import RngStream


@dataclass(frozen=True)
class SensitivityConfig:
    varpi2: float = 0.01
    a: float = 1.0
    reps: int = 1000
    spec: NoiseSpec = NONE
    noised_layers: tuple[int, ...] = (1,)

    def __post_init__(self):
        if not self.varpi2 > 0:
            raise InvalidArgumentError("varpi2 must be positive")
        if not self.a >= 0:
            raise InvalidArgumentError("a must be non-negative")
        if int(self.reps) != self.reps or self.reps < 2:
            raise InvalidArgumentError("reps must be an integer >= 2")


def estimate_sensitivity(mlp: Mlp, dataset, cfg: SensitivityConfig, rng: RngStream,
                         chunk_rows: int = 50_000) -> float:
    X, _ = _xy(mlp, dataset)
    n, p = X.shape
    reps = int(cfg.reps)
    specs = layer_specs(cfg.spec, cfg.noised_layers, mlp.n_layers)
    sd = float(np.sqrt(cfg.varpi2))
    norm_d = np.empty((reps, n))
    norm_delta = np.empty((reps, n))
    step = max(1, chunk_rows // n)
    for start in range(0, reps, step):
        m = min(step, reps - start)
        Xr = np.tile(X, (m, 1))
        d = rng.normal(0.0, sd, size=Xr.shape)
        cache = draw_noise(rng, mlp, specs, Xr.shape[0]) if specs else {}
        base, _, _ = forward_tape(mlp, Xr, specs, cache)
        moved, _, _ = forward_tape(mlp, Xr + d, specs, cache)
        norm_d[start:start + m] = np.linalg.norm(d, axis=1).reshape(m, n)
        norm_delta[start:start + m] = np.linalg.norm(moved - base, axis=1).reshape(m, n)
    ratio = np.var(norm_delta, axis=0, ddof=1) / np.var(norm_d, axis=0, ddof=1)
    return float(np.sum(ratio))


def penalized_objective(mlp: Mlp, dataset, cfg: SensitivityConfig, rng: RngStream) -> float:
    """``elf + a S``; the Monte Carlo step is skipped when ``a = 0``."""
    loss = elf(mlp, dataset)
    if cfg.a == 0:
        return loss
    return loss + cfg.a * estimate_sensitivity(mlp, dataset, cfg, rng)


def e_star_specs(a: float, varpi2: float, sigma2: float, lam: float, gamma: float,
                 p: int) -> tuple[NoiseSpec, NoiseSpec]:
    """Noise whose perturbed loss approximates ``elf + a S``.

    Both layers use ``sigma*^2 = a sigma2 / (varpi2 p)`` and
    ``lambda* = a lam / (varpi2 p)``.  The input layer carries an extra
    independent ``N(0, a/p)`` term, folded into its constant variance.
    Returns ``(input_spec, hidden_spec)``.
    """
    if not (a > 0 and varpi2 > 0 and p >= 1):
        raise InvalidArgumentError("need a > 0, varpi2 > 0 and p >= 1")
    s_star = a * sigma2 / (varpi2 * p)
    l_star = a * lam / (varpi2 * p)
    inp = NoiseSpec.gab(s_star, gamma).with_params(lam=l_star + a / p) if s_star > 0 \
        else NoiseSpec.gar(l_star + a / p)
    if s_star > 0:
        hidden = NoiseSpec.gab(s_star, gamma).with_params(lam=l_star)
    elif l_star > 0:
        hidden = NoiseSpec.gar(l_star)
    else:
        hidden = NONE
    return inp, hidden

"""Empirical and noise-perturbed losses, and the pelf concentration experiment."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidArgumentError
from .network import Mlp, draw_noise, forward, forward_tape, layer_specs
from .numerics import RngStream


@dataclass
class LossReport:
    elf: float
    pelf: float
    k: int
    per_draw: np.ndarray

    def to_dict(self):
        return {"elf": self.elf, "pelf": self.pelf, "k": self.k}


def _xy(mlp, dataset):
    if hasattr(dataset, "target_matrix"):
        X, Y = dataset.X, dataset.target_matrix(mlp.layer_sizes[-1])
    else:
        X, Y = (np.asarray(a, dtype=np.float64) for a in dataset)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
    if X.shape[0] == 0:
        raise InvalidArgumentError("dataset is empty")
    if X.shape[1] != mlp.layer_sizes[0] or Y.shape != (X.shape[0], mlp.layer_sizes[-1]):
        raise InvalidArgumentError(
            f"dataset is {X.shape[0]}x{X.shape[1]} -> {Y.shape[1:]}, network is "
            f"{mlp.layer_sizes[0]} -> {mlp.layer_sizes[-1]}"
        )
    return X, Y


def elf(mlp: Mlp, dataset) -> float:
    """``n^-1 sum_i |f(x_i) - y_i|^2``."""
    X, Y = _xy(mlp, dataset)
    return float(np.sum((forward(mlp, X) - Y) ** 2) / X.shape[0])


def pelf(mlp: Mlp, dataset, spec, k: int, rng: RngStream, noised_layers=(1,),
         chunk_rows: int = 20_000) -> LossReport:
    """Squared loss averaged over ``k`` independent noise draws per observation.

    ``per_draw[j]`` is the mean over observations for draw ``j``.
    """
    if int(k) != k or k < 1:
        raise InvalidArgumentError("k must be a positive integer")
    k = int(k)
    X, Y = _xy(mlp, dataset)
    n = X.shape[0]
    clean = elf(mlp, (X, Y))
    specs = layer_specs(spec, noised_layers, mlp.n_layers)
    if not specs:
        return LossReport(clean, clean, k, np.full(k, clean))
    per_draw = np.empty(k)
    step = max(1, chunk_rows // n)
    for start in range(0, k, step):
        m = min(step, k - start)
        Xr = np.tile(X, (m, 1))
        cache = draw_noise(rng, mlp, specs, Xr.shape[0])
        out, _, _ = forward_tape(mlp, Xr, specs, cache)
        sq = np.sum((out - np.tile(Y, (m, 1))) ** 2, axis=1)
        per_draw[start:start + m] = sq.reshape(m, n).mean(axis=1)
    return LossReport(clean, float(per_draw.mean()), k, per_draw)


def _spread(values) -> float:
    values = np.asarray(values)
    if np.all(values == values[0]):
        return 0.0
    return float(np.std(values, ddof=1))


@dataclass
class TailRow:
    k: int
    std: float
    fitted_B: float
    deviation: float


def tail_experiment(mlp: Mlp, dataset, spec, k_values, reps: int, rng: RngStream,
                    noised_layers=(1,)) -> list[TailRow]:
    """Across-seed spread of pelf for each ``k``.

    Each ``k`` fits ``B = std * sqrt(k n)``; ``deviation`` is that value
    relative to the mean fit over all ``k``.
    """
    if reps < 20:
        raise InvalidArgumentError("reps must be >= 20")
    k_values = [int(k) for k in k_values]
    if not k_values:
        raise InvalidArgumentError("k_values must not be empty")
    X, Y = _xy(mlp, dataset)
    n = X.shape[0]
    stds = []
    for ki, k in enumerate(k_values):
        base = rng.substream(ki)
        vals = [pelf(mlp, (X, Y), spec, k, base.substream(r), noised_layers).pelf
                for r in range(reps)]
        stds.append(_spread(vals))
    fits = [s * math.sqrt(k * n) for s, k in zip(stds, k_values)]
    mean_fit = float(np.mean(fits))
    return [TailRow(k, s, b, (b / mean_fit - 1.0) if mean_fit > 0 else 0.0)
            for k, s, b in zip(k_values, stds, fits)]


def tail_csv(rows: list[TailRow], header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["k", "std", "fitted_B", "deviation"])
    for r in rows:
        out.writerow([r.k, repr(r.std), repr(r.fitted_B), repr(r.deviation)])
    return buf.getvalue()

"""K-fold cross-validation over noise tuning parameters."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DivergenceError, InvalidArgumentError
from .network import init_weights
from .noise import NoiseSpec, Variant
from .numerics import RngStream
from .train import TrainConfig, clean_loss, train

STAGES = ("tie-sigma-lambda-then-gamma", "fixed-gamma-1", "free-grid")
FAMILIES = ("whiteout", "multiplicative", "dropout", "shakeout")

DEFAULT_SIGMA2 = tuple(round(0.1 * i, 10) for i in range(1, 13))
DEFAULT_GAMMA = (0.6, 0.8, 1.0, 1.2, 1.4)
DEFAULT_TAU = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6)

#: heuristic cap on total noise for standardized inputs
MAX_TOTAL_VARIANCE = 2.4


def kfold_split(n: int, folds: int, rng: RngStream) -> list[np.ndarray]:
    """Seeded partition of ``range(n)`` into ``folds`` near-equal index sets."""
    if not 2 <= folds <= n:
        raise InvalidArgumentError(f"folds must lie in [2, n={n}], got {folds}")
    return [np.sort(part) for part in np.array_split(rng.permutation(n), folds)]


@dataclass(frozen=True)
class TuningStrategy:
    """Candidate grids and the order in which they are searched.

    ``lam="tie"`` sets lambda equal to sigma2 in every whiteout candidate.
    Dropout and shakeout families search ``tau`` only (shakeout keeps ``c``).
    """

    stage: str = "tie-sigma-lambda-then-gamma"
    family: str = "whiteout"
    sigma2: tuple[float, ...] = DEFAULT_SIGMA2
    gamma: tuple[float, ...] = DEFAULT_GAMMA
    lam: tuple[float, ...] | str = "tie"
    tau: tuple[float, ...] = DEFAULT_TAU
    c: float = 0.5

    def __post_init__(self):
        if self.stage not in STAGES:
            raise InvalidArgumentError(f"stage must be one of {STAGES}")
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"family must be one of {FAMILIES}")
        names = ["sigma2", "gamma", "tau"] + ([] if self.lam == "tie" else ["lam"])
        for name in names:
            grid = tuple(float(g) for g in getattr(self, name))
            if not grid:
                raise InvalidArgumentError(f"candidate list {name} is empty")
            if list(grid) != sorted(grid):
                raise InvalidArgumentError(f"candidate list {name} must be sorted ascending")
            object.__setattr__(self, name, grid)

    def _whiteout(self, sigma2, gamma, lam):
        if self.family == "multiplicative":
            return NoiseSpec.multiplicative_whiteout(sigma2, gamma, lam)
        return NoiseSpec(Variant.ADDITIVE, sigma2=sigma2, gamma=gamma, lam=lam)

    def _lams(self, s):
        return (s,) if self.lam == "tie" else self.lam

    def _keep(self, spec):
        return spec.sigma2 + spec.lam <= MAX_TOTAL_VARIANCE + 1e-12

    def stage_one(self) -> list[NoiseSpec]:
        if self.family == "dropout":
            return [NoiseSpec.dropout(t) for t in self.tau]
        if self.family == "shakeout":
            return [NoiseSpec.shakeout(t, self.c) for t in self.tau]
        if self.stage == "free-grid":
            cands = [self._whiteout(s, g, l) for s in self.sigma2 for g in self.gamma
                     for l in self._lams(s)]
        else:
            cands = [self._whiteout(s, 1.0, l) for s in self.sigma2 for l in self._lams(s)]
        return [c for c in cands if self._keep(c)]

    def stage_two(self, best: NoiseSpec) -> list[NoiseSpec]:
        if self.stage != "tie-sigma-lambda-then-gamma" or not best.is_gaussian:
            return []
        return [best.with_params(gamma=g) for g in self.gamma]

    def to_dict(self):
        return {"stage": self.stage, "family": self.family, "sigma2": list(self.sigma2),
                "gamma": list(self.gamma), "lambda": self.lam if self.lam == "tie" else list(self.lam),
                "tau": list(self.tau), "c": self.c}


@dataclass
class ScoreTable:
    specs: list[NoiseSpec] = field(default_factory=list)
    fold_losses: list[list[float]] = field(default_factory=list)
    stages: list[int] = field(default_factory=list)

    def mean(self, i: int) -> float:
        vals = self.fold_losses[i]
        return math.inf if any(math.isinf(v) for v in vals) else float(np.mean(vals))

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["stage", "variant", "sigma2", "gamma", "lambda", "tau", "c",
                      "fold", "val_loss", "mean_val_loss"])
        for i, spec in enumerate(self.specs):
            mean = self.mean(i)
            for f, v in enumerate(self.fold_losses[i]):
                out.writerow([self.stages[i], spec.variant.value, repr(float(spec.sigma2)),
                              repr(float(spec.gamma)), repr(float(spec.lam)),
                              repr(float(spec.tau)), repr(float(spec.c)), f, repr(v), repr(mean)])
        return buf.getvalue()


def _cell(dataset, spec, split, base_config, init, cache):
    key = (spec.variant, float(spec.sigma2), float(spec.gamma), float(spec.lam),
           float(spec.tau), float(spec.c))
    if key in cache:
        return cache[key]
    losses = []
    for f, held in enumerate(split):
        train_idx = np.sort(np.concatenate([s for g, s in enumerate(split) if g != f]))
        cfg = replace(base_config, spec=spec)
        try:
            fit = train(init, dataset.subset(train_idx), cfg).mlp
            held_ds = dataset.subset(held)
            v = clean_loss(fit, held_ds.X, held_ds.target_matrix(init.layer_sizes[-1]),
                           base_config.loss_kind)
            losses.append(v if math.isfinite(v) else math.inf)
        except (DivergenceError, FloatingPointError):
            losses.append(math.inf)
    cache[key] = losses
    return losses


def grid_search_cv(dataset, strategy: TuningStrategy, base_config: TrainConfig, folds: int,
                   rng: RngStream, hidden=(10,), init_std: float = 1.0):
    """Select the candidate with the smallest mean validation loss.

    Every cell trains from the same initial weights, drawn from
    ``rng.substream(0)``; folds come from ``rng.substream(1)``.  Ties go to
    the smaller ``(sigma2, lambda, gamma, tau)``.  A diverging cell scores
    ``+inf``.  Returns ``(best_spec, score_table)``.
    """
    q = dataset.n_classes if dataset.n_classes is not None else dataset.target_matrix().shape[1]
    sizes = (dataset.p,) + tuple(int(h) for h in hidden) + (q,)
    out_act = "softmax" if dataset.n_classes is not None else "identity"
    acts = ("sigmoid",) * len(hidden) + (out_act,)
    init = init_weights(rng.substream(0), sizes, init_std, acts)
    split = kfold_split(dataset.n, folds, rng.substream(1))
    table, cache = ScoreTable(), {}

    def run_stage(cands, stage):
        for spec in cands:
            table.specs.append(spec)
            table.fold_losses.append(_cell(dataset, spec, split, base_config, init, cache))
            table.stages.append(stage)

    def best_of(stage):
        idx = [i for i, s in enumerate(table.stages) if s == stage]
        return min(idx, key=lambda i: (table.mean(i), table.specs[i].sort_key()))

    cands = strategy.stage_one()
    if not cands:
        raise InvalidArgumentError("no candidate satisfies sigma2 + lambda <= 2.4")
    run_stage(cands, 1)
    best = best_of(1)
    second = strategy.stage_two(table.specs[best])
    if second:
        run_stage(second, 2)
        best = best_of(2)
    return table.specs[best], table

import math

import numpy as np
import pytest

from whiteout.data import Dataset, label_by_argmax
from whiteout.exceptions import InvalidArgumentError
from whiteout.modelsel import TuningStrategy, grid_search_cv, kfold_split
from whiteout.network import init_weights
from whiteout.noise import Variant
from whiteout.numerics import RngStream
from whiteout.train import TrainConfig


def toy(seed=0, n=24):
    rng = RngStream(seed)
    truth = init_weights(rng, (3, 4, 2), 2.0, ("sigmoid", "softmax"))
    X = rng.normal(size=(n, 3))
    return Dataset(X, label_by_argmax(truth, X), 2)


FAST = TrainConfig(learning_rate=0.5, momentum=0.5, epochs=60)


def test_even_split():
    parts = kfold_split(8, 4, RngStream(0))
    assert [len(p) for p in parts] == [2, 2, 2, 2]


def test_remainder_split_is_a_partition():
    parts = kfold_split(7, 4, RngStream(1))
    assert sorted(len(p) for p in parts) == [1, 2, 2, 2]
    assert sorted(np.concatenate(parts).tolist()) == list(range(7))


def test_split_is_seeded():
    a, b = kfold_split(20, 5, RngStream(3)), kfold_split(20, 5, RngStream(3))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_split_errors():
    with pytest.raises(InvalidArgumentError):
        kfold_split(3, 4, RngStream(0))
    with pytest.raises(InvalidArgumentError):
        kfold_split(3, 1, RngStream(0))


def test_strategy_validation():
    with pytest.raises(InvalidArgumentError, match="sorted"):
        TuningStrategy(sigma2=(0.5, 0.1))
    with pytest.raises(InvalidArgumentError, match="empty"):
        TuningStrategy(gamma=())
    with pytest.raises(InvalidArgumentError):
        TuningStrategy(stage="random")


def test_total_variance_cap():
    s = TuningStrategy(stage="fixed-gamma-1", sigma2=(1.0, 1.2, 1.5))
    assert [c.sigma2 for c in s.stage_one()] == [1.0, 1.2]
    with pytest.raises(InvalidArgumentError, match="2.4"):
        grid_search_cv(toy(), TuningStrategy(sigma2=(1.5,)), FAST, 2, RngStream(0))


def test_single_candidate_is_returned():
    s = TuningStrategy(stage="fixed-gamma-1", sigma2=(0.3,))
    best, table = grid_search_cv(toy(), s, FAST, 3, RngStream(0))
    assert best.sigma2 == 0.3 and best.lam == 0.3 and best.gamma == 1.0
    assert len(table.specs) == 1 and len(table.fold_losses[0]) == 3


def test_best_has_minimal_recomputed_mean():
    s = TuningStrategy(sigma2=(0.1, 0.6, 1.2), gamma=(0.6, 1.4))
    best, table = grid_search_cv(toy(1), s, FAST, 3, RngStream(2))
    means = [float(np.mean(f)) for f in table.fold_losses]
    assert table.stages == [1, 1, 1, 2, 2]
    stage_two = [m for m, st in zip(means, table.stages) if st == 2]
    assert table.mean(table.specs.index(best)) == min(stage_two)
    first_best = table.specs[int(np.argmin(means[:3]))]
    assert all(sp.sigma2 == first_best.sigma2 for sp in table.specs[3:])


def test_exact_tie_goes_to_least_noise():
    # with no epochs every cell scores the initial network, so all tie
    s = TuningStrategy(sigma2=(0.2, 0.4), gamma=(0.8, 1.2))
    best, table = grid_search_cv(toy(), s, TrainConfig(epochs=0), 2, RngStream(0))
    assert len(set(map(tuple, table.fold_losses))) == 1
    assert (best.sigma2, best.lam, best.gamma) == (0.2, 0.2, 0.8)


def test_dropout_family_searches_tau():
    s = TuningStrategy(family="dropout", tau=(0.1, 0.3))
    best, table = grid_search_cv(toy(), s, FAST, 2, RngStream(0))
    assert best.variant is Variant.DROPOUT and len(table.specs) == 2


def test_rerun_is_identical():
    s = TuningStrategy(stage="free-grid", sigma2=(0.2, 0.5), gamma=(1.0,), lam=(0.0, 0.2))
    a = grid_search_cv(toy(2), s, FAST, 2, RngStream(9))
    b = grid_search_cv(toy(2), s, FAST, 2, RngStream(9))
    assert a[0].to_dict() == b[0].to_dict()
    assert a[1].to_csv() == b[1].to_csv()


def test_diverging_cell_scores_infinity():
    rng = RngStream(0)
    X = rng.normal(size=(12, 2)) * 1e3
    data = Dataset(X, X @ np.array([1e3, -1e3]), None)
    cfg = TrainConfig(learning_rate=10.0, epochs=200, loss_kind="squared-error")
    best, table = grid_search_cv(data, TuningStrategy(stage="fixed-gamma-1", sigma2=(0.1, 0.2)),
                                 cfg, 2, RngStream(1))
    assert all(math.isinf(table.mean(i)) for i in range(2))
    assert best.sigma2 == 0.1
    assert ",inf,inf" in table.to_csv()

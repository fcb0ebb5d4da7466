import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from whiteout.exceptions import InvalidArgumentError
from whiteout.network import Mlp, forward, forward_noisy, init_weights, layer_specs
from whiteout.noise import NONE, NoiseSpec
from whiteout.numerics import RngStream


def linear_net(sizes, rng):
    return init_weights(rng, sizes, 1.0, ("identity",) * (len(sizes) - 1))


def test_init_is_deterministic_with_zero_biases():
    a = init_weights(RngStream(4), (2, 1))
    b = init_weights(RngStream(4), (2, 1))
    assert a.weights[0].shape == (2, 1)
    assert np.array_equal(a.weights[0], b.weights[0])
    assert all(np.all(bias == 0.0) for bias in a.biases)


def test_init_mean():
    mlp = init_weights(RngStream(9), (100, 100, 1))
    w = np.concatenate([w.ravel() for w in mlp.weights])[:10**4]
    assert abs(w.mean()) < 0.04


def test_init_errors():
    with pytest.raises(InvalidArgumentError):
        init_weights(RngStream(0), ())
    with pytest.raises(InvalidArgumentError):
        init_weights(RngStream(0), (2, 2), std=0.0)


def test_mlp_invariants():
    with pytest.raises(InvalidArgumentError, match="softmax"):
        Mlp((2, 2, 2), [np.ones((2, 2))] * 2, [np.zeros(2)] * 2, ("softmax", "identity"))
    with pytest.raises(InvalidArgumentError, match="chain"):
        Mlp((2, 3), [np.ones((3, 2))], [np.zeros(3)], ("identity",))
    with pytest.raises(InvalidArgumentError, match="activation"):
        Mlp((2, 3), [np.ones((2, 3))], [np.zeros(3)], ("tanh",))


def test_forward_examples():
    lin = Mlp((1, 1), [[[2.0]]], [[0.0]], ("identity",))
    assert np.array_equal(forward(lin, [1.0]), [2.0])
    sig = Mlp((2, 1), [np.zeros((2, 1))], [np.zeros(1)], ("sigmoid",))
    assert forward(sig, [3.0, -1.0])[0] == 0.5
    soft = Mlp((2, 4), [np.zeros((2, 4))], [np.zeros(4)], ("softmax",))
    assert np.allclose(forward(soft, [1.0, 2.0]), 0.25, rtol=0, atol=1e-15)


def test_forward_dimension_mismatch():
    mlp = init_weights(RngStream(0), (3, 2))
    with pytest.raises(InvalidArgumentError, match="features"):
        forward(mlp, [1.0, 2.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_output_ranges(seed):
    rng = RngStream(seed)
    soft = init_weights(rng, (4, 6, 5), 2.0, ("sigmoid", "softmax"))
    X = rng.normal(0, 3, (20, 4))
    out = forward(soft, X)
    assert np.all(np.abs(out.sum(axis=1) - 1.0) <= 1e-12)
    # expit(u) rounds to 1.0 in float64 beyond u ~ 36.7, so keep |u| moderate
    hidden = init_weights(rng, (4, 6), 1.0, ("sigmoid",))
    h = forward(hidden, X / 3)
    assert np.all((h > 0) & (h < 1))


def test_json_round_trip_is_exact():
    mlp = init_weights(RngStream(1), (3, 4, 2), 0.7, ("relu", "softmax"))
    mlp.biases[1] = np.array([1 / 3, -2e-300])
    back = Mlp.from_json(mlp.to_json())
    assert back.layer_sizes == mlp.layer_sizes and back.activations == mlp.activations
    for a, b in zip(back.weights + back.biases, mlp.weights + mlp.biases):
        assert np.array_equal(a, b)


def test_noisy_without_spec_equals_forward():
    mlp = init_weights(RngStream(2), (3, 4, 2))
    x = np.array([0.3, -1.0, 2.0])
    out, cache = forward_noisy(mlp, x, NONE)
    assert np.array_equal(out, forward(mlp, x))
    assert len(cache) == 0


def test_cache_shapes_mirror_weights():
    mlp = init_weights(RngStream(2), (3, 4, 5, 2))
    _, cache = forward_noisy(mlp, np.ones(3), NoiseSpec.gen(0.5, 0.5), (1, 2, 3), RngStream(0))
    assert sorted(cache) == [1, 2, 3]
    for l, e in cache.items():
        assert e.shape == mlp.weights[l - 1].shape
    _, batch = forward_noisy(mlp, np.ones((7, 3)), NoiseSpec.gen(0.5, 0.5), (2,), RngStream(0))
    assert batch[2].shape == (7, 4, 5)


def test_zero_std_reproduces_forward_bit_for_bit():
    mlp = init_weights(RngStream(3), (3, 4, 2))
    X = RngStream(4).normal(size=(6, 3))
    clean = forward(mlp, X)
    _, cache = forward_noisy(mlp, X, NoiseSpec.gar(1.0), (1, 2), RngStream(5))
    zeroed = {l: np.zeros_like(e) for l, e in cache.items()}
    out, _ = forward_noisy(mlp, X, NoiseSpec.gar(1.0), (1, 2), cache=zeroed)
    assert np.array_equal(out, clean)


def test_replaying_cache_reproduces_output():
    mlp = init_weights(RngStream(3), (3, 4, 2))
    spec = NoiseSpec.gab(0.4, 1.2)
    out, cache = forward_noisy(mlp, np.ones(3), spec, (1, 2), RngStream(8))
    again, _ = forward_noisy(mlp, np.ones(3), spec, (1, 2), cache=cache)
    assert np.array_equal(out, again)


def test_noised_layer_range():
    mlp = init_weights(RngStream(0), (2, 3, 2))
    with pytest.raises(InvalidArgumentError, match="outside 1..2"):
        forward_noisy(mlp, np.ones(2), NoiseSpec.gar(1.0), (3,), RngStream(0))
    with pytest.raises(InvalidArgumentError):
        layer_specs(NoiseSpec.gar(1.0), (0,), 3)
    with pytest.raises(InvalidArgumentError, match="RngStream"):
        forward_noisy(mlp, np.ones(2), NoiseSpec.gar(1.0), (1,))


@pytest.mark.parametrize("spec", [NoiseSpec.gen(0.5, 0.5), NoiseSpec.multiplicative_whiteout(0.5, 1.0, 0.2),
                                  NoiseSpec.dropout(0.3), NoiseSpec.shakeout(0.3, 0.5)],
                         ids=lambda s: s.variant.value)
def test_linear_net_is_mean_preserving(spec):
    mlp = linear_net((3, 4, 2), RngStream(6))
    x = np.array([0.5, -1.0, 1.5])
    n = 10**4
    out, _ = forward_noisy(mlp, np.tile(x, (n, 1)), spec, (1, 2), RngStream(7))
    sd = out.std(axis=0)
    assert np.all(np.abs(out.mean(axis=0) - forward(mlp, x)) <= 4 * sd / np.sqrt(n))


def test_edge_draws_are_independent():
    mlp = linear_net((3, 2), RngStream(0))
    n = 10**4
    _, cache = forward_noisy(mlp, np.ones((n, 3)), NoiseSpec.gar(1.0), (1,), RngStream(1))
    e = cache[1].reshape(n, -1)
    cov = np.cov(e, rowvar=False)
    off = cov[~np.eye(cov.shape[0], dtype=bool)]
    assert np.all(np.abs(off) <= 4 / np.sqrt(n))


def test_per_layer_mapping():
    mlp = init_weights(RngStream(0), (2, 3, 2))
    specs = layer_specs({1: NoiseSpec.gar(0.1), 2: NONE}, (), 3)
    assert list(specs) == [1]
    _, cache = forward_noisy(mlp, np.ones(2), {1: NoiseSpec.gar(0.1), 2: NONE}, rng=RngStream(0))
    assert list(cache) == [1]

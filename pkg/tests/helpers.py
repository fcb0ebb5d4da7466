"""Shared oracles for the test suite: random architectures, a textbook
backprop reference and a central finite-difference gradient checker."""
import numpy as np

from whiteout.network import Mlp, draw_noise, forward_tape, layer_specs
from whiteout.noise import NoiseSpec
from whiteout.numerics import RngStream
from whiteout.train import network_loss, noisy_gradients

FD_STEP = 1e-5
# central differences carry ~eps*|D|/h ~ 1e-10 of rounding noise, so entries
# below 1e-4 are compared on an absolute scale
FD_FLOOR = 1e-4


def sigmoid(u):
    return 1.0 / (1.0 + np.exp(-u))


def reference_backprop(weights, biases, X, Y):
    """Sigmoid hidden layers, softmax output, mean cross-entropy. Plain loops, no noise."""
    acts = [X]
    for w, b in zip(weights[:-1], biases[:-1]):
        acts.append(sigmoid(acts[-1] @ w + b))
    logits = acts[-1] @ weights[-1] + biases[-1]
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = z / z.sum(axis=1, keepdims=True)
    n = X.shape[0]
    gw, gb = [None] * len(weights), [None] * len(weights)
    delta = (probs - Y) / n
    for l in range(len(weights) - 1, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l:
            a = acts[l]
            delta = (delta @ weights[l].T) * a * (1 - a)
    return gw, gb


def reference_train(weights, biases, X, Y, lr, momentum, epochs):
    weights = [w.copy() for w in weights]
    biases = [b.copy() for b in biases]
    vw = [np.zeros_like(w) for w in weights]
    vb = [np.zeros_like(b) for b in biases]
    for _ in range(epochs):
        gw, gb = reference_backprop(weights, biases, X, Y)
        for l in range(len(weights)):
            vw[l] = momentum * vw[l] + gw[l]
            vb[l] = momentum * vb[l] + gb[l]
            weights[l] = weights[l] - lr * vw[l]
            biases[l] = biases[l] - lr * vb[l]
    return weights, biases


HEADS = (("softmax", "cross-entropy"), ("sigmoid", "cross-entropy"), ("identity", "squared-error"))
VARIANTS = ("gen", "gab", "gar", "multiplicative", "gaala", "gaala_mult", "gag", "gag_mult",
            "dropout", "shakeout")


def random_architecture(rng, min_layers=3, max_layers=4, max_size=8):
    L = int(rng.integers(min_layers, max_layers + 1))
    sizes = tuple(int(m) for m in rng.integers(2, max_size + 1, L))
    hidden = tuple(rng.choice(["sigmoid", "identity", "relu"], L - 2))
    head, loss_kind = HEADS[int(rng.integers(len(HEADS)))]
    weights = [rng.choice([-1.0, 1.0], (a, b)) * rng.uniform(0.1, 1.5, (a, b))
               for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(0, 0.3, b) for b in sizes[1:]]
    return Mlp(sizes, weights, biases, hidden + (head,)), loss_kind


def random_targets(rng, mlp, n, loss_kind):
    q = mlp.layer_sizes[-1]
    if mlp.activations[-1] == "softmax":
        return np.eye(q)[rng.integers(0, q, n)]
    if mlp.activations[-1] == "sigmoid":
        return rng.integers(0, 2, (n, q)).astype(float)
    return rng.normal(size=(n, q))


def _groups(m, rng):
    perm = [int(j) for j in rng.permutation(m)]
    cut = int(rng.integers(1, m)) if m > 1 else 1
    return [tuple(sorted(perm[:cut])), tuple(sorted(perm[cut:]))] if cut < m else [tuple(perm)]


def variant_spec(name, mlp, layer, rng):
    w = mlp.weights[layer - 1]
    if name == "gen":
        return NoiseSpec.gen(0.3, 0.2)
    if name == "gab":
        return NoiseSpec.gab(0.4, 1.5)
    if name == "gar":
        return NoiseSpec.gar(0.3)
    if name == "multiplicative":
        return NoiseSpec.multiplicative_whiteout(0.3, 0.8, 0.1)
    if name in ("gaala", "gaala_mult"):
        w_hat = w * rng.uniform(0.5, 1.5, w.shape)
        return NoiseSpec.gaala(0.3, 1.0, w_hat, multiplicative=name == "gaala_mult")
    if name in ("gag", "gag_mult"):
        return NoiseSpec.gag(0.3, _groups(w.shape[0], rng), multiplicative=name == "gag_mult")
    if name == "dropout":
        return NoiseSpec.dropout(0.3)
    if name == "shakeout":
        return NoiseSpec.shakeout(0.3, 0.5)
    raise ValueError(name)


def _relu_margin_ok(mlp, X, specs, cache, margin=1e-4):
    _, _, pre = forward_tape(mlp, X, specs, cache)
    return all(np.min(np.abs(U)) > margin for U, a in zip(pre, mlp.activations) if a == "relu")


def perturbed_loss(mlp, X, Y, specs, cache, loss_kind):
    return network_loss(mlp, X, Y, loss_kind, specs, cache)


def fd_check(seed, variant, n=5):
    """Worst relative error of analytic vs central-difference gradients for one random case."""
    rng = np.random.default_rng(seed)
    while True:
        mlp, loss_kind = random_architecture(rng)
        layers = [l for l in range(1, mlp.n_layers) if l == 1 or rng.random() < 0.5]
        specs = {l: variant_spec(variant, mlp, l, rng) for l in layers}
        X = rng.normal(size=(n, mlp.layer_sizes[0]))
        Y = random_targets(rng, mlp, n, loss_kind)
        cache = draw_noise(RngStream(seed), mlp, layer_specs(specs, (), mlp.n_layers), n)
        if _relu_margin_ok(mlp, X, specs, cache):
            break
    grads, loss = noisy_gradients(mlp, X, Y, specs, cache, loss_kind)
    worst = 0.0
    for kind, params, analytic in (("w", mlp.weights, grads.weights), ("b", mlp.biases, grads.biases)):
        for l, p in enumerate(params):
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + FD_STEP
                up = perturbed_loss(mlp, X, Y, specs, cache, loss_kind)
                p[idx] = orig - FD_STEP
                down = perturbed_loss(mlp, X, Y, specs, cache, loss_kind)
                p[idx] = orig
                fd = (up - down) / (2 * FD_STEP)
                a = analytic[l][idx]
                worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), FD_FLOOR))
    return worst, mlp.layer_sizes

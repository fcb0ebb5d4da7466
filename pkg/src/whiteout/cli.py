"""``whiteout-lab``: run one experiment described by a JSON config file.

Exit codes: 0 success, 1 config/schema error, 2 data error, 3 divergence.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .exceptions import (DataError, DivergenceError, GenerationError, InvalidArgumentError,
                         SchemaError)
from .glm import GlmModel, mc_expected_pnll
from .loss import elf, pelf, tail_csv, tail_experiment
from .modelsel import TuningStrategy, grid_search_cv
from .network import Mlp, init_weights
from .noise import NoiseSpec, Variant
from .numerics import RngStream
from .sensitivity import SensitivityConfig, estimate_sensitivity
from .train import TrainConfig, clean_loss, train
from .unsup import (AeLayer, Rbm, ae_clean_loss, ae_mc_perturbed_loss, ae_whiteout_penalty,
                    rbm_exact_nll, rbm_mc_perturbed_nll, rbm_whiteout_penalty)

COMMANDS = ("simulate", "train", "evaluate", "cv", "penalty", "sensitivity", "tailbound",
            "rbm-check", "ae-check")

# substream ids, fixed so that adding a command never shifts another's draws
S_SIMULATE, S_INIT, S_CV, S_MC, S_SPLIT = range(5)

DEFAULTS = {
    "seed": 0,
    "out": "out",
    "data": None,
    "model": None,
    "noise": {"variant": "none"},
    "train": {"lr": 0.2, "momentum": 0.5, "epochs": 5000, "loss": "cross-entropy",
              "hidden": [10], "init_std": 1.0, "noised_layers": [1], "minibatch": None},
    "cv": {"folds": 4, "strategy": {}},
    "evaluate": {"k": 0},
    "glm": {"kind": "linear", "n": 50, "p": 5, "w": None, "dispersion": 1.0, "draws": 200000},
    "sensitivity": {"varpi2": 0.01, "a": 1.0, "reps": 1000},
    "tailbound": {"k_values": [25, 100], "reps": 50},
    "rbm": {"p": 2, "m": 2, "n": 6, "scale": 1.0, "draws": 100000, "rel_tol": 0.05},
    "ae": {"m": 3, "p": 4, "n": 5, "scale": 1.0, "activation": "sigmoid", "draws": 100000,
           "rel_tol": 0.05},
}
SECTIONS = {k for k, v in DEFAULTS.items() if isinstance(v, dict) and k != "noise"}
TOP_KEYS = set(DEFAULTS) | {"command"}


class ConfigError(SchemaError):
    pass


def _merge(section, given):
    if given is None:
        return copy.deepcopy(DEFAULTS[section])
    if not isinstance(given, dict):
        raise ConfigError(f"config key {section!r} must be an object")
    unknown = set(given) - set(DEFAULTS[section])
    if unknown:
        raise ConfigError(f"unknown config key {section}.{sorted(unknown)[0]}")
    out = copy.deepcopy(DEFAULTS[section])
    out.update(given)
    return out


def resolve_config(raw: dict, seed=None, out=None) -> dict:
    """Fill defaults and validate the top-level layout."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    if "command" not in raw:
        raise ConfigError("missing required key 'command'")
    if raw["command"] not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}; got {raw['command']!r}")
    cfg = {"command": raw["command"]}
    for key in ("seed", "out", "data", "model"):
        cfg[key] = copy.deepcopy(raw.get(key, DEFAULTS[key]))
    cfg["noise"] = copy.deepcopy(raw.get("noise", DEFAULTS["noise"]))
    for section in SECTIONS:
        cfg[section] = _merge(section, raw.get(section))
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = str(out)
    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an integer in [0, 2**64)")
    return cfg


# -- artifact writing --------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _provenance(cfg) -> str:
    return "config: " + json.dumps(cfg, sort_keys=True, separators=(",", ":"))


class Artifacts:
    """Writes into ``cfg["out"]``; each file embeds the config minus that path."""

    def __init__(self, cfg):
        self.cfg = {k: v for k, v in cfg.items() if k != "out"}
        self.dir = Path(cfg["out"])
        self.written = []

    def _path(self, name):
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written.append(name)
        return self.dir / name

    def json(self, name, payload):
        self._path(name).write_text(_dumps({**payload, "config": self.cfg}))

    def csv(self, name, render):
        self._path(name).write_text(render(_provenance(self.cfg)))


# -- config -> objects --------------------------------------------------------------------

def noise_from(cfg):
    """The configured spec; ``"w_hat": "pretrain"`` yields a :class:`PretrainedWHat`."""
    given = cfg["noise"]
    if given is None:
        return NoiseSpec()
    if not isinstance(given, dict):
        raise ConfigError("config key 'noise' must be an object")
    if given.get("w_hat") == "pretrain":
        return PretrainedWHat(NoiseSpec.from_dict({k: v for k, v in given.items() if k != "w_hat"}))
    return NoiseSpec.from_dict(given)


class PretrainedWHat:
    """An adaptive-lasso spec whose ``w_hat`` comes from an unregularized run."""

    def __init__(self, template: NoiseSpec):
        if template.variant is not Variant.ADAPTIVE_LASSO:
            raise ConfigError("noise.w_hat = 'pretrain' only applies to whiteout_adaptive_lasso")
        self.template = template


def train_config(cfg, spec) -> TrainConfig:
    t = cfg["train"]
    try:
        return TrainConfig(float(t["lr"]), float(t["momentum"]), t["epochs"], cfg["seed"],
                           t["loss"], spec, tuple(t["noised_layers"]), t["minibatch"])
    except InvalidArgumentError as exc:
        raise ConfigError(f"train: {exc}") from None


def load_data(cfg):
    """``(train, test)`` datasets; ``test`` may be None."""
    d = cfg["data"]
    if d is None:
        raise ConfigError("missing required key 'data'")
    if not isinstance(d, dict):
        raise ConfigError("config key 'data' must be an object")
    if "simulate" in d:
        sim = d["simulate"]
        allowed = {"layer_sizes", "n_train", "n_test", "redundant_inputs", "max_attempts"}
        unknown = set(sim) - allowed
        if unknown:
            raise ConfigError(f"unknown config key data.simulate.{sorted(unknown)[0]}")
        if "layer_sizes" not in sim:
            raise ConfigError("missing required key 'data.simulate.layer_sizes'")
        rng = RngStream(cfg["seed"]).substream(S_SIMULATE)
        train_ds, test_ds, true = data_mod.simulate_nn_data(
            rng, sim["layer_sizes"], sim.get("n_train", 100), sim.get("n_test", 2000),
            sim.get("redundant_inputs", 0), sim.get("max_attempts", 200))
        return train_ds, test_ds, true
    if "path" not in d:
        raise ConfigError("config key 'data' needs 'path' or 'simulate'")
    unknown = set(d) - {"path", "label_column", "test_path", "standardize", "task"}
    if unknown:
        raise ConfigError(f"unknown config key data.{sorted(unknown)[0]}")
    label = d.get("label_column", "label")
    task = d.get("task", "auto")
    train_ds = data_mod.load_csv(d["path"], label, task)
    test_ds = data_mod.load_csv(d["test_path"], label, task) if d.get("test_path") else None
    if d.get("standardize", False):
        train_ds, stats = data_mod.standardize(train_ds)
        if test_ds is not None:
            test_ds = data_mod.apply_standardization(test_ds, stats)
    return train_ds, test_ds, None


def _architecture(cfg, ds):
    hidden = tuple(int(h) for h in cfg["train"]["hidden"])
    if ds.n_classes is not None:
        return (ds.p,) + hidden + (ds.n_classes,), ("sigmoid",) * len(hidden) + ("softmax",)
    q = ds.target_matrix().shape[1]
    return (ds.p,) + hidden + (q,), ("sigmoid",) * len(hidden) + ("identity",)


def _fit(cfg, ds, spec):
    sizes, acts = _architecture(cfg, ds)
    init = init_weights(RngStream(cfg["seed"]).substream(S_INIT), sizes,
                        float(cfg["train"]["init_std"]), acts)
    if isinstance(spec, PretrainedWHat):
        # same architecture, initial weights and seed, no noise
        pilot = train(init, ds, train_config(cfg, NoiseSpec())).mlp
        layers = tuple(cfg["train"]["noised_layers"])
        per_layer = {l: spec.template.with_params(w_hat=pilot.weights[l - 1]) for l in layers}
        return train(init, ds, train_config(cfg, per_layer)), per_layer[layers[0]]
    return train(init, ds, train_config(cfg, spec)), spec


def _summary(mlp, ds, loss_kind):
    if ds is None:
        return {}
    out = {"elf": elf(mlp, ds),
           "loss": clean_loss(mlp, ds.X, ds.target_matrix(mlp.layer_sizes[-1]), loss_kind)}
    if ds.n_classes is not None:
        out["accuracy"] = data_mod.accuracy(mlp, ds)
    return out


def load_model(cfg) -> Mlp:
    path = cfg["model"]
    if path is None:
        raise ConfigError("missing required key 'model'")
    try:
        return Mlp.from_json(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"model file {path} is malformed: {exc}") from None


def _model_or_train(cfg, ds):
    if cfg["model"] is not None:
        return load_model(cfg)
    return _fit(cfg, ds, noise_from(cfg))[0].mlp


# -- commands -----------------------------------------------------------------------------

def cmd_simulate(cfg, art):
    train_ds, test_ds, true = load_data(cfg)
    if true is None:
        raise ConfigError("simulate needs data.simulate")
    art.csv("train.csv", lambda h: data_mod.dataset_csv(train_ds, h))
    art.csv("test.csv", lambda h: data_mod.dataset_csv(test_ds, h))
    art.json("simulation.json", json.loads(data_mod.simulation_sidecar(train_ds, true)))
    freq = np.bincount(test_ds.y, minlength=test_ds.n_classes) / max(test_ds.n, 1)
    art.json("report.json", {"n_train": train_ds.n, "n_test": test_ds.n,
                             "test_class_frequencies": freq.tolist(),
                             "attempts": train_ds.meta["attempts"]})
    return f"simulated {train_ds.n} train / {test_ds.n} test rows"


def cmd_train(cfg, art):
    spec = noise_from(cfg)
    train_config(cfg, NoiseSpec())          # config errors before any data work
    train_ds, test_ds, _ = load_data(cfg)
    trace, spec = _fit(cfg, train_ds, spec)
    art.json("model.json", trace.mlp.to_dict())
    art.csv("trace.csv", trace.to_csv)
    loss_kind = cfg["train"]["loss"]
    report = {"epochs": trace.epochs, "final_train_loss": trace.losses[-1] if trace.losses else None,
              "noise": spec.to_dict(), "train": _summary(trace.mlp, train_ds, loss_kind),
              "test": _summary(trace.mlp, test_ds, loss_kind)}
    art.json("report.json", report)
    acc = report["test"].get("accuracy")
    tail = f", test accuracy {acc:.4f}" if acc is not None else ""
    return f"trained {trace.epochs} epochs{tail}"


def cmd_evaluate(cfg, art):
    mlp = load_model(cfg)
    spec = noise_from(cfg)
    train_ds, test_ds, _ = load_data(cfg)
    ds = test_ds if test_ds is not None else train_ds
    report = _summary(mlp, ds, cfg["train"]["loss"])
    k = int(cfg["evaluate"]["k"])
    if k > 0:
        r = pelf(mlp, ds, spec, k, RngStream(cfg["seed"]).substream(S_MC),
                 tuple(cfg["train"]["noised_layers"]))
        report["pelf"] = r.pelf
    art.json("report.json", report)
    return "evaluated " + ", ".join(f"{k}={v:.6g}" for k, v in sorted(report.items()))


def cmd_cv(cfg, art):
    train_ds, test_ds, _ = load_data(cfg)
    c = cfg["cv"]
    strat = dict(c["strategy"])
    try:
        strategy = TuningStrategy(**{("lam" if k == "lambda" else k): (tuple(v) if isinstance(v, list) else v)
                                     for k, v in strat.items()})
    except TypeError as exc:
        raise ConfigError(f"cv.strategy: {exc}") from None
    base = train_config(cfg, NoiseSpec())
    hidden = tuple(int(h) for h in cfg["train"]["hidden"])
    best, table = grid_search_cv(train_ds, strategy, base, int(c["folds"]),
                                 RngStream(cfg["seed"]).substream(S_CV), hidden,
                                 float(cfg["train"]["init_std"]))
    art.csv("scores.csv", table.to_csv)
    trace, _ = _fit(cfg, train_ds, best)
    art.json("model.json", trace.mlp.to_dict())
    report = {"best": best.to_dict(), "strategy": strategy.to_dict(),
              "test": _summary(trace.mlp, test_ds, cfg["train"]["loss"])}
    art.json("report.json", report)
    return f"cv selected {best.variant.value} sigma2={best.sigma2} lambda={best.lam} gamma={best.gamma} tau={best.tau}"


def cmd_penalty(cfg, art):
    g = cfg["glm"]
    rng = RngStream(cfg["seed"])
    if cfg["data"] is not None:
        ds, _, _ = load_data(cfg)
        X, y = ds.X, ds.y.astype(np.float64).reshape(-1)
    else:
        n, p = int(g["n"]), int(g["p"])
        X = rng.substream(S_SIMULATE).standard_normal((n, p))
        y = None
    w = g["w"]
    if w is None:
        raise ConfigError("missing required key 'glm.w'")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (X.shape[1],):
        raise ConfigError(f"glm.w must have {X.shape[1]} entries")
    if y is None:
        eta = X @ w
        sim = rng.substream(S_SPLIT)
        if g["kind"] == "logistic":
            y = (sim.random(eta.shape) < 1.0 / (1.0 + np.exp(-eta))).astype(np.float64)
        else:
            y = eta + sim.standard_normal(eta.shape)
    try:
        model = GlmModel(g["kind"], X, y, w, float(g["dispersion"]))
    except InvalidArgumentError as exc:
        raise ConfigError(f"glm: {exc}") from None
    spec = noise_from(cfg)
    report = mc_expected_pnll(rng.substream(S_MC), spec, model, int(g["draws"]))
    out = report.to_dict()
    out["within_tolerance"] = report.within(0.01 if g["kind"] == "linear" else 0.05)
    art.json("report.json", out)
    return f"penalty closed form {report.closed_form:.6g}, MC gap {report.empirical_penalty:.6g} (se {report.mc_std_error:.2g})"


def cmd_sensitivity(cfg, art):
    train_ds, _, _ = load_data(cfg)
    mlp = _model_or_train(cfg, train_ds)
    s = cfg["sensitivity"]
    try:
        sc = SensitivityConfig(float(s["varpi2"]), float(s["a"]), int(s["reps"]))
    except InvalidArgumentError as exc:
        raise ConfigError(f"sensitivity: {exc}") from None
    S = estimate_sensitivity(mlp, train_ds, sc, RngStream(cfg["seed"]).substream(S_MC))
    loss = elf(mlp, train_ds)
    art.json("report.json", {"sensitivity": S, "elf": loss, "objective": loss + sc.a * S})
    return f"sensitivity {S:.6g}, penalized objective {loss + sc.a * S:.6g}"


def cmd_tailbound(cfg, art):
    train_ds, _, _ = load_data(cfg)
    mlp = _model_or_train(cfg, train_ds)
    t = cfg["tailbound"]
    rows = tail_experiment(mlp, train_ds, noise_from(cfg), t["k_values"], int(t["reps"]),
                           RngStream(cfg["seed"]).substream(S_MC), tuple(cfg["train"]["noised_layers"]))
    art.csv("tail.csv", lambda h: tail_csv(rows, h))
    art.json("report.json", {"rows": [r.__dict__ for r in rows]})
    return "tail experiment: " + ", ".join(f"k={r.k} std={r.std:.4g}" for r in rows)


def _mc_report(exact, penalty, mc, rel_tol):
    gap = mc.value - exact
    tol = max(3.0 * mc.std_error, rel_tol * abs(penalty))
    return {"exact": exact, "penalty": penalty, "mc": mc.value, "mc_std_error": mc.std_error,
            "draws": mc.draws, "discrepancy": gap - penalty, "tolerance": tol,
            "pass": bool(abs(gap - penalty) <= tol)}


def cmd_rbm_check(cfg, art):
    r = cfg["rbm"]
    rng = RngStream(cfg["seed"]).substream(S_SIMULATE)
    p, m, n, sc = int(r["p"]), int(r["m"]), int(r["n"]), float(r["scale"])
    rbm = Rbm(rng.normal(0, sc, (p, m)), rng.normal(0, sc / 2, m), rng.normal(0, sc / 2, p))
    v = (rng.random((n, p)) < 0.5).astype(np.float64)
    spec = noise_from(cfg)
    exact = rbm_exact_nll(rbm, v)
    pen = rbm_whiteout_penalty(rbm, v, spec)
    mc = rbm_mc_perturbed_nll(rbm, v, spec, int(r["draws"]), RngStream(cfg["seed"]).substream(S_MC))
    report = _mc_report(exact, pen, mc, float(r["rel_tol"]))
    art.json("report.json", report)
    return f"rbm-check {'pass' if report['pass'] else 'FAIL'}: penalty {pen:.6g}, MC gap {mc.value - exact:.6g}"


def cmd_ae_check(cfg, art):
    a = cfg["ae"]
    rng = RngStream(cfg["seed"]).substream(S_SIMULATE)
    m, p, n, sc = int(a["m"]), int(a["p"]), int(a["n"]), float(a["scale"])
    layer = AeLayer(rng.normal(0, sc, (m, p)), rng.normal(0, sc / 2, p), a["activation"])
    h, x = rng.random((n, m)), rng.random((n, p))
    spec = noise_from(cfg)
    exact = ae_clean_loss(layer, h, x)
    pen = ae_whiteout_penalty(layer, h, x, spec)
    mc = ae_mc_perturbed_loss(layer, h, x, spec, int(a["draws"]), RngStream(cfg["seed"]).substream(S_MC))
    report = _mc_report(exact, pen, mc, float(a["rel_tol"]))
    art.json("report.json", report)
    return f"ae-check {'pass' if report['pass'] else 'FAIL'}: penalty {pen:.6g}, MC gap {mc.value - exact:.6g}"


HANDLERS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate, "cv": cmd_cv,
            "penalty": cmd_penalty, "sensitivity": cmd_sensitivity, "tailbound": cmd_tailbound,
            "rbm-check": cmd_rbm_check, "ae-check": cmd_ae_check}


def run(config_path, seed=None, out=None) -> int:
    """Execute one config file; returns the process exit code."""
    try:
        try:
            raw = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        cfg = resolve_config(raw, seed, out)
        art = Artifacts(cfg)
        summary = HANDLERS[cfg["command"]](cfg, art)
    except (DataError, GenerationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except (SchemaError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    print(f"{cfg['command']}: {summary} [{', '.join(art.written)} -> {art.dir}]")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="whiteout-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="action", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a JSON config")
    p_run.add_argument("config", help="path to the JSON config file")
    p_run.add_argument("--out", help="output directory (overrides the config's 'out')")
    p_run.add_argument("--seed", type=int, help="seed override")
    args = parser.parse_args(argv)
    return run(args.config, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())

"""Datasets: CSV input/output, standardization and the simulated-network generator."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import DataError, GenerationError, InvalidArgumentError, SchemaError
from .network import Mlp, forward
from .numerics import RngStream


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


@dataclass
class Dataset:
    """Features plus either integer class labels or real-valued targets.

    ``n_classes`` is ``None`` for regression targets.
    """

    X: np.ndarray
    y: np.ndarray
    n_classes: int | None = None
    feature_names: tuple[str, ...] = ()
    label_name: str = "label"
    stats: Standardization | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {self.X.shape}")
        if self.n_classes is not None:
            self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
            if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
                raise DataError(f"labels must lie in [0, {self.n_classes})")
        else:
            self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.shape[0] != self.X.shape[0]:
            raise DataError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} targets")
        if not np.all(np.isfinite(self.X)):
            raise DataError("features contain NaN or infinite values")
        if not self.feature_names:
            self.feature_names = tuple(f"x{j + 1}" for j in range(self.X.shape[1]))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def target_matrix(self, q: int | None = None) -> np.ndarray:
        """One-hot labels for classification, an ``n x q`` matrix otherwise."""
        if self.n_classes is not None:
            q = self.n_classes if q is None else q
            if q < self.n_classes:
                raise InvalidArgumentError(f"{self.n_classes} classes do not fit {q} outputs")
            return np.eye(q)[self.y]
        return self.y.reshape(self.n, -1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, X=self.X[idx], y=self.y[idx], meta=dict(self.meta))


# -- CSV ---------------------------------------------------------------------------------

def _data_rows(fh):
    for lineno, line in enumerate(fh, start=1):
        if line.strip() and not line.lstrip().startswith("#"):
            yield lineno, line


def load_csv(path, label_column="label", task: str = "auto") -> Dataset:
    """Read a headed CSV file; ``#`` lines are comments.

    ``label_column`` is a header name or a 0-based column index.  With
    ``task="auto"`` a label column holding only non-negative integers is
    treated as class labels.
    """
    if task not in ("auto", "classification", "regression"):
        raise InvalidArgumentError("task must be auto, classification or regression")
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        rows = _data_rows(fh)
        try:
            _, head = next(rows)
        except StopIteration:
            raise DataError(f"{path}: no header row") from None
        header = [h.strip() for h in next(csv.reader([head]))]
        if isinstance(label_column, int) and not isinstance(label_column, bool):
            if not -len(header) <= label_column < len(header):
                raise SchemaError(f"label column index {label_column} out of range")
            li = label_column % len(header)
        elif label_column in header:
            li = header.index(label_column)
        else:
            raise SchemaError(f"label column {label_column!r} not in header {header}")
        values = []
        for lineno, line in rows:
            cells = next(csv.reader([line]))
            if len(cells) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
            row = []
            for name, cell in zip(header, cells):
                try:
                    row.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}, column {name!r}: cannot parse {cell.strip()!r} as a number"
                    ) from None
            values.append(row)
    if not values:
        raise DataError(f"{path}: empty dataset (header only)")
    table = np.array(values)
    if not np.all(np.isfinite(table)):
        raise DataError(f"{path}: NaN or infinite entries")
    labels = table[:, li]
    X = np.delete(table, li, axis=1)
    names = tuple(h for j, h in enumerate(header) if j != li)
    integral = bool(np.all(labels == np.round(labels)) and labels.min() >= 0)
    if task == "classification" and not integral:
        raise DataError(f"{path}: label column holds non-integer values")
    if task == "classification" or (task == "auto" and integral):
        return Dataset(X, labels.astype(np.int64), int(labels.max()) + 1, names, header[li])
    return Dataset(X, labels, None, names, header[li])


def _fmt(v) -> str:
    return repr(float(v))


def dataset_csv(ds: Dataset, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    out = csv.writer(buf, lineterminator="\n")
    y = ds.y.reshape(ds.n, -1)
    label_names = [ds.label_name] if y.shape[1] == 1 else [f"{ds.label_name}{q + 1}" for q in range(y.shape[1])]
    out.writerow(list(ds.feature_names) + label_names)
    for xi, yi in zip(ds.X, y):
        ys = [str(int(v)) for v in yi] if ds.n_classes is not None else [_fmt(v) for v in yi]
        out.writerow([_fmt(v) for v in xi] + ys)
    return buf.getvalue()


def save_csv(ds: Dataset, path, comment: str | None = None) -> None:
    """Write ``ds`` so that :func:`load_csv` reads back identical floats."""
    Path(path).write_text(dataset_csv(ds, comment))


# -- standardization ----------------------------------------------------------------------

def standardize(ds: Dataset) -> tuple[Dataset, Standardization]:
    """Center each column and scale it to unit population variance."""
    if ds.n == 0:
        raise DataError("cannot standardize an empty dataset")
    mean = ds.X.mean(axis=0)
    std = ds.X.std(axis=0)
    for j, s in enumerate(std):
        if not s > 0:
            raise DataError(f"column {ds.feature_names[j]!r} is constant; cannot standardize")
    stats = Standardization(mean, std)
    return apply_standardization(ds, stats), stats


def apply_standardization(ds: Dataset, stats: Standardization) -> Dataset:
    if stats.mean.shape != (ds.p,):
        raise DataError(f"stats cover {stats.mean.size} columns, dataset has {ds.p}")
    return replace(ds, X=(ds.X - stats.mean) / stats.std, stats=stats, meta=dict(ds.meta))


# -- simulation ---------------------------------------------------------------------------

def _true_network(rng, layer_sizes, redundant):
    weights = [rng.standard_normal((a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])]
    if redundant:
        weights[0][-redundant:, :] = 0.0
    acts = ("sigmoid",) * (len(layer_sizes) - 2) + ("softmax",)
    return Mlp(layer_sizes, weights, [np.zeros(b) for b in layer_sizes[1:]], acts)


def label_by_argmax(mlp: Mlp, X) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lowest class
    return np.argmax(forward(mlp, X), axis=1)


def simulate_nn_data(rng: RngStream, layer_sizes, n_train: int, n_test: int,
                     redundant_inputs: int = 0, max_attempts: int = 200):
    """Simulate a classification task from a random sigmoid/softmax network.

    True weights and inputs are standard normal, biases are zero, and the
    last ``redundant_inputs`` inputs have all outgoing weights set to 0.  A
    weight draw is accepted once every class frequency on a pilot sample of
    ``10 C`` rows per class lies within 40% of ``1/C``.

    Returns ``(train, test, true_mlp)``.
    """
    layer_sizes = tuple(int(m) for m in layer_sizes)
    if len(layer_sizes) < 2:
        raise InvalidArgumentError("layer_sizes needs at least an input and an output layer")
    p, C = layer_sizes[0], layer_sizes[-1]
    if C < 2:
        raise InvalidArgumentError("need at least 2 classes")
    if not 0 <= redundant_inputs < p:
        raise InvalidArgumentError("redundant_inputs must lie in [0, p)")
    if n_train < 1 or n_test < 0:
        raise InvalidArgumentError("n_train must be >= 1 and n_test >= 0")
    weight_rng = rng.substream(0)
    pilot_n = 10 * C * C
    for attempt in range(1, max_attempts + 1):
        attempt_rng = weight_rng.substream(attempt)
        mlp = _true_network(attempt_rng, layer_sizes, redundant_inputs)
        pilot = label_by_argmax(mlp, attempt_rng.standard_normal((pilot_n, p)))
        freq = np.bincount(pilot, minlength=C) / pilot_n
        if np.all(np.abs(freq - 1.0 / C) <= 0.4 / C):
            break
    else:
        raise GenerationError(
            f"no balanced weight draw in {max_attempts} attempts for layer sizes {layer_sizes}"
        )
    meta = {
        "seed": rng.seed,
        "stream_id": list(rng.stream_id),
        "layer_sizes": list(layer_sizes),
        "n_train": int(n_train),
        "n_test": int(n_test),
        "redundant_inputs": int(redundant_inputs),
        "attempts": attempt,
    }
    out = []
    for sid, n in ((1, n_train), (2, n_test)):
        X = rng.substream(sid).standard_normal((n, p))
        out.append(Dataset(X, label_by_argmax(mlp, X) if n else np.zeros(0, np.int64), C,
                           meta=dict(meta, split="train" if sid == 1 else "test")))
    return out[0], out[1], mlp


def simulation_sidecar(train: Dataset, true_mlp: Mlp) -> str:
    """Sidecar JSON recording the generator settings and true weights."""
    meta = {k: v for k, v in train.meta.items() if k != "split"}
    return json.dumps({"simulation": meta, "true_model": true_mlp.to_dict()}, indent=1, sort_keys=True)


def accuracy(mlp: Mlp, ds: Dataset) -> float:
    if ds.n_classes is None:
        raise InvalidArgumentError("accuracy needs class labels")
    return float(np.mean(label_by_argmax(mlp, ds.X) == ds.y))


def train_test_split(ds: Dataset, test_fraction: float, rng: RngStream):
    if not 0 < test_fraction < 1:
        raise InvalidArgumentError("test_fraction must lie in (0,1)")
    n_test = int(math.floor(ds.n * test_fraction))
    order = rng.permutation(ds.n)
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))

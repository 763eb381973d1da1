"""Small deterministic models for desk-scale federated experiments.

Three differentiable models with analytic gradients: linear regression
(half mean squared error), softmax logistic regression, and a one-hidden-layer
tanh MLP with cross-entropy.  Parameters live in a flat ``ParamVector`` whose
named group layout (weight and bias slabs) supplies block boundaries for the
projection partition.

``local_sgd`` runs the client-side loop: T steps of ``w <- w - lr * g_hat``
where ``g_hat`` averages ``accum`` sampled micro-batches, all sampling driven
by the package's own counter-based stream so runs are bit-reproducible.  It
returns the final parameters together with the transmitted quantity
``delta = w_start - w_end``, accumulated directly so a single full-batch step
yields ``delta == lr * grad`` without rounding detours.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    DivergedError,
    InvalidDimensionError,
    NumericError,
    ShapeMismatchError,
)
from .projection import UpdateVector
from .randbasis import RandomSeed, derive_subseed, trunc_gauss_stream, uniform_stream

MODEL_KINDS = ("linear-regression", "logistic-regression", "mlp")
OPTIMIZERS = ("sgd", "adam")

# data values are drawn from a standard normal truncated this many sigmas out
_DATA_TRUNC = 3.0


@dataclass(frozen=True)
class Example:
    """One observation: feature vector plus a scalar target (or class index)."""

    features: np.ndarray
    target: float


@dataclass(frozen=True)
class Dataset:
    """Column-major batch storage: features (n, p), targets (n,) or (n, m).

    Integer targets mark classification; float targets mark regression.
    """

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeMismatchError("features must be a 2-D array")
        t = np.asarray(self.targets)
        t = t.astype(np.int64) if np.issubdtype(t.dtype, np.integer) \
            else t.astype(np.float64)
        if t.ndim not in (1, 2) or t.shape[0] != x.shape[0]:
            raise ShapeMismatchError(
                f"{t.shape[0] if t.ndim else 0} targets for {x.shape[0]} rows")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", t)

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def is_classification(self) -> bool:
        return np.issubdtype(self.targets.dtype, np.integer)

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.targets[indices])

    def examples(self) -> list[Example]:
        return [Example(self.features[i], self.targets[i].item())
                for i in range(len(self))]

    @classmethod
    def from_examples(cls, examples: Sequence[Example],
                      classification: bool = False) -> "Dataset":
        if len(examples) == 0:
            raise InvalidDimensionError("empty example list")
        x = np.stack([np.asarray(e.features, dtype=np.float64) for e in examples])
        t = np.array([e.target for e in examples])
        if classification:
            t = t.astype(np.int64)
        return cls(x, t)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture + deterministic init seed; fixes the flat parameter layout."""

    kind: str
    input_dim: int
    output_dim: int
    hidden_dim: int = 0
    init_seed: RandomSeed = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise InvalidDimensionError("input_dim and output_dim must be >= 1")
        if self.kind == "mlp":
            if self.hidden_dim < 1:
                raise InvalidDimensionError("mlp needs hidden_dim >= 1")
        elif self.hidden_dim != 0:
            raise InvalidDimensionError(
                f"{self.kind} takes no hidden layer (hidden_dim must be 0)")
        if self.kind in ("logistic-regression", "mlp") and self.output_dim < 2:
            raise InvalidDimensionError("classification needs >= 2 classes")

    @property
    def layout(self) -> tuple[tuple[str, int, int], ...]:
        """Named (name, offset, size) parameter groups, contiguous from 0."""
        p, c, h = self.input_dim, self.output_dim, self.hidden_dim
        if self.kind == "mlp":
            sizes = (("w1", p * h), ("b1", h), ("w2", h * c), ("b2", c))
        else:
            sizes = (("w", p * c), ("b", c))
        out, off = [], 0
        for name, size in sizes:
            out.append((name, off, size))
            off += size
        return tuple(out)

    @property
    def dim(self) -> int:
        return sum(size for _, _, size in self.layout)

    @property
    def block_dims(self) -> tuple[int, ...]:
        """Group sizes in layout order; the natural partition boundaries."""
        return tuple(size for _, _, size in self.layout)

    def _fan_in(self, name: str) -> int:
        return {"w": self.input_dim, "w1": self.input_dim,
                "w2": self.hidden_dim}.get(name, 0)


@dataclass(frozen=True)
class ParamVector:
    """Flat model parameters with the owning model's group layout."""

    values: np.ndarray
    layout: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ShapeMismatchError("parameters must be a flat vector")
        off = 0
        for name, o, size in self.layout:
            if o != off or size < 1:
                raise ShapeMismatchError(f"group {name!r} breaks the layout")
            off += size
        if off != v.shape[0]:
            raise ShapeMismatchError(
                f"layout covers {off} entries, vector has {v.shape[0]}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def group(self, name: str) -> np.ndarray:
        for n, off, size in self.layout:
            if n == name:
                return self.values[off:off + size]
        raise KeyError(name)

    def replace(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values=values, layout=self.layout)


def init_params(model: ModelSpec) -> ParamVector:
    """Truncated-normal weights with per-group 1/sqrt(fan_in) bound; zero biases."""
    vals = np.zeros(model.dim, dtype=np.float64)
    for g, (name, off, size) in enumerate(model.layout):
        fan_in = model._fan_in(name)
        if fan_in == 0:
            continue
        sub = derive_subseed(model.init_seed, block=g)
        vals[off:off + size] = trunc_gauss_stream(
            sub, size, bound=1.0 / math.sqrt(fan_in))
    return ParamVector(values=vals, layout=model.layout)


# ---------------------------------------------------------------- batches

def _as_arrays(model: ModelSpec, batch) -> tuple[np.ndarray, np.ndarray]:
    """Coerce a Dataset or Example sequence to validated (X, y) arrays."""
    if isinstance(batch, Dataset):
        x, y = batch.features, batch.targets
    else:
        examples = list(batch)
        if len(examples) == 0:
            raise InvalidDimensionError("empty batch")
        x = np.stack([np.asarray(e.features, dtype=np.float64) for e in examples])
        y = np.array([e.target for e in examples])
    if x.shape[0] == 0:
        raise InvalidDimensionError("empty batch")
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeMismatchError(
            f"features have width {x.shape[-1] if x.ndim else 0}, "
            f"model expects {model.input_dim}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite feature values")
    if model.kind == "linear-regression":
        y = np.asarray(y, dtype=np.float64).reshape(x.shape[0], -1)
        if y.shape[1] != model.output_dim:
            raise ShapeMismatchError(
                f"targets have width {y.shape[1]}, model expects {model.output_dim}")
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite target values")
    else:
        y = np.asarray(y)
        if y.ndim != 1:
            raise ShapeMismatchError("class targets must be a flat index vector")
        y = y.astype(np.int64)
        if y.min() < 0 or y.max() >= model.output_dim:
            raise ShapeMismatchError(
                f"class index outside [0, {model.output_dim})")
    return x, y


def _check_params(model: ModelSpec, w) -> np.ndarray:
    v = np.asarray(getattr(w, "values", w), dtype=np.float64)
    if v.shape != (model.dim,):
        raise ShapeMismatchError(f"{v.shape} parameters, model expects ({model.dim},)")
    if not np.all(np.isfinite(v)):
        raise NumericError("non-finite parameter values")
    return v


def _views(model: ModelSpec, v: np.ndarray) -> dict[str, np.ndarray]:
    p, c, h = model.input_dim, model.output_dim, model.hidden_dim
    shapes = {"w": (p, c), "b": (c,), "w1": (p, h), "b1": (h,),
              "w2": (h, c), "b2": (c,)}
    return {name: v[off:off + size].reshape(shapes[name])
            for name, off, size in model.layout}


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _loss_grad(model: ModelSpec, v: np.ndarray, x: np.ndarray, y: np.ndarray,
               want_grad: bool) -> tuple[float, np.ndarray | None]:
    # overflow to inf is legal here; the training loop turns it into a
    # diverged error instead of a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _loss_grad_raw(model, v, x, y, want_grad)


def _loss_grad_raw(model: ModelSpec, v: np.ndarray, x: np.ndarray, y: np.ndarray,
                   want_grad: bool) -> tuple[float, np.ndarray | None]:
    n = x.shape[0]
    g = _views(model, v)
    out = np.zeros_like(v) if want_grad else None
    go = _views(model, out) if want_grad else None

    if model.kind == "linear-regression":
        resid = x @ g["w"] + g["b"] - y  # (n, c)
        loss = 0.5 * float((resid * resid).sum()) / n
        if want_grad:
            go["w"][:] = x.T @ resid / n
            go["b"][:] = resid.sum(axis=0) / n
        return loss, out

    if model.kind == "logistic-regression":
        logits = x @ g["w"] + g["b"]
        ls = _log_softmax(logits)
        loss = -float(ls[np.arange(n), y].sum()) / n
        if want_grad:
            gz = np.exp(ls)
            gz[np.arange(n), y] -= 1.0
            gz /= n
            go["w"][:] = x.T @ gz
            go["b"][:] = gz.sum(axis=0)
        return loss, out

    hidden = np.tanh(x @ g["w1"] + g["b1"])
    logits = hidden @ g["w2"] + g["b2"]
    ls = _log_softmax(logits)
    loss = -float(ls[np.arange(n), y].sum()) / n
    if want_grad:
        gz = np.exp(ls)
        gz[np.arange(n), y] -= 1.0
        gz /= n
        go["w2"][:] = hidden.T @ gz
        go["b2"][:] = gz.sum(axis=0)
        gh = (gz @ g["w2"].T) * (1.0 - hidden * hidden)
        go["w1"][:] = x.T @ gh
        go["b1"][:] = gh.sum(axis=0)
    return loss, out


def loss(model: ModelSpec, w, batch) -> float:
    """Mean per-example loss over the batch."""
    v = _check_params(model, w)
    x, y = _as_arrays(model, batch)
    value, _ = _loss_grad(model, v, x, y, want_grad=False)
    return value


def grad(model: ModelSpec, w, batch) -> UpdateVector:
    """Analytic gradient of ``loss``; flat, same length as w, unpartitioned."""
    v = _check_params(model, w)
    x, y = _as_arrays(model, batch)
    _, g = _loss_grad(model, v, x, y, want_grad=True)
    return UpdateVector(values=g)


def predict(model: ModelSpec, w, features: np.ndarray) -> np.ndarray:
    """Regression outputs, or argmax class indices for the classifiers."""
    v = _check_params(model, w)
    x = np.asarray(features, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.input_dim:
        raise ShapeMismatchError(
            f"features have width {x.shape[1]}, model expects {model.input_dim}")
    g = _views(model, v)
    if model.kind == "linear-regression":
        out = x @ g["w"] + g["b"]
    elif model.kind == "logistic-regression":
        out = np.argmax(x @ g["w"] + g["b"], axis=1)
    else:
        out = np.argmax(np.tanh(x @ g["w1"] + g["b1"]) @ g["w2"] + g["b2"], axis=1)
    return out[0] if squeeze else out


def accuracy(model: ModelSpec, w, dataset: Dataset) -> float:
    """Fraction of correctly classified examples."""
    if model.kind == "linear-regression":
        raise ConfigError("accuracy is a classification metric")
    return float(np.mean(predict(model, w, dataset.features) == dataset.targets))


# ---------------------------------------------------------------- training

def _batch_indices(rng: RandomSeed, position: int, batch_size: int,
                   n_data: int) -> np.ndarray:
    u = uniform_stream(rng, batch_size, start=position)
    return np.minimum((u * n_data).astype(np.int64), n_data - 1)


def local_sgd(model: ModelSpec, w: ParamVector, dataset: Dataset, iters: int,
              lr: float, batch_size: int, accum: int = 1, rng: RandomSeed = 0,
              optimizer: str = "sgd") -> tuple[ParamVector, UpdateVector]:
    """T deterministic local steps; returns (w_end, delta = w_start - w_end).

    Each step averages ``accum`` micro-batch gradients taken at the current
    iterate.  A batch_size covering the dataset uses every example once per
    micro-batch (full-batch step) instead of sampling.  The delta is the
    accumulated sum of steps, so one full-batch sgd step gives
    ``delta == lr * grad(w_start)`` bit-exactly.
    """
    if iters < 1:
        raise InvalidDimensionError("need at least one local iteration")
    if batch_size < 1 or accum < 1:
        raise InvalidDimensionError("batch_size and accum must be >= 1")
    if not (math.isfinite(lr) and lr >= 0.0):
        raise InvalidDimensionError("learning rate must be finite and >= 0")
    if optimizer not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {optimizer!r}; options {OPTIMIZERS}")
    if len(dataset) == 0:
        raise InvalidDimensionError("empty dataset")

    v0 = _check_params(model, w)
    x_all, y_all = _as_arrays(model, dataset)
    n = x_all.shape[0]
    full_batch = batch_size >= n

    acc = np.zeros_like(v0)
    cur = v0.copy()
    if optimizer == "adam":
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        m1 = np.zeros_like(v0)
        m2 = np.zeros_like(v0)

    position = 0
    for t in range(iters):
        ghat = np.zeros_like(v0)
        for _ in range(accum):
            if full_batch:
                xb, yb = x_all, y_all
            else:
                idx = _batch_indices(rng, position, batch_size, n)
                position += batch_size
                xb, yb = x_all[idx], y_all[idx]
            step_loss, gb = _loss_grad(model, cur, xb, yb, want_grad=True)
            if not math.isfinite(step_loss):
                raise DivergedError("local loss became non-finite", iteration=t)
            ghat += gb
        ghat /= accum

        if optimizer == "sgd":
            step = lr * ghat
        else:
            m1 = beta1 * m1 + (1.0 - beta1) * ghat
            m2 = beta2 * m2 + (1.0 - beta2) * ghat * ghat
            mhat = m1 / (1.0 - beta1 ** (t + 1))
            vhat = m2 / (1.0 - beta2 ** (t + 1))
            step = lr * mhat / (np.sqrt(vhat) + eps)
        if not np.all(np.isfinite(step)):
            raise DivergedError("local step became non-finite", iteration=t)
        acc += step
        cur = v0 - acc

    return (ParamVector(values=cur, layout=model.layout),
            UpdateVector(values=acc))


# ---------------------------------------------------------------- data

def _normal_values(seed: RandomSeed, n: int, scale: float = 1.0,
                   start: int = 0) -> np.ndarray:
    return scale * trunc_gauss_stream(seed, n, bound=_DATA_TRUNC, start=start)


def synthetic_regression(n: int, input_dim: int, output_dim: int = 1,
                         seed: RandomSeed = 0, noise_std: float = 0.1) -> Dataset:
    """Linear ground truth plus gaussian label noise, fully seed-determined."""
    sx = derive_subseed(seed, block=0)
    sw = derive_subseed(seed, block=1)
    sn = derive_subseed(seed, block=2)
    x = _normal_values(sx, n * input_dim).reshape(n, input_dim)
    w_true = _normal_values(sw, input_dim * output_dim).reshape(input_dim, output_dim)
    w_true /= math.sqrt(input_dim)
    y = x @ w_true + noise_std * _normal_values(sn, n * output_dim).reshape(n, output_dim)
    return Dataset(x, y[:, 0] if output_dim == 1 else y)


def synthetic_classification(n: int, input_dim: int, num_classes: int,
                             seed: RandomSeed = 0, margin_noise: float = 0.5) -> Dataset:
    """Labels from a hidden linear scorer with pre-argmax noise."""
    if num_classes < 2:
        raise InvalidDimensionError("need at least two classes")
    sx = derive_subseed(seed, block=0)
    sw = derive_subseed(seed, block=1)
    sn = derive_subseed(seed, block=2)
    x = _normal_values(sx, n * input_dim).reshape(n, input_dim)
    w_true = _normal_values(sw, input_dim * num_classes).reshape(input_dim, num_classes)
    scores = x @ w_true / math.sqrt(input_dim) \
        + margin_noise * _normal_values(sn, n * num_classes).reshape(n, num_classes)
    return Dataset(x, np.argmax(scores, axis=1).astype(np.int64))


def save_csv(dataset: Dataset, path: str) -> None:
    """Columnar layout: f0..f{p-1}, target (single-target datasets only)."""
    if dataset.targets.ndim != 1:
        raise ShapeMismatchError("csv export needs a single target column")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.num_features)] + ["target"])
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            t = dataset.targets[i]
            row.append(str(int(t)) if dataset.is_classification else repr(float(t)))
            writer.writerow(row)


def load_csv(path: str, classification: bool = False) -> Dataset:
    """Read the ``save_csv`` layout; last column is the target."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or len(rows[0]) < 2:
        raise ConfigError(f"{path}: need a header row plus data rows", line=1)
    body = []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            raise ConfigError(f"{path}: ragged row", line=ln)
        try:
            body.append([float(v) for v in row])
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}", line=ln) from exc
    arr = np.asarray(body, dtype=np.float64)
    targets = arr[:, -1].astype(np.int64) if classification else arr[:, -1]
    return Dataset(arr[:, :-1], targets)


def save_npz(dataset: Dataset, path: str) -> None:
    np.savez_compressed(path, features=dataset.features, targets=dataset.targets)


def load_npz(path: str) -> Dataset:
    with np.load(path) as data:
        return Dataset(data["features"], data["targets"])

"""Zeroth-order baselines built on the same seeded directions.

Both baselines estimate directional derivatives from forward differences of a
scalar loss evaluator along regenerable random directions:

* ``zo_scalar_grads`` + ``zo_reconstruct``: estimate all K scalars at a fixed
  point, then assemble (1/K) sum_k g_k v_k.  Transmitting the reconstructed
  vector costs O(d); transmitting (seed, scalars) costs O(K).
* ``fedkseed_local_step``: K sequential one-direction steps
  ``w <- w - lr * g_k * v_k``; the (seed, scalars) log replays bit-exactly.

Directions here span the whole vector (truncation bound 1/sqrt(d_total)),
matching the flat geometry of the methods being reproduced; block budgets of
a partition are not consulted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidDimensionError, NumericError, ShapeMismatchError
from .projection import BlockPartition, UpdateVector
from .randbasis import RandomSeed, sample_basis

LossFn = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class ZOConfig:
    epsilon: float
    num_perturbations: int
    seed: RandomSeed

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise InvalidDimensionError("epsilon must be a positive finite float")
        if self.num_perturbations < 1:
            raise InvalidDimensionError("need at least one perturbation")


@dataclass(frozen=True)
class ScalarGrads:
    """Directional-derivative estimates along the directions of one seed."""

    seed: RandomSeed
    values: np.ndarray  # float64, one scalar per direction

    @property
    def count(self) -> int:
        return int(self.values.shape[0])


def _check_finite(value: float, index: int | None, what: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        where = "base point" if index is None else f"perturbation {index}"
        raise NumericError(f"{what} returned non-finite value at {where}", index=index)
    return value


def zo_scalar_grads(loss_fn: LossFn, w: np.ndarray, cfg: ZOConfig) -> ScalarGrads:
    """Forward-difference scalars along K seeded directions: exactly K+1 loss calls."""
    w = np.asarray(getattr(w, "values", w), dtype=np.float64)
    d = w.shape[0]
    base = _check_finite(loss_fn(w), None, "loss evaluator")
    vals = np.empty(cfg.num_perturbations, dtype=np.float64)
    for k in range(cfg.num_perturbations):
        v = sample_basis(cfg.seed, d, k).values.astype(np.float64)
        shifted = _check_finite(loss_fn(w + cfg.epsilon * v), k, "loss evaluator")
        vals[k] = (shifted - base) / cfg.epsilon
    return ScalarGrads(seed=cfg.seed, values=vals)


def zo_reconstruct(grads: ScalarGrads, partition: BlockPartition) -> UpdateVector:
    """Assemble (1/K) sum_k g_k v_k over the partition's full dimension."""
    d = partition.total_dim
    k_total = grads.count
    if k_total < 1:
        raise ShapeMismatchError("scalar-gradient log is empty")
    acc = np.zeros(d, dtype=np.float64)
    for k in range(k_total):  # ascending, same stream order as the producer
        v = sample_basis(grads.seed, d, k).values.astype(np.float64)
        acc += grads.values[k] * v
    acc /= k_total
    return UpdateVector(values=acc, partition=partition)


def fedkseed_local_step(w: np.ndarray, loss_fn: LossFn, cfg: ZOConfig,
                        lr: float) -> tuple[np.ndarray, ScalarGrads]:
    """K sequential one-direction steps from a single transmitted seed.

    Step k probes the current iterate along direction k and immediately moves
    against the estimated slope.  Returns the new iterate plus the scalar log;
    replay_scalar_log applied to the same start reproduces it bit-exactly.
    """
    w = np.asarray(getattr(w, "values", w), dtype=np.float64).copy()
    d = w.shape[0]
    vals = np.empty(cfg.num_perturbations, dtype=np.float64)
    for k in range(cfg.num_perturbations):
        v = sample_basis(cfg.seed, d, k).values.astype(np.float64)
        base = _check_finite(loss_fn(w), k, "loss evaluator")
        shifted = _check_finite(loss_fn(w + cfg.epsilon * v), k, "loss evaluator")
        g = (shifted - base) / cfg.epsilon
        vals[k] = g
        w -= (lr * g) * v
    return w, ScalarGrads(seed=cfg.seed, values=vals)


def replay_scalar_log(w: np.ndarray, log: ScalarGrads, lr: float) -> np.ndarray:
    """Re-apply a fedkseed log to a fresh copy of w (no loss evaluations)."""
    w = np.asarray(getattr(w, "values", w), dtype=np.float64).copy()
    d = w.shape[0]
    for k in range(log.count):
        v = sample_basis(log.seed, d, k).values.astype(np.float64)
        w -= (lr * float(log.values[k])) * v
    return w

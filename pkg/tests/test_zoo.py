import numpy as np
import pytest

from fedproj.errors import InvalidDimensionError, NumericError, ShapeMismatchError
from fedproj.projection import BlockPartition, UpdateVector
from fedproj.randbasis import basis_tile
from fedproj.zoo import (
    ScalarGrads,
    ZOConfig,
    fedkseed_local_step,
    replay_scalar_log,
    zo_reconstruct,
    zo_scalar_grads,
)


def _directions(seed: int, d: int, k: int) -> np.ndarray:
    return basis_tile(seed, 0, d, 0, k).astype(np.float64)


def test_config_validation():
    with pytest.raises(InvalidDimensionError):
        ZOConfig(epsilon=0.0, num_perturbations=4, seed=1)
    with pytest.raises(InvalidDimensionError):
        ZOConfig(epsilon=float("nan"), num_perturbations=4, seed=1)
    with pytest.raises(InvalidDimensionError):
        ZOConfig(epsilon=1e-3, num_perturbations=0, seed=1)


def test_scalar_grads_count():
    g = ScalarGrads(seed=3, values=np.arange(5.0))
    assert g.count == 5


def test_exactly_k_plus_one_evaluations():
    calls = []

    def loss(w):
        calls.append(w.copy())
        return float(np.sum(w ** 2))

    cfg = ZOConfig(epsilon=1e-3, num_perturbations=7, seed=2)
    zo_scalar_grads(loss, np.ones(16), cfg)
    assert len(calls) == 8
    np.testing.assert_array_equal(calls[0], np.ones(16))


def test_linear_loss_gives_directional_slopes():
    # linear f: forward difference recovers c . v_k up to rounding
    d, k = 32, 6
    c = np.random.default_rng(0).standard_normal(d)
    cfg = ZOConfig(epsilon=1e-2, num_perturbations=k, seed=5)
    grads = zo_scalar_grads(lambda w: float(c @ w), np.zeros(d), cfg)
    want = _directions(5, d, k) @ c
    np.testing.assert_allclose(grads.values, want, rtol=1e-9, atol=1e-11)


def test_accepts_update_vector_input():
    part = BlockPartition((8,), (2,))
    u = UpdateVector(np.full(8, 0.5), part)
    cfg = ZOConfig(epsilon=1e-3, num_perturbations=2, seed=9)
    a = zo_scalar_grads(lambda w: float(w.sum()), u, cfg)
    b = zo_scalar_grads(lambda w: float(w.sum()), np.full(8, 0.5), cfg)
    np.testing.assert_array_equal(a.values, b.values)


def test_reconstruct_matches_materialized_oracle():
    d, k = 64, 8
    part = BlockPartition((d,), (k,))
    vals = np.random.default_rng(1).standard_normal(k)
    out = zo_reconstruct(ScalarGrads(seed=4, values=vals), part)
    want = _directions(4, d, k).T @ vals / k
    np.testing.assert_allclose(out.values, want, rtol=1e-12, atol=1e-15)
    assert out.partition is part


def test_reconstruct_rejects_empty_log():
    part = BlockPartition((8,), (2,))
    with pytest.raises(ShapeMismatchError):
        zo_reconstruct(ScalarGrads(seed=1, values=np.empty(0)), part)


def test_zero_function_reconstructs_zero():
    part = BlockPartition((16,), (4,))
    cfg = ZOConfig(epsilon=1e-3, num_perturbations=4, seed=6)
    grads = zo_scalar_grads(lambda w: 0.0, np.ones(16), cfg)
    assert np.all(grads.values == 0.0)
    assert np.all(zo_reconstruct(grads, part).values == 0.0)


def test_quadratic_remainder_within_curvature_bound():
    # f(w) = ||w||^2 / 2: the estimate deviates from (1/K) V V^T grad by
    # exactly (eps/2K) sum_k ||v_k||^2 v_k, so its norm is at most
    # (eps/2) max_k ||v_k||^3
    d, k, eps = 128, 16, 1e-2
    w = np.random.default_rng(2).standard_normal(d)
    part = BlockPartition((d,), (k,))
    cfg = ZOConfig(epsilon=eps, num_perturbations=k, seed=8)
    grads = zo_scalar_grads(lambda x: 0.5 * float(x @ x), w, cfg)
    recon = zo_reconstruct(grads, part).values
    v = _directions(8, d, k)
    first_order = v.T @ (v @ w) / k
    gap = np.linalg.norm(recon - first_order)
    bound = 0.5 * eps * np.linalg.norm(v, axis=1).max() ** 3
    assert gap <= bound + 1e-9


def test_quadratic_remainder_linear_in_epsilon():
    d, k = 64, 8
    w = np.random.default_rng(3).standard_normal(d)
    part = BlockPartition((d,), (k,))
    v = _directions(11, d, k)
    first_order = v.T @ (v @ w) / k

    def gap(eps):
        cfg = ZOConfig(epsilon=eps, num_perturbations=k, seed=11)
        grads = zo_scalar_grads(lambda x: 0.5 * float(x @ x), w, cfg)
        return np.linalg.norm(zo_reconstruct(grads, part).values - first_order)

    g1, g2 = gap(1e-1), gap(1e-3)
    assert g2 < g1
    assert g1 / g2 == pytest.approx(100.0, rel=1e-2)


def test_nonfinite_base_point_raises():
    cfg = ZOConfig(epsilon=1e-3, num_perturbations=2, seed=1)
    with pytest.raises(NumericError) as err:
        zo_scalar_grads(lambda w: float("nan"), np.ones(4), cfg)
    assert err.value.index is None
    assert "base point" in str(err.value)


def test_nonfinite_perturbation_names_index():
    calls = {"n": 0}

    def loss(w):
        calls["n"] += 1
        return float("inf") if calls["n"] == 4 else 0.0

    cfg = ZOConfig(epsilon=1e-3, num_perturbations=8, seed=1)
    with pytest.raises(NumericError) as err:
        zo_scalar_grads(loss, np.ones(4), cfg)
    assert err.value.index == 2
    assert "perturbation 2" in str(err.value)


def test_fedkseed_replay_is_bit_exact():
    d = 48
    w0 = np.random.default_rng(4).standard_normal(d)
    target = np.random.default_rng(5).standard_normal(d)
    cfg = ZOConfig(epsilon=1e-3, num_perturbations=12, seed=15)
    w_end, log = fedkseed_local_step(
        w0, lambda w: 0.5 * float((w - target) @ (w - target)), cfg, lr=0.3)
    replayed = replay_scalar_log(w0, log, lr=0.3)
    assert np.array_equal(w_end, replayed)
    assert log.count == 12
    np.testing.assert_array_equal(w0, np.random.default_rng(4).standard_normal(d))


def test_fedkseed_descends_quadratic():
    d = 32
    w0 = np.random.default_rng(6).standard_normal(d) * 3.0

    def loss(w):
        return 0.5 * float(w @ w)

    cfg = ZOConfig(epsilon=1e-4, num_perturbations=200, seed=21)
    w_end, _ = fedkseed_local_step(w0, loss, cfg, lr=1.0)
    assert loss(w_end) < 0.5 * loss(w0)


def test_fedkseed_eval_count_is_two_per_step():
    calls = {"n": 0}

    def loss(w):
        calls["n"] += 1
        return float(w.sum())

    cfg = ZOConfig(epsilon=1e-3, num_perturbations=9, seed=2)
    fedkseed_local_step(np.zeros(8), loss, cfg, lr=0.1)
    assert calls["n"] == 18

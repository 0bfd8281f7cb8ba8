"""
Test the partial likelihood, score and information kernels
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linprog

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from services.partial_likelihood import (
    EmptyRiskSetError,
    evaluate,
    log_partial_likelihood,
    sandwich_check,
    score_sup_norm,
    snapshot,
)
from services.survival_sim import SimConfig, SurvivalDataset, derive_seed, simulate_dataset


def small_dataset(seed: int, n: int = 30, p: int = 5) -> SurvivalDataset:
    config = SimConfig(n=n, p=p, s=2, beta0_values=[0.8, -0.6], censor_rate=0.2, seed=seed)
    return simulate_dataset(config)


def constant_dataset(n: int = 10, p: int = 3) -> SurvivalDataset:
    rng = np.random.default_rng(0)
    return SurvivalDataset(
        time=rng.uniform(0.5, 2.0, size=n),
        status=np.ones(n, dtype=np.int8),
        covariates=np.full((n, p), 0.3),
        tau=2.0,
    )


def finite_difference_score(dataset, beta, step=1e-5):
    grad = np.zeros_like(beta)
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = step
        grad[j] = (log_partial_likelihood(dataset, beta + e) - log_partial_likelihood(dataset, beta - e)) / (2 * step)
    return grad


def finite_difference_jacobian(dataset, beta, step=1e-5):
    jac = np.zeros((beta.size, beta.size))
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = step
        upper = evaluate(dataset, beta + e, with_hessian=False).score
        lower = evaluate(dataset, beta - e, with_hessian=False).score
        jac[:, j] = (upper - lower) / (2 * step)
    return jac


def test_snapshot_single_subject():
    z = np.array([0.5, -0.25])
    beta = np.array([0.3, 0.7])
    dataset = SurvivalDataset(time=np.array([2.0]), status=np.array([1], dtype=np.int8),
                              covariates=z[None, :].copy(), tau=2.0)
    snap = snapshot(dataset, beta, 1.0)
    weight = np.exp(z @ beta)
    assert snap.s0 == pytest.approx(weight)
    np.testing.assert_allclose(snap.s1, weight * z)
    np.testing.assert_allclose(snap.s2, weight * np.outer(z, z))


def test_snapshot_unit_weights():
    dataset = small_dataset(1)
    snap = snapshot(dataset, np.zeros(dataset.p), 0.0)
    z = dataset.covariates
    assert snap.s0 == pytest.approx(dataset.n)
    np.testing.assert_allclose(snap.s1, z.sum(axis=0))
    np.testing.assert_allclose(snap.s2, z.T @ z)


def test_snapshot_empty_risk_set():
    dataset = small_dataset(2)
    with pytest.raises(EmptyRiskSetError, match="empty risk set"):
        snapshot(dataset, np.zeros(dataset.p), float(dataset.time.max()) + 1.0)


def test_single_event_score_is_zero():
    dataset = SurvivalDataset(time=np.array([1.0]), status=np.array([1], dtype=np.int8),
                              covariates=np.array([[0.4, -0.9]]), tau=1.0)
    result = evaluate(dataset, np.array([0.5, 0.5]))
    np.testing.assert_array_equal(result.score, np.zeros(2))


def test_identical_covariates_vanish():
    dataset = constant_dataset()
    result = evaluate(dataset, np.array([1.0, -2.0, 0.5]))
    np.testing.assert_array_equal(result.score, np.zeros(3))
    np.testing.assert_array_equal(result.hessian, np.zeros((3, 3)))


@pytest.mark.parametrize("index", range(20))
def test_score_and_hessian_match_finite_differences(index):
    rng = np.random.default_rng(derive_seed(5, 1, index))
    n = int(rng.integers(10, 51))
    p = int(rng.integers(2, 9))
    dataset = small_dataset(derive_seed(5, 2, index), n=n, p=p)
    beta = rng.uniform(-0.5, 0.5, size=p)

    result = evaluate(dataset, beta)
    score_error = np.max(np.abs(result.score - finite_difference_score(dataset, beta)))
    assert score_error <= 1e-6 * (1.0 + np.max(np.abs(result.score)))
    hessian_error = np.max(np.abs(result.hessian + finite_difference_jacobian(dataset, beta)))
    assert hessian_error <= 1e-5 * (1.0 + np.max(np.abs(result.hessian)))


def test_information_is_psd_and_loglik_concave():
    rng = np.random.default_rng(3)
    dataset = small_dataset(4, n=40, p=6)
    for _ in range(100):
        beta = rng.uniform(-1.0, 1.0, size=dataset.p)
        hessian = evaluate(dataset, beta).hessian
        assert np.linalg.eigvalsh(hessian).min() >= -1e-10 * max(np.trace(hessian), 1.0)

        a = rng.uniform(-1.0, 1.0, size=dataset.p)
        b = rng.uniform(-1.0, 1.0, size=dataset.p)
        middle = log_partial_likelihood(dataset, 0.5 * (a + b))
        ends = 0.5 * (log_partial_likelihood(dataset, a) + log_partial_likelihood(dataset, b))
        assert middle >= ends - 1e-12


def test_score_sup_norm_helper():
    dataset = small_dataset(6)
    beta = np.full(dataset.p, 0.1)
    assert score_sup_norm(dataset, beta) == pytest.approx(np.max(np.abs(evaluate(dataset, beta).score)))


def test_steep_linear_predictor_is_finite():
    dataset = small_dataset(7)
    result = evaluate(dataset, np.full(dataset.p, 30.0))
    assert np.all(np.isfinite(result.score))
    assert np.all(np.isfinite(result.hessian))
    assert np.isfinite(result.loglik)


def test_beta_shape_is_checked():
    dataset = small_dataset(8)
    with pytest.raises(ValueError):
        evaluate(dataset, np.zeros(dataset.p + 1))


def test_sandwich_zero_direction():
    dataset = small_dataset(9)
    result = sandwich_check(dataset, np.zeros(dataset.p), np.zeros(dataset.p))
    assert (result.lower, result.middle, result.upper, result.eta) == (0.0, 0.0, 0.0, 0.0)


def test_sandwich_identical_covariates():
    dataset = constant_dataset()
    result = sandwich_check(dataset, np.zeros(3), np.array([0.2, -0.1, 0.3]))
    assert result.middle == result.lower == result.upper == 0.0


@pytest.mark.parametrize("index", range(100))
def test_sandwich_holds(index):
    rng = np.random.default_rng(derive_seed(9, 1, index))
    dataset = small_dataset(derive_seed(9, 2, index), n=int(rng.integers(10, 41)), p=4)
    beta = rng.uniform(-0.5, 0.5, size=dataset.p)
    h = rng.uniform(-0.5, 0.5, size=dataset.p)
    result = sandwich_check(dataset, beta, h)
    assert result.holds(rel_tol=1e-8)


def test_score_at_truth_is_centered():
    config = SimConfig(n=100, p=3, s=2, beta0_values=[0.8, -0.6], censor_rate=0.2, seed=5)
    beta0 = config.beta0()
    reps = 200
    scores = np.stack([
        evaluate(simulate_dataset(config.with_overrides(seed=derive_seed(5, 3, rep))), beta0,
                 with_hessian=False).score
        for rep in range(reps)
    ])
    mean = scores.mean(axis=0)
    sd = scores.std(axis=0, ddof=1)
    assert np.all(sd > 0)
    assert np.all(np.abs(mean) <= 4.0 * sd / np.sqrt(reps))


@pytest.mark.parametrize("seed", range(5))
def test_weighted_mean_lies_in_risk_set_hull(seed):
    dataset = small_dataset(seed, n=10, p=2)
    beta = np.array([1.5, -2.0])
    for t in np.sort(dataset.time)[:-1]:
        snap = snapshot(dataset, beta, float(t))
        z = dataset.covariates[dataset.time >= t]
        mean = snap.weighted_mean
        assert np.all(mean >= z.min(axis=0) - 1e-12)
        assert np.all(mean <= z.max(axis=0) + 1e-12)
        hull = linprog(np.zeros(z.shape[0]), A_eq=np.vstack((z.T, np.ones(z.shape[0]))),
                       b_eq=np.append(mean, 1.0), bounds=(0, None), method="highs")
        assert hull.status == 0

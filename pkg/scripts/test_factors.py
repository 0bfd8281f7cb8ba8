"""
Test cone factors, restricted constants and the population surrogate
"""

import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from services.factors import (
    STREAM_POPULATION,
    EnumerationBudgetError,
    SupportSet,
    compatibility_factor,
    factor_report,
    get_factor_options,
    phi_2s,
    population_matrix,
    restricted_eigenvalue,
    restricted_isometry,
    restricted_orthogonality,
    solve_compatibility,
    solve_restricted_eigenvalue,
    solve_restricted_isometry,
    solve_weak_cone_invertibility,
    sup_norm_diff,
    uup_margin,
    weak_cone_invertibility_factor,
)
from services.partial_likelihood import evaluate
from services.survival_sim import ConstantLaw, SimConfig, derive_seed, simulate_dataset

FAST = get_factor_options("fast")


def random_psd(seed: int, p: int = 10) -> np.ndarray:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(2 * p, p))
    return X.T @ X / (2 * p)


@pytest.mark.parametrize("support", [[0], [1, 4], [0, 2, 5]])
def test_identity_factors_are_one(support):
    eye = np.eye(8)
    assert compatibility_factor(eye, support, FAST) == pytest.approx(1.0, abs=1e-3)
    assert weak_cone_invertibility_factor(eye, support, 2.0, FAST) == pytest.approx(1.0, abs=1e-3)
    assert restricted_eigenvalue(eye, support, FAST) == pytest.approx(1.0, abs=1e-3)


def test_identity_phi_small_case():
    assert phi_2s(np.eye(3), [0], FAST) == pytest.approx(1.0, abs=1e-3)


def test_zero_matrix_factors_vanish():
    zero = np.zeros((5, 5))
    assert compatibility_factor(zero, [0, 1], FAST) == 0.0
    assert weak_cone_invertibility_factor(zero, [0, 1], 2.0, FAST) == 0.0
    assert restricted_eigenvalue(zero, [0, 1], FAST) == 0.0
    assert phi_2s(zero, [0, 1], FAST) == 0.0


def test_diagonal_compatibility():
    d = np.array([2.0, 1.0, 3.0, 0.5])
    assert compatibility_factor(np.diag(d), [0], FAST) == pytest.approx(math.sqrt(2.0), abs=1e-3)


def test_two_dimensional_restricted_eigenvalue():
    eps = 0.2
    value = restricted_eigenvalue(np.diag([1.0, eps]), [0], FAST)
    assert value == pytest.approx(math.sqrt((1.0 + eps) / 2.0), abs=1e-3)


def test_scaling_by_c():
    M = random_psd(1, p=6)
    opts = get_factor_options("fast", seed=3)
    kappa = compatibility_factor(M, [0, 1], opts)
    assert compatibility_factor(4.0 * M, [0, 1], opts) == pytest.approx(2.0 * kappa, rel=1e-2)
    f2 = weak_cone_invertibility_factor(M, [0, 1], 2.0, opts)
    assert weak_cone_invertibility_factor(4.0 * M, [0, 1], 2.0, opts) == pytest.approx(4.0 * f2, rel=1e-2)


def test_q_below_one_is_rejected():
    with pytest.raises(ValueError):
        weak_cone_invertibility_factor(np.eye(3), [0], 0.5, FAST)


def test_phi_needs_room_for_2s():
    with pytest.raises(ValueError):
        phi_2s(np.eye(3), [0, 1], FAST)


def test_asymmetric_matrix_is_rejected():
    with pytest.raises(ValueError, match="symmetric"):
        compatibility_factor(np.array([[1.0, 0.5], [0.0, 1.0]]), [0], FAST)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_identity_isometry_is_zero(N):
    result = solve_restricted_isometry(np.eye(5), N)
    assert result.value == pytest.approx(0.0, abs=1e-12)
    assert result.exact
    assert result.coverage == 1.0


def test_diagonal_isometry():
    d = np.array([0.5, 1.2, 1.9, 1.0])
    assert restricted_isometry(np.diag(d), 1) == pytest.approx(0.9)


@pytest.mark.parametrize("rho", [0.3, -0.7])
def test_two_by_two_constants(rho):
    M = np.array([[1.0, rho], [rho, 1.0]])
    assert restricted_isometry(M, 2) == pytest.approx(abs(rho))
    assert restricted_orthogonality(M, 1, 1) == pytest.approx(abs(rho))


def test_orthogonality_of_diagonal_is_zero():
    assert restricted_orthogonality(np.diag([1.0, 2.0, 3.0, 4.0]), 1, 2) == 0.0
    assert restricted_orthogonality(np.eye(6), 2, 3) == 0.0


def test_enumeration_budget():
    M = np.eye(40)
    with pytest.raises(EnumerationBudgetError, match="sampled"):
        restricted_isometry(M, 10)
    sampled = solve_restricted_isometry(M, 10, get_factor_options("fast", sampled=True, sample_subsets=500))
    assert not sampled.exact
    assert sampled.checked == 500
    assert 0.0 < sampled.coverage < 1.0
    assert sampled.value == pytest.approx(0.0, abs=1e-12)


def test_uup_margin():
    assert uup_margin(np.eye(6), 2) == pytest.approx(1.0)
    assert uup_margin(np.ones((6, 6)), 2) <= 0.0
    with pytest.raises(ValueError):
        uup_margin(np.eye(5), 2)


def test_sup_norm_diff():
    A = random_psd(2, p=4)
    assert sup_norm_diff(A, A) == 0.0
    B = np.zeros((3, 3))
    B[1, 2] = 3.0
    assert sup_norm_diff(np.zeros((3, 3)), B) == 3.0
    with pytest.raises(ValueError):
        sup_norm_diff(np.zeros((2, 2)), np.zeros((3, 3)))


def test_support_set():
    support = SupportSet.from_beta([0.0, 1.5, 0.0, -2.0])
    assert support.indices == [1, 3]
    assert support.size == 2
    np.testing.assert_array_equal(support.mask(), [False, True, False, True])
    with pytest.raises(ValidationError):
        SupportSet(indices=[3, 1], p=4)
    with pytest.raises(ValidationError):
        SupportSet(indices=[4], p=4)


def test_unknown_preset():
    with pytest.raises(ValueError, match="preset"):
        get_factor_options("slow")


@pytest.mark.parametrize("seed", range(20))
def test_factor_ordering_on_random_matrices(seed):
    M = random_psd(seed)
    report = factor_report(M, [0, 1, 2], qs=[1.0, 2.0, 4.0], opts=get_factor_options("fast", seed=seed))
    S = 3
    tol = 1e-4
    assert report.kappa <= 2.0 * math.sqrt(S) * report.re + tol
    assert report.phi_2s <= report.kappa + tol
    assert report.re <= report.phi_2s + tol
    for q in (1.0, 2.0, 4.0):
        assert report.fq(q) >= S ** (1.0 / q - 1.0) * report.kappa ** 2 / 2.0 - tol
    ordering = report.diagnostics["ordering"]
    assert ordering["kappa_le_2sqrtS_re"] and ordering["re_le_phi"] and ordering["phi_le_kappa"]
    if report.uup_margin is not None and report.uup_margin > 0.05:
        assert report.phi_2s > 1e-6
    json.dumps(report.model_dump(mode="json"), allow_nan=False)


def test_report_on_identity():
    report = factor_report(np.eye(9), [0, 1, 2], opts=FAST)
    assert report.kappa == pytest.approx(1.0, abs=1e-3)
    assert report.fq(2.0) == pytest.approx(1.0, abs=1e-3)
    assert report.re == pytest.approx(1.0, abs=1e-3)
    assert sorted(report.delta_n) == ["3", "6"]
    assert max(report.delta_n.values()) == pytest.approx(0.0, abs=1e-12)
    assert report.theta == {"3,3": 0.0, "3,6": 0.0}
    assert report.uup_margin == pytest.approx(1.0)
    assert report.diagnostics["enumeration_skipped"] == {}


def test_population_matrix_single_replicate():
    config = SimConfig(n=100, p=5, s=2, beta0_values=[1.0, -0.5], censor_rate=0.2, seed=13)
    population = population_matrix(config, n_big=1000, mc_reps=1, jobs=1)
    replicate = config.with_overrides(n=1000, seed=derive_seed(config.seed, STREAM_POPULATION, 0))
    expected = evaluate(simulate_dataset(replicate), config.beta0()).hessian
    np.testing.assert_allclose(population.matrix, expected, rtol=1e-12, atol=1e-15)
    assert population.stderr_sup == 0.0
    assert population.n_used == 1000


def test_population_matrix_averages_replicates():
    config = SimConfig(n=100, p=4, s=1, beta0_values=[0.5], seed=2)
    population = population_matrix(config, n_big=1000, mc_reps=3, jobs=2)
    np.testing.assert_allclose(population.matrix, population.matrix.T)
    assert population.stderr_sup > 0.0
    with pytest.raises(ValueError):
        population_matrix(config, n_big=500)


def test_population_matrix_of_identical_covariates_is_zero():
    config = SimConfig(n=100, p=4, s=1, beta0_values=[0.5], covariate_law=ConstantLaw(value=0.7), seed=3)
    population = population_matrix(config, n_big=1000, mc_reps=3, jobs=1)
    np.testing.assert_array_equal(population.matrix, np.zeros((4, 4)))
    assert population.stderr_sup == 0.0


def test_population_stderr_shrinks_with_replicates():
    config = SimConfig(n=100, p=3, s=1, beta0_values=[0.5], seed=8)
    few = population_matrix(config, n_big=1000, mc_reps=8, jobs=2).stderr_sup
    many = population_matrix(config, n_big=1000, mc_reps=32, jobs=2).stderr_sup
    assert 1.0 <= few / many <= 4.0


def test_factors_are_permutation_equivariant():
    M = random_psd(21, p=7)
    support = [0, 3]
    perm = np.random.default_rng(4).permutation(7)
    permuted = M[np.ix_(perm, perm)]
    moved = [int(i) for i in np.flatnonzero(np.isin(perm, support))]
    opts = get_factor_options("default")
    assert compatibility_factor(permuted, moved, opts) == pytest.approx(compatibility_factor(M, support, opts), rel=1e-3)
    assert restricted_eigenvalue(permuted, moved, opts) == pytest.approx(restricted_eigenvalue(M, support, opts), rel=1e-3)
    assert weak_cone_invertibility_factor(permuted, moved, 2.0, opts) == pytest.approx(
        weak_cone_invertibility_factor(M, support, 2.0, opts), rel=1e-3)
    for N in (2, 4):
        assert restricted_isometry(permuted, N) == pytest.approx(restricted_isometry(M, N), abs=1e-12)
    assert restricted_orthogonality(permuted, 2, 2) == pytest.approx(restricted_orthogonality(M, 2, 2), abs=1e-12)


def cone_samples(seed: int, p: int, support, count: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mask = np.zeros(p, dtype=bool)
    mask[support] = True
    H = rng.standard_normal((count, p))
    inside = np.abs(H[:, mask]).sum(axis=1)
    outside = np.abs(H[:, ~mask]).sum(axis=1)
    H[:, ~mask] *= (rng.uniform(0.0, 1.0, size=count) * inside / outside)[:, None]
    return H


def test_optimizers_beat_independent_cone_samples():
    M = random_psd(33, p=6)
    support = [1, 4]
    S = len(support)
    H = cone_samples(77, 6, support, 20000)
    quad = np.einsum("ij,jk,ik->i", H, M, H)
    on_support = np.abs(H[:, support]).sum(axis=1)
    opts = get_factor_options("default")

    kappa = solve_compatibility(M, support, opts).value
    re = solve_restricted_eigenvalue(M, support, opts).value
    f2 = solve_weak_cone_invertibility(M, support, 2.0, opts).value
    assert kappa <= np.min(np.sqrt(S * quad) / on_support) * (1 + 1e-6)
    assert re <= np.min(np.sqrt(quad) / np.linalg.norm(H, axis=1)) * (1 + 1e-6)
    assert f2 <= np.min(np.sqrt(S) * quad / (on_support * np.linalg.norm(H, axis=1))) * (1 + 1e-6)


def test_enumerated_constants_are_monotone():
    M = random_psd(12, p=8)
    deltas = [restricted_isometry(M, N) for N in range(1, 6)]
    assert all(a <= b + 1e-12 for a, b in zip(deltas, deltas[1:]))
    for S1 in range(1, 4):
        for S2 in range(1, 4):
            theta = restricted_orthogonality(M, S1, S2)
            assert theta <= restricted_orthogonality(M, S1, S2 + 1) + 1e-12
            assert theta <= restricted_orthogonality(M, S1 + 1, S2) + 1e-12

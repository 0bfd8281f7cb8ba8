"""
Test proof constants, tail bounds and error bounds
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from services.bounds import (
    STREAM_CALIBRATION,
    VACUOUS,
    as_bound,
    calibrate_k2,
    constants_from_truth,
    epsilon_study,
    l1_lq_bounds,
    l2_error_bound,
    mc_score_tail,
    proof_step_check,
    score_norms,
    strictly_decreasing,
    tail_bound,
    tail_study,
)
from services.dantzig import SolverConfig, gamma_schedule, solve_dsfph
from services.factors import population_matrix
from services.partial_likelihood import evaluate
from services.survival_sim import SimConfig, simulate_dataset


def small_config(**overrides) -> SimConfig:
    fields = dict(n=60, p=5, s=2, beta0_values=[1.0, -0.5], censor_rate=0.2, seed=21)
    fields.update(overrides)
    return SimConfig(**fields)


def test_constants_for_zero_beta():
    config = small_config(baseline={"kind": "constant", "c": 0.5}, tau=4.0)
    constants = constants_from_truth(np.zeros(5), 1.0, config)
    assert constants.K4 == 0.0
    assert constants.K5 == 2.0
    assert constants.K3 == pytest.approx(4.0 * 0.5 * 4.0)


def test_constants_unit_l1():
    constants = constants_from_truth(np.array([0.5, -0.5, 0.0]), 1.0, small_config())
    assert constants.K5 == pytest.approx(2.0 * math.exp(4.0))
    assert constants.K5 == pytest.approx(109.196, abs=1e-3)
    assert constants.K4 == pytest.approx(4.0 * math.exp(4.0))


def test_tail_bound_arithmetic():
    bound = tail_bound(1.0, 100, 1.0, 1.0)
    assert bound.single == pytest.approx(2.0 * math.exp(-50.0 / 3.0))
    assert bound.single == pytest.approx(1.16e-7, rel=1e-2)
    assert tail_bound(1e-9, 100, 1.0, 1.0).single == pytest.approx(2.0)


def test_tail_bound_monotonicity():
    base = tail_bound(0.5, 100, 1.0, 1.0).single
    assert tail_bound(0.5, 200, 1.0, 1.0).single < base
    assert tail_bound(0.6, 100, 1.0, 1.0).single < base
    assert tail_bound(0.5, 100, 2.0, 1.0).single > base
    assert tail_bound(0.5, 100, 1.0, 2.0).single > base


def test_union_bound_is_capped():
    bound = tail_bound(0.01, 10, 1.0, 1.0, p=50)
    assert bound.union == 1.0
    small = tail_bound(1.0, 100, 1.0, 1.0, p=10)
    assert small.union == pytest.approx(10 * small.single)


def test_tail_bound_rejects_bad_inputs():
    with pytest.raises(ValueError):
        tail_bound(-1.0, 100, 1.0, 1.0)


def test_mc_tail_extremes():
    config = small_config()
    everything = mc_score_tail(config, 0.0, reps=100, jobs=1)
    assert everything.probability == 1.0
    assert everything.exceedances == 100
    assert everything.ci_high == 1.0
    assert everything.ci_low < 1.0
    nothing = mc_score_tail(config, 1e6, reps=100, jobs=1)
    assert nothing.probability == 0.0
    assert nothing.ci_low == 0.0


def test_mc_tail_needs_enough_reps():
    with pytest.raises(ValueError):
        mc_score_tail(small_config(), 0.1, reps=99)


def test_score_norms_do_not_depend_on_jobs():
    config = small_config()
    np.testing.assert_array_equal(score_norms(config, 12, jobs=1), score_norms(config, 12, jobs=3))


def test_calibrated_k2_hits_the_quantile():
    config = small_config()
    K2 = calibrate_k2(config, 0.5, level=0.9, reps=50, jobs=1)
    norms = score_norms(config, 50, stream=STREAM_CALIBRATION, jobs=1)
    assert gamma_schedule(config.n, config.p, K2, 0.5) == pytest.approx(np.quantile(norms, 0.9))
    with pytest.raises(ValueError, match="constraint exponent"):
        calibrate_k2(config, 0.7, reps=20)


def test_l2_error_bound():
    assert l2_error_bound(1.0, 0.1, 1.0, 0.0) == pytest.approx(0.1)
    assert l2_error_bound(0.0, 0.1, 1.0, 0.0) == 0.0
    assert l2_error_bound(1.0, 0.1, 0.5, 0.25) is None
    assert as_bound(l2_error_bound(1.0, 0.1, 0.5, 0.3)) == VACUOUS


def test_l1_lq_bounds():
    bounds = l1_lq_bounds(1.0, 3, 0.1, 1.0, 1.0, 2.0, 0.0)
    assert bounds.l1 == pytest.approx(1.2)
    assert bounds.lq == pytest.approx(2.0 * math.sqrt(3.0) * 0.1)
    assert bounds.lq == pytest.approx(0.34641, abs=1e-5)


def test_l1_lq_bounds_vacuous_cases():
    bounds = l1_lq_bounds(1.0, 3, 0.1, 1.0, 1.0, 2.0, 0.1)
    assert bounds.l1 is None
    assert bounds.lq is not None
    assert l1_lq_bounds(1.0, 3, 0.1, 1.0, 1.0, 2.0, 0.2).lq is None
    with pytest.raises(ValueError):
        l1_lq_bounds(1.0, 3, 0.1, 1.0, 1.0, 1.0, 0.0)


def test_l1_lq_bounds_with_eps():
    S, q, K5, gamma, kappa, fq, eps = 2, 2.0, 1.5, 0.2, 1.2, 0.9, 0.05
    bounds = l1_lq_bounds(K5, S, gamma, kappa, fq, q, eps)
    root = S ** (1.0 / q)
    expected = (2 * root * eps / fq) * (2 * K5 * S * gamma / (kappa ** 2 - 2 * S * eps)) + 2 * K5 * root * gamma / fq
    assert bounds.lq == pytest.approx(expected)
    assert bounds.l1 == pytest.approx(4 * K5 * S * gamma / (kappa ** 2 - 4 * S * eps))


def test_proof_step_on_a_fit():
    config = small_config(n=150, p=8)
    dataset = simulate_dataset(config)
    beta0 = config.beta0()
    gamma = 1.05 * evaluate(dataset, beta0, with_hessian=False).score_sup_norm
    fit = solve_dsfph(dataset, SolverConfig(gamma=gamma))
    step = proof_step_check(dataset, fit.beta, beta0, gamma, config.support())
    assert step.holds
    assert step.quadratic >= 0.0
    assert step.in_cone == (step.cone_gap <= 1e-6)
    assert step.gamma_bound >= 0.0


@pytest.mark.parametrize("seed", range(10))
def test_proof_step_holds_for_any_direction(seed):
    rng = np.random.default_rng(seed)
    config = small_config(seed=100 + seed)
    dataset = simulate_dataset(config)
    beta_hat = config.beta0() + rng.uniform(-0.5, 0.5, size=config.p)
    step = proof_step_check(dataset, beta_hat, config.beta0(), 0.1, config.support())
    assert step.holds


def test_tail_study_with_explicit_gammas():
    rows = tail_study(small_config(), [40, 80], reps=100, gammas=[0.05, 5.0], jobs=1)
    assert [(row["n"], row["gamma"]) for row in rows] == [(40, 0.05), (40, 5.0), (80, 0.05), (80, 5.0)]
    assert all(row["probability"] == 0.0 for row in rows if row["gamma"] == 5.0)
    for row in rows:
        assert row["within_bound"] is None or row["bound_union"] <= 1.0


def test_tail_study_schedule_and_errors():
    rows = tail_study(small_config(), [40, 80], reps=100, K2=1.0, alpha=0.5, jobs=1)
    assert len(rows) == 2
    assert rows[0]["gamma"] == pytest.approx(gamma_schedule(40, 5, 1.0, 0.5))
    with pytest.raises(ValueError):
        tail_study(small_config(), [40], reps=100)


def test_epsilon_study_rows():
    config = small_config(p=3, s=1, beta0_values=[0.5])
    population = population_matrix(config, n_big=1000, mc_reps=1, jobs=1)
    rows = epsilon_study(config, [100, 400], reps=5, population=population, jobs=1)
    assert [row["n"] for row in rows] == [100, 400]
    assert all(row["median_eps"] > 0.0 for row in rows)
    assert all(row["max_eps"] >= row["median_eps"] for row in rows)


def test_strictly_decreasing():
    assert strictly_decreasing([3.0, 2.0, 1.0])
    assert not strictly_decreasing([3.0, 3.0, 1.0])
    assert strictly_decreasing([1.0])

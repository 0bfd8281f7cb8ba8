"""
Consistency experiment
Simulates, fits and checks the error bounds on an n grid; writes a JSON report
and a flat per-replication CSV.
"""

import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

from core.queue_manager import get_queue_manager
from services.bounds import (
    BoundConstants,
    as_bound,
    calibrate_k2,
    constants_from_truth,
    epsilon_study,
    l1_lq_bounds,
    l2_error_bound,
    proof_step_check,
    strictly_decreasing,
)
from services.dantzig import FitStatus, SolverConfig, check_alpha, gamma_schedule, solve_dsfph
from services.factors import FactorReport, factor_report, get_factor_options, population_matrix, sup_norm_diff
from services.partial_likelihood import evaluate
from services.survival_sim import SimConfig, derive_seed, simulate_dataset
from utils.io import write_frame_csv, write_json

logger = logging.getLogger(__name__)

STREAM_REPLICATION = 31
CONTRACT_TOL = 1e-6


class ExperimentError(Exception):
    """Raised when too many replications fail"""


class ExperimentConfig(BaseModel):
    """Experiment design; the seed is mandatory"""
    name: str = "experiment"
    seed: int = Field(ge=0)
    sim: SimConfig
    n_grid: List[int] = Field(min_length=1)
    reps: int = Field(ge=1)
    K2: Optional[float] = Field(default=None, gt=0)
    alpha: float = 0.5
    calibration_reps: int = Field(default=200, ge=10)
    calibration_level: float = Field(default=0.95, gt=0, lt=1)
    population_n: int = Field(default=4000, ge=1000)
    population_reps: int = Field(default=4, ge=1)
    factor_preset: str = "fast"
    qs: List[float] = [2.0]
    max_outer: int = Field(default=50, ge=1)
    outer_tol: float = Field(default=1e-6, gt=0)
    epsilon_reps: int = Field(default=0, ge=0)
    enumeration_max_p: int = Field(default=20, ge=0)
    max_failure_rate: float = Field(default=0.10, ge=0, le=1)

    @field_validator("alpha")
    @classmethod
    def _alpha(cls, value: float) -> float:
        return check_alpha(value)

    @field_validator("qs")
    @classmethod
    def _qs(cls, value: List[float]) -> List[float]:
        if any(not q > 1 for q in value):
            raise ValueError("every q in qs must exceed 1")
        return value

    @model_validator(mode="after")
    def _grid(self) -> "ExperimentConfig":
        if any(n < 1 for n in self.n_grid):
            raise ValueError("n_grid entries must be positive")
        get_factor_options(self.factor_preset)
        return self

    def base_sim(self) -> SimConfig:
        return self.sim.with_overrides(seed=self.seed)


class ExperimentReport(BaseModel):
    """Aggregates and per-replication rows of one experiment"""
    config: Dict[str, Any]
    K2: float
    K2_calibrated: bool
    gammas: Dict[str, float]
    constants: BoundConstants
    factors: FactorReport
    population_stderr_sup: float
    aggregates: List[Dict[str, Any]]
    rows: List[Dict[str, Any]]
    failures: int
    median_l2_decreasing: bool
    epsilon: List[Dict[str, Any]] = []


def _rate(flags: List[Optional[bool]]) -> Optional[float]:
    checked = [flag for flag in flags if flag is not None]
    return float(np.mean(checked)) if checked else None


def _replicate(config: ExperimentConfig, base: SimConfig, n: int, rep: int, gamma: float,
               factors: FactorReport, constants: BoundConstants, population: np.ndarray) -> Dict[str, Any]:
    beta0 = base.beta0()
    support = base.support()
    S = len(support)
    seed = derive_seed(config.seed, STREAM_REPLICATION, rep, n)
    dataset = simulate_dataset(base.with_overrides(n=n, seed=seed))
    fit = solve_dsfph(dataset, SolverConfig(gamma=gamma, max_outer=config.max_outer, outer_tol=config.outer_tol))

    h = fit.beta - beta0
    at_truth = evaluate(dataset, beta0)
    feasible = at_truth.score_sup_norm <= gamma
    eps = sup_norm_diff(at_truth.hessian, population)
    l1_error = float(np.abs(h).sum())
    l2_error = float(np.linalg.norm(h))

    row: Dict[str, Any] = {
        "n": n,
        "rep": rep,
        "seed": seed,
        "gamma": gamma,
        "status": fit.status.value,
        "outer_iters": fit.outer_iters,
        "beta0_feasible": feasible,
        "score_at_truth": at_truth.score_sup_norm,
        "eps_n": eps,
        "l1_error": l1_error,
        "l2_error": l2_error,
        "beta_hat_l1": fit.objective,
    }
    for q in config.qs:
        row[f"l{q:g}_error"] = float(np.linalg.norm(h, ord=q))

    l2_bound = l2_error_bound(constants.K4, gamma, factors.re, eps)
    row["l2sq_bound"] = as_bound(l2_bound)
    eligible = feasible and fit.status != FitStatus.INFEASIBLE
    row["l2sq_bound_ok"] = (l2_error ** 2 <= l2_bound) if eligible and l2_bound is not None else None

    for index, q in enumerate(config.qs):
        error_bounds = l1_lq_bounds(constants.K5, S, gamma, factors.kappa, factors.fq(q), q, eps)
        if index == 0:
            row["l1_bound"] = as_bound(error_bounds.l1)
            row["l1_bound_ok"] = (l1_error <= error_bounds.l1) if eligible and error_bounds.l1 is not None else None
        lq_error = row[f"l{q:g}_error"]
        row[f"l{q:g}_bound"] = as_bound(error_bounds.lq)
        row[f"l{q:g}_bound_ok"] = (lq_error <= error_bounds.lq) if eligible and error_bounds.lq is not None else None

    if eligible:
        step = proof_step_check(dataset, fit.beta, beta0, gamma, support)
        row["l1_contract_ok"] = fit.objective <= float(np.abs(beta0).sum()) + CONTRACT_TOL
        row["cone_ok"] = step.in_cone
        row["proof_step_ok"] = step.holds_at_gamma
        row["proof_step_score_ok"] = step.holds
    else:
        row["l1_contract_ok"] = row["cone_ok"] = row["proof_step_ok"] = row["proof_step_score_ok"] = None
    return row


def _aggregate(rows: List[Dict[str, Any]], n_grid: List[int], qs: List[float]) -> List[Dict[str, Any]]:
    aggregates = []
    flag_columns = ["l2sq_bound_ok", "l1_bound_ok", *[f"l{q:g}_bound_ok" for q in qs],
                    "l1_contract_ok", "cone_ok", "proof_step_ok", "proof_step_score_ok"]
    for n in n_grid:
        group = [row for row in rows if row["n"] == n]
        if not group:
            aggregates.append({"n": n, "replications": 0})
            continue
        entry: Dict[str, Any] = {
            "n": n,
            "replications": len(group),
            "median_l2_error": float(np.median([row["l2_error"] for row in group])),
            "median_l1_error": float(np.median([row["l1_error"] for row in group])),
            "median_eps_n": float(np.median([row["eps_n"] for row in group])),
            "beta0_feasible_rate": float(np.mean([row["beta0_feasible"] for row in group])),
            "converged_rate": float(np.mean([row["status"] == FitStatus.CONVERGED.value for row in group])),
        }
        for column in flag_columns:
            entry[f"{column}_rate"] = _rate([row[column] for row in group])
        aggregates.append(entry)
    return aggregates


def run_experiment(config: ExperimentConfig, jobs: Optional[int] = None) -> ExperimentReport:
    """Simulate, fit and check bounds for every (n, replication)"""
    base = config.base_sim()
    beta0 = base.beta0()

    calibrated = config.K2 is None
    K2 = config.K2 if not calibrated else calibrate_k2(
        base.with_overrides(n=config.n_grid[0]), config.alpha,
        level=config.calibration_level, reps=config.calibration_reps, jobs=jobs,
    )
    gammas = {n: gamma_schedule(n, base.p, K2, config.alpha) for n in config.n_grid}

    population = population_matrix(base, beta0, n_big=config.population_n,
                                   mc_reps=config.population_reps, jobs=jobs)
    opts = get_factor_options(config.factor_preset, seed=config.seed)
    enumerable = base.p <= config.enumeration_max_p
    if not enumerable:
        logger.info(f"delta_N and theta not enumerated for p={base.p} > {config.enumeration_max_p}")
    factors = factor_report(population.matrix, base.support(), qs=config.qs, opts=opts,
                            isometry_orders=None if enumerable else [],
                            orthogonality_pairs=None if enumerable else [])
    constants = constants_from_truth(beta0, base.K1, base)
    logger.info(
        f"Factors on the surrogate: kappa={factors.kappa:.4g}, RE={factors.re:.4g}; "
        f"K4={constants.K4:.4g}, K5={constants.K5:.4g}"
    )

    work = [(n, rep) for n in config.n_grid for rep in range(config.reps)]
    tasks = get_queue_manager(jobs).run_batch(
        "replications",
        lambda item: _replicate(config, base, item[0], item[1], gammas[item[0]], factors, constants,
                                population.matrix),
        work,
    )
    rows = [task.result for task in tasks if task.ok]
    failures = len(tasks) - len(rows)
    if failures:
        logger.warning(f"Excluded {failures} failed replications out of {len(tasks)}")
    if failures > config.max_failure_rate * len(tasks):
        raise ExperimentError(
            f"{failures} of {len(tasks)} replications failed, above the "
            f"{config.max_failure_rate:.0%} limit"
        )

    aggregates = _aggregate(rows, config.n_grid, config.qs)
    medians = [entry.get("median_l2_error", math.inf) for entry in aggregates]
    epsilon = (epsilon_study(base, config.n_grid, config.epsilon_reps, population, jobs=jobs)
               if config.epsilon_reps else [])

    report = ExperimentReport(
        config=config.model_dump(mode="json"),
        K2=K2,
        K2_calibrated=calibrated,
        gammas={str(n): gamma for n, gamma in gammas.items()},
        constants=constants,
        factors=factors,
        population_stderr_sup=population.stderr_sup,
        aggregates=aggregates,
        rows=rows,
        failures=failures,
        median_l2_decreasing=strictly_decreasing(medians) if len(medians) > 1 else True,
        epsilon=epsilon,
    )
    logger.info(f"Experiment '{config.name}': {len(rows)} replications, median l2 errors {medians}")
    return report


def write_report(report: ExperimentReport, out_dir) -> List[Path]:
    """report.json and replications.csv inside out_dir"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = write_json(out_dir / "report.json", report.model_dump(mode="json"))
    csv_path = write_frame_csv(out_dir / "replications.csv", pd.DataFrame(report.rows))
    return [json_path, csv_path]


def load_experiment_config(path) -> ExperimentConfig:
    return ExperimentConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))

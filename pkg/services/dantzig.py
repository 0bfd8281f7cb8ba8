"""
Dantzig selector for the proportional hazards model
min ||beta||_1 subject to ||U_n(beta)||_inf <= gamma, solved by sequential
linearization with a simplex LP at every outer step.
"""

import logging
from enum import Enum
from typing import List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from services.partial_likelihood import evaluate
from services.simplex import InfeasibleLPError, LPError, solve_lp
from services.survival_sim import SurvivalDataset

logger = logging.getLogger(__name__)


class SolverConfig(BaseModel):
    """Outer-loop and LP settings for one fit"""
    gamma: float = Field(ge=0)
    max_outer: int = Field(default=50, ge=1)
    outer_tol: float = Field(default=1e-6, gt=0)
    lp_tol: float = Field(default=1e-8, gt=0)
    feasibility_slack: float = Field(default=1e-6, gt=0)
    init: Literal["zero", "warm"] = "zero"
    warm_start: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_init(self) -> "SolverConfig":
        if self.init == "warm" and self.warm_start is None:
            raise ValueError("init='warm' needs warm_start")
        return self

    def warm(self, beta, gamma: Optional[float] = None) -> "SolverConfig":
        """Copy that starts from `beta`"""
        update = {"init": "warm", "warm_start": [float(v) for v in beta]}
        if gamma is not None:
            update["gamma"] = float(gamma)
        return self.model_copy(update=update)


class FitStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    INFEASIBLE = "infeasible"


class TracePoint(BaseModel):
    objective: float
    constraint: float


class EstimateResult(BaseModel):
    """Output of one DSfPH fit"""
    beta_hat: List[float]
    gamma: float
    outer_iters: int
    objective: float
    constraint_value: Optional[float] = None
    trace: List[TracePoint] = []
    status: FitStatus
    max_duality_gap: float = 0.0
    retried_from_zero: bool = False
    error: Optional[str] = None

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.beta_hat, dtype=float)


class LocalOptimalityReport(BaseModel):
    points_tried: int
    feasible_points: int
    best_improvement: float
    passed: bool


def check_alpha(alpha: float) -> float:
    if not 0 < alpha <= 0.5:
        raise ValueError(f"constraint exponent assumption violated: alpha={alpha} is outside (0, 1/2]")
    return alpha


def gamma_schedule(n: int, p: int, K2: float, alpha: float) -> float:
    """gamma_{n,p} = K2 log(1 + p) / n^alpha"""
    if n < 1 or p < 1:
        raise ValueError(f"n and p must be positive, got n={n}, p={p}")
    if not K2 > 0:
        raise ValueError(f"K2 must be positive, got {K2}")
    check_alpha(alpha)
    return float(K2 * np.log1p(p) / n ** alpha)


def _dantzig_lp(G: np.ndarray, r: np.ndarray, gamma: float):
    # x = [beta+, beta-, s_upper, s_lower] >= 0
    #  G beta + s_upper = r + gamma
    # -G beta + s_lower = gamma - r
    p = r.shape[0]
    eye = np.eye(p)
    zero = np.zeros((p, p))
    A = np.block([[G, -G, eye, zero], [-G, G, zero, eye]])
    b = np.concatenate((r + gamma, gamma - r))
    c = np.concatenate((np.ones(2 * p), np.zeros(2 * p)))
    try:
        lp = solve_lp(c, A, b)
    except InfeasibleLPError as e:
        raise InfeasibleLPError(f"infeasible at gamma={gamma:.6g}: {e}") from e
    return lp.x[:p] - lp.x[p:2 * p], lp


def l1_min_under_linf(G, r, gamma: float, lp_tol: float = 1e-8) -> np.ndarray:
    """Solve min ||beta||_1 subject to ||r - G beta||_inf <= gamma"""
    beta, _ = _l1_min_checked(G, r, gamma, lp_tol)
    return beta


def _l1_min_checked(G, r, gamma: float, lp_tol: float):
    G = np.asarray(G, dtype=float)
    r = np.asarray(r, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] != r.shape[0]:
        raise ValueError(f"G must be p x p and r of length p, got {G.shape} and {r.shape}")
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(r))):
        raise ValueError("G and r must be finite")

    beta, lp = _dantzig_lp(G, r, float(gamma))
    if lp.relative_gap > lp_tol:
        raise LPError(f"duality gap {lp.duality_gap:.3e} exceeds lp_tol={lp_tol:g}")
    return beta, lp


def solve_dsfph(dataset: SurvivalDataset, config: SolverConfig) -> EstimateResult:
    """
    Outer linearization: at beta_k solve the LP with G = J_n(beta_k) and
    r = U_n(beta_k) + J_n(beta_k) beta_k, stop when the step is below
    outer_tol, then certify the true constraint ||U_n(beta_hat)||_inf.
    """
    p = dataset.p
    gamma = config.gamma
    zero = np.zeros(p)
    beta = zero.copy() if config.init == "zero" else np.asarray(config.warm_start, dtype=float)
    if beta.shape != (p,):
        raise ValueError(f"warm_start has length {beta.shape[0]}, expected {p}")

    current = evaluate(dataset, beta)
    trace: List[TracePoint] = []
    max_gap = 0.0
    retried = False
    settled = False
    error = None
    iterations = 0

    while iterations < config.max_outer:
        iterations += 1
        G = current.hessian
        r = current.score + G @ beta
        try:
            candidate, lp = _l1_min_checked(G, r, gamma, config.lp_tol)
        except LPError as e:
            if not retried and np.any(beta != 0):
                logger.warning(f"LP failed at outer step {iterations} ({e}); retrying from zero")
                retried = True
                beta = zero.copy()
                current = evaluate(dataset, beta)
                continue
            error = str(e)
            logger.warning(f"DSfPH stopped at outer step {iterations}: {e}")
            break

        max_gap = max(max_gap, lp.duality_gap)
        step = float(np.max(np.abs(candidate - beta))) if p else 0.0
        beta = candidate
        current = evaluate(dataset, beta)
        trace.append(TracePoint(objective=float(np.abs(beta).sum()), constraint=current.score_sup_norm))
        logger.debug(
            f"outer {iterations}: |beta|_1={trace[-1].objective:.6g} "
            f"|U|_inf={trace[-1].constraint:.6g} step={step:.2e}"
        )
        if step <= config.outer_tol:
            settled = True
            break

    constraint_value = current.score_sup_norm
    if error is not None or constraint_value > gamma + config.feasibility_slack:
        status = FitStatus.INFEASIBLE
    elif settled:
        status = FitStatus.CONVERGED
    else:
        status = FitStatus.MAX_ITERS

    result = EstimateResult(
        beta_hat=beta.tolist(),
        gamma=gamma,
        outer_iters=iterations,
        objective=float(np.abs(beta).sum()),
        constraint_value=constraint_value,
        trace=trace,
        status=status,
        max_duality_gap=max_gap,
        retried_from_zero=retried,
        error=error,
    )
    logger.info(
        f"DSfPH gamma={gamma:.4g}: {status.value} after {iterations} outer steps, "
        f"|beta|_1={result.objective:.4g}, |U|_inf={constraint_value:.4g}"
    )
    return result


def objective_monotone(results: Sequence[EstimateResult], tol: float = 1e-8) -> bool:
    """True when ||beta_hat||_1 is non-increasing in gamma along the grid"""
    ordered = sorted(results, key=lambda res: res.gamma)
    objectives = [res.objective for res in ordered]
    return all(a >= b - tol for a, b in zip(objectives, objectives[1:]))


def gamma_grid_fit(dataset: SurvivalDataset, gammas: Sequence[float],
                   config: SolverConfig) -> List[EstimateResult]:
    """Warm-started sweep over a descending gamma grid"""
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ValueError("gamma grid is empty")
    if any(later > earlier for earlier, later in zip(gammas, gammas[1:])):
        raise ValueError("gamma grid must be sorted in descending order")

    results: List[EstimateResult] = []
    step_config = config.model_copy(update={"gamma": gammas[0]})
    for gamma in gammas:
        try:
            result = solve_dsfph(dataset, step_config.model_copy(update={"gamma": gamma}))
        except Exception as e:
            logger.error(f"Grid point gamma={gamma:.4g} failed: {e}")
            start = step_config.warm_start or [0.0] * dataset.p
            result = EstimateResult(
                beta_hat=list(start), gamma=gamma, outer_iters=0,
                objective=float(np.abs(start).sum()),
                status=FitStatus.INFEASIBLE, error=str(e),
            )
        results.append(result)
        if result.error is None:
            step_config = step_config.warm(result.beta_hat)

    if not objective_monotone([res for res in results if res.error is None]):
        logger.warning("||beta_hat||_1 is not monotone in gamma along the grid")
    return results


def cone_gap(beta_hat, beta0, support: Sequence[int]) -> float:
    """||h_{T0^c}||_1 - ||h_{T0}||_1 for h = beta_hat - beta0"""
    h = np.asarray(beta_hat, dtype=float) - np.asarray(beta0, dtype=float)
    on = np.zeros(h.shape[0], dtype=bool)
    on[list(support)] = True
    return float(np.abs(h[~on]).sum() - np.abs(h[on]).sum())


def cone_membership(beta_hat, beta0, support: Sequence[int], tol: float = 1e-6) -> bool:
    return cone_gap(beta_hat, beta0, support) <= tol


def local_optimality_check(dataset: SurvivalDataset, result: EstimateResult,
                           n_points: int = 1000, radius: float = 1e-3,
                           slack: float = 1e-6, tol: float = 1e-4,
                           seed: int = 0, bisections: int = 30) -> LocalOptimalityReport:
    """
    Perturb beta_hat at random, pull infeasible points back toward beta_hat
    by bisection, and look for a feasible point with a smaller l1 norm.
    """
    rng = np.random.default_rng(seed)
    beta_hat = result.beta
    limit = result.gamma + slack
    base = float(np.abs(beta_hat).sum())

    def feasible(beta) -> bool:
        return evaluate(dataset, beta, with_hessian=False).score_sup_norm <= limit

    best = np.inf
    n_feasible = 0
    for _ in range(n_points):
        direction = rng.standard_normal(dataset.p)
        target = beta_hat + radius * direction / np.linalg.norm(direction)
        if not feasible(target):
            lo, hi = 0.0, 1.0
            for _ in range(bisections):
                mid = 0.5 * (lo + hi)
                if feasible(beta_hat + mid * (target - beta_hat)):
                    lo = mid
                else:
                    hi = mid
            if lo == 0.0:
                continue
            target = beta_hat + lo * (target - beta_hat)
        n_feasible += 1
        best = min(best, float(np.abs(target).sum()) - base)

    best = float(best) if np.isfinite(best) else 0.0
    return LocalOptimalityReport(
        points_tried=n_points,
        feasible_points=n_feasible,
        best_improvement=best,
        passed=best >= -tol,
    )

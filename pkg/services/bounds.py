"""
Error and tail bounds for the proportional hazards Dantzig selector
Proof constants, the exponential tail bound for ||U_n(beta0)||_inf, the l2/l1/lq
error bounds, and their Monte Carlo counterparts.
"""

import logging
import math
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel
from scipy.stats import binomtest

from core.queue_manager import get_queue_manager
from services.dantzig import check_alpha, cone_gap, gamma_schedule
from services.factors import PopulationMatrix, sup_norm_diff
from services.partial_likelihood import evaluate
from services.survival_sim import SimConfig, SurvivalDataset, derive_seed, integrated_baseline, simulate_dataset

logger = logging.getLogger(__name__)

VACUOUS = "vacuous"
MIN_TAIL_REPS = 100
CONFIDENCE = 0.95

STREAM_TAIL = 21
STREAM_CALIBRATION = 22
STREAM_EPSILON = 23

BoundValue = Union[float, str]


class BoundConstants(BaseModel):
    K3: float
    K4: float
    K5: float


class TailBound(BaseModel):
    """Single-coordinate bound and its union over p coordinates"""
    single: float
    union: float


class TailEstimate(BaseModel):
    """Empirical P(||U_n(beta0)||_inf >= gamma) with an exact binomial interval"""
    n: int
    gamma: float
    reps: int
    exceedances: int
    probability: float
    ci_low: float
    ci_high: float

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


class ErrorBounds(BaseModel):
    l1: Optional[float] = None
    lq: Optional[float] = None
    q: float


class ProofStepCheck(BaseModel):
    """Inequalities used on the event ||U_n(beta0)||_inf <= gamma"""
    cone_gap: float
    in_cone: bool
    quadratic: float
    eta: float
    score_bound: float
    gamma_bound: float
    holds: bool
    holds_at_gamma: bool


def as_bound(value: Optional[float]) -> BoundValue:
    """None means the bound is vacuous"""
    return VACUOUS if value is None else float(value)


def constants_from_truth(beta0, K1: float, sim_config: SimConfig) -> BoundConstants:
    """K3 = 4 K1^2 exp(K1 ||beta0||_1) int alpha0, K4 = 4 ||beta0||_1 exp(4 K1 ||beta0||_1), K5 = 2 exp(4 K1 ||beta0||_1)"""
    l1 = float(np.abs(np.asarray(beta0, dtype=float)).sum())
    growth = math.exp(4.0 * K1 * l1)
    return BoundConstants(
        K3=4.0 * K1 ** 2 * math.exp(K1 * l1) * integrated_baseline(sim_config),
        K4=4.0 * l1 * growth,
        K5=2.0 * growth,
    )


def tail_bound(gamma: float, n: int, K1: float, K3: float, p: int = 1) -> TailBound:
    """2 exp(-gamma^2 / (2 (2 K1 gamma / n + K3 / n))), and min(1, p times that)"""
    if gamma < 0 or n < 1 or K1 <= 0 or K3 <= 0:
        raise ValueError("tail_bound needs gamma >= 0, n >= 1, K1 > 0, K3 > 0")
    single = 2.0 * math.exp(-gamma ** 2 / (2.0 * (2.0 * K1 * gamma / n + K3 / n)))
    return TailBound(single=single, union=min(1.0, p * single))


def score_norms(sim_config: SimConfig, reps: int, stream: int = STREAM_TAIL,
                jobs: Optional[int] = None) -> np.ndarray:
    """||U_n(beta0)||_inf over independent replications"""
    beta0 = sim_config.beta0()

    def one(index: int) -> float:
        config = sim_config.with_overrides(seed=derive_seed(sim_config.seed, stream, index, sim_config.n))
        return evaluate(simulate_dataset(config), beta0, with_hessian=False).score_sup_norm

    return np.asarray(get_queue_manager(jobs).map(f"score-n{sim_config.n}", one, range(reps)))


def _tail_estimate(norms: np.ndarray, n: int, gamma: float) -> TailEstimate:
    exceed = int(np.sum(norms >= gamma))
    interval = binomtest(exceed, norms.size).proportion_ci(confidence_level=CONFIDENCE, method="exact")
    return TailEstimate(
        n=n, gamma=gamma, reps=int(norms.size), exceedances=exceed,
        probability=exceed / norms.size, ci_low=float(interval.low), ci_high=float(interval.high),
    )


def mc_score_tail(sim_config: SimConfig, gamma: float, reps: int, jobs: Optional[int] = None) -> TailEstimate:
    """Fraction of replications with ||U_n(beta0)||_inf >= gamma"""
    if reps < MIN_TAIL_REPS:
        raise ValueError(f"mc_score_tail needs at least {MIN_TAIL_REPS} replications, got {reps}")
    return _tail_estimate(score_norms(sim_config, reps, jobs=jobs), sim_config.n, float(gamma))


def calibrate_k2(sim_config: SimConfig, alpha: float, level: float = CONFIDENCE, reps: int = 200,
                 jobs: Optional[int] = None) -> float:
    """K2 putting gamma_schedule(n, p, K2, alpha) at the `level` quantile of ||U_n(beta0)||_inf"""
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    check_alpha(alpha)
    norms = score_norms(sim_config, reps, stream=STREAM_CALIBRATION, jobs=jobs)
    quantile = float(np.quantile(norms, level))
    K2 = quantile * sim_config.n ** alpha / math.log1p(sim_config.p)
    logger.info(f"Calibrated K2={K2:.4g} at n={sim_config.n} ({level:.0%} quantile {quantile:.4g})")
    return K2


def l2_error_bound(K4: float, gamma: float, re: float, eps_n: float) -> Optional[float]:
    """K4 gamma / (RE^2 - eps_n) for ||beta_hat - beta0||_2^2, None when vacuous"""
    denominator = re ** 2 - eps_n
    if denominator <= 0:
        return None
    return K4 * gamma / denominator


def l1_lq_bounds(K5: float, S: int, gamma: float, kappa: float, f_q: float, q: float,
                 eps_n: float) -> ErrorBounds:
    """
    l1: 4 K5 S gamma / (kappa^2 - 4 S eps_n).
    lq: (2 S^(1/q) eps_n / F_q) (2 K5 S gamma / (kappa^2 - 2 S eps_n)) + 2 K5 S^(1/q) gamma / F_q.
    """
    if not q > 1:
        raise ValueError(f"the lq bound needs q > 1, got {q}")
    kappa_sq = kappa ** 2
    l1 = 4.0 * K5 * S * gamma / (kappa_sq - 4.0 * S * eps_n) if kappa_sq > 4.0 * S * eps_n else None
    lq = None
    if kappa_sq > 2.0 * S * eps_n and f_q > 0:
        root = S ** (1.0 / q)
        lq = (2.0 * root * eps_n / f_q) * (2.0 * K5 * S * gamma / (kappa_sq - 2.0 * S * eps_n)) \
            + 2.0 * K5 * root * gamma / f_q
    return ErrorBounds(l1=l1, lq=lq, q=q)


def proof_step_check(dataset: SurvivalDataset, beta_hat, beta0, gamma: float,
                     support: Sequence[int], rel_tol: float = 1e-8) -> ProofStepCheck:
    """
    h = beta_hat - beta0 lies in the cone and
    h'J_n(beta0)h <= exp(eta_h) (||U_n(beta_hat)||_inf + ||U_n(beta0)||_inf) ||h||_1,
    which is at most exp(eta_h) 2 gamma ||h||_1 on the feasibility event.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    h = beta_hat - beta0
    projections = dataset.covariates @ h
    eta = float(projections.max() - projections.min())
    quadratic = max(float(h @ evaluate(dataset, beta0).hessian @ h), 0.0)
    l1 = float(np.abs(h).sum())
    score_sum = (evaluate(dataset, beta_hat, with_hessian=False).score_sup_norm
                 + evaluate(dataset, beta0, with_hessian=False).score_sup_norm)
    score_bound = math.exp(eta) * score_sum * l1
    gamma_bound = math.exp(eta) * 2.0 * gamma * l1
    gap = cone_gap(beta_hat, beta0, support)
    return ProofStepCheck(
        cone_gap=gap,
        in_cone=gap <= 1e-6,
        quadratic=quadratic,
        eta=eta,
        score_bound=score_bound,
        gamma_bound=gamma_bound,
        holds=quadratic <= score_bound * (1.0 + rel_tol) + 1e-12,
        holds_at_gamma=quadratic <= gamma_bound * (1.0 + rel_tol) + 1e-12,
    )


def tail_study(sim_config: SimConfig, ns: Sequence[int], reps: int, K2: Optional[float] = None,
               alpha: float = 0.5, gammas: Optional[Sequence[float]] = None,
               jobs: Optional[int] = None) -> List[dict]:
    """
    Empirical tail against the union bound on an n grid; gamma follows the
    schedule unless explicit gammas are given, in which case every (n, gamma)
    pair is checked.
    """
    if gammas is None and K2 is None:
        raise ValueError("tail_study needs either gammas or K2")
    constants = constants_from_truth(sim_config.beta0(), sim_config.K1, sim_config)
    rows = []
    for n in ns:
        config = sim_config.with_overrides(n=int(n))
        norms = score_norms(config, reps, jobs=jobs)
        grid = list(gammas) if gammas is not None else [gamma_schedule(n, config.p, K2, alpha)]
        for gamma in grid:
            estimate = _tail_estimate(norms, int(n), float(gamma))
            bound = tail_bound(float(gamma), int(n), config.K1, constants.K3, config.p)
            rows.append({
                **estimate.model_dump(),
                "bound_single": bound.single,
                "bound_union": bound.union,
                "within_bound": (estimate.probability <= bound.union + estimate.half_width
                                 if bound.union <= 1.0 else None),
            })
    if gammas is None:
        probabilities = [row["probability"] for row in rows]
        if any(later > earlier for earlier, later in zip(probabilities, probabilities[1:])):
            logger.warning("empirical tail probability increases along the n grid")
    return rows


def epsilon_study(sim_config: SimConfig, ns: Sequence[int], reps: int, population: PopulationMatrix,
                  jobs: Optional[int] = None) -> List[dict]:
    """Median of ||J_n(beta0) - I_hat||_inf per n"""
    beta0 = sim_config.beta0()
    rows = []
    for n in ns:
        def one(index: int, n: int = int(n)) -> float:
            config = sim_config.with_overrides(n=n, seed=derive_seed(sim_config.seed, STREAM_EPSILON, index, n))
            return sup_norm_diff(evaluate(simulate_dataset(config), beta0).hessian, population.matrix)

        eps = np.asarray(get_queue_manager(jobs).map(f"epsilon-n{n}", one, range(reps)))
        rows.append({
            "n": int(n),
            "reps": reps,
            "median_eps": float(np.median(eps)),
            "mean_eps": float(np.mean(eps)),
            "max_eps": float(np.max(eps)),
        })
        logger.info(f"eps_n at n={n}: median {rows[-1]['median_eps']:.4g}")
    return rows


def strictly_decreasing(values: Sequence[float]) -> bool:
    return all(later < earlier for earlier, later in zip(values, values[1:]))

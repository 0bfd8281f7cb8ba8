"""
Cox partial likelihood kernels
Log partial likelihood, score U_n, information J_n and the sandwich diagnostic.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, NamedTuple, Optional

import numpy as np

from services.survival_sim import SurvivalDataset, event_order

logger = logging.getLogger(__name__)


class EmptyRiskSetError(Exception):
    """Raised when nobody is at risk at the requested time"""


@dataclass(frozen=True)
class LikelihoodSnapshot:
    """Risk-set moments S0, S1, S2 at one time point"""
    s0: float
    s1: np.ndarray
    s2: np.ndarray
    at_time: float

    @property
    def weighted_mean(self) -> np.ndarray:
        return self.s1 / self.s0


@dataclass(frozen=True)
class ScoreHessian:
    """l_n(beta), U_n(beta) and J_n(beta); hessian is None when not requested"""
    score: np.ndarray
    hessian: Optional[np.ndarray]
    loglik: float

    @property
    def score_sup_norm(self) -> float:
        return float(np.max(np.abs(self.score))) if self.score.size else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "loglik": self.loglik,
            "score": self.score.tolist(),
            "hessian": None if self.hessian is None else self.hessian.tolist(),
        }


class SandwichResult(NamedTuple):
    lower: float
    middle: float
    upper: float
    eta: float

    def holds(self, rel_tol: float = 1e-8) -> bool:
        slack = rel_tol * (1.0 + self.upper)
        return self.lower - slack <= self.middle <= self.upper + slack


def _check_beta(dataset: SurvivalDataset, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dataset.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({dataset.p},)")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return beta


def _centered_covariates(dataset: SurvivalDataset) -> np.ndarray:
    # Shifting Z by a constant vector leaves l_n, U_n and J_n unchanged;
    # the column median keeps identical columns exactly zero.
    return dataset.covariates - np.median(dataset.covariates, axis=0)


def snapshot(dataset: SurvivalDataset, beta, t: float) -> LikelihoodSnapshot:
    """Exact sums over the risk set {i : X_i >= t}"""
    beta = _check_beta(dataset, beta)
    at_risk = dataset.time >= t
    if not at_risk.any():
        raise EmptyRiskSetError(f"empty risk set at t={t}")
    z = dataset.covariates[at_risk]
    weights = np.exp(z @ beta)
    s2 = (z * weights[:, None]).T @ z
    return LikelihoodSnapshot(
        s0=float(weights.sum()),
        s1=z.T @ weights,
        s2=0.5 * (s2 + s2.T),
        at_time=float(t),
    )


def evaluate(dataset: SurvivalDataset, beta, with_hessian: bool = True) -> ScoreHessian:
    """
    One pass over the ordered events.

    Risk-set sums come from reverse cumulative sums over subjects sorted by
    follow-up time; weights are exp(Z beta - max Z beta).
    """
    beta = _check_beta(dataset, beta)
    n = dataset.n
    z = _centered_covariates(dataset)
    events = event_order(dataset)

    linear = z @ beta
    shift = float(linear.max())
    weights = np.exp(linear - shift)

    ascending = np.argsort(dataset.time, kind="stable")
    sorted_time = dataset.time[ascending]
    s0_tail = np.cumsum(weights[ascending][::-1])[::-1]
    s1_tail = np.cumsum((z * weights[:, None])[ascending][::-1], axis=0)[::-1]

    first_at_risk = np.searchsorted(sorted_time, events.times, side="left")
    s0 = s0_tail[first_at_risk]
    means = s1_tail[first_at_risk] / s0[:, None]

    loglik = float(np.sum(linear[events.subjects] - shift - np.log(s0))) / n
    score = (z[events.subjects] - means).sum(axis=0) / n

    hessian = None
    if with_hessian:
        # subject i contributes to every event with t_e <= X_i
        cumulative_inverse = np.concatenate(([0.0], np.cumsum(1.0 / s0)))
        n_events_before = np.searchsorted(events.times, dataset.time, side="right")
        risk_weight = weights * cumulative_inverse[n_events_before]
        second_moment = z.T @ (z * risk_weight[:, None])
        hessian = (second_moment - means.T @ means) / n
        hessian = 0.5 * (hessian + hessian.T)

    return ScoreHessian(score=score, hessian=hessian, loglik=loglik)


def log_partial_likelihood(dataset: SurvivalDataset, beta) -> float:
    return evaluate(dataset, beta, with_hessian=False).loglik


def score_sup_norm(dataset: SurvivalDataset, beta) -> float:
    """||U_n(beta)||_inf"""
    return evaluate(dataset, beta, with_hessian=False).score_sup_norm


def sandwich_check(dataset: SurvivalDataset, beta, h) -> SandwichResult:
    """
    Both sides of exp(-eta) h'J h <= |h'[U(beta+h) - U(beta)]| <= exp(eta) h'J h,
    with eta = max_ij |h'Z_i - h'Z_j|.
    """
    beta = _check_beta(dataset, beta)
    h = _check_beta(dataset, h)
    projections = dataset.covariates @ h
    eta = float(projections.max() - projections.min())

    base = evaluate(dataset, beta)
    moved = evaluate(dataset, beta + h, with_hessian=False)
    quadratic = max(float(h @ base.hessian @ h), 0.0)
    middle = abs(float(h @ (moved.score - base.score)))
    return SandwichResult(
        lower=float(np.exp(-eta) * quadratic),
        middle=middle,
        upper=float(np.exp(eta) * quadratic),
        eta=eta,
    )

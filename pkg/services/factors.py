"""
Cone-restricted matrix factors
Compatibility, weak cone invertibility, restricted eigenvalue and phi_2S by
projected descent plus a sampling oracle; restricted isometry and orthogonality
constants by subset enumeration; the Monte Carlo surrogate for I_n(beta0).
"""

import logging
import math
from dataclasses import dataclass
from itertools import combinations, islice
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from core.queue_manager import get_queue_manager
from services.partial_likelihood import evaluate
from services.survival_sim import SimConfig, derive_seed, simulate_dataset

logger = logging.getLogger(__name__)

ENUMERATION_BUDGET = 1_000_000
EXACT_PHI_MAX_P = 20
Q_INF_SURROGATE = 64.0
DEFAULT_QS = (1.0, 2.0, 4.0, Q_INF_SURROGATE)
MIN_POPULATION_N = 1000
UUP_TRIGGER = 0.05

# seed streams
STREAM_POPULATION = 11
_STREAM_KAPPA = 1
_STREAM_FQ = 2
_STREAM_RE = 3
_STREAM_PHI = 4
_STREAM_SUBSETS = 5

_BATCH = 4096


class EnumerationBudgetError(Exception):
    """Raised when exact subset enumeration would exceed the budget"""


class SupportSet(BaseModel):
    """Sorted 0-based coordinate indices T0 inside {0, ..., p-1}"""
    indices: List[int]
    p: int = Field(ge=1)

    @model_validator(mode="after")
    def _check(self) -> "SupportSet":
        if not self.indices:
            raise ValueError("support set must be nonempty")
        if list(self.indices) != sorted(set(self.indices)):
            raise ValueError("support indices must be sorted and distinct")
        if self.indices[0] < 0 or self.indices[-1] >= self.p:
            raise ValueError(f"support indices must lie in [0, {self.p - 1}]")
        return self

    @property
    def size(self) -> int:
        return len(self.indices)

    def mask(self) -> np.ndarray:
        mask = np.zeros(self.p, dtype=bool)
        mask[self.indices] = True
        return mask

    @classmethod
    def from_beta(cls, beta, tol: float = 0.0) -> "SupportSet":
        beta = np.asarray(beta, dtype=float)
        return cls(indices=[int(j) for j in np.flatnonzero(np.abs(beta) > tol)], p=beta.shape[0])


class FactorOptions(BaseModel):
    """Optimizer and enumeration settings"""
    restarts: int = Field(default=64, ge=1)
    max_iter: int = Field(default=300, ge=1)
    oracle_samples: int = Field(default=100_000, ge=0)
    seed: int = Field(default=0, ge=0)
    sampled: bool = False
    sample_subsets: int = Field(default=20_000, ge=1)


FACTOR_PRESETS: Dict[str, FactorOptions] = {
    "fast": FactorOptions(restarts=8, max_iter=150, oracle_samples=5_000),
    "default": FactorOptions(),
    "thorough": FactorOptions(restarts=256, max_iter=1_000, oracle_samples=1_000_000),
}


def get_factor_options(preset: str = "default", **overrides) -> FactorOptions:
    """Preset options with optional field overrides"""
    if preset not in FACTOR_PRESETS:
        raise ValueError(f"unknown factor preset {preset!r}; choose from {sorted(FACTOR_PRESETS)}")
    return FACTOR_PRESETS[preset].model_copy(update=overrides)


@dataclass
class FactorValue:
    """Best value found for one cone infimum"""
    value: float
    descent_value: float
    oracle_value: float
    minimizer: np.ndarray
    restarts: int

    @property
    def oracle_gap(self) -> float:
        return self.oracle_value - self.descent_value

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "descent_value": self.descent_value,
            "oracle_value": None if not np.isfinite(self.oracle_value) else self.oracle_value,
            "restarts": self.restarts,
            "minimizer": self.minimizer.tolist(),
        }


@dataclass
class EnumeratedConstant:
    """delta_N or theta_{S,S'} with its enumeration coverage"""
    value: float
    checked: int
    total: int
    exact: bool

    @property
    def coverage(self) -> float:
        return min(1.0, self.checked / self.total) if self.total else 1.0


class FactorReport(BaseModel):
    """Every factor of one matrix and support; maps are keyed by strings for JSON"""
    support: List[int]
    S: int
    p: int
    kappa: float
    f_q: Dict[str, float]
    re: float
    phi_2s: Optional[float] = None
    delta_n: Dict[str, float] = {}
    theta: Dict[str, float] = {}
    uup_margin: Optional[float] = None
    diagnostics: Dict[str, Any] = {}

    def fq(self, q: float) -> float:
        return self.f_q[q_key(q)]


def q_key(q: float) -> str:
    return f"{float(q):g}"


# ---------------------------------------------------------------------------
# Input checks
# ---------------------------------------------------------------------------

def _check_matrix(matrix) -> np.ndarray:
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix must be finite")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (M + M.T)


def _support_mask(T0: Union[SupportSet, Sequence[int]], p: int) -> np.ndarray:
    support = T0 if isinstance(T0, SupportSet) else SupportSet(indices=sorted(int(j) for j in T0), p=p)
    if support.p != p:
        raise ValueError(f"support set is for p={support.p}, matrix has p={p}")
    return support.mask()


def _rng(opts: FactorOptions, stream: int, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng([opts.seed, stream, extra])


# ---------------------------------------------------------------------------
# Objectives: each maps a batch H (rows are directions) to values, and to the
# gradient of the log objective. All are homogeneous of degree 0 in h.
# ---------------------------------------------------------------------------

def _quadratic(M: np.ndarray, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    A = H @ M
    return np.maximum(np.einsum("ij,ij->i", A, H), 0.0), A


def _finite(values: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(values), values, np.inf)


def _log_quad_grad(Q: np.ndarray, A: np.ndarray) -> np.ndarray:
    # gradient of 0.5 log(h'Mh); rows with h'Mh = 0 already sit at the minimum
    safe = np.where(Q > 0, Q, 1.0)
    return np.where((Q > 0)[:, None], A / safe[:, None], 0.0)


def _top_mask(H: np.ndarray, mask: np.ndarray, S: int) -> np.ndarray:
    """Row-wise T0 plus the S largest |h_j| outside T0"""
    outside = np.flatnonzero(~mask)
    tmask = np.broadcast_to(mask, H.shape).copy()
    if outside.size:
        k = min(S, outside.size)
        order = np.argsort(-np.abs(H[:, outside]), axis=1, kind="stable")[:, :k]
        rows = np.arange(H.shape[0])[:, None]
        tmask[rows, outside[order]] = True
    return tmask


@dataclass
class _Objective:
    values: Callable[[np.ndarray], np.ndarray]
    log_grad: Callable[[np.ndarray], np.ndarray]
    normalize: Callable[[np.ndarray], np.ndarray]


def _normalizer(weights: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    def normalize(H: np.ndarray) -> np.ndarray:
        norms = weights(H)
        return H / np.where(norms > 0, norms, 1.0)[:, None]
    return normalize


def _kappa_objective(M: np.ndarray, mask: np.ndarray) -> _Objective:
    S = int(mask.sum())

    def on_support_l1(H):
        return np.abs(H[:, mask]).sum(axis=1)

    def values(H):
        Q, _ = _quadratic(M, H)
        with np.errstate(divide="ignore", invalid="ignore"):
            return _finite(np.sqrt(S * Q) / on_support_l1(H))

    def log_grad(H):
        Q, A = _quadratic(M, H)
        l1 = np.maximum(on_support_l1(H), 1e-300)
        return _log_quad_grad(Q, A) - np.sign(H) * mask / l1[:, None]

    return _Objective(values, log_grad, _normalizer(on_support_l1))


def _fq_objective(M: np.ndarray, mask: np.ndarray, q: float) -> _Objective:
    S = int(mask.sum())

    def on_support_l1(H):
        return np.abs(H[:, mask]).sum(axis=1)

    def lq(H):
        return np.linalg.norm(H, ord=q, axis=1)

    def values(H):
        Q, _ = _quadratic(M, H)
        with np.errstate(divide="ignore", invalid="ignore"):
            return _finite(S ** (1.0 / q) * Q / (on_support_l1(H) * lq(H)))

    def log_grad(H):
        Q, A = _quadratic(M, H)
        l1 = np.maximum(on_support_l1(H), 1e-300)
        norm_q = np.maximum(lq(H), 1e-300)
        lq_grad = np.sign(H) * (np.abs(H) / norm_q[:, None]) ** (q - 1.0) / norm_q[:, None]
        return 2.0 * _log_quad_grad(Q, A) - np.sign(H) * mask / l1[:, None] - lq_grad

    return _Objective(values, log_grad, _normalizer(on_support_l1))


def _ratio_objective(M: np.ndarray, denominator_mask: Callable[[np.ndarray], np.ndarray]) -> _Objective:
    """sqrt(h'Mh) / ||h_T||_2 with T chosen row-wise by `denominator_mask`"""

    def restricted(H):
        return np.where(denominator_mask(H), H, 0.0)

    def values(H):
        Q, _ = _quadratic(M, H)
        with np.errstate(divide="ignore", invalid="ignore"):
            return _finite(np.sqrt(Q) / np.linalg.norm(restricted(H), axis=1))

    def log_grad(H):
        Q, A = _quadratic(M, H)
        HT = restricted(H)
        sq = np.maximum(np.einsum("ij,ij->i", HT, HT), 1e-300)
        return _log_quad_grad(Q, A) - HT / sq[:, None]

    return _Objective(values, log_grad, _normalizer(lambda H: np.linalg.norm(H, axis=1)))


def _re_objective(M: np.ndarray) -> _Objective:
    return _ratio_objective(M, lambda H: np.ones(H.shape, dtype=bool))


def _phi_objective(M: np.ndarray, mask: np.ndarray) -> _Objective:
    S = int(mask.sum())
    return _ratio_objective(M, lambda H: _top_mask(H, mask, S))


def _phi_fixed_objective(M: np.ndarray, tmask: np.ndarray) -> _Objective:
    return _ratio_objective(M, lambda H: np.broadcast_to(tmask, H.shape))


# ---------------------------------------------------------------------------
# Feasible sets
# ---------------------------------------------------------------------------

def _cone_retraction(mask: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Scale h_{T0^c} down until ||h_{T0^c}||_1 <= ||h_{T0}||_1"""
    def retract(H: np.ndarray) -> np.ndarray:
        inside = np.abs(H[:, mask]).sum(axis=1)
        outside = np.abs(H[:, ~mask]).sum(axis=1)
        scale = np.where(outside > inside, inside / np.where(outside > 0, outside, 1.0), 1.0)
        H = H.copy()
        H[:, ~mask] *= scale[:, None]
        return H
    return retract


def _d_retraction(mask: np.ndarray, tmask: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Clip h_{T^c} to min_{T minus T0} |h_j|, then retract onto the cone"""
    extra = tmask & ~mask
    cone = _cone_retraction(mask)

    def retract(H: np.ndarray) -> np.ndarray:
        H = H.copy()
        if extra.any():
            cap = np.abs(H[:, extra]).min(axis=1)[:, None]
            H[:, ~tmask] = np.clip(H[:, ~tmask], -cap, cap)
        return cone(H)
    return retract


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def _starts(rng: np.random.Generator, mask: np.ndarray, count: int) -> np.ndarray:
    """Structured starts first (equal magnitudes on T0, single coordinates), then random"""
    p = mask.shape[0]
    rows = [mask.astype(float)]
    for j in np.flatnonzero(mask):
        e = np.zeros(p)
        e[j] = 1.0
        rows.append(e)
    structured = np.array(rows[:count])
    n_random = count - structured.shape[0]
    if n_random <= 0:
        return structured
    random = rng.standard_normal((n_random, p))
    random[:, ~mask] *= rng.uniform(0.0, 1.0, size=(n_random, 1))
    return np.vstack((structured, random))


def _descend(objective: _Objective, retract, H0: np.ndarray, max_iter: int) -> Tuple[float, np.ndarray]:
    """Projected descent on log f with a per-restart step that grows on success and halves on failure"""
    H = objective.normalize(retract(H0))
    vals = objective.values(H)
    step = np.full(H.shape[0], 0.1)
    for _ in range(max_iter):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            grad = np.nan_to_num(objective.log_grad(H), nan=0.0, posinf=0.0, neginf=0.0)
            trial = objective.normalize(retract(H - step[:, None] * grad))
            trial_vals = objective.values(trial)
        better = trial_vals < vals
        H[better] = trial[better]
        vals[better] = trial_vals[better]
        step = np.where(better, np.minimum(step * 1.5, 10.0), step * 0.5)
        if np.all(step < 1e-12):
            break
    best = int(np.argmin(vals))
    return float(vals[best]), H[best].copy()


def _oracle(objective: _Objective, retract, rng: np.random.Generator, mask: np.ndarray,
            samples: int) -> Tuple[float, Optional[np.ndarray]]:
    """Random cone directions; half of every chunk sits on the cone boundary"""
    p = mask.shape[0]
    best, best_h = np.inf, None
    done = 0
    while done < samples:
        m = min(_BATCH, samples - done)
        H = rng.standard_normal((m, p))
        keep = rng.random((m, p)) < rng.uniform(0.0, 1.0, size=(m, 1))
        H[:, ~mask] *= keep[:, ~mask]
        inside = np.abs(H[:, mask]).sum(axis=1)
        outside = np.abs(H[:, ~mask]).sum(axis=1)
        share = rng.uniform(0.0, 1.0, size=m)
        share[: m // 2] = 1.0
        H[:, ~mask] *= (share * inside / np.where(outside > 0, outside, 1.0))[:, None]
        H = retract(H)
        vals = objective.values(H)
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, best_h = float(vals[i]), H[i].copy()
        done += m
    return best, best_h


def _minimize(objective: _Objective, retract, mask: np.ndarray, restarts: int, max_iter: int,
              samples: int, rng: np.random.Generator) -> FactorValue:
    descent_value, h = _descend(objective, retract, _starts(rng, mask, restarts), max_iter)
    oracle_value, oracle_h = _oracle(objective, retract, rng, mask, samples)
    if oracle_value < descent_value - 1e-9 * max(1.0, abs(descent_value)):
        logger.debug(f"oracle beat descent: {oracle_value:.6g} < {descent_value:.6g}")
    value, minimizer = (oracle_value, oracle_h) if oracle_value < descent_value else (descent_value, h)
    return FactorValue(
        value=max(float(value), 0.0),
        descent_value=descent_value,
        oracle_value=oracle_value,
        minimizer=minimizer,
        restarts=restarts,
    )


# ---------------------------------------------------------------------------
# Cone factors
# ---------------------------------------------------------------------------

def solve_compatibility(matrix, T0, opts: Optional[FactorOptions] = None) -> FactorValue:
    opts = opts or FactorOptions()
    M = _check_matrix(matrix)
    mask = _support_mask(T0, M.shape[0])
    return _minimize(_kappa_objective(M, mask), _cone_retraction(mask), mask,
                     opts.restarts, opts.max_iter, opts.oracle_samples, _rng(opts, _STREAM_KAPPA))


def compatibility_factor(matrix, T0, opts: Optional[FactorOptions] = None) -> float:
    """kappa(T0; M) = inf over the cone of sqrt(S h'Mh) / ||h_T0||_1"""
    return solve_compatibility(matrix, T0, opts).value


def solve_weak_cone_invertibility(matrix, T0, q: float, opts: Optional[FactorOptions] = None) -> FactorValue:
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q}")
    opts = opts or FactorOptions()
    M = _check_matrix(matrix)
    mask = _support_mask(T0, M.shape[0])
    return _minimize(_fq_objective(M, mask, float(q)), _cone_retraction(mask), mask,
                     opts.restarts, opts.max_iter, opts.oracle_samples,
                     _rng(opts, _STREAM_FQ, int(round(q * 1000))))


def weak_cone_invertibility_factor(matrix, T0, q: float, opts: Optional[FactorOptions] = None) -> float:
    """F_q(T0; M) = inf over the cone of S^(1/q) h'Mh / (||h_T0||_1 ||h||_q)"""
    return solve_weak_cone_invertibility(matrix, T0, q, opts).value


def solve_restricted_eigenvalue(matrix, T0, opts: Optional[FactorOptions] = None) -> FactorValue:
    opts = opts or FactorOptions()
    M = _check_matrix(matrix)
    mask = _support_mask(T0, M.shape[0])
    return _minimize(_re_objective(M), _cone_retraction(mask), mask,
                     opts.restarts, opts.max_iter, opts.oracle_samples, _rng(opts, _STREAM_RE))


def restricted_eigenvalue(matrix, T0, opts: Optional[FactorOptions] = None) -> float:
    """RE(T0; M) = inf over the cone of sqrt(h'Mh) / ||h||_2"""
    return solve_restricted_eigenvalue(matrix, T0, opts).value


def solve_phi_2s(matrix, T0, opts: Optional[FactorOptions] = None) -> FactorValue:
    """
    Enumerates T containing T0 with |T| <= 2S when p <= 20, minimizing over
    D_{T0,T} for each; always also minimizes the equivalent single-cone form
    sqrt(h'Mh) / ||h_{T0 + top S}||_2.
    """
    opts = opts or FactorOptions()
    M = _check_matrix(matrix)
    p = M.shape[0]
    mask = _support_mask(T0, p)
    S = int(mask.sum())
    if 2 * S > p:
        raise ValueError(f"phi_2S needs 2S <= p, got S={S}, p={p}")

    rng = _rng(opts, _STREAM_PHI)
    best = _minimize(_phi_objective(M, mask), _cone_retraction(mask), mask,
                     opts.restarts, opts.max_iter, opts.oracle_samples, rng)
    if p > EXACT_PHI_MAX_P:
        return best

    outside = np.flatnonzero(~mask)
    extras = [extra for k in range(S + 1) for extra in combinations(outside, k)]
    inner_restarts = max(2, opts.restarts // 16)
    inner_samples = opts.oracle_samples // len(extras)
    for extra in extras:
        tmask = mask.copy()
        tmask[list(extra)] = True
        candidate = _minimize(_phi_fixed_objective(M, tmask), _d_retraction(mask, tmask), mask,
                              inner_restarts, opts.max_iter, inner_samples, rng)
        if candidate.value < best.value:
            best = candidate
    logger.debug(f"phi_2S enumerated {len(extras)} supersets of T0")
    return best


def phi_2s(matrix, T0, opts: Optional[FactorOptions] = None) -> float:
    return solve_phi_2s(matrix, T0, opts).value


# ---------------------------------------------------------------------------
# Enumerated constants
# ---------------------------------------------------------------------------

def _subset_batches(pool: Sequence[int], k: int) -> Iterator[np.ndarray]:
    it = combinations(pool, k)
    while True:
        chunk = list(islice(it, _BATCH))
        if not chunk:
            return
        yield np.array(chunk, dtype=int).reshape(len(chunk), k)


def _random_subsets(rng: np.random.Generator, p: int, k: int, count: int) -> Iterator[np.ndarray]:
    done = 0
    while done < count:
        m = min(_BATCH, count - done)
        yield np.argsort(rng.random((m, p)), axis=1)[:, :k]
        done += m


def _budget_exceeded(label: str, total: int, opts: FactorOptions) -> bool:
    if total <= ENUMERATION_BUDGET:
        return False
    if not opts.sampled:
        raise EnumerationBudgetError(
            f"{label}: {total} subsets exceed the enumeration budget of {ENUMERATION_BUDGET}; "
            f"enable sampled mode"
        )
    logger.warning(
        f"{label}: sampling {opts.sample_subsets} of {total} subsets "
        f"(coverage {min(1.0, opts.sample_subsets / total):.2e})"
    )
    return True


def solve_restricted_isometry(matrix, N: int, opts: Optional[FactorOptions] = None) -> EnumeratedConstant:
    opts = opts or FactorOptions()
    M = _check_matrix(matrix)
    p = M.shape[0]
    if not 1 <= N <= p:
        raise ValueError(f"N must lie in [1, {p}], got {N}")

    total = math.comb(p, N)
    sampled = _budget_exceeded(f"delta_{N}", total, opts)
    batches = (_random_subsets(_rng(opts, _STREAM_SUBSETS, N), p, N, opts.sample_subsets)
               if sampled else _subset_batches(range(p), N))

    # interlacing: subsets of size exactly N dominate the smaller ones
    worst, checked = 0.0, 0
    for idx in batches:
        eig = np.linalg.eigvalsh(M[idx[:, :, None], idx[:, None, :]])
        worst = max(worst, float(np.max(eig[:, -1] - 1.0)), float(np.max(1.0 - eig[:, 0])))
        checked += idx.shape[0]
    return EnumeratedConstant(value=max(worst, 0.0), checked=checked, total=total, exact=not sampled)


def restricted_isometry(matrix, N: int, opts: Optional[FactorOptions] = None) -> float:
    """delta_N: worst deviation of eigenvalues of N x N principal blocks from 1"""
    return solve_restricted_isometry(matrix, N, opts).value


def solve_restricted_orthogonality(matrix, S1: int, S2: int,
                                   opts: Optional[FactorOptions] = None) -> EnumeratedConstant:
    opts = opts or FactorOptions()
    M = _check_matrix(matrix)
    p = M.shape[0]
    if S1 < 1 or S2 < 1 or S1 + S2 > p:
        raise ValueError(f"need S1, S2 >= 1 and S1 + S2 <= p, got S1={S1}, S2={S2}, p={p}")

    total = math.comb(p, S1) * math.comb(p - S1, S2)
    worst, checked = 0.0, 0
    if _budget_exceeded(f"theta_{S1},{S2}", total, opts):
        for perm in _random_subsets(_rng(opts, _STREAM_SUBSETS, 1000 * S1 + S2), p, S1 + S2, opts.sample_subsets):
            left, right = perm[:, :S1], perm[:, S1:]
            blocks = M[left[:, :, None], right[:, None, :]]
            worst = max(worst, float(np.linalg.svd(blocks, compute_uv=False)[:, 0].max()))
            checked += perm.shape[0]
        return EnumeratedConstant(value=worst, checked=checked, total=total, exact=False)

    for left in combinations(range(p), S1):
        rest = [j for j in range(p) if j not in left]
        rows = np.array(left)
        for right in _subset_batches(rest, S2):
            blocks = M[rows[None, :, None], right[:, None, :]]
            worst = max(worst, float(np.linalg.svd(blocks, compute_uv=False)[:, 0].max()))
            checked += right.shape[0]
    return EnumeratedConstant(value=worst, checked=checked, total=total, exact=True)


def restricted_orthogonality(matrix, S1: int, S2: int, opts: Optional[FactorOptions] = None) -> float:
    """theta_{S1,S2}: largest singular value of an off-diagonal block over disjoint supports"""
    return solve_restricted_orthogonality(matrix, S1, S2, opts).value


def uup_margin(matrix, S: int, opts: Optional[FactorOptions] = None) -> float:
    """1 - delta_2S - theta_{S,2S}"""
    p = np.asarray(matrix).shape[0]
    if 3 * S > p:
        raise ValueError(f"uup margin needs 3S <= p, got S={S}, p={p}")
    return 1.0 - restricted_isometry(matrix, 2 * S, opts) - restricted_orthogonality(matrix, S, 2 * S, opts)


def sup_norm_diff(A, B) -> float:
    """Entrywise max |A - B|"""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.max(np.abs(A - B))) if A.size else 0.0


# ---------------------------------------------------------------------------
# Population surrogate
# ---------------------------------------------------------------------------

@dataclass
class PopulationMatrix:
    """Average of J_n(beta0) over independent large samples"""
    matrix: np.ndarray
    n_used: int
    mc_reps: int
    stderr_sup: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "matrix": self.matrix.tolist(),
            "n_used": self.n_used,
            "mc_reps": self.mc_reps,
            "stderr_sup": self.stderr_sup,
        }


def population_matrix(sim_config: SimConfig, beta0=None, n_big: int = MIN_POPULATION_N,
                      mc_reps: int = 1, jobs: Optional[int] = None) -> PopulationMatrix:
    """
    Replicate r simulates n_big subjects with seed derive_seed(sim_config.seed,
    STREAM_POPULATION, r) and contributes J_n(beta0).
    """
    if n_big < MIN_POPULATION_N:
        raise ValueError(f"n_big must be at least {MIN_POPULATION_N}, got {n_big}")
    if mc_reps < 1:
        raise ValueError(f"mc_reps must be positive, got {mc_reps}")
    beta0 = sim_config.beta0() if beta0 is None else np.asarray(beta0, dtype=float)

    def one_replicate(index: int) -> np.ndarray:
        config = sim_config.with_overrides(n=n_big, seed=derive_seed(sim_config.seed, STREAM_POPULATION, index))
        return evaluate(simulate_dataset(config), beta0).hessian

    stack = np.stack(get_queue_manager(jobs).map("population", one_replicate, range(mc_reps)))
    matrix = stack.mean(axis=0)
    matrix = 0.5 * (matrix + matrix.T)
    stderr = float(np.max(stack.std(axis=0, ddof=1)) / math.sqrt(mc_reps)) if mc_reps > 1 else 0.0
    logger.info(f"Population surrogate from {mc_reps} x n={n_big}: stderr_sup={stderr:.3e}")
    return PopulationMatrix(matrix=matrix, n_used=n_big, mc_reps=mc_reps, stderr_sup=stderr)


# ---------------------------------------------------------------------------
# Full report
# ---------------------------------------------------------------------------

def _enumerated(label: str, compute: Callable[[], EnumeratedConstant],
                skipped: Dict[str, str]) -> Optional[EnumeratedConstant]:
    try:
        return compute()
    except EnumerationBudgetError as e:
        skipped[label] = str(e)
        return None


def factor_report(matrix, T0, qs: Sequence[float] = DEFAULT_QS,
                  opts: Optional[FactorOptions] = None,
                  isometry_orders: Optional[Sequence[int]] = None,
                  orthogonality_pairs: Optional[Sequence[Tuple[int, int]]] = None,
                  tol: float = 1e-4) -> FactorReport:
    """
    All factors for one matrix. Every optimizer's best direction is scored
    under every objective and each factor keeps its smallest value, so the
    reported numbers satisfy RE <= phi_2S <= kappa <= 2 sqrt(S) RE and
    F_q >= S^(1/q - 1) kappa^2 / 2.
    """
    opts = opts or FactorOptions()
    M = _check_matrix(matrix)
    p = M.shape[0]
    mask = _support_mask(T0, p)
    S = int(mask.sum())

    kappa = solve_compatibility(M, mask_to_indices(mask), opts)
    fq = {q_key(q): solve_weak_cone_invertibility(M, mask_to_indices(mask), q, opts) for q in qs}
    re = solve_restricted_eigenvalue(M, mask_to_indices(mask), opts)
    phi = solve_phi_2s(M, mask_to_indices(mask), opts) if 2 * S <= p else None

    solved = [kappa, re, *fq.values()] + ([phi] if phi is not None else [])
    candidates = np.vstack([fv.minimizer for fv in solved])

    def cross(objective: _Objective, own: FactorValue) -> float:
        return max(0.0, min(own.value, float(objective.values(candidates).min())))

    kappa_value = cross(_kappa_objective(M, mask), kappa)
    fq_values = {key: cross(_fq_objective(M, mask, float(key)), fv) for key, fv in fq.items()}
    re_value = cross(_re_objective(M), re)
    phi_value = cross(_phi_objective(M, mask), phi) if phi is not None else None

    skipped: Dict[str, str] = {}
    orders = isometry_orders if isometry_orders is not None else [N for N in (S, 2 * S) if N <= p]
    pairs = orthogonality_pairs if orthogonality_pairs is not None else [
        (a, b) for a, b in ((S, S), (S, 2 * S)) if a + b <= p
    ]
    delta = {str(N): _enumerated(f"delta_{N}", lambda N=N: solve_restricted_isometry(M, N, opts), skipped)
             for N in orders}
    theta = {f"{a},{b}": _enumerated(f"theta_{a},{b}", lambda a=a, b=b: solve_restricted_orthogonality(M, a, b, opts), skipped)
             for a, b in pairs}

    margin = None
    if delta.get(str(2 * S)) is not None and theta.get(f"{S},{2 * S}") is not None:
        margin = 1.0 - delta[str(2 * S)].value - theta[f"{S},{2 * S}"].value

    ordering: Dict[str, Any] = {
        "kappa_le_2sqrtS_re": kappa_value <= 2.0 * math.sqrt(S) * re_value + tol,
        "fq_ge_kappa_bound": {
            key: value >= S ** (1.0 / float(key) - 1.0) * kappa_value ** 2 / 2.0 - tol
            for key, value in fq_values.items()
        },
        "kappa_le_fq": {key: kappa_value <= value + tol for key, value in fq_values.items()},
    }
    if phi_value is not None:
        ordering["re_le_phi"] = re_value <= phi_value + tol
        ordering["phi_le_kappa"] = phi_value <= kappa_value + tol
        if margin is not None and margin > UUP_TRIGGER:
            ordering["uup_implies_phi_positive"] = phi_value > 1e-6

    diagnostics: Dict[str, Any] = {
        "ordering": ordering,
        "optimizers": {
            "kappa": kappa.to_dict(),
            "re": re.to_dict(),
            "f_q": {key: fv.to_dict() for key, fv in fq.items()},
            "phi_2s": phi.to_dict() if phi is not None else None,
        },
        "coverage": {
            **{f"delta_{k}": v.coverage for k, v in delta.items() if v is not None},
            **{f"theta_{k}": v.coverage for k, v in theta.items() if v is not None},
        },
        "enumeration_skipped": skipped,
        "options": opts.model_dump(),
        "q_inf_surrogate": Q_INF_SURROGATE,
    }
    if not all(ordering["kappa_le_fq"].values()):
        logger.debug("kappa exceeds some F_q; recorded as a diagnostic")

    return FactorReport(
        support=mask_to_indices(mask),
        S=S,
        p=p,
        kappa=kappa_value,
        f_q=fq_values,
        re=re_value,
        phi_2s=phi_value,
        delta_n={k: v.value for k, v in delta.items() if v is not None},
        theta={k: v.value for k, v in theta.items() if v is not None},
        uup_margin=margin,
        diagnostics=diagnostics,
    )


def mask_to_indices(mask: np.ndarray) -> List[int]:
    return [int(j) for j in np.flatnonzero(mask)]

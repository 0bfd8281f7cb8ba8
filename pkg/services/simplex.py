"""
Dense two-phase tableau simplex
Solves min c'x subject to Ax = b, x >= 0 with Bland's anti-cycling rule and
reports the dual solution and duality gap.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-9


class LPError(Exception):
    """Base class for linear-program failures"""


class InfeasibleLPError(LPError):
    """Raised when phase 1 cannot drive the artificial variables to zero"""


class UnboundedLPError(LPError):
    """Raised when an entering column has no blocking row"""


class LPIterationLimitError(LPError):
    """Raised when the pivot budget runs out"""


@dataclass(frozen=True)
class LPResult:
    """Primal/dual pair of an optimal basis"""
    x: np.ndarray
    objective: float
    dual: np.ndarray
    duality_gap: float
    iterations: int
    basis: Tuple[int, ...]

    @property
    def relative_gap(self) -> float:
        return self.duality_gap / max(1.0, abs(self.objective))


def _pivot_col(T: np.ndarray, tol: float) -> Optional[int]:
    """Bland: first column with a negative reduced cost"""
    candidates = np.flatnonzero(T[-1, :-1] < -tol)
    return int(candidates[0]) if candidates.size else None


def _pivot_row(T: np.ndarray, basis: np.ndarray, pivcol: int, n_rows: int, tol: float) -> Optional[int]:
    """Minimum ratio test; ties go to the smallest basic index"""
    column = T[:n_rows, pivcol]
    eligible = np.flatnonzero(column > tol)
    if eligible.size == 0:
        return None
    ratios = T[eligible, -1] / column[eligible]
    best = ratios.min()
    tied = eligible[ratios <= best + tol * max(1.0, abs(best))]
    return int(tied[np.argmin(basis[tied])])


def _apply_pivot(T: np.ndarray, basis: np.ndarray, pivrow: int, pivcol: int) -> None:
    basis[pivrow] = pivcol
    pivot = T[pivrow] / T[pivrow, pivcol]
    T -= np.outer(T[:, pivcol], pivot)
    T[pivrow] = pivot


def _solve_simplex(T: np.ndarray, basis: np.ndarray, n_rows: int, maxiter: int,
                   nit0: int, tol: float) -> int:
    """Pivot until no improving column remains; the last row is the objective"""
    nit = nit0
    while True:
        pivcol = _pivot_col(T, tol)
        if pivcol is None:
            return nit
        pivrow = _pivot_row(T, basis, pivcol, n_rows, tol)
        if pivrow is None:
            raise UnboundedLPError(f"objective unbounded along column {pivcol}")
        if nit >= maxiter:
            raise LPIterationLimitError(f"simplex stopped after {nit} pivots")
        _apply_pivot(T, basis, pivrow, pivcol)
        nit += 1


def _initial_basis(A: np.ndarray, tol: float) -> np.ndarray:
    """Unit columns usable as a starting basis, -1 where a row needs an artificial"""
    n_rows, n_cols = A.shape
    basis = np.full(n_rows, -1, dtype=int)
    for col in range(n_cols):
        column = A[:, col]
        nonzero = np.flatnonzero(np.abs(column) > tol)
        if nonzero.size == 1 and abs(column[nonzero[0]] - 1.0) <= tol and basis[nonzero[0]] < 0:
            basis[nonzero[0]] = col
    return basis


def solve_lp(c, A, b, tol: float = PIVOT_TOL, maxiter: Optional[int] = None) -> LPResult:
    """
    Minimize c'x subject to Ax = b, x >= 0.

    Phase 1 adds artificials only for rows without a unit column; after phase 1
    any artificial left in the basis is pivoted out, or its row dropped as
    redundant.
    """
    c = np.asarray(c, dtype=float)
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n_rows, n_cols = A.shape
    if c.shape != (n_cols,) or b.shape != (n_rows,):
        raise ValueError(f"inconsistent LP shapes: c {c.shape}, A {A.shape}, b {b.shape}")
    maxiter = maxiter or 50 * (n_rows + n_cols)

    # all constraints must have b >= 0
    negative = b < 0
    A[negative] *= -1
    b[negative] *= -1

    basis = _initial_basis(A, tol)
    needs_artificial = np.flatnonzero(basis < 0)
    n_art = needs_artificial.size
    artificial = np.zeros((n_rows, n_art))
    artificial[needs_artificial, np.arange(n_art)] = 1.0
    basis[needs_artificial] = n_cols + np.arange(n_art)

    rows = np.hstack((A, artificial, b[:, None]))
    objective = np.concatenate((c, np.zeros(n_art), [0.0]))
    T = np.vstack((rows, objective))
    # price out the starting basis
    for row, col in enumerate(basis):
        if T[-1, col] != 0.0:
            T[-1] -= T[-1, col] * T[row]

    nit = 0
    if n_art:
        pseudo = -rows[needs_artificial].sum(axis=0)
        pseudo[n_cols:n_cols + n_art] = 0.0
        T = np.vstack((T, pseudo))
        nit = _solve_simplex(T, basis, n_rows, maxiter, 0, tol)
        infeasibility = abs(T[-1, -1])
        if infeasibility > max(tol, 1e-7) * max(1.0, float(np.abs(b).max(initial=0.0))):
            raise InfeasibleLPError(f"phase 1 left infeasibility {infeasibility:.3e}")
        T = T[:-1]

        keep = np.ones(n_rows, dtype=bool)
        for row in np.flatnonzero(basis >= n_cols):
            candidates = np.flatnonzero(np.abs(T[row, :n_cols]) > tol)
            if candidates.size:
                _apply_pivot(T, basis, row, int(candidates[0]))
                nit += 1
            else:
                keep[row] = False
        if not keep.all():
            logger.debug(f"Dropping {int((~keep).sum())} redundant constraint rows")
        T = np.vstack((T[:-1][keep], T[-1:]))
        T = np.delete(T, np.arange(n_cols, n_cols + n_art), axis=1)
        basis = basis[keep]
    else:
        keep = np.ones(n_rows, dtype=bool)

    nit = _solve_simplex(T, basis, basis.size, maxiter, nit, tol)

    x = np.zeros(n_cols)
    x[basis] = T[:basis.size, -1]
    x = np.maximum(x, 0.0)
    value = float(c @ x)

    # duals from B'y = c_B, then mapped back to the unflipped rows
    dual = np.zeros(n_rows)
    if basis.size:
        B = A[keep][:, basis]
        dual[keep] = np.linalg.lstsq(B.T, c[basis], rcond=None)[0]
    gap = abs(value - float(b @ dual))
    dual[negative] *= -1

    logger.debug(f"LP solved in {nit} pivots, objective={value:.6g}, gap={gap:.2e}")
    return LPResult(
        x=x,
        objective=value,
        dual=dual,
        duality_gap=gap,
        iterations=nit,
        basis=tuple(int(j) for j in basis),
    )

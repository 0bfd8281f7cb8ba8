"""
Test the dense tableau simplex
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linprog

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from services.simplex import InfeasibleLPError, UnboundedLPError, solve_lp


def test_textbook_lp():
    # min -x - y  s.t.  x + 2y + s1 = 4,  3x + y + s2 = 6
    c = [-1.0, -1.0, 0.0, 0.0]
    A = [[1.0, 2.0, 1.0, 0.0], [3.0, 1.0, 0.0, 1.0]]
    result = solve_lp(c, A, [4.0, 6.0])
    np.testing.assert_allclose(result.x[:2], [1.6, 1.2], atol=1e-10)
    assert result.objective == pytest.approx(-2.8)
    assert result.duality_gap <= 1e-10


def test_negative_right_hand_side_needs_phase_one():
    # x - y = -1, x + y = 3  ->  x = 1, y = 2
    result = solve_lp([1.0, 1.0], [[1.0, -1.0], [1.0, 1.0]], [-1.0, 3.0])
    np.testing.assert_allclose(result.x, [1.0, 2.0], atol=1e-10)
    assert result.duality_gap <= 1e-10


def test_redundant_row_is_dropped():
    A = [[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]
    result = solve_lp([1.0, 2.0, 3.0], A, [1.0, 2.0])
    np.testing.assert_allclose(result.x, [1.0, 0.0, 0.0], atol=1e-10)
    assert result.objective == pytest.approx(1.0)


def test_infeasible():
    with pytest.raises(InfeasibleLPError):
        solve_lp([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]], [1.0, 2.0])


def test_unbounded():
    # min -x  s.t.  x - y = 0
    with pytest.raises(UnboundedLPError):
        solve_lp([-1.0, 0.0], [[1.0, -1.0]], [0.0])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        solve_lp([1.0], [[1.0, 1.0]], [1.0])


@pytest.mark.parametrize("seed", range(10))
def test_matches_scipy_on_random_feasible_lps(seed):
    rng = np.random.default_rng(seed)
    m, n = 4, 9
    A = rng.normal(size=(m, n))
    b = A @ rng.uniform(0.0, 1.0, size=n)
    c = rng.uniform(0.1, 1.0, size=n)
    ours = solve_lp(c, A, b)
    reference = linprog(c, A_eq=A, b_eq=b, bounds=[(0, None)] * n, method="highs")
    assert reference.status == 0
    assert ours.objective == pytest.approx(reference.fun, rel=1e-7, abs=1e-9)
    np.testing.assert_allclose(A @ ours.x, b, atol=1e-8)
    assert np.all(ours.x >= 0)
    assert ours.relative_gap <= 1e-8

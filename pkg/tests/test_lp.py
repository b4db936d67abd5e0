import numpy as np
import pytest
from oracles import vertex_enumeration_minimum

from mcoplan.lp import LinearProgram, LpStatus, solve_lp


class TestHandExamples:
    def test_two_variable_lp(self):
        # minimize a2 s.t. a1 + a2 = 1, a1 <= 0.5 -> (0.5, 0.5)
        r = solve_lp(LinearProgram(
            costs=np.array([0.0, 1.0]),
            a_ub=np.array([[1.0, 0.0]]), b_ub=np.array([0.5]),
            a_eq=np.array([[1.0, 1.0]]), b_eq=np.array([1.0]),
        ))
        assert r.status is LpStatus.OPTIMAL
        assert np.allclose(r.x, [0.5, 0.5])
        assert r.value == pytest.approx(0.5)

    def test_empty_feasible_region(self):
        r = solve_lp(LinearProgram(
            costs=np.array([1.0]),
            a_ub=np.array([[-1.0], [1.0]]), b_ub=np.array([-2.0, 1.0]),
        ))
        assert r.status is LpStatus.INFEASIBLE

    def test_unbounded(self):
        r = solve_lp(LinearProgram(costs=np.array([-1.0, 0.0]),
                                   a_ub=np.array([[0.0, 1.0]]), b_ub=np.array([1.0])))
        assert r.status is LpStatus.UNBOUNDED

    def test_upper_bounds(self):
        r = solve_lp(LinearProgram(costs=np.array([-1.0, -2.0]),
                                   upper=np.array([3.0, 4.0])))
        assert r.status is LpStatus.OPTIMAL
        assert np.allclose(r.x, [3.0, 4.0])

    def test_shifted_lower_bounds(self):
        r = solve_lp(LinearProgram(costs=np.array([1.0, 1.0]),
                                   lower=np.array([-2.0, 3.0]),
                                   a_ub=np.array([[1.0, 1.0]]), b_ub=np.array([10.0])))
        assert r.status is LpStatus.OPTIMAL
        assert np.allclose(r.x, [-2.0, 3.0])


class TestRandomNavigationLps:
    def test_matches_vertex_enumeration(self):
        rng = np.random.default_rng(31)
        for trial in range(40):
            n = int(rng.integers(3, 11))
            n_locks = int(rng.integers(0, 4))
            fvals = rng.uniform(0, 10, size=(n, 4))
            costs = fvals[:, 0]
            if n_locks:
                a_ub = fvals[:, 1:1 + n_locks].T
                # bounds between the per-row min and mean keep it feasible
                lo = a_ub.min(axis=1)
                b_ub = lo + rng.uniform(0.2, 1.0, n_locks) * (a_ub.mean(axis=1) - lo)
            else:
                a_ub, b_ub = None, None
            r = solve_lp(LinearProgram(
                costs=costs, a_ub=a_ub, b_ub=b_ub,
                a_eq=np.ones((1, n)), b_eq=np.array([1.0]),
            ))
            best, _ = vertex_enumeration_minimum(costs, a_ub, b_ub, n)
            if best is None:
                # joint locks can conflict; the oracle must agree on that too
                assert r.status is LpStatus.INFEASIBLE
                continue
            assert r.status is LpStatus.OPTIMAL
            assert r.value == pytest.approx(best, abs=1e-8)
            # primal feasibility residual
            assert abs(r.x.sum() - 1.0) <= 1e-9
            assert r.x.min() >= -1e-9
            if a_ub is not None:
                assert np.all(a_ub @ r.x <= b_ub + 1e-9)

    def test_duality_gap(self):
        rng = np.random.default_rng(12)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(1, 5))
            c = rng.normal(size=n)
            a = rng.normal(size=(m, n))
            b = rng.normal(size=m) + 1.5
            r = solve_lp(LinearProgram(costs=c, a_ub=a, b_ub=b,
                                       a_eq=np.ones((1, n)), b_eq=np.array([1.0])))
            if r.status is LpStatus.OPTIMAL and r.dual_value is not None:
                assert abs(r.value - r.dual_value) <= 1e-8 * max(1.0, abs(r.value))


def test_solution_is_basic():
    # an optimal BFS has at most (#rows) nonzeros
    rng = np.random.default_rng(9)
    n = 12
    costs = rng.uniform(0, 1, n)
    r = solve_lp(LinearProgram(costs=costs, a_eq=np.ones((1, n)), b_eq=np.array([1.0])))
    assert r.status is LpStatus.OPTIMAL
    assert np.count_nonzero(r.x > 1e-12) == 1

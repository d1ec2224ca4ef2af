import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmip.milp import (DimensionMismatch, MilpProblem, SearchSpaceTooLarge,
                       SolveConfig, enumerate_feasible, enumerate_optimal,
                       format_lp, solve_lp, solve_milp)


def binary_problem(objective, a, b, sense="minimize"):
    objective = np.asarray(objective, dtype=float)
    n = objective.size
    return MilpProblem(objective, np.atleast_2d(a), np.atleast_1d(b),
                       np.zeros(n), np.ones(n), np.ones(n, dtype=bool),
                       sense=sense)


class TestProblemValidation:
    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            MilpProblem(np.ones(3), np.ones((1, 2)), np.ones(1),
                        np.zeros(3), np.ones(3), np.ones(3, dtype=bool))

    def test_bounds_ordering_rejected(self):
        with pytest.raises(ValueError):
            MilpProblem(np.ones(1), np.ones((1, 1)), np.ones(1),
                        np.ones(1), np.zeros(1), np.ones(1, dtype=bool))

    def test_normalized_negates_maximize(self):
        prob = binary_problem([1.0, 2.0], [1.0, 1.0], 1.0, sense="maximize")
        norm = prob.normalized()
        assert norm.sense == "minimize"
        assert np.array_equal(norm.objective, [-1.0, -2.0])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolveConfig(gap_tolerance=0.0)
        with pytest.raises(ValueError):
            SolveConfig(stop_after_incumbents=0)


class TestSolveLp:
    def test_facet_optimum(self):
        prob = MilpProblem(np.array([-1.0, -1.0]), np.ones((1, 2)),
                           np.ones(1), np.zeros(2), np.ones(2),
                           np.zeros(2, dtype=bool))
        sol = solve_lp(prob)
        assert sol.status == "optimal"
        assert sol.objective_value == pytest.approx(-1.0, abs=1e-9)
        assert sol.values.sum() == pytest.approx(1.0, abs=1e-7)

    def test_bound_active(self):
        # minimize x1 subject to x1 >= 3, written as -x1 <= -3
        prob = MilpProblem(np.array([1.0]), np.array([[-1.0]]),
                           np.array([-3.0]), np.zeros(1), np.full(1, 10.0),
                           np.zeros(1, dtype=bool))
        sol = solve_lp(prob)
        assert sol.status == "optimal"
        assert sol.objective_value == pytest.approx(3.0, abs=1e-9)
        assert sol.values[0] == pytest.approx(3.0, abs=1e-7)

    def test_infeasible(self):
        prob = MilpProblem(np.array([1.0]), np.array([[1.0]]),
                           np.array([-1.0]), np.zeros(1), np.ones(1),
                           np.zeros(1, dtype=bool))
        assert solve_lp(prob).status == "infeasible"


class TestSolveMilp:
    def test_symmetric_binary_optimum(self):
        prob = binary_problem([-1.0, -1.0], [1.0, 1.0], 1.0)
        sol = solve_milp(prob)
        assert sol.status == "optimal"
        assert sol.objective_value == pytest.approx(-1.0, abs=1e-6)
        points, value = enumerate_optimal(prob)
        assert value == pytest.approx(-1.0, abs=1e-9)
        assert any(np.allclose(sol.values, p) for p in points)

    def test_three_item_knapsack(self):
        prob = binary_problem([-2.0, -3.0, -4.0], [3.0, 4.0, 5.0], 7.0)
        sol = solve_milp(prob)
        assert sol.status == "optimal"
        assert sol.objective_value == pytest.approx(-5.0, abs=1e-6)
        assert np.allclose(np.round(sol.values), [1.0, 1.0, 0.0])

    def test_empty_integer_slice(self):
        prob = MilpProblem(np.array([1.0]), np.zeros((1, 1)), np.ones(1),
                           np.full(1, 0.4), np.full(1, 0.6),
                           np.ones(1, dtype=bool))
        assert solve_milp(prob).status == "infeasible"

    def test_gap_and_dual_bound_invariants(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 7))
            prob = binary_problem(rng.standard_normal(n),
                                  np.abs(rng.standard_normal((2, n))),
                                  np.abs(rng.standard_normal(2)) + 0.5)
            sol = solve_milp(prob)
            assert sol.status == "optimal"
            assert abs(sol.objective_value - sol.dual_bound) <= 1e-4 + 1e-9
            lp = solve_lp(prob)
            assert lp.objective_value <= sol.objective_value + 1e-6

    def test_solution_feasibility_and_integrality(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 8))
            prob = binary_problem(rng.standard_normal(n),
                                  np.abs(rng.standard_normal((1, n))),
                                  np.abs(rng.standard_normal()) + 0.2)
            sol = solve_milp(prob)
            v = sol.values
            assert np.all(prob.constraint_matrix @ v
                          <= prob.constraint_rhs + 1e-7)
            assert np.all(np.abs(v - np.round(v)) <= 1e-6)

    def test_stop_after_incumbents(self):
        prob = binary_problem([-1.0, -2.0, -3.0, -4.0],
                              [2.0, 3.0, 4.0, 5.0], 9.0)
        sol = solve_milp(prob, SolveConfig(stop_after_incumbents=1))
        assert sol.status in ("feasible", "optimal")
        assert sol.values is not None
        assert len(sol.incumbents) >= 1
        full = solve_milp(prob)
        assert sol.objective_value >= full.objective_value - 1e-9

    def test_incumbents_monotone(self, rng):
        for _ in range(10):
            n = 8
            prob = binary_problem(rng.standard_normal(n),
                                  np.abs(rng.standard_normal((1, n))),
                                  np.abs(rng.standard_normal()) + 1.0)
            sol = solve_milp(prob)
            objs = [obj for _, obj in sol.incumbents]
            assert all(b < a + 1e-12 for a, b in zip(objs, objs[1:]))

    def test_determinism(self, rng):
        prob = binary_problem(rng.standard_normal(6),
                              np.abs(rng.standard_normal((2, 6))),
                              np.abs(rng.standard_normal(2)) + 0.5)
        a = solve_milp(prob)
        b = solve_milp(prob)
        assert np.array_equal(a.values, b.values)
        assert a.objective_value == b.objective_value
        assert a.node_count == b.node_count

    def test_maximize_sense(self):
        prob = binary_problem([2.0, 3.0, 4.0], [3.0, 4.0, 5.0], 7.0,
                              sense="maximize")
        sol = solve_milp(prob)
        assert sol.objective_value == pytest.approx(5.0, abs=1e-6)


class TestEnumerate:
    def test_symmetric_optima(self):
        prob = binary_problem([-1.0, -1.0], [1.0, 1.0], 1.0)
        points, value = enumerate_optimal(prob)
        assert value == pytest.approx(-1.0)
        as_tuples = {tuple(np.round(p).astype(int)) for p in points}
        assert as_tuples == {(0, 1), (1, 0)}

    def test_zero_objective_returns_all(self):
        prob = binary_problem([0.0, 0.0], [0.0, 0.0], 1.0)
        points, value = enumerate_optimal(prob)
        assert value == pytest.approx(0.0)
        assert len(points) == 4

    def test_knapsack_unique(self):
        prob = binary_problem([-2.0, -3.0, -4.0], [3.0, 4.0, 5.0], 7.0)
        points, value = enumerate_optimal(prob)
        assert value == pytest.approx(-5.0)
        assert len(points) == 1
        assert np.allclose(points[0], [1.0, 1.0, 0.0])

    def test_guard(self):
        n = 25
        prob = binary_problem(np.zeros(n), np.zeros((1, n)), 1.0)
        with pytest.raises(SearchSpaceTooLarge):
            enumerate_optimal(prob, guard=2 ** 20)

    def test_enumerate_feasible_lexicographic(self):
        prob = binary_problem([0.0, 0.0], [1.0, 1.0], 1.0)
        points = enumerate_feasible(prob)
        as_tuples = [tuple(np.round(p).astype(int)) for p in points]
        assert as_tuples == [(0, 0), (0, 1), (1, 0)]

    def test_mixed_integer_enumeration_uses_lp(self):
        # one binary gate x, one continuous y <= x with objective -y
        prob = MilpProblem(np.array([0.0, -1.0]),
                           np.array([[-1.0, 1.0]]), np.zeros(1),
                           np.zeros(2), np.ones(2),
                           np.array([True, False]))
        points, value = enumerate_optimal(prob)
        assert value == pytest.approx(-1.0, abs=1e-9)
        assert len(points) == 1
        assert np.allclose(points[0], [1.0, 1.0], atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1),
       st.integers(min_value=2, max_value=8))
def test_oracle_agreement_property(seed, n):
    """solve_milp matches the enumeration oracle on random binary MILPs."""
    r = np.random.default_rng(seed)
    prob = MilpProblem(r.standard_normal(n),
                       np.abs(r.standard_normal((2, n))),
                       np.abs(r.standard_normal(2)) + 0.1,
                       np.zeros(n), np.ones(n), np.ones(n, dtype=bool))
    sol = solve_milp(prob)
    _, value = enumerate_optimal(prob)
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(value, abs=1e-6)


def test_format_lp_mentions_every_row():
    prob = binary_problem([-1.0, -1.0], [1.0, 2.0], 3.0)
    text = format_lp(prob)
    assert "minimize" in text
    assert "<=" in text

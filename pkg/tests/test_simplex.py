import random
from fractions import Fraction

import numpy as np
import pytest
import scipy.optimize

from vcsprelax.simplex import ExactLP, solve_lp


def test_basic_maximization_via_negation():
    # max x+y s.t. x+y <= 1  ->  min -(x+y) = -1
    lp = ExactLP(2)
    lp.set_objective({0: -1, 1: -1})
    lp.add_le({0: 1, 1: 1}, 1)
    res = solve_lp(lp)
    assert res.status == "optimal"
    assert res.value == Fraction(-1)
    assert sum(res.x) == 1


def test_equality_system():
    # x + y = 1, x - y = 1/3 -> x = 2/3, y = 1/3; minimize x
    lp = ExactLP(2)
    lp.set_objective({0: 1})
    lp.add_eq({0: 1, 1: 1}, 1)
    lp.add_eq({0: 1, 1: -1}, Fraction(1, 3))
    res = solve_lp(lp)
    assert res.status == "optimal"
    assert res.x[0] == Fraction(2, 3)
    assert res.x[1] == Fraction(1, 3)


def test_infeasible():
    lp = ExactLP(1)
    lp.add_le({0: 1}, -1)  # x <= -1 contradicts x >= 0
    assert solve_lp(lp).status == "infeasible"


def test_infeasible_equalities():
    lp = ExactLP(2)
    lp.add_eq({0: 1, 1: 1}, 1)
    lp.add_eq({0: 1, 1: 1}, 2)
    assert solve_lp(lp).status == "infeasible"


def test_unbounded():
    lp = ExactLP(1)
    lp.set_objective({0: -1})
    assert solve_lp(lp).status == "unbounded"


def test_redundant_rows_handled():
    lp = ExactLP(2)
    lp.set_objective({0: 1, 1: 2})
    lp.add_eq({0: 1, 1: 1}, 1)
    lp.add_eq({0: 2, 1: 2}, 2)  # same hyperplane
    res = solve_lp(lp)
    assert res.status == "optimal"
    assert res.value == 1


def test_exact_rational_answer():
    # tiny problem where floats would drift: min x s.t. 3x >= 1 -> 1/3
    lp = ExactLP(1)
    lp.set_objective({0: 1})
    lp.add_ge({0: 3}, 1)
    res = solve_lp(lp)
    assert res.value == Fraction(1, 3)


def test_degenerate_does_not_cycle():
    # classic degenerate vertex at the origin
    lp = ExactLP(4)
    lp.set_objective({0: Fraction(-3, 4), 1: 150, 2: Fraction(-1, 50), 3: 6})
    lp.add_le({0: Fraction(1, 4), 1: -60, 2: Fraction(-1, 25), 3: 9}, 0)
    lp.add_le({0: Fraction(1, 2), 1: -90, 2: Fraction(-1, 50), 3: 3}, 0)
    lp.add_le({2: 1}, 1)
    res = solve_lp(lp)
    assert res.status == "optimal"
    assert res.value == Fraction(-1, 20)


def _random_lp(rng, n, m):
    lp = ExactLP(n)
    lp.set_objective({j: Fraction(rng.randint(-5, 5)) for j in range(n)})
    rows = []
    for _ in range(m):
        coeffs = {j: Fraction(rng.randint(-4, 4)) for j in range(n)}
        rhs = Fraction(rng.randint(0, 8))
        lp.add_le(coeffs, rhs)
        rows.append((coeffs, rhs))
    # keep it bounded: cap the simplex of variables
    cap = {j: Fraction(1) for j in range(n)}
    lp.add_le(cap, n)
    rows.append((cap, Fraction(n)))
    return lp, rows


def test_against_scipy_on_random_lps():
    # scipy highs is the independent check; agreement within float tolerance
    rng = random.Random(42)
    for trial in range(25):
        n, m = rng.randint(2, 5), rng.randint(1, 5)
        lp, rows = _random_lp(rng, n, m)
        res = solve_lp(lp)
        c = np.array([float(lp.objective.get(j, 0)) for j in range(n)])
        A = np.array([[float(coeffs.get(j, 0)) for j in range(n)] for coeffs, _ in rows])
        b = np.array([float(rhs) for _, rhs in rows])
        ref = scipy.optimize.linprog(c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
        assert res.status == "optimal"
        assert ref.status == 0
        assert abs(float(res.value) - ref.fun) < 1e-7
        # feasibility of the exact solution
        for coeffs, rhs in rows:
            lhs = sum(coeffs.get(j, Fraction(0)) * res.x[j] for j in range(n))
            assert lhs <= rhs
        assert all(x >= 0 for x in res.x)

"""Tests for the level-k Gram relaxation builder and solver."""

import itertools
import random
from fractions import Fraction

import numpy as np
import pytest

from vcsprelax.errors import ArityError, CapExceeded
from vcsprelax.lasserre import (
    GramSolution,
    NumericallyInfeasible,
    build_las,
    sdp_opt,
    solve_sdp,
    suggested_epsilon,
    verify_L7,
)
from vcsprelax.model import VCSPInstance, WeightedRelation, brute_force_opt
from vcsprelax.sherali_adams import lp_opt
from vcsprelax.values import INF, ZERO, ExtValue


def rel(name, arity, d, entries, default=None):
    return WeightedRelation.from_entries(name, arity, d, entries, default=default)


eq2 = rel("eq2", 2, 2, {(0, 0): 0, (1, 1): 0})
neq2 = rel("neq2", 2, 2, {(0, 1): 0, (1, 0): 0})
# soft equality: cost 1 on equal pairs, 0 otherwise
same_soft = rel("same_soft", 2, 2, {(0, 0): 1, (1, 1): 1}, default=0)
mixed_costs = rel("mixed", 2, 2,
                  {(0, 0): 1, (0, 1): Fraction(1, 3), (1, 0): 2, (1, 1): 5})


def _random_instance(rng, n, d, q):
    inst = VCSPInstance(n, d)
    for j in range(q):
        arity = rng.choice([1, 2])
        entries = {}
        for t in itertools.product(range(d), repeat=arity):
            if rng.random() < 0.25:
                entries[t] = None
            else:
                entries[t] = Fraction(rng.randint(-4, 6), rng.choice([1, 2, 3]))
        scope = tuple(rng.sample(range(n), arity))
        inst.add_constraint(rel(f"r{j}", arity, d, entries), scope)
    return inst


def test_build_counts_single_binary():
    # one binary constraint on two variables at level 2: the unit row,
    # four rows for the constraint block, two per singleton null block
    inst = VCSPInstance(2, 2).add_constraint(mixed_costs, (0, 1))
    m = build_las(inst, 2)
    assert m.num_rows == 9
    assert m.designated[(0, 1)] == 0
    assert len(m.aug) == 3
    # entry classes: unit, 2+2 singleton diagonals, 4 pair assignments
    assert m.num_classes == 9
    # every position is either in a class or structurally zero
    counted = np.zeros((9, 9), dtype=int)
    np.add.at(counted, (m.pos_r, m.pos_c), 1)
    assert counted.max() == 1
    assert (counted.astype(bool) == m.filled).all()


def test_single_constraint_minimum():
    inst = VCSPInstance(2, 2).add_constraint(mixed_costs, (0, 1))
    sol = solve_sdp(build_las(inst, 2))
    assert isinstance(sol, GramSolution)
    assert abs(sol.objective - 1 / 3) <= 1e-5


def test_integral_rank_one_matrix_passes_checks():
    # the Gram matrix of a single feasible assignment is 0/1-valued and
    # marginalizes exactly
    inst = VCSPInstance(3, 2)
    inst.add_constraint(same_soft, (0, 1)).add_constraint(same_soft, (1, 2)).add_constraint(eq2, (0, 2))
    m = build_las(inst, 3)
    assignment = (0, 1, 0)  # cost: 0 + 0, equality (0,2) satisfied
    v = np.zeros(m.num_rows)
    v[0] = 1.0
    for (i, sigma), ridx in m.row_of.items():
        if all(assignment[var] == val
               for var, val in zip(m.aug[i].vars, sigma)):
            v[ridx] = 1.0
    M = np.outer(v, v)
    rep = verify_L7(M, m, eps=1e-12)
    assert rep.ok and rep.max_residual == 0.0
    assert m.value_of(M) == 0.0
    diag = m.residual_report(M)
    assert diag["min_eig"] >= -1e-12
    assert max(diag["class_spread"], diag["zero_ties"], diag["affine"]) == 0.0


def test_contradictory_pair():
    inst = VCSPInstance(2, 2)
    inst.add_constraint(eq2, (0, 1)).add_constraint(neq2, (0, 1))
    res = solve_sdp(build_las(inst, 2))
    assert isinstance(res, NumericallyInfeasible)
    assert res.iterations == 0  # caught before iterating
    # at level 1 the tie system alone is satisfiable, but the zero ties
    # between the two blocks still force the unit vector to vanish, so
    # infeasibility is reached through the cone instead
    low = solve_sdp(build_las(inst, 1, allow_low_level=True))
    assert isinstance(low, NumericallyInfeasible)
    assert low.iterations > 0
    assert low.displacement > 1e-3


def test_level_gate_and_cap():
    inst = VCSPInstance(2, 2).add_constraint(mixed_costs, (0, 1))
    with pytest.raises(ArityError):
        build_las(inst, 1)
    # below the widest scope the original block keeps its rows but is
    # not marginalized: only the unit row and two singleton ties remain
    low = build_las(inst, 1, allow_low_level=True)
    assert low.num_rows == 9
    assert low.A.shape[0] == 3
    with pytest.raises(CapExceeded):
        build_las(inst, 2, row_cap=5)


def test_dead_constraint_detected_structurally():
    # a relation with no feasible tuple pins its whole block, which
    # contradicts the unit-mass ties
    dead1 = rel("dead1", 1, 2, {})
    inst = VCSPInstance(2, 2).add_constraint(dead1, (0,)).add_constraint(same_soft, (0, 1))
    res = solve_sdp(build_las(inst, 2))
    assert isinstance(res, NumericallyInfeasible)
    assert res.iterations == 0

    dead2 = rel("dead2", 2, 2, {})
    inst2 = VCSPInstance(2, 2).add_constraint(dead2, (0, 1))
    res2 = solve_sdp(build_las(inst2, 2))
    assert isinstance(res2, NumericallyInfeasible)
    assert res2.iterations == 0


def test_equality_cycle_separates_lp_from_sdp():
    # x=y, y=z, x!=z: pairwise-consistent local distributions exist, so
    # the level-2 LP value is 0, but any Gram realization forces the
    # vectors of x and z together and the displacement detector fires
    inst = VCSPInstance(3, 2)
    inst.add_constraint(eq2, (0, 1)).add_constraint(eq2, (1, 2)).add_constraint(neq2, (0, 2))
    assert lp_opt(inst, 2) == ZERO
    assert not brute_force_opt(inst)[0].is_finite
    res = solve_sdp(build_las(inst, 2))
    assert isinstance(res, NumericallyInfeasible)
    assert res.displacement > 1e-3


def test_soft_triangle_value():
    # three soft equalities around a triangle: one must be paid
    inst = VCSPInstance(3, 2)
    inst.add_constraint(same_soft, (0, 1)).add_constraint(same_soft, (1, 2)).add_constraint(same_soft, (0, 2))
    assert brute_force_opt(inst)[0] == ExtValue(1)
    full = sdp_opt(inst, 3)
    assert abs(full - 1.0) <= 1e-4
    mid = sdp_opt(inst, 2)
    lp2 = lp_opt(inst, 2)
    assert float(lp2.frac) <= mid + 1e-5
    assert mid <= 1.0 + 1e-5


def test_sandwich_and_monotone_on_random_instances():
    rng = random.Random(7)
    for _ in range(8):
        n = rng.randint(2, 3)
        inst = _random_instance(rng, n, 2, rng.randint(1, 4))
        bf = brute_force_opt(inst)[0]
        bff = float(bf.frac) if bf.is_finite else float("inf")
        prev = None
        for k in (1, 2, 3):
            lp = lp_opt(inst, k)
            lpf = float(lp.frac) if lp.is_finite else float("inf")
            sd = sdp_opt(inst, k, allow_low_level=True)
            sdf = float("inf") if sd is INF else sd
            assert lpf <= sdf + 1e-5
            assert sdf <= bff + 1e-4
            if prev is not None:
                assert sdf >= prev - 1e-6
            prev = sdf


def test_corrupted_matrix_fails_verification():
    inst = VCSPInstance(3, 2)
    inst.add_constraint(same_soft, (0, 1)).add_constraint(same_soft, (1, 2)).add_constraint(same_soft, (0, 2))
    m = build_las(inst, 2)
    sol = solve_sdp(m)
    assert verify_L7(sol, m, eps=1e-6).ok
    M = sol.M.copy()
    r1 = m.row_of[(0, (0, 0))]
    r2 = m.row_of[(0, (0, 1))]
    M[r1, r2] += 0.01
    M[r2, r1] += 0.01
    rep = verify_L7(M, m, eps=1e-3)
    assert not rep.ok
    assert rep.max_residual >= 0.019


def test_solver_is_deterministic():
    inst = VCSPInstance(3, 2)
    inst.add_constraint(same_soft, (0, 1)).add_constraint(mixed_costs, (1, 2))
    a = solve_sdp(build_las(inst, 2))
    b = solve_sdp(build_las(inst, 2))
    assert a.objective == b.objective
    assert a.iterations == b.iterations


def test_suggested_epsilon():
    # distinct finite values 1/3, 1, 2, 5: smallest gap 2/3
    assert suggested_epsilon([mixed_costs, same_soft]) == Fraction(2, 3)
    assert suggested_epsilon([eq2, neq2]) is None

"""Core model: weighted relations, valued constraints, instances, languages.

A weighted relation maps tuples over a finite domain {0..d-1} to exact
rational costs or infinity.  An instance is a sum of constraints, each
applying a weighted relation to a scope of variables.  Brute-force oracles
here are the ground truth the relaxation modules are tested against.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from .errors import CapExceeded
from .values import INF, ZERO, ExtValue

ENUM_CAP = 10**7

# switch to the vectorised enumeration path above this many assignments
_NUMPY_PATH_MIN = 1 << 14
_INT64_SAFE = 1 << 62


class WeightedRelation:
    """A function D^r -> Q union {inf}, stored as a flat value table.

    The table index of a tuple (t_1, .., t_r) is its big-endian base-d
    encoding, so iterating the table walks tuples in lexicographic order.
    """

    __slots__ = ("name", "arity", "domain_size", "table")

    def __init__(self, name: str, arity: int, domain_size: int, table):
        if arity < 1:
            raise ValueError("arity must be at least 1")
        if domain_size < 1:
            raise ValueError("domain size must be at least 1")
        table = tuple(ExtValue(v) for v in table)
        if len(table) != domain_size**arity:
            raise ValueError(
                f"table for {name!r} has {len(table)} entries, "
                f"expected {domain_size**arity}"
            )
        self.name = name
        self.arity = arity
        self.domain_size = domain_size
        self.table = table

    @classmethod
    def from_entries(cls, name, arity, domain_size, entries, default=INF):
        """Build from a {tuple: value} dict; unlisted tuples get `default`."""
        default = ExtValue(default)
        table = [default] * domain_size**arity
        for tup, val in entries.items():
            if len(tup) != arity:
                raise ValueError(f"tuple {tup} has wrong arity for {name!r}")
            table[cls.encode(tup, domain_size)] = ExtValue(val)
        return cls(name, arity, domain_size, table)

    @staticmethod
    def encode(tup, domain_size: int) -> int:
        idx = 0
        for t in tup:
            if not 0 <= t < domain_size:
                raise ValueError(f"label {t} outside domain of size {domain_size}")
            idx = idx * domain_size + t
        return idx

    def value(self, tup) -> ExtValue:
        return self.table[self.encode(tup, self.domain_size)]

    def tuples(self):
        return itertools.product(range(self.domain_size), repeat=self.arity)

    def items(self):
        for tup in self.tuples():
            yield tup, self.table[self.encode(tup, self.domain_size)]

    def feasible_tuples(self):
        return [t for t, v in self.items() if v.is_finite]

    @property
    def is_crisp(self) -> bool:
        return all(v == ZERO or not v.is_finite for v in self.table)

    @property
    def is_finite_valued(self) -> bool:
        return all(v.is_finite for v in self.table)

    def min_finite(self):
        vals = [v for v in self.table if v.is_finite]
        return min(vals) if vals else None

    def max_finite(self):
        vals = [v for v in self.table if v.is_finite]
        return max(vals) if vals else None

    def __eq__(self, other):
        if not isinstance(other, WeightedRelation):
            return NotImplemented
        return (
            self.arity == other.arity
            and self.domain_size == other.domain_size
            and self.table == other.table
        )

    def __hash__(self):
        return hash((self.arity, self.domain_size, self.table))

    def __repr__(self):
        return f"WeightedRelation({self.name!r}, arity={self.arity}, d={self.domain_size})"


def feas_of(rel: WeightedRelation, name: str | None = None) -> WeightedRelation:
    """Crisp relation of the finite-cost tuples of `rel`."""
    table = [ZERO if v.is_finite else INF for v in rel.table]
    return WeightedRelation(name or f"feas_{rel.name}", rel.arity, rel.domain_size, table)


def opt_of(rel: WeightedRelation, name: str | None = None) -> WeightedRelation:
    """Crisp relation of the minimum-cost tuples among feas(rel)."""
    best = rel.min_finite()
    if best is None:
        table = [INF] * len(rel.table)
    else:
        table = [ZERO if v == best else INF for v in rel.table]
    return WeightedRelation(name or f"opt_{rel.name}", rel.arity, rel.domain_size, table)


class ValuedConstraint:
    """One application of a weighted relation to a tuple of variables."""

    __slots__ = ("relation", "scope")

    def __init__(self, relation: WeightedRelation, scope):
        scope = tuple(scope)
        if len(scope) != relation.arity:
            raise ValueError(
                f"scope {scope} has arity {len(scope)}, "
                f"relation {relation.name!r} wants {relation.arity}"
            )
        self.relation = relation
        self.scope = scope

    @property
    def scope_set(self) -> frozenset:
        return frozenset(self.scope)

    def value(self, assignment) -> ExtValue:
        return self.relation.value(tuple(assignment[v] for v in self.scope))

    def __repr__(self):
        return f"ValuedConstraint({self.relation.name!r}, {self.scope})"


class VCSPInstance:
    """n variables over {0..d-1} plus an ordered constraint list.

    Duplicate constraints are kept; the objective is the plain sum.
    """

    def __init__(self, num_vars: int, domain_size: int, constraints=()):
        if num_vars < 0:
            raise ValueError("negative variable count")
        self.num_vars = num_vars
        self.domain_size = domain_size
        self.constraints = []
        for c in constraints:
            self.add(c)

    def add(self, constraint: ValuedConstraint):
        if constraint.relation.domain_size != self.domain_size:
            raise ValueError("constraint domain size differs from instance")
        for v in constraint.scope:
            if not 0 <= v < self.num_vars:
                raise ValueError(f"variable {v} out of range")
        self.constraints.append(constraint)
        return self

    def add_constraint(self, relation: WeightedRelation, scope):
        return self.add(ValuedConstraint(relation, scope))

    def max_arity(self) -> int:
        return max((c.relation.arity for c in self.constraints), default=0)

    def relations(self):
        """Distinct relations in constraint order."""
        seen, out = set(), []
        for c in self.constraints:
            if id(c.relation) not in seen:
                seen.add(id(c.relation))
                out.append(c.relation)
        return out

    def __repr__(self):
        return (
            f"VCSPInstance(n={self.num_vars}, d={self.domain_size}, "
            f"q={len(self.constraints)})"
        )


def evaluate(instance: VCSPInstance, assignment) -> ExtValue:
    """Objective value of a total assignment (tuple/list of labels)."""
    total = ZERO
    for c in instance.constraints:
        total = total + c.value(assignment)
        if not total.is_finite:
            return INF
    return total


def brute_force_opt(instance: VCSPInstance, cap: int = ENUM_CAP):
    """Exact optimum by full enumeration.

    Returns (value, assignment) where the assignment is the lexicographically
    smallest optimal one, or (INF, None) when no assignment has finite value.
    Raises CapExceeded when d^n > cap.
    """
    n, d = instance.num_vars, instance.domain_size
    if n == 0:
        return ZERO, ()
    space = d**n
    if space > cap:
        raise CapExceeded(f"assignment space {d}^{n} exceeds cap {cap}")
    if space >= _NUMPY_PATH_MIN:
        result = _brute_force_numpy(instance)
        if result is not None:
            return result
    best_val, best_asg = INF, None
    for asg in itertools.product(range(d), repeat=n):
        val = evaluate(instance, asg)
        if val < best_val:
            best_val, best_asg = val, asg
    if best_asg is None:
        return INF, None
    return best_val, best_asg


def is_satisfiable(instance: VCSPInstance, cap: int = ENUM_CAP) -> bool:
    value, _ = brute_force_opt(instance, cap=cap)
    return value.is_finite


def _scaled_tables(instance: VCSPInstance):
    """Integer-scaled copies of all tables, or None when int64 is unsafe.

    Returns (lcm, {id(rel): (int_table, inf_mask)}).
    """
    lcm = 1
    for rel in instance.relations():
        for v in rel.table:
            if v.is_finite:
                lcm = math.lcm(lcm, v.frac.denominator)
    tables = {}
    bound = 0
    for rel in instance.relations():
        ints, infs = [], []
        m = 0
        for v in rel.table:
            if v.is_finite:
                x = int(v.frac * lcm)
                ints.append(x)
                infs.append(False)
                m = max(m, abs(x))
            else:
                ints.append(0)
                infs.append(True)
        tables[id(rel)] = (
            np.array(ints, dtype=np.int64),
            np.array(infs, dtype=bool),
        )
        bound += m
    if bound * max(1, len(instance.constraints)) >= _INT64_SAFE:
        return None
    return lcm, tables


def _brute_force_numpy(instance: VCSPInstance):
    """Vectorised exact enumeration; assignment ids follow lex order."""
    scaled = _scaled_tables(instance)
    if scaled is None:
        return None
    lcm, tables = scaled
    n, d = instance.num_vars, instance.domain_size
    space = d**n
    strides = [d ** (n - 1 - v) for v in range(n)]
    chunk = 1 << 20
    best_val = None
    best_id = None
    for start in range(0, space, chunk):
        ids = np.arange(start, min(start + chunk, space), dtype=np.int64)
        obj = np.zeros(ids.shape, dtype=np.int64)
        inf = np.zeros(ids.shape, dtype=bool)
        for c in instance.constraints:
            idx = np.zeros(ids.shape, dtype=np.int64)
            for x in c.scope:
                idx = idx * d + (ids // strides[x]) % d
            int_table, inf_mask = tables[id(c.relation)]
            obj += int_table[idx]
            inf |= inf_mask[idx]
        feas = ~inf
        if not feas.any():
            continue
        obj_masked = np.where(feas, obj, np.iinfo(np.int64).max)
        pos = int(np.argmin(obj_masked))
        val = int(obj_masked[pos])
        if best_val is None or val < best_val:
            best_val = val
            best_id = int(ids[pos])
    if best_val is None:
        return INF, None
    asg = tuple((best_id // strides[v]) % d for v in range(n))
    return ExtValue(Fraction(best_val, lcm)), asg


class ConstraintLanguage:
    """Named weighted relations over a common domain."""

    def __init__(self, domain_size: int, relations=()):
        if domain_size < 1:
            raise ValueError("domain size must be at least 1")
        self.domain_size = domain_size
        self._by_name: dict[str, WeightedRelation] = {}
        for rel in relations:
            self.add(rel)

    def add(self, rel: WeightedRelation):
        if rel.domain_size != self.domain_size:
            raise ValueError(f"relation {rel.name!r} has wrong domain size")
        if rel.name in self._by_name:
            raise ValueError(f"duplicate relation name {rel.name!r}")
        self._by_name[rel.name] = rel
        return self

    def get(self, name: str) -> WeightedRelation:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def relations(self):
        return list(self._by_name.values())

    def names(self):
        return list(self._by_name.keys())

    def max_arity(self) -> int:
        return max((r.arity for r in self.relations()), default=0)

    @property
    def is_crisp(self) -> bool:
        return all(r.is_crisp for r in self.relations())

    def __len__(self):
        return len(self._by_name)

    def __repr__(self):
        return f"ConstraintLanguage(d={self.domain_size}, relations={self.names()})"


def restrict_relation(rel: WeightedRelation, sub_domain) -> WeightedRelation:
    """Reindex `rel` to the sorted sub-domain (labels renamed to 0..|S|-1)."""
    sub = sorted(sub_domain)
    d2 = len(sub)
    table = []
    for tup in itertools.product(range(d2), repeat=rel.arity):
        table.append(rel.value(tuple(sub[t] for t in tup)))
    return WeightedRelation(rel.name, rel.arity, d2, table)


def restrict_language(lang: ConstraintLanguage, sub_domain) -> ConstraintLanguage:
    return ConstraintLanguage(
        len(set(sub_domain)),
        [restrict_relation(r, sub_domain) for r in lang.relations()],
    )

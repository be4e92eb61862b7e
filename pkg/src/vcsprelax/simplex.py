"""Exact two-phase simplex over rationals.

Rows are kept as sparse {column: coefficient} dicts.  Pivoting uses
largest-coefficient pricing but switches permanently to Bland's rule after a
degenerate stall, so termination is guaranteed while typical solves stay
fast.  No floating point anywhere: coefficients are gmpy2 rationals when
available (much faster) and fractions.Fraction otherwise; results are
returned as Fraction either way.
"""

from __future__ import annotations

from fractions import Fraction

try:
    from gmpy2 import mpq as _num
except ImportError:  # pragma: no cover
    _num = Fraction

# degenerate pivots tolerated before switching to Bland
_STALL_LIMIT = 60

# below this many rows the float-guided warm start is not worth its overhead
_FLOAT_GUIDE_MIN_ROWS = 150

_ZERO = _num(0)
_ONE = _num(1)


def _to_fraction(v) -> Fraction:
    return Fraction(v.numerator, v.denominator)


class ExactLP:
    """min c.x subject to equality / <= rows and x >= 0."""

    def __init__(self, num_vars: int):
        self.num_vars = num_vars
        self.objective: dict[int, object] = {}
        self.rows: list[tuple[dict[int, object], object, str]] = []

    def set_objective(self, coeffs):
        self.objective = {c: _num(v) for c, v in coeffs.items() if v != 0}

    def _check(self, coeffs):
        clean = {}
        for c, v in coeffs.items():
            if not 0 <= c < self.num_vars:
                raise ValueError(f"column {c} out of range")
            v = _num(v)
            if v != 0:
                clean[c] = v
        return clean

    def add_eq(self, coeffs, rhs):
        self.rows.append((self._check(coeffs), _num(rhs), "eq"))

    def add_le(self, coeffs, rhs):
        self.rows.append((self._check(coeffs), _num(rhs), "le"))

    def add_ge(self, coeffs, rhs):
        neg = {c: -v for c, v in coeffs.items()}
        self.add_le(neg, -_num(rhs))


class LPResult:
    __slots__ = ("status", "value", "x", "pivots")

    def __init__(self, status, value=None, x=None, pivots=0):
        self.status = status  # 'optimal' | 'infeasible' | 'unbounded'
        self.value = value
        self.x = x
        self.pivots = pivots

    def __repr__(self):
        return f"LPResult({self.status}, value={self.value})"


class _Tableau:
    def __init__(self, rows, rhs, basis, num_cols):
        self.rows = rows          # list of sparse dicts
        self.rhs = rhs            # list of rationals, >= 0 invariant
        self.basis = basis        # basis[i] = basic column of row i
        self.num_cols = num_cols
        self.pivots = 0

    def pivot(self, row_idx, col):
        row = self.rows[row_idx]
        piv = row[col]
        if piv != _ONE:
            inv = _ONE / piv
            self.rows[row_idx] = row = {c: v * inv for c, v in row.items()}
            self.rhs[row_idx] *= inv
        b = self.rhs[row_idx]
        for i, other in enumerate(self.rows):
            if i == row_idx:
                continue
            f = other.get(col)
            if f is None or f == 0:
                continue
            for c, v in row.items():
                nv = other.get(c, _ZERO) - f * v
                if nv == 0:
                    other.pop(c, None)
                else:
                    other[c] = nv
            self.rhs[i] -= f * b
        self.basis[row_idx] = col
        self.pivots += 1

    def solve(self, cost, allowed, max_pivots=None):
        """Minimize cost over columns in `allowed`; returns (status, z, zrow).

        `cost` is a sparse dict over columns.  The tableau must hold a
        feasible basis on entry.
        """
        zrow = dict(cost)
        for i, b in enumerate(self.basis):
            f = zrow.get(b)
            if f:
                for c, v in self.rows[i].items():
                    nv = zrow.get(c, _ZERO) - f * v
                    if nv == 0:
                        zrow.pop(c, None)
                    else:
                        zrow[c] = nv
        bland = False
        stall = 0
        while True:
            if max_pivots is not None and self.pivots > max_pivots:
                raise RuntimeError("pivot budget exhausted")
            enter = None
            if bland:
                for c in sorted(zrow):
                    if c in allowed and zrow[c] < 0:
                        enter = c
                        break
            else:
                best = _ZERO
                for c, v in zrow.items():
                    if c in allowed and v < 0 and (v < best or (v == best and (enter is None or c < enter))):
                        best = v
                        enter = c
            if enter is None:
                return "optimal", self._objective(cost), zrow
            # ratio test; ties broken by smallest basic column (Bland leave)
            leave = None
            best_ratio = None
            for i, row in enumerate(self.rows):
                a = row.get(enter)
                if a is None or a <= 0:
                    continue
                ratio = self.rhs[i] / a
                if (
                    best_ratio is None
                    or ratio < best_ratio
                    or (ratio == best_ratio and self.basis[i] < self.basis[leave])
                ):
                    best_ratio = ratio
                    leave = i
            if leave is None:
                return "unbounded", None, zrow
            self.pivot(leave, enter)
            f = zrow.get(enter)
            if f:
                row = self.rows[leave]
                for c, v in row.items():
                    nv = zrow.get(c, _ZERO) - f * v
                    if nv == 0:
                        zrow.pop(c, None)
                    else:
                        zrow[c] = nv
            if not bland:
                # a zero step leaves the objective unchanged
                if best_ratio == 0:
                    stall += 1
                    if stall >= _STALL_LIMIT:
                        bland = True
                else:
                    stall = 0

    def _objective(self, cost):
        total = _ZERO
        for i, b in enumerate(self.basis):
            f = cost.get(b)
            if f:
                total += f * self.rhs[i]
        return total

    def solution(self, num_vars):
        x = [_ZERO] * num_vars
        for i, b in enumerate(self.basis):
            if b < num_vars:
                x[b] = self.rhs[i]
        return x


def _float_guided_tableau(rows, rhs, objective, total_cols):
    """Crash an exact starting basis suggested by a float solve.

    Returns a primal-feasible _Tableau ready for the final pricing pass,
    the string "infeasible" when exact elimination proves the equality
    system inconsistent, or None when the guess cannot be used (caller
    falls back to the pure two-phase path).  Floats never touch the
    returned numbers; they only order the basis candidates.
    """
    try:
        import numpy as np
        from scipy.optimize import linprog
        from scipy.sparse import csc_matrix
    except ImportError:  # pragma: no cover
        return None
    m = len(rows)
    data, ri, ci = [], [], []
    for i, row in enumerate(rows):
        for c, v in row.items():
            ri.append(i)
            ci.append(c)
            data.append(float(v))
    mat = csc_matrix((data, (ri, ci)), shape=(m, total_cols))
    bvec = np.array([float(v) for v in rhs])
    cvec = np.zeros(total_cols)
    for c, v in objective.items():
        cvec[c] = float(v)
    try:
        res = linprog(cvec, A_eq=mat, b_eq=bvec, bounds=(0, None), method="highs")
    except Exception:
        return None
    if not res.success:
        return None
    order = np.argsort(-res.x, kind="stable")
    priority = [int(j) for j in order if res.x[j] > 1e-9]
    rest = [c for c in range(total_cols) if c not in set(priority)]

    tab = _Tableau([dict(r) for r in rows], list(rhs), [None] * m, total_cols)
    unpivoted = set(range(m))
    for c in priority + rest:
        if not unpivoted:
            break
        best = None
        for i in unpivoted:
            v = tab.rows[i].get(c)
            if v:
                nn = len(tab.rows[i])
                if best is None or nn < best[1] or (nn == best[1] and i < best[0]):
                    best = (i, nn)
        if best is None:
            continue
        tab.pivot(best[0], c)
        unpivoted.discard(best[0])
    drop = sorted(unpivoted)
    for i in drop:
        if tab.rows[i]:
            return None
        if tab.rhs[i] != 0:
            return "infeasible"
    for i in reversed(drop):
        del tab.rows[i]
        del tab.rhs[i]
        del tab.basis[i]
    if any(b < 0 for b in tab.rhs):
        return None
    return tab


def solve_lp(lp: ExactLP) -> LPResult:
    """Two-phase exact simplex; see module docstring for the pivot rule.

    Large programs first try a warm start: a float solve suggests a basis,
    which is rebuilt exactly and handed to the pricing loop.  The fallback
    and the final pass are exact either way.
    """
    n = lp.num_vars
    # standard form: append one slack per <= row
    num_slacks = sum(1 for _, _, kind in lp.rows if kind == "le")
    rows = []
    rhs = []
    basis = []
    col = n
    for coeffs, b, kind in lp.rows:
        row = dict(coeffs)
        if kind == "le":
            row[col] = _ONE
            col += 1
        rows.append(row)
        rhs.append(_num(b))
    total_cols = n + num_slacks
    # normalize rhs >= 0
    for i in range(len(rows)):
        if rhs[i] < 0:
            rows[i] = {c: -v for c, v in rows[i].items()}
            rhs[i] = -rhs[i]

    if len(rows) >= _FLOAT_GUIDE_MIN_ROWS:
        guided = _float_guided_tableau(rows, rhs, lp.objective, total_cols)
        if guided == "infeasible":
            return LPResult("infeasible")
        if guided is not None:
            cost = {c: _num(v) for c, v in lp.objective.items()}
            status, z, _ = guided.solve(cost, set(range(total_cols)))
            if status == "unbounded":
                return LPResult("unbounded", pivots=guided.pivots)
            xs = guided.solution(n)
            value = sum((v * xs[c] for c, v in lp.objective.items()), _ZERO)
            x = [_to_fraction(v) for v in xs]
            return LPResult("optimal", _to_fraction(value), x, pivots=guided.pivots)
    # initial basis: reuse a slack when its row kept +1 sign, else artificial
    art_cols = []
    phase1_cost = {}
    for i, row in enumerate(rows):
        # each slack lives in exactly one row; usable as basic iff sign kept
        slack = None
        for c in row:
            if c >= n and row[c] == _ONE:
                slack = c
                break
        if slack is not None:
            basis.append(slack)
        else:
            a = total_cols + len(art_cols)
            art_cols.append(a)
            row[a] = _ONE
            basis.append(a)
            phase1_cost[a] = _ONE
    all_cols = total_cols + len(art_cols)
    tab = _Tableau(rows, rhs, basis, all_cols)

    if art_cols:
        allowed = set(range(all_cols))
        status, z, _ = tab.solve(phase1_cost, allowed)
        if status != "optimal" or z != 0:
            return LPResult("infeasible", pivots=tab.pivots)
        art_set = set(art_cols)
        # drive leftover artificials out of the basis or drop redundant rows
        drop = []
        for i in range(len(tab.rows)):
            if tab.basis[i] in art_set:
                chosen = None
                for c in sorted(tab.rows[i]):
                    if c not in art_set and tab.rows[i][c] != 0:
                        chosen = c
                        break
                if chosen is None:
                    drop.append(i)
                else:
                    tab.pivot(i, chosen)
        for i in reversed(drop):
            del tab.rows[i]
            del tab.rhs[i]
            del tab.basis[i]
        for row in tab.rows:
            for c in art_set:
                row.pop(c, None)

    allowed = set(range(total_cols))
    cost = {c: _num(v) for c, v in lp.objective.items()}
    status, z, _ = tab.solve(cost, allowed)
    if status == "unbounded":
        return LPResult("unbounded", pivots=tab.pivots)
    xs = tab.solution(n)
    value = sum((v * xs[c] for c, v in lp.objective.items()), _ZERO)
    x = [_to_fraction(v) for v in xs]
    return LPResult("optimal", _to_fraction(value), x, pivots=tab.pivots)

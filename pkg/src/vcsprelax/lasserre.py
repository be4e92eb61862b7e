"""Level-k semidefinite relaxations of VCSP instances in Gram form.

The level-k relaxation assigns one vector per (block, assignment) pair,
where the blocks are the instance's constraints plus one null block per
admissible scope set, exactly as in the LP hierarchy.  A unit vector is
added at index 0.  The Gram matrix of these vectors is constrained by
entry ties (pairs with equal combined scope and compatible assignments
share a value), zeros for incompatible or infeasible pairs, unit mass
per block, and positive semidefiniteness; the objective is linear in
the diagonal.

Solving is numerical.  An operator-splitting scheme alternates an exact
projection onto the affine part (through a cached factorization of the
tie system) with an eigenvalue projection onto the semidefinite cone.
The affine part includes the marginalization identities that every
exactly feasible Gram matrix satisfies; enforcing them directly does
not change the optimum but makes the returned matrices marginalize to
machine precision instead of solver tolerance.

Objective values are binary64 floats.  Exactness guarantees live in the
LP module, not here.
"""

from __future__ import annotations

import itertools
from array import array
from collections import deque
from fractions import Fraction

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import ArityError, CapExceeded, NonConvergence
from .model import VCSPInstance
from .sherali_adams import augment_instance
from .values import INF

ROW_CAP = 4000
DEFAULT_EPS = 1e-7
DEFAULT_MAX_ITER = 50000
DEFAULT_DELTA_INF = 1e-5

# iteration schedule for the splitting scheme
_ADAPT_UNTIL = 500
_ADAPT_EVERY = 50
_STALL_START = 800
_STALL_WINDOW = 300
_STALL_SPREAD = 0.05
_RHO_MIN = 1e-3
_RHO_MAX = 1e3


class LasModel:
    """Static description of one level-k Gram relaxation.

    Rows of the Gram matrix are indexed by `rows`: index 0 is the unit
    row, the rest are (block, assignment) pairs over feasible
    assignments only.  Entries are partitioned into classes of equal
    value (by combined scope and assignment) plus a structurally-zero
    remainder; `filled` marks the class positions.  The affine tie
    system over class values is `A y = a`.
    """

    def __init__(self, instance, level, subset_mode, aug, designated,
                 rows, row_of, aug_rows, class_masks, num_classes,
                 pos_r, pos_c, cls, filled, A, a, b, y0,
                 obj_rows, obj_costs):
        self.instance = instance
        self.level = level
        self.subset_mode = subset_mode
        self.aug = aug
        self.designated = designated
        self.rows = rows
        self.row_of = row_of
        self.aug_rows = aug_rows
        self.class_masks = class_masks
        self.num_classes = num_classes
        self.pos_r = pos_r
        self.pos_c = pos_c
        self.cls = cls
        self.filled = filled
        self.A = A
        self.a = a
        self.b = b
        self.y0 = y0
        self.obj_rows = obj_rows
        self.obj_costs = obj_costs
        self._fact = None

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def __repr__(self):
        return (f"LasModel(level={self.level}, rows={self.num_rows}, "
                f"classes={self.num_classes}, ties={self.A.shape[0]})")

    def moment_matrix(self, y):
        """Scatter class values into a full Gram matrix."""
        m = np.zeros((self.num_rows, self.num_rows))
        m[self.pos_r, self.pos_c] = np.asarray(y)[self.cls]
        return m

    def class_means(self, M):
        """Average each entry class of M, weighted by class size."""
        nc = np.bincount(self.cls, minlength=self.num_classes)
        sums = np.bincount(self.cls, weights=M[self.pos_r, self.pos_c],
                           minlength=self.num_classes)
        return sums / np.maximum(nc, 1)

    def value_of(self, M) -> float:
        """Objective value of a Gram matrix: cost-weighted diagonal."""
        if len(self.obj_rows) == 0:
            return 0.0
        return float(self.obj_costs @ M[self.obj_rows, self.obj_rows])

    def residual_report(self, M) -> dict:
        """Feasibility diagnostics for an arbitrary Gram matrix."""
        M = np.asarray(M, dtype=float)
        y = self.class_means(M)
        spread = float(np.abs(M[self.pos_r, self.pos_c] - y[self.cls]).max(initial=0.0))
        zero_part = float(np.abs(M[~self.filled]).max(initial=0.0))
        affine = float(np.abs(self.A @ y - self.a).max(initial=0.0))
        negativity = float(max(0.0, -y.min(initial=0.0)))
        min_eig = float(np.linalg.eigvalsh(M)[0])
        return {
            "unit": abs(float(M[0, 0]) - 1.0),
            "class_spread": spread,
            "zero_ties": zero_part,
            "affine": affine,
            "negativity": negativity,
            "min_eig": min_eig,
        }

    def _solver_data(self):
        """Rank-reduced tie system and its cached factorization."""
        if self._fact is None:
            self._fact = _factor_ties(self)
        return self._fact


class _TieFactorization:
    def __init__(self, A_red, a_red, weights, chol, inconsistent):
        self.A_red = A_red
        self.a_red = a_red
        self.weights = weights
        self.chol = chol
        self.inconsistent = inconsistent

    def project(self, v):
        """Projection of v onto {A y = a} in the diag(weights) metric."""
        gap = self.A_red @ v - self.a_red
        mu = scipy.linalg.cho_solve(self.chol, gap)
        return v - (self.A_red.T @ mu) / self.weights


def _factor_ties(model: LasModel) -> _TieFactorization:
    A, a = model.A, model.a
    weights = np.bincount(model.cls, minlength=model.num_classes).astype(float) + 1.0
    touched = np.unique(A.indices) if A.nnz else np.array([0])
    dense_t = A[:, touched].toarray().T
    _, r_mat, piv = scipy.linalg.qr(dense_t, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_mat))
    tol = max(dense_t.shape) * np.finfo(float).eps * (diag[0] if diag.size else 1.0)
    rank = int((diag > max(tol, 1e-12)).sum())
    keep = np.sort(piv[:rank])
    A_red = A[keep].tocsr()
    a_red = a[keep]
    gram = (A_red @ scipy.sparse.diags(1.0 / weights) @ A_red.T).toarray()
    chol = scipy.linalg.cho_factor(gram)
    fact = _TieFactorization(A_red, a_red, weights, chol, False)
    # dropped rows must be consequences of the kept ones; if not, the
    # tie system has no solution and neither does the relaxation
    probe = fact.project(np.zeros(model.num_classes))
    fact.inconsistent = bool(np.abs(A @ probe - a).max(initial=0.0) > 1e-7)
    return fact


class GramSolution:
    """A converged Gram matrix with objective and diagnostics."""

    status = "solved"

    def __init__(self, M, objective, iterations, eps, residuals, model=None):
        self.M = M
        self.objective = objective
        self.iterations = iterations
        self.eps = eps
        self.residuals = residuals
        self.model = model

    def __repr__(self):
        return (f"GramSolution(objective={self.objective:.6g}, "
                f"iterations={self.iterations})")


class NumericallyInfeasible:
    """Returned when the affine part and the cone stay apart.

    `displacement` is the stabilized distance between the two
    projection outputs (infinity when the tie system itself is
    inconsistent, which is decided before iterating).
    """

    status = "infeasible"

    def __init__(self, iterations, displacement, note, eps):
        self.iterations = iterations
        self.displacement = displacement
        self.note = note
        self.eps = eps

    def __repr__(self):
        return (f"NumericallyInfeasible(displacement={self.displacement:.3g}, "
                f"iterations={self.iterations}, note={self.note!r})")


def build_las(
    instance: VCSPInstance,
    level: int,
    subset_mode: str = "full",
    row_cap: int = ROW_CAP,
    allow_low_level: bool = False,
) -> LasModel:
    """Assemble the level-k Gram relaxation of an instance.

    Raises ArityError when the level is below the largest constraint
    scope unless allow_low_level is set; the relaxation is still sound
    below that level, but blocks wider than the level are tied to the
    rest only through the cone, not through marginalization.
    """
    if level < 1:
        raise ValueError("level must be at least 1")
    d = instance.domain_size
    n = instance.num_vars
    max_scope = max((len(c.scope_set) for c in instance.constraints), default=0)
    if max_scope > level and not allow_low_level:
        raise ArityError(
            f"level {level} is below the widest constraint scope ({max_scope})")
    aug, designated = augment_instance(instance, level, subset_mode)

    rows = [None]
    row_of = {}
    aug_rows = []
    obj_terms = []
    for i, entry in enumerate(aug):
        block = {}
        for sigma, cost in entry.assignments(d):
            row_of[(i, sigma)] = len(rows)
            block[sigma] = len(rows)
            rows.append((i, sigma))
            if cost:
                obj_terms.append((len(rows) - 1, i, sigma, cost))
        aug_rows.append(block)
    if len(rows) > row_cap:
        raise CapExceeded(f"Gram dimension {len(rows)} exceeds cap {row_cap}")

    # assignments are encoded as integers in base d+1, one digit per
    # variable, 0 meaning unconstrained; disjoint scopes then combine
    # by addition
    base = d + 1
    powers = [base ** t for t in range(n)]

    virt_enc = []
    virt_mask = []
    virt_vals = []
    virt_row = []
    virt_enc.append(0)
    virt_mask.append(0)
    virt_vals.append([-1] * n)
    virt_row.append(0)
    for i, entry in enumerate(aug):
        vars_ = entry.vars
        for sigma in itertools.product(range(d), repeat=len(vars_)):
            enc = 0
            mask = 0
            vals = [-1] * n
            for v, val in zip(vars_, sigma):
                enc += (val + 1) * powers[v]
                mask |= 1 << v
                vals[v] = val
            virt_enc.append(enc)
            virt_mask.append(mask)
            virt_vals.append(vals)
            virt_row.append(row_of.get((i, sigma)))

    class_of_key = {0: 0}
    class_masks = [0]
    pinned = set()
    acc_r = array("l")
    acc_c = array("l")
    acc_k = array("l")
    nv = len(virt_enc)
    for ai in range(nv):
        enc_a = virt_enc[ai]
        mask_a = virt_mask[ai]
        vals_a = virt_vals[ai]
        row_a = virt_row[ai]
        for bi in range(ai, nv):
            mask_b = virt_mask[bi]
            overlap = mask_a & mask_b
            if overlap:
                vals_b = virt_vals[bi]
                shared = 0
                bad = False
                om = overlap
                while om:
                    t = (om & -om).bit_length() - 1
                    om &= om - 1
                    va = vals_a[t]
                    if va != vals_b[t]:
                        bad = True
                        break
                    shared += (va + 1) * powers[t]
                if bad:
                    continue
                enc = enc_a + virt_enc[bi] - shared
                mask = mask_a | mask_b
            else:
                enc = enc_a + virt_enc[bi]
                mask = mask_a | mask_b
            cid = class_of_key.get(enc)
            if cid is None:
                cid = len(class_masks)
                class_of_key[enc] = cid
                class_masks.append(mask)
            row_b = virt_row[bi]
            if row_a is None or row_b is None:
                pinned.add(cid)
            else:
                acc_r.append(row_a)
                acc_c.append(row_b)
                acc_k.append(cid)

    old_count = len(class_masks)
    keep_mask = np.ones(old_count, dtype=bool)
    for cid in pinned:
        keep_mask[cid] = False
    old2new = -np.ones(old_count, dtype=np.int64)
    old2new[keep_mask] = np.arange(int(keep_mask.sum()))
    num_classes = int(keep_mask.sum())

    R = np.frombuffer(acc_r, dtype=np.int64) if acc_r else np.zeros(0, np.int64)
    Cc = np.frombuffer(acc_c, dtype=np.int64) if acc_c else np.zeros(0, np.int64)
    K = np.frombuffer(acc_k, dtype=np.int64) if acc_k else np.zeros(0, np.int64)
    live = keep_mask[K]
    R, Cc, K = R[live], Cc[live], K[live]
    off = R != Cc
    pos_r = np.concatenate([R, Cc[off]])
    pos_c = np.concatenate([Cc, R[off]])
    cls = old2new[np.concatenate([K, K[off]])]

    N = len(rows)
    filled = np.zeros((N, N), dtype=bool)
    filled[pos_r, pos_c] = True

    kept_masks = [m for m, k in zip(class_masks, keep_mask) if k]
    y0 = np.array([float(d) ** -bin(m).count("1") for m in kept_masks])

    def class_id(enc):
        cid = class_of_key.get(enc)
        if cid is None or not keep_mask[cid]:
            return None
        return int(old2new[cid])

    # tie rows: unit mass at the top, then one marginalization row per
    # designated scope set, eliminated variable, and outer assignment;
    # pinned classes contribute a fixed zero and are omitted
    data, rix, cix, rhs = [], [], [], []
    data.append(1.0)
    rix.append(0)
    cix.append(0)
    rhs.append(1.0)
    row_no = 1
    for X in sorted(designated, key=lambda t: (len(t), t)):
        for v in X:
            rest = tuple(u for u in X if u != v)
            for sigma in itertools.product(range(d), repeat=len(rest)):
                enc_rest = sum((s + 1) * powers[u] for u, s in zip(rest, sigma))
                terms = []
                for val in range(d):
                    cid = class_id(enc_rest + (val + 1) * powers[v])
                    if cid is not None:
                        terms.append((cid, 1.0))
                tgt = class_id(enc_rest)
                if tgt is not None:
                    terms.append((tgt, -1.0))
                if not terms:
                    continue
                for cid, coef in terms:
                    data.append(coef)
                    rix.append(row_no)
                    cix.append(cid)
                rhs.append(0.0)
                row_no += 1
    A = scipy.sparse.csr_matrix(
        (data, (rix, cix)), shape=(row_no, num_classes))
    a = np.array(rhs)

    b = np.zeros(num_classes)
    obj_rows = []
    obj_costs = []
    for ridx, i, sigma, cost in obj_terms:
        obj_rows.append(ridx)
        obj_costs.append(float(cost))
        enc = sum((s + 1) * powers[v]
                  for v, s in zip(aug[i].vars, sigma))
        cid = class_id(enc)
        if cid is not None:
            b[cid] += float(cost)
    obj_rows = np.array(obj_rows, dtype=np.int64)
    obj_costs = np.array(obj_costs)

    return LasModel(instance, level, subset_mode, aug, designated,
                    rows, row_of, aug_rows, kept_masks, num_classes,
                    pos_r, pos_c, cls, filled, A, a, b, y0,
                    obj_rows, obj_costs)


def solve_sdp(
    model: LasModel,
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
    delta_inf: float = DEFAULT_DELTA_INF,
    rho: float = 1.0,
):
    """Run the splitting scheme on a built model.

    Returns a GramSolution on convergence or NumericallyInfeasible when
    the affine part and the cone are detected to stay a positive
    distance apart.  Raises NonConvergence after max_iter undecided
    iterations.  Deterministic for fixed inputs.
    """
    fact = model._solver_data()
    if fact.inconsistent:
        return NumericallyInfeasible(
            iterations=0, displacement=float("inf"),
            note="tie system inconsistent", eps=eps)

    nc_w = np.bincount(model.cls, minlength=model.num_classes).astype(float)
    pos_r, pos_c, cls = model.pos_r, model.pos_c, model.cls
    b = model.b
    y = model.y0.copy()
    w = y.copy()
    u = np.zeros_like(y)
    N = model.num_rows
    M_y = np.zeros((N, N))
    M_y[pos_r, pos_c] = y[cls]
    Z = M_y.copy()
    U = np.zeros((N, N))
    hist = deque(maxlen=_STALL_WINDOW)
    r = s = float("inf")

    for it in range(1, max_iter + 1):
        g1 = np.bincount(cls, weights=(Z - U)[pos_r, pos_c],
                         minlength=model.num_classes) / np.maximum(nc_w, 1.0)
        v = (nc_w * g1 + (w - u) - b / rho) / (nc_w + 1.0)
        y = fact.project(v)
        M_y[pos_r, pos_c] = y[cls]

        evals, evecs = np.linalg.eigh(M_y + U)
        take = evals > 0.0
        if take.any():
            part = evecs[:, take] * evals[take]
            Zn = part @ evecs[:, take].T
            Zn = (Zn + Zn.T) * 0.5
        else:
            Zn = np.zeros_like(M_y)
        wn = np.maximum(y + u, 0.0)

        U += M_y - Zn
        u += y - wn
        r = max(float(np.abs(M_y - Zn).max()), float(np.abs(y - wn).max()))
        s = rho * max(float(np.abs(Zn - Z).max()),
                      float(np.abs(wn - w).max(initial=0.0)))
        Z = Zn
        w = wn
        hist.append(r)

        if r <= eps and s <= eps:
            return _polish(model, fact, Z, it, eps,
                           {"primal": r, "dual": s, "rho": rho})
        if it <= _ADAPT_UNTIL and it % _ADAPT_EVERY == 0:
            if r > 10.0 * s and rho < _RHO_MAX:
                rho *= 2.0
                U *= 0.5
                u *= 0.5
            elif s > 10.0 * r and rho > _RHO_MIN:
                rho *= 0.5
                U *= 2.0
                u *= 2.0
        if (it >= _STALL_START and it % 50 == 0
                and len(hist) == _STALL_WINDOW):
            lo, hi = min(hist), max(hist)
            if lo > delta_inf and hi - lo <= _STALL_SPREAD * hi:
                return NumericallyInfeasible(
                    iterations=it, displacement=lo,
                    note="projection displacement stalled", eps=eps)

    raise NonConvergence(
        f"undecided after {max_iter} iterations "
        f"(primal {r:.2e}, dual {s:.2e})")


def _polish(model, fact, Z, iterations, eps, solver_stats):
    # one exact affine projection of the converged iterate; ties and
    # marginalization then hold to rounding error, the cone to solver
    # tolerance
    gz = model.class_means(Z)
    y_pol = fact.project(gz)
    M = model.moment_matrix(y_pol)
    residuals = dict(solver_stats)
    residuals.update(model.residual_report(M))
    residuals["polish_gap"] = float(np.abs(M - Z).max())
    return GramSolution(M, model.value_of(M), iterations, eps, residuals, model=model)


def sdp_opt(
    instance: VCSPInstance,
    level: int,
    subset_mode: str = "full",
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
    allow_low_level: bool = False,
    row_cap: int = ROW_CAP,
):
    """Optimum of the level-k Gram relaxation: a float, or INF when
    numerically infeasible."""
    model = build_las(instance, level, subset_mode,
                      row_cap=row_cap, allow_low_level=allow_low_level)
    result = solve_sdp(model, eps=eps, max_iter=max_iter)
    if isinstance(result, NumericallyInfeasible):
        return INF
    return result.objective


class L7Report:
    def __init__(self, ok, max_residual, checks, worst):
        self.ok = ok
        self.max_residual = max_residual
        self.checks = checks
        self.worst = worst

    def __repr__(self):
        return (f"L7Report(ok={self.ok}, max_residual={self.max_residual:.3g}, "
                f"checks={self.checks})")


def verify_L7(solution, model: LasModel, eps: float = 1e-6) -> L7Report:
    """Check the marginalization identities on a Gram matrix.

    For every block whose scope set fits within the level, summing the
    block's entries over all extensions of a narrower block's
    assignment must reproduce that narrower diagonal entry (the unit
    entry for the empty scope).  Accepts a GramSolution or a raw
    matrix.  Blocks wider than the level carry no such guarantee and
    are skipped.
    """
    M = solution.M if hasattr(solution, "M") else np.asarray(solution)
    worst = None
    max_res = 0.0
    checks = 0
    for i, ei in enumerate(model.aug):
        if len(ei.vars) > model.level:
            continue
        rows_i = model.aug_rows[i]
        if not rows_i:
            continue
        idx_i = {v: t for t, v in enumerate(ei.vars)}
        set_i = set(ei.vars)
        targets = [(-1, ())]
        targets.extend(
            (j, ej.vars) for j, ej in enumerate(model.aug)
            if j != i and set(ej.vars) <= set_i)
        for j, vars_j in targets:
            pos = [idx_i[v] for v in vars_j]
            groups = {}
            for tau, ridx in rows_i.items():
                key = tuple(tau[p] for p in pos)
                groups.setdefault(key, []).append(ridx)
            for sigma in itertools.product(range(model.instance.domain_size),
                                           repeat=len(vars_j)):
                members = groups.get(sigma, [])
                total = float(M[np.ix_(members, members)].sum()) if members else 0.0
                if j < 0:
                    target = float(M[0, 0])
                else:
                    ridx = model.aug_rows[j].get(sigma)
                    target = float(M[ridx, ridx]) if ridx is not None else 0.0
                res = abs(total - target)
                checks += 1
                if res > max_res:
                    max_res = res
                    worst = (i, j, sigma)
    return L7Report(max_res <= eps, max_res, checks, worst)


def suggested_epsilon(language) -> Fraction | None:
    """Smallest gap between distinct finite costs in a language.

    A solver tolerance below half this gap separates optimal values
    that the language can distinguish at all.  None when every relation
    is constant on its feasible tuples.
    """
    best = None
    for rel in language:
        finite = set()
        for t in itertools.product(range(rel.domain_size), repeat=rel.arity):
            val = rel.value(t)
            if val.is_finite:
                finite.add(val.frac)
        vals = sorted(finite)
        for lo, hi in zip(vals, vals[1:]):
            gap = hi - lo
            if best is None or gap < best:
                best = gap
    return best

"""Exact discrete optimal transport and a dense two-phase simplex LP solver.

Both solvers enter the lowest-index improving variable (Bland's rule), so
repeated runs on the same input perform the same pivots and return
bit-identical results. The transportation simplex breaks leaving ties by
lowest index; the LP solver restricts ties to numerically safe pivots
(two-pass ratio test) before applying the same lowest-index rule.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.linalg.blas import dger

from .core import ValidationError

MARGINAL_TOL = 1e-9
FEASIBILITY_TOL = 1e-9
SLACKNESS_TOL = 1e-8
_NEG_CLAMP = 1e-15


class SolverError(RuntimeError):
    """Base class for LP failures."""


class InfeasibleError(SolverError):
    pass


class UnboundedError(SolverError):
    pass


class CertificateError(SolverError):
    """Complementary slackness check failed on a returned solution."""


@dataclass(frozen=True)
class Coupling:
    """Joint probability table with prescribed row and column marginals."""

    probs: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        r = np.asarray(self.row_marginal, dtype=float)
        c = np.asarray(self.col_marginal, dtype=float)
        if p.shape != (r.size, c.size):
            raise ValidationError(f"coupling shape {p.shape} does not match marginals ({r.size}, {c.size})")
        if np.any(p < -_NEG_CLAMP) and p.min() < -MARGINAL_TOL:
            raise ValidationError(f"negative coupling entry {p.min()!r}")
        p[p < 0] = 0.0
        if np.max(np.abs(p.sum(axis=1) - r), initial=0.0) > MARGINAL_TOL:
            raise ValidationError("coupling row sums do not match the row marginal")
        if np.max(np.abs(p.sum(axis=0) - c), initial=0.0) > MARGINAL_TOL:
            raise ValidationError("coupling column sums do not match the column marginal")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "row_marginal", r)
        object.__setattr__(self, "col_marginal", c)

    @property
    def rows(self) -> int:
        return self.probs.shape[0]

    @property
    def cols(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def product(cls, mu, nu) -> "Coupling":
        mu = np.asarray(mu, dtype=float)
        nu = np.asarray(nu, dtype=float)
        return cls(np.outer(mu, nu), mu, nu)

    def cost(self, cost) -> float:
        return float(np.sum(np.asarray(cost, dtype=float) * self.probs))


@dataclass(frozen=True)
class TransportSolution:
    """Optimal plan together with the dual potentials certifying it."""

    value: float
    plan: Coupling
    u: np.ndarray
    v: np.ndarray
    pivots: int


def check_probability_vector(p, name: str = "marginal") -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValidationError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > MARGINAL_TOL:
        raise ValidationError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def northwest_corner(mu, nu) -> np.ndarray:
    """Northwest-corner coupling of two probability vectors (cost-independent)."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    plan = np.zeros((mu.size, nu.size))
    for (i, j), x in _northwest_corner(mu, nu).items():
        plan[i, j] = x
    return plan


def _northwest_corner(a, b):
    n, m = a.size, b.size
    a = a.copy()
    b = b.copy()
    flow = {}
    i = j = 0
    while True:
        x = min(a[i], b[j])
        flow[(i, j)] = x
        a[i] -= x
        b[j] -= x
        if i == n - 1 and j == m - 1:
            break
        # advancing exactly one index per cell keeps n+m-1 basic cells on a tree
        if j == m - 1 or (i < n - 1 and a[i] <= b[j]):
            i += 1
        else:
            j += 1
    return flow


def _potentials(cost, basis, n, m):
    adj_row = [[] for _ in range(n)]
    adj_col = [[] for _ in range(m)]
    for i, j in basis:
        adj_row[i].append(j)
        adj_col[j].append(i)
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    queue = deque([(0, True)])
    while queue:
        node, is_row = queue.popleft()
        if is_row:
            for j in adj_row[node]:
                if np.isnan(v[j]):
                    v[j] = cost[node, j] - u[node]
                    queue.append((j, False))
        else:
            for i in adj_col[node]:
                if np.isnan(u[i]):
                    u[i] = cost[i, node] - v[node]
                    queue.append((i, True))
    return u, v, adj_row, adj_col


def _tree_path(adj_row, adj_col, start_col, end_row):
    """Basic cells on the tree path from column ``start_col`` to row ``end_row``."""
    parent = {("c", start_col): None}
    queue = deque([("c", start_col)])
    while queue:
        kind, idx = queue.popleft()
        if kind == "r" and idx == end_row:
            break
        nbrs = adj_col[idx] if kind == "c" else adj_row[idx]
        nkind = "r" if kind == "c" else "c"
        for nb in nbrs:
            key = (nkind, nb)
            if key not in parent:
                parent[key] = (kind, idx)
                queue.append(key)
    cells = []
    node = ("r", end_row)
    while parent[node] is not None:
        prev = parent[node]
        if node[0] == "r":
            cells.append((node[1], prev[1]))
        else:
            cells.append((prev[1], node[1]))
        node = prev
    cells.reverse()
    return cells


def _transport_simplex(cost, a, b, max_pivots=100000):
    n, m = a.size, b.size
    flow = _northwest_corner(a, b)
    scale = max(1.0, float(np.max(cost, initial=0.0)))
    tol = 1e-12 * scale
    pivots = 0
    while True:
        u, v, adj_row, adj_col = _potentials(cost, flow, n, m)
        reduced = cost - u[:, None] - v[None, :]
        entering = None
        for i in range(n):
            for j in range(m):
                if reduced[i, j] < -tol and (i, j) not in flow:
                    entering = (i, j)
                    break
            if entering is not None:
                break
        if entering is None:
            return flow, u, v, pivots
        if pivots >= max_pivots:
            raise SolverError("transportation simplex exceeded the pivot limit")
        ei, ej = entering
        path = _tree_path(adj_row, adj_col, ej, ei)
        # path alternates -, +, -, ... starting next to the entering column
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] == theta), key=lambda c: c[0] * m + c[1])
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        del flow[leaving]
        flow[entering] = theta
        pivots += 1


def certify_transport(cost, plan, u, v, tol: float = SLACKNESS_TOL) -> float:
    """Return the duality gap after checking dual feasibility and slackness.

    Raises ``CertificateError`` when any reduced cost is below ``-tol``, when
    positive mass sits on a cell with reduced cost above ``tol``, or when the
    primal and dual objectives differ by more than ``tol``.
    """
    cost = np.asarray(cost, dtype=float)
    p = plan.probs
    reduced = cost - u[:, None] - v[None, :]
    scale = max(1.0, float(np.max(np.abs(cost), initial=0.0)))
    if reduced.min(initial=0.0) < -tol * scale:
        raise CertificateError(f"dual infeasible: reduced cost {reduced.min()!r}")
    if np.any((p > FEASIBILITY_TOL) & (reduced > tol * scale)):
        raise CertificateError("complementary slackness violated")
    primal = float(np.sum(cost * p))
    dual = float(plan.row_marginal @ u + plan.col_marginal @ v)
    gap = abs(primal - dual)
    if gap > tol * scale:
        raise CertificateError(f"duality gap {gap!r}")
    return gap


def solve_transport(cost, mu, nu) -> TransportSolution:
    """Optimal transport between two finite probability vectors.

    Parameters
    ----------
    cost : array-like, shape (n, m)
        Nonnegative finite ground costs.
    mu, nu : array-like, shape (n,) and (m,)
        Probability vectors. Zero-mass entries are excluded from the solve and
        come back as zero rows/columns in the plan.

    Returns
    -------
    TransportSolution
        Value, an optimal coupling, and dual potentials (zero-mass rows or
        columns get the smallest potential keeping the duals feasible).
    """
    cost = np.asarray(cost, dtype=float)
    mu = check_probability_vector(mu, "mu")
    nu = check_probability_vector(nu, "nu")
    if cost.shape != (mu.size, nu.size):
        raise ValidationError(f"cost shape {cost.shape} does not match marginals ({mu.size}, {nu.size})")
    if not np.all(np.isfinite(cost)):
        raise ValidationError("non-finite cost entry")
    if np.any(cost < 0):
        raise ValidationError("negative cost entry")

    rows = np.flatnonzero(mu > 0)
    cols = np.flatnonzero(nu > 0)
    sub = np.ascontiguousarray(cost[np.ix_(rows, cols)])
    flow, su, sv, pivots = _transport_simplex(sub, mu[rows], nu[cols])

    plan = np.zeros_like(cost)
    for (i, j), x in flow.items():
        plan[rows[i], cols[j]] = x
    plan[plan < 0] = 0.0
    u = np.zeros(mu.size)
    v = np.zeros(nu.size)
    u[rows] = su
    v[cols] = sv
    # zero-mass rows/cols contribute nothing to the dual objective; pick feasible potentials
    for i in np.setdiff1d(np.arange(mu.size), rows):
        u[i] = np.min(cost[i, cols] - v[cols])
    for j in np.setdiff1d(np.arange(nu.size), cols):
        v[j] = np.min(cost[:, j] - u)

    coupling = Coupling(plan, mu, nu)
    value = float(np.sum(cost * coupling.probs))
    certify_transport(cost, coupling, u, v)
    return TransportSolution(value, coupling, u, v, pivots)


def wasserstein(cost, mu, nu) -> tuple[float, Coupling]:
    """Exact transport value and one optimal coupling."""
    sol = solve_transport(cost, mu, nu)
    return sol.value, sol.plan


@dataclass(frozen=True)
class LpProblem:
    """``minimize c @ x  subject to  A_eq @ x == b_eq,  x >= 0``."""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        A = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
        b = np.asarray(self.b_eq, dtype=float).ravel()
        if A.size == 0:
            A = np.zeros((0, c.size))
        if A.shape != (b.size, c.size):
            raise ValidationError(f"constraint table {A.shape} inconsistent with {b.size} rows, {c.size} variables")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValidationError("non-finite LP data")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_eq", A)
        object.__setattr__(self, "b_eq", b)

    @property
    def n_vars(self) -> int:
        return self.c.size


def _pivot(T, r, e):
    """Pivot the tableau in place on entry ``(r, e)``.

    Large tableaus are kept in Fortran order so the elimination is a single
    in-place BLAS rank-one update.
    """
    T[r] /= T[r, e]
    col = T[:, e].copy()
    col[r] = 0.0
    if T.flags.f_contiguous:
        dger(-1.0, col, T[r].copy(), a=T, overwrite_a=1)
    else:
        nz = np.flatnonzero(col)
        T[nz] -= np.outer(col[nz], T[r])
    T[:, e] = 0.0
    T[r, e] = 1.0


def _tableau(M, rhs, cost, basis):
    """Canonical tableau of ``[M | rhs]`` for ``basis`` with reduced costs in the last row."""
    inv = np.linalg.inv(M[:, basis])
    body = inv @ np.hstack([M, rhs[:, None]])
    T = np.empty((M.shape[0] + 1, M.shape[1] + 1), order="F")
    T[:-1] = body
    cb = cost[basis]
    T[-1, :-1] = cost - cb @ body[:, :-1]
    T[-1, -1] = -cb @ body[:, -1]
    for r, j in enumerate(basis):
        T[:, j] = 0.0
        T[r, j] = 1.0
    return T


def _simplex_phase(M, rhs, cost, basis, tol, pivot_tol, max_pivots, rule, refactor, harris=1e-10):
    """Pivot from ``basis`` to an optimal basis; returns ``(tableau, pivots)``.

    ``rule="bland"`` always enters the lowest-index improving column.
    ``rule="hybrid"`` prices by most negative reduced cost and falls back to
    Bland's rule while the objective stalls on degenerate pivots, which keeps
    the anti-cycling guarantee. The tableau is rebuilt from ``M`` every
    ``refactor`` pivots so rounding error does not accumulate.
    """
    T = _tableau(M, rhs, cost, basis)
    m = M.shape[0]
    pivots = 0
    stalled = rule == "bland"
    while True:
        obj = T[m, :-1]
        candidates = np.flatnonzero(obj < -tol)
        if candidates.size == 0:
            return T, pivots
        if stalled:
            e = int(candidates[0])
        else:
            e = int(candidates[np.argmin(obj[candidates])])
        col = T[:m, e]
        pos = np.flatnonzero(col > pivot_tol * max(1.0, float(np.abs(col).max())))
        if pos.size == 0:
            raise UnboundedError("LP is unbounded")
        # two-pass (Harris) ratio test: among rows whose ratio is within the
        # feasibility slack of the minimum, pivot on the largest element
        rhs_pos = np.maximum(T[pos, -1], 0.0)
        bound = ((rhs_pos + harris) / col[pos]).min()
        ratios = rhs_pos / col[pos]
        ties = pos[ratios <= bound]
        big = col[ties].max()
        r = int(min(ties[col[ties] >= 0.5 * big], key=lambda i: basis[i]))
        if rule != "bland":
            stalled = T[r, -1] <= tol
        _pivot(T, r, e)
        basis[r] = e
        pivots += 1
        if pivots > max_pivots:
            raise SolverError("simplex exceeded the pivot limit")
        if pivots % refactor == 0:
            T = _tableau(M, rhs, cost, basis)


def _independent_rows(A, b):
    """Indices of a maximal linearly independent subset of the rows of ``[A | b]``."""
    from scipy.linalg import qr

    if A.shape[0] <= 1:
        return np.arange(A.shape[0])
    aug = np.hstack([A, b[:, None]])
    _, R, piv = qr(aug.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return np.array([], dtype=int)
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    return np.sort(piv[:rank])


def _crash_basis(A, x, zero_tol=1e-13):
    """Basis of ``[A | I]`` for a vertex reached from the feasible point ``x``.

    The support of ``x`` is shrunk along null-space directions of its columns
    until they are linearly independent (each move keeps ``A x`` fixed and
    zeroes one coordinate); an LU factorization then picks the rows whose
    artificial columns complete the basis at zero level.
    """
    from scipy.linalg import lu

    m, n = A.shape
    x = np.where(x > zero_tol, x, 0.0)
    support = list(np.flatnonzero(x))
    while support:
        cols = A[:, support]
        _, sing, vt = np.linalg.svd(cols, full_matrices=True)
        rank = int(np.sum(sing > 1e-10 * sing[0])) if sing.size else 0
        if rank == len(support):
            break
        z = vt[-1]
        if z.max() <= 0:
            z = -z
        xs = x[support]
        up = z > 1e-12
        step = np.min(xs[up] / z[up])
        xs = xs - step * z
        hit = int(np.flatnonzero(up)[np.argmin(x[support][up] / z[up])])
        xs[hit] = 0.0
        x[support] = np.where(xs > zero_tol, xs, 0.0)
        support = [j for j in support if x[j] > 0]
    if not support:
        return list(range(n, n + m))
    perm, _, _ = lu(A[:, support], p_indices=True)
    # A[:, support] = L[perm] @ U, so rows with perm >= |support| are the uncovered ones
    return support + [n + int(r) for r in np.flatnonzero(perm >= len(support))]


def lp_solve(p: LpProblem, max_pivots: int = 1_000_000, rule: str = "bland",
             presolve: bool = True, refactor: int = 200, start=None) -> tuple[float, np.ndarray]:
    """Solve ``p`` with a two-phase simplex and return ``(value, x)``.

    Pivoting is deterministic; see ``_simplex_phase`` for the pricing rules.
    With ``presolve`` redundant equality rows are removed up front by a
    pivoted QR factorization. The returned point is always checked against
    every original row. Raises ``InfeasibleError`` or ``UnboundedError``.

    ``start`` may be any feasible point. It is reduced to a vertex whose
    basis, completed by zero-level artificials, replaces phase 1; the
    optimum found from there is the same, only reached in fewer pivots.
    """
    if rule not in ("bland", "hybrid"):
        raise ValueError(f"unknown pricing rule {rule!r}")
    A = p.A_eq.copy()
    b = p.b_eq.copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    n = A.shape[1]
    if presolve and A.shape[0]:
        rows = _independent_rows(A, b)
        A_red, b_red = A[rows], b[rows]
    else:
        A_red, b_red = A, b
    # unit max-norm rows keep pivot magnitudes comparable across constraint families
    scale = np.abs(A_red).max(axis=1, initial=0.0)
    scale[scale == 0] = 1.0
    A_red = A_red / scale[:, None]
    b_red = b_red / scale
    m = A_red.shape[0]
    if m == 0:
        if np.any(b != 0):
            raise InfeasibleError("LP is infeasible")
        if np.any(p.c < 0):
            raise UnboundedError("LP is unbounded")
        return 0.0, np.zeros(n)
    tol = 1e-11
    pivot_tol = 1e-9

    M1 = np.hstack([A_red, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    if start is not None:
        x0 = np.asarray(start, dtype=float)
        if x0.shape != (n,) or x0.min(initial=0.0) < -FEASIBILITY_TOL or (
            np.abs(A @ x0 - b).max(initial=0.0) > FEASIBILITY_TOL * max(1.0, float(np.abs(b).max()))
        ):
            raise ValidationError("start point is not feasible")
        basis = _crash_basis(A_red, x0)
        T = _tableau(M1, b_red, c1, basis)
    else:
        basis = list(range(n, n + m))
        T, _ = _simplex_phase(M1, b_red, c1, basis, tol, pivot_tol, max_pivots, rule, refactor)
        if -T[m, -1] > FEASIBILITY_TOL * max(1.0, float(np.abs(b_red).max())):
            raise InfeasibleError(f"LP is infeasible (phase-1 residual {float(-T[m, -1]):.3g})")

    # drive remaining artificials out; rows that cannot pivot are redundant
    keep = []
    for r in range(m):
        if basis[r] >= n:
            row = np.abs(T[r, :n])
            if row.max(initial=0.0) <= pivot_tol:
                continue
            e = int(np.argmax(row))
            _pivot(T, r, e)
            basis[r] = e
        keep.append(r)
    basis2 = [basis[r] for r in keep]
    T2, _ = _simplex_phase(A_red[keep], b_red[keep], p.c, basis2, tol, pivot_tol, max_pivots, rule, refactor)

    x = np.zeros(n)
    for r, j in enumerate(basis2):
        x[j] = T2[r, -1]
    x[x < 0] = 0.0
    resid = np.abs(A @ x - b).max(initial=0.0)
    if resid > FEASIBILITY_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
        raise InfeasibleError(f"LP is infeasible (residual {float(resid):.3g} on original rows)")
    return float(p.c @ x), x


def transport_lp(cost, mu, nu) -> LpProblem:
    """Transportation problem written as a generic ``LpProblem`` (row-major variables)."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    return LpProblem(cost.ravel(), A, np.concatenate([np.asarray(mu, float), np.asarray(nu, float)]))

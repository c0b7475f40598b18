"""Path-space formulations of the WL distance, used as independent oracles.

Paths of length ``k + 1`` are stored densely: a joint path measure over
``X^{k+1} x Y^{k+1}`` is an array with ``k + 1`` axes of size ``|X|``
followed by ``k + 1`` axes of size ``|Y|``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import CapExceededError, ValidationError, pairwise_label_distances
from .markov import Lmmc, label_space_chain
from .transport import MARGINAL_TOL, Coupling, InfeasibleError, LpProblem, lp_solve, northwest_corner, solve_transport
from .wl_distance import WlResult, wl_distance

LP_VARIABLE_CAP = 10**5
NULL_EVENT_TOL = 1e-14
CAUSAL_TOL = 1e-9


def path_tensor(c: Lmmc, k: int) -> np.ndarray:
    """Dense law of ``(X_0, ..., X_k)``."""
    a = c.mu.copy()
    for _ in range(k):
        a = a[..., :, None] * c.kernel.reshape((1,) * (a.ndim - 1) + c.kernel.shape)
    return a


@dataclass(frozen=True)
class OneStepCoupling:
    """For every state pair ``(x, y)``, a coupling of ``kernel_x[x]`` and ``kernel_y[y]``.

    ``table[x, y]`` is an ``|X| x |Y|`` joint table.
    """

    table: np.ndarray
    kernel_x: np.ndarray
    kernel_y: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        n, m = self.kernel_x.shape[0], self.kernel_y.shape[0]
        if t.shape != (n, m, n, m):
            raise ValidationError(f"one-step coupling shape {t.shape}, expected {(n, m, n, m)}")
        if t.min() < -MARGINAL_TOL:
            raise ValidationError("one-step coupling has negative entries")
        t[t < 0] = 0.0
        row_err = np.abs(t.sum(axis=3) - self.kernel_x[:, None, :]).max()
        col_err = np.abs(t.sum(axis=2) - self.kernel_y[None, :, :]).max()
        if max(row_err, col_err) > MARGINAL_TOL:
            raise ValidationError("one-step coupling marginals do not match the kernel rows")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def coupling(self, x: int, y: int) -> Coupling:
        return Coupling(self.table[x, y], self.kernel_x[x], self.kernel_y[y])

    @classmethod
    def product(cls, X: Lmmc, Y: Lmmc) -> "OneStepCoupling":
        t = X.kernel[:, None, :, None] * Y.kernel[None, :, None, :]
        return cls(t, X.kernel, Y.kernel)


@dataclass(frozen=True)
class JointPathMeasure:
    horizon: int
    n_x: int
    n_y: int
    tensor: np.ndarray

    def __post_init__(self):
        k = self.horizon
        shape = (self.n_x,) * (k + 1) + (self.n_y,) * (k + 1)
        if self.tensor.shape != shape:
            raise ValidationError(f"joint path tensor shape {self.tensor.shape}, expected {shape}")
        if abs(self.tensor.sum() - 1.0) > 1e-10:
            raise ValidationError(f"joint path measure has mass {self.tensor.sum()!r}")

    @property
    def x_axes(self) -> tuple:
        return tuple(range(self.horizon + 1))

    @property
    def y_axes(self) -> tuple:
        return tuple(range(self.horizon + 1, 2 * self.horizon + 2))

    def x_marginal(self) -> np.ndarray:
        return self.tensor.sum(axis=self.y_axes)

    def y_marginal(self) -> np.ndarray:
        return self.tensor.sum(axis=self.x_axes)

    @property
    def weights(self) -> dict:
        k = self.horizon
        out = {}
        for idx in zip(*np.nonzero(self.tensor)):
            idx = tuple(int(i) for i in idx)
            out[(idx[: k + 1], idx[k + 1 :])] = float(self.tensor[idx])
        return out

    def expected_terminal_cost(self, X: Lmmc, Y: Lmmc) -> float:
        cost = pairwise_label_distances(X.metric, X.labels, Y.labels)
        return k_step_marginal(self).cost(cost)


def compose_markovian(gamma0: Coupling, steps: list) -> JointPathMeasure:
    """Law of the first ``len(steps) + 1`` states of a Markovian coupling.

    The weight of ``((x_0..x_k), (y_0..y_k))`` is
    ``gamma0[x_0, y_0] * prod_i steps[i].table[x_i, y_i, x_{i+1}, y_{i+1}]``.
    """
    n, m = gamma0.rows, gamma0.cols
    for pos, step in enumerate(steps):
        if not isinstance(step, OneStepCoupling) or step.table.shape != (n, m, n, m):
            raise ValidationError(f"step {pos} does not match the initial coupling")
        if pos and not (
            np.array_equal(step.kernel_x, steps[0].kernel_x) and np.array_equal(step.kernel_y, steps[0].kernel_y)
        ):
            raise ValidationError(f"step {pos} couples different kernels")
    # interleaved axes (x0, y0, x1, y1, ...)
    t = gamma0.probs.copy()
    for step in steps:
        lead = t.ndim - 2
        t = t[..., :, :, None, None] * step.table.reshape((1,) * lead + step.table.shape)
    k = len(steps)
    order = [2 * i for i in range(k + 1)] + [2 * i + 1 for i in range(k + 1)]
    return JointPathMeasure(k, n, m, np.ascontiguousarray(t.transpose(order)))


def k_step_marginal(pm: JointPathMeasure) -> Coupling:
    """Joint law of the terminal pair ``(X_k, Y_k)``."""
    k = pm.horizon
    axes = tuple(i for i in range(2 * k + 2) if i not in (k, 2 * k + 1))
    table = pm.tensor.sum(axis=axes) if axes else pm.tensor
    return Coupling(table, table.sum(axis=1), table.sum(axis=0))


def _causal_residual(pi, alpha, k, l):
    """Max violation of causality from the first process to the second at level ``l``.

    ``pi`` has ``k + 1`` leading axes for the first process and ``k + 1``
    trailing axes for the second; ``alpha`` is the first process's path law.
    """
    x_tail = tuple(range(l + 1, k + 1))
    y_tail = tuple(range(k + 1 + l + 1, 2 * k + 2))
    alpha_l = alpha.sum(axis=x_tail, keepdims=True) if x_tail else alpha
    pi_full_x = pi.sum(axis=y_tail) if y_tail else pi  # (x_0..x_k, y_0..y_l)
    pi_short = pi_full_x.sum(axis=x_tail, keepdims=True) if x_tail else pi_full_x
    pad = (None,) * (l + 1)
    lhs = alpha_l[(Ellipsis,) + pad] * pi_full_x
    rhs = alpha[(Ellipsis,) + pad] * pi_short
    mask = np.broadcast_to(alpha_l[(Ellipsis,) + pad] > NULL_EVENT_TOL, lhs.shape)
    diff = np.abs(lhs - rhs)
    return float(diff[mask].max(initial=0.0))


def bicausal_violation(pm: JointPathMeasure, X: Lmmc, Y: Lmmc) -> float:
    """Largest residual of the cross-multiplied causality identities, both directions."""
    k = pm.horizon
    alpha = path_tensor(X, k)
    beta = path_tensor(Y, k)
    if np.abs(pm.x_marginal() - alpha).max() > MARGINAL_TOL or np.abs(pm.y_marginal() - beta).max() > MARGINAL_TOL:
        raise ValidationError("joint path measure marginals do not match the chains' path laws")
    swapped = pm.tensor.transpose(pm.y_axes + pm.x_axes)
    worst = 0.0
    for l in range(k):
        worst = max(worst, _causal_residual(pm.tensor, alpha, k, l), _causal_residual(swapped, beta, k, l))
    return worst


def check_bicausal(pm: JointPathMeasure, X: Lmmc, Y: Lmmc, tol: float = CAUSAL_TOL) -> bool:
    return bicausal_violation(pm, X, Y) <= tol


def _path_count(X: Lmmc, Y: Lmmc, k: int) -> int:
    return (X.n * Y.n) ** (k + 1)


def _causal_rows(alpha, n_y, k, flat_index):
    """Cross-multiplied causality rows from the first process to the second.

    For each level ``l < k``, full first-process path ``xt`` with prefix
    ``xp`` and second-process prefix ``yp``::

        alpha_l(xp) * pi(xt, yp..) - alpha(xt) * pi(xp.., yp..) == 0
    """
    n_x = alpha.shape[0]
    rows = []
    for l in range(k):
        alpha_l = alpha.sum(axis=tuple(range(l + 1, k + 1)))
        for xp in zip(*np.nonzero(alpha_l > NULL_EVENT_TOL)):
            xp = tuple(int(i) for i in xp)
            a_l = float(alpha_l[xp])
            tails = [xp + t for t in itertools.product(range(n_x), repeat=k - l) if alpha[xp + t] > 0]
            for yp in itertools.product(range(n_y), repeat=l + 1):
                cols = [
                    [flat_index(xs, yp + yt) for yt in itertools.product(range(n_y), repeat=k - l)]
                    for xs in tails
                ]
                for xt, own in zip(tails, cols):
                    a_k = float(alpha[xt])
                    row = {}
                    for group in cols:
                        for col in group:
                            if col is not None:
                                row[col] = -a_k
                    for col in own:
                        if col is not None:
                            row[col] += a_l
                    rows.append(row)
    return rows


def build_bicausal_lp(X: Lmmc, Y: Lmmc, k: int, cost=None, cap: int = LP_VARIABLE_CAP):
    """Assemble the bicausal transport LP on paired path space.

    Returns ``(problem, x_paths, y_paths)``; variable ``i * len(y_paths) + j``
    is the mass on ``(x_paths[i], y_paths[j])``. Paths of probability zero
    are omitted since the marginal constraints force their mass to zero.
    """
    if k < 0:
        raise ValidationError("depth must be >= 0")
    if X.metric != Y.metric or X.d != Y.d:
        raise ValidationError("chains have incompatible label spaces")
    total = _path_count(X, Y, k)
    if total > cap:
        raise CapExceededError(f"bicausal LP needs {total} variables, cap is {cap}")
    alpha = path_tensor(X, k)
    beta = path_tensor(Y, k)
    x_paths = [tuple(int(i) for i in p) for p in zip(*np.nonzero(alpha > 0))]
    y_paths = [tuple(int(i) for i in p) for p in zip(*np.nonzero(beta > 0))]
    xi = {p: i for i, p in enumerate(x_paths)}
    yi = {p: i for i, p in enumerate(y_paths)}
    ny = len(y_paths)

    def flat(xp, yp):
        a, b = xi.get(xp), yi.get(yp)
        return None if a is None or b is None else a * ny + b

    n_vars = len(x_paths) * ny
    if cost is None:
        cost = pairwise_label_distances(X.metric, X.labels, Y.labels)
    c = np.array([cost[xp[-1], yp[-1]] for xp in x_paths for yp in y_paths], dtype=float)

    rows = []
    rhs = []
    for i, xp in enumerate(x_paths):
        rows.append({i * ny + j: 1.0 for j in range(ny)})
        rhs.append(float(alpha[xp]))
    for j, yp in enumerate(y_paths):
        rows.append({i * ny + j: 1.0 for i in range(len(x_paths))})
        rhs.append(float(beta[yp]))
    for row in _causal_rows(alpha, Y.n, k, flat):
        rows.append(row)
        rhs.append(0.0)
    for row in _causal_rows(beta, X.n, k, lambda yp, xp: flat(xp, yp)):
        rows.append(row)
        rhs.append(0.0)

    A = np.zeros((len(rows), n_vars))
    for r, row in enumerate(rows):
        for col, v in row.items():
            A[r, col] = v
    nonzero = np.any(A != 0, axis=1) | (np.asarray(rhs) != 0)
    return LpProblem(c, A[nonzero], np.asarray(rhs)[nonzero]), x_paths, y_paths


def _northwest_markovian(X: Lmmc, Y: Lmmc, k: int) -> JointPathMeasure:
    """Markovian coupling built from northwest-corner plans; a cost-free feasible point."""
    gamma0 = Coupling(northwest_corner(X.mu, Y.mu), X.mu, Y.mu)
    table = np.zeros((X.n, Y.n, X.n, Y.n))
    for x in range(X.n):
        for y in range(Y.n):
            table[x, y] = northwest_corner(X.kernel[x], Y.kernel[y])
    step = OneStepCoupling(table, X.kernel, Y.kernel)
    return compose_markovian(gamma0, [step] * k)


def bicausal_lp(X: Lmmc, Y: Lmmc, k: int, cap: int = LP_VARIABLE_CAP, return_plan: bool = False):
    """Optimal bicausal transport value between the path laws of two chains.

    The cost of a path pair is the label distance of its terminal states.
    With ``return_plan=True`` the optimal ``JointPathMeasure`` is returned
    alongside the value.
    """
    problem, x_paths, y_paths = build_bicausal_lp(X, Y, k, cap=cap)
    start = _northwest_markovian(X, Y, k).tensor
    ny = len(y_paths)
    x0 = np.array([start[xp + yp] for xp in x_paths for yp in y_paths])
    try:
        value, sol = lp_solve(problem, start=x0)
    except InfeasibleError as exc:
        raise InfeasibleError(f"bicausal LP infeasible (product coupling should be feasible): {exc}") from None
    if not return_plan:
        return value
    tensor = np.zeros((X.n,) * (k + 1) + (Y.n,) * (k + 1))
    ny = len(y_paths)
    for i, xp in enumerate(x_paths):
        for j, yp in enumerate(y_paths):
            tensor[xp + yp] = sol[i * ny + j]
    return value, JointPathMeasure(k, X.n, Y.n, tensor)


def _conditional_rows(alpha_hist, alpha_next, kernel):
    """Conditional law of the next state given each history, kernel row on null histories."""
    n = kernel.shape[0]
    hist_shape = alpha_hist.shape
    out = np.empty(hist_shape + (n,))
    for h in itertools.product(*(range(s) for s in hist_shape)):
        mass = alpha_next[h]
        total = mass.sum()
        out[h] = mass / total if total > 0 else kernel[h[-1]]
    return out


def v_full_history(X: Lmmc, Y: Lmmc, k: int, cap: int = LP_VARIABLE_CAP) -> list:
    """Cost-to-go tables over full histories; entry ``i`` is ``V_i``.

    ``V_i`` has ``i + 1`` axes for the X-history followed by ``i + 1`` for the
    Y-history. Conditional next-state laws are read off the path laws.
    """
    if k < 0:
        raise ValidationError("depth must be >= 0")
    if X.metric != Y.metric or X.d != Y.d:
        raise ValidationError("chains have incompatible label spaces")
    total = _path_count(X, Y, k)
    if total > cap:
        raise CapExceededError(f"full-history tables need {total} entries, cap is {cap}")
    n, m = X.n, Y.n
    alphas = [path_tensor(X, i) for i in range(k + 1)]
    betas = [path_tensor(Y, i) for i in range(k + 1)]
    label_cost = pairwise_label_distances(X.metric, X.labels, Y.labels)

    V = [None] * (k + 1)
    shape = (n,) * (k + 1) + (m,) * (k + 1)
    idx = np.indices(shape)
    V[k] = label_cost[idx[k], idx[2 * k + 1]]
    for i in range(k, 0, -1):
        cond_x = _conditional_rows(alphas[i - 1], alphas[i], X.kernel)
        cond_y = _conditional_rows(betas[i - 1], betas[i], Y.kernel)
        prev = np.empty((n,) * i + (m,) * i)
        for hx in itertools.product(range(n), repeat=i):
            for hy in itertools.product(range(m), repeat=i):
                cost = V[i][hx + (slice(None),) + hy + (slice(None),)]
                prev[hx + hy] = solve_transport(cost, cond_x[hx], cond_y[hy]).value
        V[i - 1] = prev
    return V


def v_w_deviation(V: list, tables: list) -> float:
    """Max ``|V_i(history) - W_i(last states)|`` over all depths and histories."""
    k = len(V) - 1
    by_depth = {t.depth: t.values for t in tables}
    worst = 0.0
    for i, Vi in enumerate(V):
        W = by_depth[i]
        idx = np.indices(Vi.shape)
        expected = W[idx[i], idx[2 * i + 1]]
        worst = max(worst, float(np.abs(Vi - expected).max()))
    assert k == max(by_depth)
    return worst


def label_space_wl(X: Lmmc, Y: Lmmc, k: int, cap: int = LP_VARIABLE_CAP) -> float:
    """Bicausal transport between the label-space images of two chains with injective labels."""
    return bicausal_lp(label_space_chain(X), label_space_chain(Y), k, cap=cap)


def optimal_markovian_coupling(X: Lmmc, Y: Lmmc, k: int, result: WlResult | None = None) -> JointPathMeasure:
    """Compose the optimal couplings found by the backward recursion."""
    if result is None:
        result = wl_distance(X, Y, k)
    steps = [OneStepCoupling(p, X.kernel, Y.kernel) for p in result.step_couplings]
    return compose_markovian(result.initial_coupling, steps)


def random_one_step_coupling(X: Lmmc, Y: Lmmc, rng: np.random.Generator) -> OneStepCoupling:
    """Mixture of the product coupling and a vertex coupling for a random cost."""
    n, m = X.n, Y.n
    t = np.empty((n, m, n, m))
    for x in range(n):
        for y in range(m):
            vertex = solve_transport(rng.random((n, m)), X.kernel[x], Y.kernel[y]).plan.probs
            lam = rng.random()
            t[x, y] = lam * vertex + (1 - lam) * np.outer(X.kernel[x], Y.kernel[y])
    return OneStepCoupling(t, X.kernel, Y.kernel)


def random_coupling(mu, nu, rng: np.random.Generator) -> Coupling:
    vertex = solve_transport(rng.random((len(mu), len(nu))), mu, nu).plan.probs
    lam = rng.random()
    return Coupling(lam * vertex + (1 - lam) * np.outer(mu, nu), mu, nu)

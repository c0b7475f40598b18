"""Depth-k Weisfeiler-Lehman distance between labeled Markov chains.

Two routes are provided. ``wl_distance`` runs the backward cost-to-go
recursion: ``W_k`` holds terminal label distances and each ``W_{i-1}(x, y)``
is the transport value of ``W_i`` between the kernel rows of ``x`` and ``y``.
``wl_distance_hierarchical`` builds the nested WL labels explicitly, interning
equal labels, and compares the pushforwards of the initial measures.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import LabeledGraph, ValidationError, pairwise_label_distances
from .markov import Lmmc
from .transport import Coupling, solve_transport


@dataclass(frozen=True)
class CostTable:
    depth: int
    values: np.ndarray


@dataclass(frozen=True)
class WlResult:
    distance: float
    initial_coupling: Coupling
    tables: list  # W_k, ..., W_0
    step_couplings: list = field(default_factory=list)  # optimal one-step plans for steps 1..k


def _check_compatible(X: Lmmc, Y: Lmmc) -> None:
    if X.metric != Y.metric:
        raise ValidationError(f"metric mismatch: {X.metric.value} vs {Y.metric.value}")
    if X.d != Y.d:
        raise ValidationError(f"label dimension mismatch: {X.d} vs {Y.d}")


def _worker_count(n_jobs):
    if n_jobs is None:
        n_jobs = int(os.environ.get("WLM_THREADS", "1") or 1)
    return max(1, int(n_jobs))


def _backward_step(X, Y, W, keep_plans, pool):
    n, m = X.n, Y.n

    def entry(idx):
        x, y = divmod(idx, m)
        return solve_transport(W, X.kernel[x], Y.kernel[y])

    idxs = range(n * m)
    sols = list(pool.map(entry, idxs)) if pool is not None else [entry(i) for i in idxs]
    prev = np.array([s.value for s in sols]).reshape(n, m)
    plans = None
    if keep_plans:
        plans = np.zeros((n, m, n, m))
        for idx, s in enumerate(sols):
            x, y = divmod(idx, m)
            plans[x, y] = s.plan.probs
    return prev, plans


def _recursion(X, Y, k, keep_plans=False, n_jobs=None):
    if k < 0:
        raise ValidationError("depth must be >= 0")
    _check_compatible(X, Y)
    W = pairwise_label_distances(X.metric, X.labels, Y.labels)
    tables = [CostTable(k, W)]
    plans = []
    workers = _worker_count(n_jobs)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for i in range(k, 0, -1):
            W, step = _backward_step(X, Y, W, keep_plans, pool)
            tables.append(CostTable(i - 1, W))
            plans.append(step)
    finally:
        if pool is not None:
            pool.shutdown()
    plans.reverse()
    return tables, plans


def wl_cost_tables(X: Lmmc, Y: Lmmc, k: int, n_jobs=None) -> list:
    """Cost-to-go tables ``[W_k, W_{k-1}, ..., W_0]``."""
    return _recursion(X, Y, k, n_jobs=n_jobs)[0]


def wl_distance(X: Lmmc, Y: Lmmc, k: int, n_jobs=None) -> WlResult:
    """Depth-``k`` WL distance with an optimal initial coupling and all tables.

    ``step_couplings[i]`` is an ``(n, m, n, m)`` array whose ``[x, y]`` slice is
    an optimal coupling of ``kernel_X[x]`` and ``kernel_Y[y]`` for the cost
    ``W_{i+1}``; composing them with ``initial_coupling`` gives a Markovian
    coupling attaining the distance.
    """
    tables, plans = _recursion(X, Y, k, keep_plans=True, n_jobs=n_jobs)
    sol = solve_transport(tables[-1].values, X.mu, Y.mu)
    return WlResult(sol.value, sol.plan, tables, plans)


class _LabelStore:
    """Interns nested WL labels and memoizes distances between them."""

    def __init__(self, metric):
        self.metric = metric
        self.keys: dict = {}
        self.content: list = []  # per id: ("leaf", vector) or ("measure", ids, masses)
        self.depth: list = []
        self._dist: dict = {}

    def intern(self, key, content, depth):
        idx = self.keys.get(key)
        if idx is None:
            idx = len(self.content)
            self.keys[key] = idx
            self.content.append(content)
            self.depth.append(depth)
        return idx

    def leaf(self, vector):
        vec = np.asarray(vector, dtype=float)
        return self.intern(("leaf", tuple(vec.tolist())), ("leaf", vec), 0)

    def measure(self, children, masses, depth):
        agg: dict = {}
        for c, w in zip(children, masses):
            if w > 0:
                agg[c] = agg.get(c, 0.0) + float(w)
        ids = tuple(sorted(agg))
        mass = tuple(agg[i] for i in ids)
        return self.intern(("measure", ids, mass), ("measure", ids, np.array(mass)), depth)

    def distance(self, a, b):
        if a == b:
            return 0.0
        key = (a, b) if a < b else (b, a)
        hit = self._dist.get(key)
        if hit is not None:
            return hit
        ca, cb = self.content[a], self.content[b]
        if ca[0] == "leaf":
            val = float(pairwise_label_distances(self.metric, ca[1][None, :], cb[1][None, :])[0, 0])
        else:
            val = self.measure_distance(ca[1], ca[2], cb[1], cb[2])
        self._dist[key] = val
        return val

    def measure_distance(self, ids_a, mass_a, ids_b, mass_b):
        cost = np.array([[self.distance(i, j) for j in ids_b] for i in ids_a])
        pa = np.asarray(mass_a, dtype=float)
        pb = np.asarray(mass_b, dtype=float)
        return solve_transport(cost, pa / pa.sum(), pb / pb.sum()).value


@dataclass(frozen=True)
class WlLabels:
    """Nested labels of two chains up to depth ``k``.

    ``handles_x[j][x]`` is the interned id of the depth-``j`` label of state
    ``x``; ``tables[j][x, y]`` is the distance between the depth-``j`` labels
    of ``x`` in X and ``y`` in Y.
    """

    handles_x: list
    handles_y: list
    tables: list
    store: _LabelStore


def wl_labels(X: Lmmc, Y: Lmmc, k: int) -> WlLabels:
    if k < 0:
        raise ValidationError("depth must be >= 0")
    _check_compatible(X, Y)
    store = _LabelStore(X.metric)
    hx = [[store.leaf(row) for row in X.labels]]
    hy = [[store.leaf(row) for row in Y.labels]]
    for j in range(1, k + 1):
        hx.append([store.measure(hx[j - 1], X.kernel[x], j) for x in range(X.n)])
        hy.append([store.measure(hy[j - 1], Y.kernel[y], j) for y in range(Y.n)])
    tables = [
        np.array([[store.distance(a, b) for b in hy[j]] for a in hx[j]]) for j in range(k + 1)
    ]
    return WlLabels(hx, hy, tables, store)


def wl_distance_hierarchical(X: Lmmc, Y: Lmmc, k: int) -> float:
    """WL distance from the nested-label definition."""
    labels = wl_labels(X, Y, k)
    store = labels.store
    top_x = store.content[store.measure(labels.handles_x[k], X.mu, k + 1)]
    top_y = store.content[store.measure(labels.handles_y[k], Y.mu, k + 1)]
    return store.measure_distance(top_x[1], top_x[2], top_y[1], top_y[2])


@dataclass(frozen=True)
class ColorPartition:
    """Color of every vertex of both graphs at each refinement round."""

    colors_1: list  # colors_1[r][v]
    colors_2: list


@dataclass(frozen=True)
class WlTestResult:
    partition: ColorPartition
    distinguishable: bool
    first_round: int | None


def _weight_key(w: float) -> str:
    return repr(float(w))


def _color_histogram(g: LabeledGraph, colors, mass):
    hist: dict = {}
    for v, c in enumerate(colors):
        hist[c] = hist.get(c, Fraction(0)) + mass[v]
    total = sum(hist.values())
    return {c: h / total for c, h in hist.items()}


def _exact_mass(g: LabeledGraph):
    mass = [Fraction(0)] * g.n
    for u, v, w in g.edges:
        i, j = g.index(u), g.index(v)
        fw = Fraction(_weight_key(w))
        mass[i] += fw
        if i != j:
            mass[j] += fw
    return [m if m > 0 else Fraction(1) for m in mass]


def classic_wl_refinement(g1: LabeledGraph, g2: LabeledGraph, k: int) -> WlTestResult:
    """Weighted WL color refinement run jointly on two graphs for ``k`` rounds.

    Round-0 colors come from exact label equality. A new color is the old
    color plus the sorted multiset of ``(neighbor color, weight)`` pairs, so
    refinement never merges classes. Histograms are weighted by modified
    degree, matching the initial measure of the induced chains.
    """
    if g1.d != g2.d:
        raise ValidationError(f"label dimension mismatch: {g1.d} vs {g2.d}")
    graphs = (g1, g2)
    nbrs = [g.neighbors() for g in graphs]
    mass = [_exact_mass(g) for g in graphs]

    sigs = [[tuple(row) for row in g.labels.tolist()] for g in graphs]
    palette = {s: i for i, s in enumerate(sorted(set(sigs[0]) | set(sigs[1])))}
    colors = [[[palette[s] for s in sigs[t]]] for t in range(2)]

    def separated(r):
        return _color_histogram(g1, colors[0][r], mass[0]) != _color_histogram(g2, colors[1][r], mass[1])

    first = 0 if separated(0) else None
    for r in range(1, k + 1):
        new_sigs = []
        for t, g in enumerate(graphs):
            prev = colors[t][r - 1]
            new_sigs.append([
                (prev[v], tuple(sorted((prev[u], _weight_key(w)) for u, w in nbrs[t][v])))
                for v in range(g.n)
            ])
        palette = {s: i for i, s in enumerate(sorted(set(new_sigs[0]) | set(new_sigs[1])))}
        for t in range(2):
            colors[t].append([palette[s] for s in new_sigs[t]])
        if first is None and separated(r):
            first = r
    return WlTestResult(ColorPartition(colors[0], colors[1]), first is not None, first)


def graph_wl_distance(g1: LabeledGraph, g2: LabeledGraph, k: int, q: float | None = 0.5,
                      eps: float | None = None, metric="l1", n_jobs=None) -> WlResult:
    """WL distance between the chains induced by two labeled graphs."""
    from .markov import induce_eps_normalized, induce_q_damped

    if eps is not None:
        X, Y = induce_eps_normalized(g1, eps, metric), induce_eps_normalized(g2, eps, metric)
    else:
        X, Y = induce_q_damped(g1, q, metric), induce_q_damped(g2, q, metric)
    return wl_distance(X, Y, k, n_jobs=n_jobs)


__all__ = [
    "CostTable",
    "WlResult",
    "WlLabels",
    "ColorPartition",
    "WlTestResult",
    "wl_cost_tables",
    "wl_distance",
    "wl_labels",
    "wl_distance_hierarchical",
    "classic_wl_refinement",
    "graph_wl_distance",
]

"""Seeded generators for graphs and chains used by tests, audits and the CLI."""

from __future__ import annotations

import numpy as np

from .core import LabeledGraph, LabelMetric
from .markov import Lmmc


def random_graph(rng: np.random.Generator, n: int, d: int = 1, p_edge: float = 0.4,
                 weight_range=(0.1, 2.0), self_loops: bool = True, integer_labels: bool = False) -> LabeledGraph:
    """Erdos-Renyi style graph with uniform edge weights and Gaussian labels.

    Isolated vertices occur naturally at small ``p_edge``. Integer labels
    (drawn from ``{0, 1, 2}``) make label collisions, and hence nontrivial
    WL colorings, likely.
    """
    verts = tuple(f"v{i}" for i in range(n))
    edges = []
    for i in range(n):
        for j in range(i if self_loops else i + 1, n):
            if rng.random() < p_edge:
                edges.append((verts[i], verts[j], float(rng.uniform(*weight_range))))
    if integer_labels:
        labels = rng.integers(0, 3, size=(n, d)).astype(float)
    else:
        labels = rng.normal(size=(n, d))
    return LabeledGraph(verts, labels, tuple(edges))


def random_chain(rng: np.random.Generator, n: int, d: int = 1, metric=LabelMetric.L1,
                 stationary: bool = False, sparsity: float = 0.0) -> Lmmc:
    """Chain with Dirichlet kernel rows, Gaussian labels and a Dirichlet or stationary measure.

    ``sparsity`` is the probability of zeroing each off-diagonal kernel entry
    before renormalizing, which exercises zero-probability paths.
    """
    kernel = rng.dirichlet(np.ones(n), size=n)
    if sparsity > 0:
        mask = rng.random((n, n)) < sparsity
        np.fill_diagonal(mask, False)
        kernel = np.where(mask, 0.0, kernel)
        kernel /= kernel.sum(axis=1, keepdims=True)
    if stationary:
        vals, vecs = np.linalg.eig(kernel.T)
        mu = np.abs(np.real(vecs[:, np.argmin(np.abs(vals - 1.0))]))
        mu /= mu.sum()
    else:
        mu = rng.dirichlet(np.ones(n))
    return Lmmc(kernel, mu, rng.normal(size=(n, d)), metric)


def permutation(rng: np.random.Generator, n: int) -> list:
    return [int(i) for i in rng.permutation(n)]


__all__ = ["random_graph", "random_chain", "permutation"]

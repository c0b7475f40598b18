"""Labeled measure Markov chains and the graph-to-chain constructions."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass

import numpy as np

from .core import CapExceededError, LabeledGraph, LabelMetric, ValidationError

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-12
PATH_CAP = 10**6


@dataclass(frozen=True, eq=False)
class Lmmc:
    """Finite labeled measure Markov chain.

    ``kernel[x]`` is the transition distribution out of state ``x``, ``mu``
    the initial measure and ``labels[x]`` the label vector of ``x``. A
    non-stationary ``mu`` is accepted; ``stationary`` records whether it is.
    """

    kernel: np.ndarray
    mu: np.ndarray
    labels: np.ndarray
    metric: LabelMetric = LabelMetric.L1

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=float)
        mu = np.array(self.mu, dtype=float).ravel()
        labels = np.array(self.labels, dtype=float)
        n = mu.size
        if n == 0:
            raise ValidationError("chain has no states")
        if labels.ndim == 1:
            labels = labels.reshape(n, -1)
        if kernel.shape != (n, n):
            raise ValidationError(f"kernel shape {kernel.shape} does not match {n} states")
        if labels.shape[0] != n or labels.shape[1] < 1:
            raise ValidationError("labels must be an n x d table with d >= 1")
        if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(labels))):
            raise ValidationError("non-finite chain entry")
        if np.any(kernel < 0):
            raise ValidationError("kernel has negative entries")
        row_err = np.abs(kernel.sum(axis=1) - 1.0)
        if row_err.max() > ROW_SUM_TOL:
            bad = int(row_err.argmax())
            raise ValidationError(f"kernel row {bad} sums to {kernel[bad].sum()!r}")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > ROW_SUM_TOL:
            raise ValidationError("mu is not a probability vector")
        for arr in (kernel, mu, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "metric", LabelMetric.parse(self.metric))
        if not self.stationary:
            logger.debug("chain with %d states has a non-stationary initial measure", n)

    @property
    def n(self) -> int:
        return self.mu.size

    @property
    def d(self) -> int:
        return self.labels.shape[1]

    @property
    def stationary(self) -> bool:
        return check_stationary(self, STATIONARY_TOL)

    def with_labels(self, labels) -> "Lmmc":
        return Lmmc(self.kernel, self.mu, labels, self.metric)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "kernel": self.kernel.ravel().tolist(),
            "mu": self.mu.tolist(),
            "labels": self.labels.tolist(),
            "metric": self.metric.value,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Lmmc":
        try:
            n = int(doc["n"])
            kernel = np.asarray(doc["kernel"], dtype=float).reshape(n, n)
            return cls(kernel, doc["mu"], doc["labels"], doc.get("metric", "l1"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed chain document: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, data: str | bytes) -> "Lmmc":
        return cls.from_dict(json.loads(data))


def _graph_labels(g: LabeledGraph) -> np.ndarray:
    return np.array(g.labels, dtype=float)


def modified_degrees(g: LabeledGraph) -> np.ndarray:
    """Degrees with isolated vertices counted as 1."""
    deg = g.degrees()
    return np.where(deg > 0, deg, 1.0)


def induce_q_damped(g: LabeledGraph, q: float, metric=LabelMetric.L1) -> Lmmc:
    """Lazy random walk with self-probability ``q`` and measure proportional to modified degree."""
    if not 0.0 < q < 1.0:
        raise ValidationError(f"q must lie in (0, 1), got {q!r}")
    w = g.weight_matrix()
    deg = w.sum(axis=1)
    kernel = np.zeros_like(w)
    for v in range(g.n):
        if deg[v] > 0:
            kernel[v] = (1.0 - q) / deg[v] * w[v]
            kernel[v, v] += q
        else:
            kernel[v, v] = 1.0
    dbar = np.where(deg > 0, deg, 1.0)
    return Lmmc(kernel, dbar / dbar.sum(), _graph_labels(g), metric)


def induce_eps_normalized(g: LabeledGraph, eps: float, metric=LabelMetric.L1) -> Lmmc:
    """Kernel ``((1+eps) delta_v + sum_v' w_vv' delta_v') / (deg(v)+1+eps)``."""
    if not eps >= 0.0:
        raise ValidationError(f"eps must be >= 0, got {eps!r}")
    w = g.weight_matrix()
    deg_eps = w.sum(axis=1) + 1.0 + eps
    kernel = w.copy()
    kernel[np.diag_indices(g.n)] += 1.0 + eps
    kernel /= deg_eps[:, None]
    return Lmmc(kernel, deg_eps / deg_eps.sum(), _graph_labels(g), metric)


def check_stationary(c: Lmmc, tol: float = STATIONARY_TOL) -> bool:
    drift = c.mu @ c.kernel - c.mu
    return bool(np.max(np.abs(drift)) <= tol)


@dataclass(frozen=True)
class PathDistribution:
    """Sparse law of the first ``horizon + 1`` states of a chain."""

    horizon: int
    weights: dict

    def marginal(self, t: int, n: int) -> np.ndarray:
        out = np.zeros(n)
        for path, w in self.weights.items():
            out[path[t]] += w
        return out

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros((n,) * (self.horizon + 1))
        for path, w in self.weights.items():
            out[path] = w
        return out


def path_distribution(c: Lmmc, k: int, cap: int = PATH_CAP) -> PathDistribution:
    """Weights ``mu(x0) m_x0(x1) ... m_x{k-1}(xk)`` of every positive-probability path."""
    if k < 0:
        raise ValidationError("horizon must be >= 0")
    paths = {(x,): float(c.mu[x]) for x in range(c.n) if c.mu[x] > 0}
    for _ in range(k):
        nxt = {}
        for path, w in paths.items():
            row = c.kernel[path[-1]]
            for y in np.flatnonzero(row > 0):
                nxt[path + (int(y),)] = w * float(row[y])
                if len(nxt) > cap:
                    raise CapExceededError(f"path distribution exceeds {cap} entries")
        paths = nxt
    return PathDistribution(k, paths)


def label_space_chain(c: Lmmc) -> Lmmc:
    """Push the chain forward along an injective label map.

    States of the result are the distinct label points sorted
    lexicographically; each state is labeled by itself.
    """
    keys = [tuple(row) for row in c.labels.tolist()]
    if len(set(keys)) != len(keys):
        raise ValidationError("labels not injective")
    order = sorted(range(c.n), key=lambda i: keys[i])
    kernel = c.kernel[np.ix_(order, order)]
    return Lmmc(kernel, c.mu[order], c.labels[order], c.metric)


def all_paths(n: int, k: int):
    return itertools.product(range(n), repeat=k + 1)

"""scikit-learn adapter: graphs in, WL distance features out.

The fit step has nothing to learn; it only stores the reference graphs,
after which ``transform`` maps each input graph to its vector of distances
to those references. The result plugs into any estimator that accepts a
precomputed distance or feature matrix.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import LabeledGraph, ValidationError, graph_from_dict, parse_graph
from .markov import induce_eps_normalized, induce_q_damped
from .wl_distance import wl_distance


def _as_graph(item) -> LabeledGraph:
    if isinstance(item, LabeledGraph):
        return item
    if isinstance(item, Mapping):
        return graph_from_dict(item)
    if isinstance(item, (str, bytes)):
        return parse_graph(item)
    raise ValidationError(f"cannot interpret {type(item).__name__} as a labeled graph")


class WLDistanceTransformer(TransformerMixin, BaseEstimator):
    """Map graphs to their depth-``k`` WL distances from a reference set.

    Parameters
    ----------
    k : int, default=3
        Depth of the distance.
    q : float, default=0.5
        Laziness of the q-damped graph chain; ignored when ``eps`` is set.
    eps : float or None, default=None
        Use the eps-normalized chain instead of the q-damped one.
    metric : {"l1", "l2", "linf"}, default="l1"
        Ground metric on labels.
    n_jobs : int or None
        Worker threads per distance evaluation (``WLM_THREADS`` when None).

    Attributes
    ----------
    references_ : list of LabeledGraph
        Graphs seen in ``fit``; column ``j`` of ``transform`` is the distance
        to ``references_[j]``.
    n_references_ : int
    """

    def __init__(self, k=3, q=0.5, eps=None, metric="l1", n_jobs=None):
        self.k = k
        self.q = q
        self.eps = eps
        self.metric = metric
        self.n_jobs = n_jobs

    def _chain(self, g):
        if self.eps is not None:
            return induce_eps_normalized(g, self.eps, self.metric)
        return induce_q_damped(g, self.q, self.metric)

    def fit(self, X, y=None):
        graphs = [_as_graph(g) for g in X]
        if not graphs:
            raise ValidationError("fit needs at least one reference graph")
        self._chain(graphs[0])  # validate hyperparameters early
        self.references_ = graphs
        self._reference_chains = [self._chain(g) for g in graphs]
        self.n_references_ = len(graphs)
        return self

    def transform(self, X):
        check_is_fitted(self, "references_")
        chains = [self._chain(_as_graph(g)) for g in X]
        out = np.empty((len(chains), self.n_references_))
        for i, c in enumerate(chains):
            for j, r in enumerate(self._reference_chains):
                out[i, j] = wl_distance(c, r, self.k, n_jobs=self.n_jobs).distance
        return out


__all__ = ["WLDistanceTransformer"]

"""Labeled weighted graphs, label metrics and the JSON graph format."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """Malformed or invariant-violating input."""


class CapExceededError(RuntimeError):
    """A computation would exceed a configured size cap."""


class LabelMetric(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    @classmethod
    def parse(cls, value: "LabelMetric | str") -> "LabelMetric":
        if isinstance(value, LabelMetric):
            return value
        key = str(value).strip().lower().replace("∞", "inf")
        aliases = {"l1": cls.L1, "l2": cls.L2, "linf": cls.LINF, "inf": cls.LINF}
        try:
            return aliases[key]
        except KeyError:
            raise ValidationError(f"unknown label metric {value!r}") from None


DEFAULT_METRIC = LabelMetric.L1


def label_distance(metric, z1, z2) -> float:
    """Distance between two label vectors under ``metric``."""
    metric = LabelMetric.parse(metric)
    a = np.asarray(z1, dtype=float).ravel()
    b = np.asarray(z2, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"label dimension mismatch: {a.size} vs {b.size}")
    diff = np.abs(a - b)
    if metric is LabelMetric.L1:
        return float(diff.sum())
    if metric is LabelMetric.L2:
        return float(math.sqrt(float(np.dot(diff, diff))))
    return float(diff.max()) if diff.size else 0.0


def pairwise_label_distances(metric, labels_x, labels_y) -> np.ndarray:
    """Table of ``label_distance`` between every row of ``labels_x`` and ``labels_y``."""
    metric = LabelMetric.parse(metric)
    lx = np.atleast_2d(np.asarray(labels_x, dtype=float))
    ly = np.atleast_2d(np.asarray(labels_y, dtype=float))
    if lx.shape[1] != ly.shape[1]:
        raise ValidationError(f"label dimension mismatch: {lx.shape[1]} vs {ly.shape[1]}")
    diff = np.abs(lx[:, None, :] - ly[None, :, :])
    if metric is LabelMetric.L1:
        return diff.sum(axis=2)
    if metric is LabelMetric.L2:
        return np.sqrt((diff * diff).sum(axis=2))
    return diff.max(axis=2)


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected graph with positive edge weights and real vector labels.

    Vertex ids are opaque strings; ``vertices`` fixes the dense index order
    used by every downstream computation. Each unordered pair appears at most
    once in ``edges``; a self-loop ``(v, v, w)`` adds ``w`` once to ``deg(v)``.
    """

    vertices: tuple[str, ...]
    labels: np.ndarray
    edges: tuple[tuple[str, str, float], ...] = ()
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        verts = tuple(str(v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(set(verts)) != len(verts):
            raise ValidationError("duplicate vertex id")
        labels = np.array(self.labels, dtype=float)
        if labels.ndim == 1:
            labels = labels.reshape(len(verts), -1) if len(verts) else labels.reshape(0, 1)
        if labels.ndim != 2 or labels.shape[0] != len(verts):
            raise ValidationError("labels must be a |V| x d table")
        if labels.shape[1] < 1:
            raise ValidationError("label dimension must be >= 1")
        if not np.all(np.isfinite(labels)):
            raise ValidationError("non-finite label entry")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        index = {v: i for i, v in enumerate(verts)}
        object.__setattr__(self, "_index", index)

        seen = set()
        clean = []
        for pos, edge in enumerate(self.edges):
            u, v, w = str(edge[0]), str(edge[1]), float(edge[2])
            for end in (u, v):
                if end not in index:
                    raise ValidationError(f"edge {pos}: unknown endpoint {end!r}")
            if not (w > 0) or not math.isfinite(w):
                raise ValidationError(f"edge {pos}: nonpositive weight {w!r}")
            key = frozenset((u, v))
            if key in seen:
                raise ValidationError(f"edge {pos}: duplicate edge {u!r}-{v!r}")
            seen.add(key)
            clean.append((u, v, w))
        object.__setattr__(self, "edges", tuple(clean))

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def d(self) -> int:
        return int(self.labels.shape[1])

    def index(self, vertex: str) -> int:
        return self._index[vertex]

    def weight_matrix(self) -> np.ndarray:
        """Symmetric dense weight table; self-loops sit once on the diagonal."""
        w = np.zeros((self.n, self.n))
        for u, v, weight in self.edges:
            i, j = self._index[u], self._index[v]
            w[i, j] = weight
            w[j, i] = weight
        return w

    def degrees(self) -> np.ndarray:
        return self.weight_matrix().sum(axis=1)

    def neighbors(self) -> list[list[tuple[int, float]]]:
        """Per-vertex list of ``(neighbor index, weight)`` in edge order."""
        out: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        for u, v, w in self.edges:
            i, j = self._index[u], self._index[v]
            out[i].append((j, w))
            if i != j:
                out[j].append((i, w))
        return out

    def __eq__(self, other):
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        return (
            self.vertices == other.vertices
            and np.array_equal(self.labels, other.labels)
            and self.edges == other.edges
        )

    def __hash__(self):
        return hash((self.vertices, self.labels.tobytes(), self.edges))


def graph_to_dict(g: LabeledGraph) -> dict:
    return {
        "d": g.d,
        "nodes": [{"id": v, "label": [float(x) for x in g.labels[i]]} for i, v in enumerate(g.vertices)],
        "edges": [{"u": u, "v": v, "w": float(w)} for u, v, w in g.edges],
    }


def serialize_graph(g: LabeledGraph) -> bytes:
    return json.dumps(graph_to_dict(g)).encode("utf-8")


def graph_from_dict(doc: Mapping) -> LabeledGraph:
    if not isinstance(doc, Mapping):
        raise ValidationError("graph document must be a JSON object")
    if "directed" in doc and doc["directed"]:
        raise ValidationError("directed graphs are not supported")
    for key in ("d", "nodes"):
        if key not in doc:
            raise ValidationError(f"missing field {key!r}")
    d = doc["d"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise ValidationError(f"field 'd' must be a positive integer, got {d!r}")
    nodes = doc["nodes"]
    if not isinstance(nodes, list):
        raise ValidationError("field 'nodes' must be a list")
    ids, labels = [], []
    for pos, node in enumerate(nodes):
        if not isinstance(node, Mapping) or "id" not in node or "label" not in node:
            raise ValidationError(f"nodes[{pos}]: expected object with 'id' and 'label'")
        label = node["label"]
        if not isinstance(label, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in label
        ):
            raise ValidationError(f"nodes[{pos}]: label must be a list of numbers")
        if len(label) != d:
            raise ValidationError(f"nodes[{pos}]: label dimension mismatch ({len(label)} != {d})")
        ids.append(str(node["id"]))
        labels.append([float(x) for x in label])
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate node id")
    known = set(ids)
    edges = []
    for pos, edge in enumerate(doc.get("edges", [])):
        if not isinstance(edge, Mapping) or "u" not in edge or "v" not in edge:
            raise ValidationError(f"edges[{pos}]: expected object with 'u' and 'v'")
        u, v = str(edge["u"]), str(edge["v"])
        for end in (u, v):
            if end not in known:
                raise ValidationError(f"edges[{pos}]: unknown endpoint {end!r}")
        w = edge.get("w", 1.0)
        if not isinstance(w, (int, float)) or isinstance(w, bool):
            raise ValidationError(f"edges[{pos}]: weight must be a number")
        if not w > 0:
            raise ValidationError(f"edges[{pos}]: nonpositive weight {w!r}")
        edges.append((u, v, float(w)))
    return LabeledGraph(tuple(ids), np.array(labels, dtype=float).reshape(len(ids), d), tuple(edges))


def parse_graph(data: bytes | str) -> LabeledGraph:
    """Parse and validate a JSON graph document."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed document: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return graph_from_dict(doc)


def permute_graph(g: LabeledGraph, sigma: Mapping[str, str] | Sequence[int]) -> LabeledGraph:
    """Relabel vertices along the bijection ``sigma``.

    ``sigma`` is either a mapping between vertex ids or a sequence of dense
    indices where position ``i`` holds the new index of vertex ``i``. The
    result keeps document order by new index, so permuting by indices
    reorders the vertex list while the edge set and labels travel along.
    """
    if isinstance(sigma, Mapping):
        mapping = {str(k): str(v) for k, v in sigma.items()}
        if set(mapping) != set(g.vertices) or set(mapping.values()) != set(g.vertices):
            raise ValidationError("sigma is not a bijection on the vertex ids")
        new_vertices = g.vertices
        new_labels = np.empty_like(g.labels)
        for i, v in enumerate(g.vertices):
            new_labels[g.index(mapping[v])] = g.labels[i]
        new_edges = tuple((mapping[u], mapping[v], w) for u, v, w in g.edges)
        return LabeledGraph(new_vertices, new_labels, new_edges)

    perm = [int(p) for p in sigma]
    if sorted(perm) != list(range(g.n)):
        raise ValidationError("sigma is not a bijection on the vertex ids")
    new_vertices = [""] * g.n
    new_labels = np.empty_like(g.labels)
    for i, p in enumerate(perm):
        new_vertices[p] = g.vertices[i]
        new_labels[p] = g.labels[i]
    return LabeledGraph(tuple(new_vertices), new_labels, g.edges)

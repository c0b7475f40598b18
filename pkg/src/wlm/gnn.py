"""Message-passing networks on labeled graphs and their Markov-chain form.

Two graph architectures are covered:

* the q-damped MP-GNN, whose ``k`` message-passing layers apply ``phi``
  *before* averaging over the lazy random-walk kernel, followed by a readout
  ``psi(sum_v mu(v) phi_{k+1}(l^k(v)))``;
* the normalized GIN, which averages first with self-weight ``1 + eps``
  and then applies ``phi``.

Both are evaluated exactly in float64. The MCNN operations act on an
``Lmmc`` directly; on a chain induced by ``induce_q_damped`` they reproduce
the MP-GNN. Audit helpers compare output gaps against the WL distance.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import LabeledGraph, LabelMetric, ValidationError
from .markov import Lmmc, induce_eps_normalized, induce_q_damped, modified_degrees
from .wl_distance import _worker_count, wl_distance

logger = logging.getLogger(__name__)

ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda z: z,
    "relu": lambda z: np.maximum(z, 0.0),
    "abs": np.abs,
}

AUDIT_TOL = 1e-8
ZERO_DISTANCE_TOL = 1e-10
SEPARATION_TOL = 1e-6
POWER_ITERATIONS = 50
POWER_INFLATION = 1.01


@dataclass(frozen=True, eq=False)
class Layer:
    """Affine map followed by a componentwise 1-Lipschitz activation.

    Row vectors are mapped as ``activation(x @ weight + bias)``, so
    ``weight`` has shape ``(d_in, d_out)``.
    """

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        if w.ndim != 2 or min(w.shape) < 1:
            raise ValidationError(f"weight table must be 2-D and non-empty, got shape {w.shape}")
        b = np.zeros(w.shape[1]) if self.bias is None else np.array(self.bias, dtype=float).ravel()
        if b.shape != (w.shape[1],):
            raise ValidationError(f"bias has length {b.size}, expected {w.shape[1]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("non-finite layer parameter")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d_in:
            raise ValidationError(f"layer expects inputs of dimension {self.d_in}, got {x.shape[-1]}")
        return ACTIVATIONS[self.activation](x @ self.weight + self.bias)

    @classmethod
    def identity(cls, d: int) -> "Layer":
        return cls(np.eye(d), np.zeros(d))

    def to_dict(self) -> dict:
        return {"weight": self.weight.tolist(), "bias": self.bias.tolist(), "activation": self.activation}

    @classmethod
    def from_dict(cls, doc: dict, where: str = "layer") -> "Layer":
        if not isinstance(doc, dict) or "weight" not in doc:
            raise ValidationError(f"{where}: expected an object with a 'weight' table")
        try:
            return cls(doc["weight"], doc.get("bias"), doc.get("activation", "identity"))
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{where}: malformed parameters ({exc})") from None


@dataclass(frozen=True, eq=False)
class MpgnnModel:
    """Layer maps ``phi_1, ..., phi_L`` and a scalar readout ``psi``.

    Exactly one of ``q`` (q-damped MP-GNN, ``L = k + 1``) or ``eps``
    (normalized GIN, ``L = k``) is set.
    """

    layers: tuple
    readout: Layer
    q: float | None = None
    eps: float | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if (self.q is None) == (self.eps is None):
            raise ValidationError("model needs exactly one of 'q' or 'eps'")
        if self.q is not None and not 0.0 < self.q < 1.0:
            raise ValidationError(f"q must lie in (0, 1), got {self.q!r}")
        if self.eps is not None and not self.eps >= 0.0:
            raise ValidationError(f"eps must be >= 0, got {self.eps!r}")
        if self.q is not None and not layers:
            raise ValidationError("a q-damped model needs at least one layer map")
        chain = list(layers) + [self.readout]
        for i in range(1, len(chain)):
            if chain[i - 1].d_out != chain[i].d_in:
                name = "readout" if i == len(layers) else f"layer {i}"
                raise ValidationError(
                    f"{name} expects dimension {chain[i].d_in}, previous map emits {chain[i - 1].d_out}"
                )
        if self.readout.d_out != 1:
            raise ValidationError("readout must map to a scalar")

    @property
    def variant(self) -> str:
        return "q" if self.q is not None else "eps"

    @property
    def depth(self) -> int:
        """Number of message-passing rounds ``k``."""
        return len(self.layers) - 1 if self.variant == "q" else len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in if self.layers else self.readout.d_in

    def to_dict(self) -> dict:
        doc = {"q": self.q} if self.variant == "q" else {"eps": self.eps}
        doc["layers"] = [layer.to_dict() for layer in self.layers]
        doc["readout"] = self.readout.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MpgnnModel":
        if not isinstance(doc, dict):
            raise ValidationError("model document must be a JSON object")
        if ("q" in doc) == ("eps" in doc):
            raise ValidationError("model document needs exactly one of 'q' or 'eps'")
        if not isinstance(doc.get("layers", []), list):
            raise ValidationError("'layers' must be a list")
        if "readout" not in doc:
            raise ValidationError("missing field 'readout'")
        layers = [Layer.from_dict(d, f"layers[{i}]") for i, d in enumerate(doc.get("layers", []))]
        readout = Layer.from_dict(doc["readout"], "readout")
        return cls(tuple(layers), readout, q=doc.get("q"), eps=doc.get("eps"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, data: str | bytes) -> "MpgnnModel":
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed model document: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc)


def identity_model(d: int, k: int, q: float | None = 0.5, eps: float | None = None) -> MpgnnModel:
    """Model whose maps are all identities except a summing readout."""
    n_layers = k if eps is not None else k + 1
    readout = Layer(np.ones((d, 1)), np.zeros(1))
    return MpgnnModel(tuple(Layer.identity(d) for _ in range(n_layers)), readout,
                      q=None if eps is not None else q, eps=eps)


def _check_input(labels: np.ndarray, model: MpgnnModel) -> None:
    if labels.shape[1] != model.input_dim:
        raise ValidationError(f"labels have dimension {labels.shape[1]}, model expects {model.input_dim}")


# ---------------------------------------------------------------------------
# MCNN on labeled measure Markov chains


def mcnn_layer(c: Lmmc, phi: Layer) -> Lmmc:
    """Replace every label by the kernel average of ``phi`` over the next state.

    Parameters
    ----------
    c : Lmmc
        Input chain with labels of dimension ``phi.d_in``.
    phi : Layer
        Map applied to the labels before averaging.

    Returns
    -------
    Lmmc
        Same kernel and initial measure, labels ``sum_x' m_x(x') phi(l(x'))``.
    """
    if c.d != phi.d_in:
        raise ValidationError(f"layer expects dimension {phi.d_in}, chain labels have {c.d}")
    return c.with_labels(c.kernel @ phi(c.labels))


def mcnn_readout(c: Lmmc, phi: Layer, psi: Layer) -> float:
    """``psi(sum_x mu(x) phi(l(x)))``."""
    if c.d != phi.d_in:
        raise ValidationError(f"layer expects dimension {phi.d_in}, chain labels have {c.d}")
    return float(psi(c.mu @ phi(c.labels))[0])


def mcnn_forward(c: Lmmc, model: MpgnnModel) -> float:
    """Apply ``psi o S_{phi_{k+1}} o F_{phi_k} o ... o F_{phi_1}`` to a chain."""
    if model.variant != "q":
        raise ValidationError("the MCNN pipeline is defined for q-damped models")
    _check_input(c.labels, model)
    for phi in model.layers[:-1]:
        c = mcnn_layer(c, phi)
    return mcnn_readout(c, model.layers[-1], model.readout)


# ---------------------------------------------------------------------------
# Graph networks


def _check_depth(model: MpgnnModel, k: int | None, variant: str) -> int:
    if model.variant != variant:
        wanted = "q-damped" if variant == "q" else "normalized GIN (eps)"
        raise ValidationError(f"expected a {wanted} model")
    if k is None:
        return model.depth
    if k != model.depth:
        expected = k + 1 if variant == "q" else k
        raise ValidationError(f"depth {k} needs {expected} layer maps, model has {len(model.layers)}")
    return k


def mpgnn_embeddings(g: LabeledGraph, model: MpgnnModel, k: int | None = None) -> np.ndarray:
    """Vertex labels ``l^k`` after ``k`` rounds of q-damped message passing."""
    k = _check_depth(model, k, "q")
    _check_input(g.labels, model)
    q = model.q
    nbrs = g.neighbors()
    deg = g.degrees()
    labels = np.asarray(g.labels, dtype=float)
    for i in range(k):
        z = model.layers[i](labels)
        nxt = np.empty_like(z)
        for v in range(g.n):
            if deg[v] > 0:
                msg = sum(w * z[u] for u, w in nbrs[v])
                nxt[v] = q * z[v] + (1.0 - q) / deg[v] * msg
            else:
                nxt[v] = z[v]
        labels = nxt
    return labels


def mpgnn_forward(g: LabeledGraph, model: MpgnnModel, k: int | None = None) -> float:
    """Evaluate the q-damped MP-GNN on a labeled graph.

    Each round maps every label through ``phi_{i+1}`` and mixes the results
    with self-weight ``q`` and neighbor weights ``(1 - q) w / deg``;
    isolated vertices keep ``phi_{i+1}`` of their own label. The readout
    averages ``phi_{k+1}`` with weights proportional to modified degree.

    Parameters
    ----------
    g : LabeledGraph
    model : MpgnnModel
        q-damped model with ``k + 1`` layer maps.
    k : int, optional
        Number of message-passing rounds; checked against the model.

    Returns
    -------
    float
    """
    labels = mpgnn_embeddings(g, model, k)
    dbar = modified_degrees(g)
    pooled = (dbar / dbar.sum()) @ model.layers[-1](labels)
    return float(model.readout(pooled)[0])


def normalized_gin_embeddings(g: LabeledGraph, model: MpgnnModel, k: int | None = None) -> np.ndarray:
    """Vertex labels ``l^k`` of the normalized GIN."""
    k = _check_depth(model, k, "eps")
    _check_input(g.labels, model)
    eps = model.eps
    nbrs = g.neighbors()
    deg_eps = g.degrees() + 1.0 + eps
    labels = np.asarray(g.labels, dtype=float)
    for i in range(k):
        agg = np.empty_like(labels)
        for v in range(g.n):
            total = (1.0 + eps) * labels[v]
            for u, w in nbrs[v]:
                total = total + w * labels[u]
            agg[v] = total / deg_eps[v]
        labels = model.layers[i](agg)
    return labels


def normalized_gin_forward(g: LabeledGraph, model: MpgnnModel, eps: float | None = None,
                           k: int | None = None) -> float:
    """Evaluate the eps-normalized GIN on a labeled graph.

    Round ``i`` computes ``phi_{i+1}(((1+eps) l(v) + sum w l(v')) / (deg(v)+1+eps))``;
    the readout is ``psi`` of the ``(deg+1+eps)``-weighted mean of the final labels.
    """
    if eps is not None and model.eps is not None and eps != model.eps:
        raise ValidationError(f"eps {eps!r} does not match the model's eps {model.eps!r}")
    labels = normalized_gin_embeddings(g, model, k)
    deg_eps = g.degrees() + 1.0 + model.eps
    pooled = (deg_eps / deg_eps.sum()) @ labels
    return float(model.readout(pooled)[0])


def forward(g: LabeledGraph, model: MpgnnModel) -> float:
    """Dispatch to the architecture selected by the model variant."""
    if model.variant == "q":
        return mpgnn_forward(g, model)
    return normalized_gin_forward(g, model)


# ---------------------------------------------------------------------------
# Lipschitz constants and audits


def layer_lipschitz_bound(phi: Layer, metric=LabelMetric.L1) -> float:
    """Lipschitz constant of ``phi`` for the chosen norm on inputs and outputs.

    The activation contributes a factor 1, so only the weight table matters.
    With ``y = x @ W``:

    * L1: ``max_i sum_j |W[i, j]|``, the exact induced 1-norm (the largest
      column sum of the operator acting on column vectors, ``W.T``);
    * Linf: ``max_j sum_i |W[i, j]|``, exact;
    * L2: largest singular value estimated by deterministic power iteration
      and inflated by 1 %, hence an estimate rather than a certified bound.
    """
    metric = LabelMetric.parse(metric)
    w = np.abs(phi.weight) if metric is not LabelMetric.L2 else phi.weight
    if metric is LabelMetric.L1:
        return float(w.sum(axis=1).max())
    if metric is LabelMetric.LINF:
        return float(w.sum(axis=0).max())
    gram = w.T @ w
    v = np.ones(gram.shape[0]) + np.arange(gram.shape[0]) / max(1, gram.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(POWER_ITERATIONS):
        u = gram @ v
        est = float(np.linalg.norm(u))
        if est == 0.0:
            break
        v = u / est
    return float(np.sqrt(est) * POWER_INFLATION)


def model_lipschitz_constants(model: MpgnnModel, metric=LabelMetric.L1) -> tuple[list, float]:
    """Per-layer constants ``C_i`` and the readout constant ``C``."""
    return [layer_lipschitz_bound(p, metric) for p in model.layers], layer_lipschitz_bound(model.readout, metric)


@dataclass(frozen=True)
class LipschitzAudit:
    """Outcome of checking ``|h(G1) - h(G2)| <= C * prod(C_i) * d``.

    ``conservative`` is set when the constants come from the L2 power
    iteration, which estimates rather than certifies the layer norms.
    """

    lhs: float
    bound_constant: float
    distance: float
    satisfied: bool
    slack: float
    layer_constants: list = field(default_factory=list)
    readout_constant: float = 1.0
    metric: str = "l1"
    variant: str = "q"
    conservative: bool = False
    tolerance: float = AUDIT_TOL

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "bound_constant": self.bound_constant,
            "distance": self.distance,
            "satisfied": self.satisfied,
            "slack": self.slack,
            "layer_constants": list(self.layer_constants),
            "readout_constant": self.readout_constant,
            "metric": self.metric,
            "variant": self.variant,
            "conservative": self.conservative,
            "tolerance": self.tolerance,
        }


def lipschitz_audit(g1: LabeledGraph, g2: LabeledGraph, model: MpgnnModel, k: int | None = None,
                    metric=LabelMetric.L1, allow_estimated: bool = False, n_jobs=None) -> LipschitzAudit:
    """Check the Lipschitz inequality for one graph pair and one model.

    Parameters
    ----------
    g1, g2 : LabeledGraph
    model : MpgnnModel
        A q-damped model is compared against the q-damped WL distance of
        depth ``k``; an eps model against the eps-normalized one.
    k : int, optional
        Depth; defaults to the model depth.
    metric : LabelMetric or str
        Norm on every label space. L1 and Linf give exact constants.
    allow_estimated : bool
        Permit the L2 metric, whose constants are power-iteration estimates.

    Returns
    -------
    LipschitzAudit
    """
    metric = LabelMetric.parse(metric)
    if metric is LabelMetric.L2 and not allow_estimated:
        raise ValidationError("L2 layer bounds are estimates; pass allow_estimated=True to audit with them")
    k = _check_depth(model, k, model.variant)
    if model.variant == "q":
        lhs = abs(mpgnn_forward(g1, model, k) - mpgnn_forward(g2, model, k))
        X, Y = induce_q_damped(g1, model.q, metric), induce_q_damped(g2, model.q, metric)
    else:
        lhs = abs(normalized_gin_forward(g1, model, k=k) - normalized_gin_forward(g2, model, k=k))
        X, Y = induce_eps_normalized(g1, model.eps, metric), induce_eps_normalized(g2, model.eps, metric)
    dist = wl_distance(X, Y, k, n_jobs=n_jobs).distance
    cs, c = model_lipschitz_constants(model, metric)
    const = c * float(np.prod(cs)) if cs else c
    slack = const * dist - lhs
    return LipschitzAudit(
        lhs=lhs,
        bound_constant=const,
        distance=dist,
        satisfied=bool(slack >= -AUDIT_TOL),
        slack=slack,
        layer_constants=cs,
        readout_constant=c,
        metric=metric.value,
        variant=model.variant,
        conservative=metric is LabelMetric.L2,
    )


def mean_embedding(phi: Layer, support, weights) -> np.ndarray:
    """``sum_i weights[i] * phi(support[i])``, the pushforward mean of ``phi``."""
    return np.asarray(weights, dtype=float) @ phi(np.atleast_2d(np.asarray(support, dtype=float)))


# ---------------------------------------------------------------------------
# Random models, zero-set audit and separator search


def random_model(rng: np.random.Generator, d: int, k: int, q: float | None = 0.5, eps: float | None = None,
                 widths: Sequence[int] | None = None, activations: Sequence[str] | None = None,
                 scale: float = 1.0) -> MpgnnModel:
    """Model with weights uniform in ``[-scale, scale]`` and zero biases.

    ``widths`` lists the output dimension of every layer map (random in
    ``{1, 2, 3}`` when omitted); activations are drawn uniformly from
    ``activations`` (all registered ones by default).
    """
    n_layers = k if eps is not None else k + 1
    if widths is None:
        widths = [int(w) for w in rng.integers(1, 4, size=n_layers)]
    if len(widths) != n_layers:
        raise ValidationError(f"need {n_layers} widths, got {len(widths)}")
    names = list(activations or sorted(ACTIVATIONS))
    layers = []
    d_in = d
    for d_out in widths:
        w = rng.uniform(-scale, scale, size=(d_in, d_out))
        layers.append(Layer(w, np.zeros(d_out), names[int(rng.integers(len(names)))]))
        d_in = d_out
    readout = Layer(rng.uniform(-scale, scale, size=(d_in, 1)), np.zeros(1),
                    names[int(rng.integers(len(names)))])
    return MpgnnModel(tuple(layers), readout, q=None if eps is not None else q, eps=eps)


def _separator_candidates(d: int, k: int, q: float, trials: int, seed: int):
    """Trial 1 sums the labels through identity maps; later trials are random with ``d_i = 1``."""
    if trials >= 1:
        ones = [Layer(np.ones((d, 1)), np.zeros(1))] + [Layer.identity(1) for _ in range(k)]
        yield MpgnnModel(tuple(ones), Layer.identity(1), q=q)
    rng = np.random.default_rng(seed)
    for _ in range(trials - 1):
        yield random_model(rng, d, k, q=q, widths=[1] * (k + 1))


def separator_search(g1: LabeledGraph, g2: LabeledGraph, q: float, k: int, trials: int = 100,
                     seed: int = 0) -> tuple[MpgnnModel | None, int | None]:
    """Like ``random_separator_search`` but also returns the 1-based winning trial."""
    if g1.d != g2.d:
        raise ValidationError(f"label dimension mismatch: {g1.d} vs {g2.d}")
    for t, model in enumerate(_separator_candidates(g1.d, k, q, trials, seed), start=1):
        if abs(mpgnn_forward(g1, model, k) - mpgnn_forward(g2, model, k)) > SEPARATION_TOL:
            return model, t
    return None, None


def random_separator_search(g1: LabeledGraph, g2: LabeledGraph, q: float, k: int, trials: int = 100,
                            seed: int = 0) -> MpgnnModel | None:
    """Best-effort search for a model with one-dimensional hidden maps telling two graphs apart.

    Returns the first sampled model whose outputs differ by more than
    ``1e-6``, or ``None``. Failure to find one proves nothing.
    """
    return separator_search(g1, g2, q, k, trials, seed)[0]


@dataclass(frozen=True)
class ZeroSetReport:
    distance: float
    zero_distance: bool
    trials: int
    max_gap: float | None = None
    equal_outputs: bool | None = None
    separator_found: bool | None = None
    separator_trial: int | None = None
    separator: MpgnnModel | None = None

    def to_dict(self) -> dict:
        return {
            "distance": self.distance,
            "zero_distance": self.zero_distance,
            "trials": self.trials,
            "max_gap": self.max_gap,
            "equal_outputs": self.equal_outputs,
            "separator_found": self.separator_found,
            "separator_trial": self.separator_trial,
            "separator": None if self.separator is None else self.separator.to_dict(),
        }


def zero_set_audit(g1: LabeledGraph, g2: LabeledGraph, q: float, k: int, trials: int = 20,
                   seed: int = 0, n_jobs=None) -> ZeroSetReport:
    """Relate the q-damped WL distance to what random models can distinguish.

    At distance zero (``<= 1e-10``) every random model must give equal
    outputs up to ``1e-8``; otherwise a separator search is run and its
    outcome recorded. Models are drawn up front from ``seed`` so results
    do not depend on ``n_jobs``.
    """
    if g1.d != g2.d:
        raise ValidationError(f"label dimension mismatch: {g1.d} vs {g2.d}")
    dist = wl_distance(induce_q_damped(g1, q), induce_q_damped(g2, q), k).distance
    if dist > ZERO_DISTANCE_TOL:
        model, t = separator_search(g1, g2, q, k, trials, seed)
        if model is None:
            logger.info("no separator found in %d trials at distance %.3g", trials, dist)
        return ZeroSetReport(dist, False, trials, separator_found=model is not None,
                             separator_trial=t, separator=model)
    rng = np.random.default_rng(seed)
    models = [random_model(rng, g1.d, k, q=q) for _ in range(trials)]

    def gap(model):
        return abs(mpgnn_forward(g1, model, k) - mpgnn_forward(g2, model, k))

    workers = _worker_count(n_jobs)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            gaps = list(pool.map(gap, models))
    else:
        gaps = [gap(m) for m in models]
    worst = max(gaps, default=0.0)
    return ZeroSetReport(dist, True, trials, max_gap=worst, equal_outputs=bool(worst <= AUDIT_TOL))


__all__ = [
    "ACTIVATIONS",
    "Layer",
    "MpgnnModel",
    "LipschitzAudit",
    "ZeroSetReport",
    "identity_model",
    "mcnn_layer",
    "mcnn_readout",
    "mcnn_forward",
    "mpgnn_embeddings",
    "mpgnn_forward",
    "normalized_gin_embeddings",
    "normalized_gin_forward",
    "forward",
    "layer_lipschitz_bound",
    "model_lipschitz_constants",
    "lipschitz_audit",
    "mean_embedding",
    "random_model",
    "separator_search",
    "random_separator_search",
    "zero_set_audit",
]

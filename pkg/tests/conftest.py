import numpy as np
import pytest

from wlm.core import LabeledGraph

# Lines recorded by the acceptance suite; echoed in the terminal summary so
# the per-criterion verdicts show up even when output is captured.
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_graph(labels, edges=(), ids=None):
    labels = np.asarray(labels, dtype=float)
    if labels.ndim == 1:
        labels = labels[:, None]
    ids = ids or [f"v{i}" for i in range(len(labels))]
    return LabeledGraph(tuple(ids), labels, tuple((ids[u], ids[v], float(w)) for u, v, w in edges))


@pytest.fixture
def p2():
    """Path on two vertices with labels 0 and 1."""
    return make_graph([0.0, 1.0], [(0, 1, 1.0)])


@pytest.fixture
def single0():
    return make_graph([0.0])


@pytest.fixture
def single3():
    return make_graph([3.0])


@pytest.fixture
def triangle():
    return make_graph([0.0, 0.0, 0.0], [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])


@pytest.fixture
def path3():
    return make_graph([0.0, 0.0, 0.0], [(0, 1, 1.0), (1, 2, 1.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def iid_chain(p, labels):
    """Chain whose every kernel row and initial measure is ``p``."""
    from wlm.markov import Lmmc

    p = np.asarray(p, dtype=float)
    return Lmmc(np.tile(p, (p.size, 1)), p, labels)


def reversal_coupling(p, k):
    """Couple two i.i.d. ``p`` paths by ``y_t = x_{k-t}``.

    Both marginals are the i.i.d. path law, but ``y_0 = x_k`` looks into the
    future of the first process, so for ``k >= 1`` and non-degenerate ``p``
    the coupling is not causal.
    """
    from wlm.coupling_lab import JointPathMeasure

    p = np.asarray(p, dtype=float)
    n = p.size
    tensor = np.zeros((n,) * (2 * k + 2))
    for path in np.ndindex(*(n,) * (k + 1)):
        tensor[path + path[::-1]] = np.prod(p[list(path)])
    return JointPathMeasure(k, n, n, tensor)

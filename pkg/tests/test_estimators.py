import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from wlm.core import ValidationError, graph_to_dict, serialize_graph
from wlm.estimators import WLDistanceTransformer
from wlm.markov import induce_q_damped
from wlm.sampling import random_graph
from wlm.wl_distance import wl_distance


def test_transform_matches_wl_distance(rng, p2, single0):
    graphs = [random_graph(rng, 3) for _ in range(3)]
    est = WLDistanceTransformer(k=2, q=0.4).fit(graphs)
    out = est.transform([p2, single0])
    assert out.shape == (2, 3) and est.n_references_ == 3
    for i, g in enumerate([p2, single0]):
        for j, r in enumerate(graphs):
            expected = wl_distance(induce_q_damped(g, 0.4), induce_q_damped(r, 0.4), 2).distance
            assert out[i, j] == expected


def test_p2_example(p2, single0):
    est = WLDistanceTransformer(k=1, q=0.5).fit([single0])
    assert abs(est.transform([p2])[0, 0] - 0.5) <= 1e-12


def test_accepts_dicts_and_json(p2, single0):
    est = WLDistanceTransformer(k=1).fit([graph_to_dict(single0)])
    assert est.transform([serialize_graph(p2)])[0, 0] == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValidationError):
        est.transform([42])


def test_sklearn_protocol(rng):
    est = WLDistanceTransformer(k=1, eps=0.5)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.transform([random_graph(rng, 2)])
    with pytest.raises(ValidationError):
        WLDistanceTransformer(q=2.0).fit([random_graph(rng, 2)])
    with pytest.raises(ValidationError):
        est.fit([])
    graphs = [random_graph(rng, 3) for _ in range(4)]
    feats = make_pipeline(WLDistanceTransformer(k=1), StandardScaler()).fit_transform(graphs)
    assert feats.shape == (4, 4) and np.all(np.isfinite(feats))
    diag = WLDistanceTransformer(k=1).fit_transform(graphs)
    assert np.abs(np.diag(diag)).max() <= 1e-12

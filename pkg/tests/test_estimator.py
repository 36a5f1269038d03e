import numpy as np
import pandas as pd
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hydrocar import synth
from hydrocar.estimator import WaterNetworkClassifier
from hydrocar.exceptions import ValidationError


@pytest.fixture(scope="module")
def data():
    net = synth.simulate_network(30, seed=2)
    cfg = synth.SimulationConfig(500, beta_age=0.3, tau_graph=1.0, tau_spatial=1.0, seed=2)
    ds, _ = synth.simulate_dataset(net, cfg)
    X = pd.DataFrame({"age": ds.age, "gender": ds.gender, "house_id": ds.house_id,
                      "node_id": ds.node_id, "x": ds.location[:, 0], "y": ds.location[:, 1]})
    return net, X, ds.outcome


def test_params_roundtrip(data):
    net, _, _ = data
    est = WaterNetworkClassifier(network=net, effects="graph", n_draws=50)
    params = est.get_params()
    assert params["effects"] == "graph" and params["n_draws"] == 50
    other = clone(est)
    assert other.get_params()["effects"] == "graph"
    other.set_params(effects="age")
    assert est.effects == "graph"


def test_unfitted_raises(data):
    net, X, _ = data
    with pytest.raises(NotFittedError):
        WaterNetworkClassifier(network=net).predict(X)


def test_fit_predict(data):
    net, X, y = data
    est = WaterNetworkClassifier(network=net, effects="age,gender,house,spatial,graph", n_draws=200)
    est.fit(X, y)
    proba = est.predict_proba(X)
    assert proba.shape == (len(X), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(np.unique(est.predict(X))) <= {0, 1}
    assert np.isfinite(est.dic_)
    assert set(est.theta_) == {"household_iid", "spatial_lattice", "water_graph"}
    assert 0.0 <= est.score(X, y) <= 1.0
    assert est.result_.dic == est.dic_


def test_matches_functional_fit(data):
    from hydrocar.inference import fit
    from hydrocar.model import ModelSpec

    net, X, y = data
    est = WaterNetworkClassifier(network=net, effects="age,graph", n_draws=100, random_state=4).fit(X, y)
    ds, _ = synth.simulate_dataset(net, synth.SimulationConfig(500, beta_age=0.3, tau_graph=1.0,
                                                               tau_spatial=1.0, seed=2))
    res = fit(ds, ModelSpec.parse("age,graph"), seed=4, n_draws=100)
    assert est.dic_ == pytest.approx(res.dic, rel=1e-10)


def test_rejects_bad_input(data):
    net, X, y = data
    with pytest.raises(ValidationError):
        WaterNetworkClassifier(network=net).fit(X.drop(columns=["age"]), y)
    with pytest.raises(ValidationError):
        WaterNetworkClassifier(network=net).fit(X, np.full(len(y), 2))
    with pytest.raises(ValidationError):
        WaterNetworkClassifier().fit(X, y)

import math

import numpy as np
import pytest

from hydrocar import synth
from hydrocar.exceptions import ValidationError
from hydrocar.inference import (
    compute_dic,
    fit,
    gaussian_approximation,
    log_posterior,
    log_posterior_gradient,
    optimize_hyperparameters,
)
from hydrocar.model import GRAPH, HOUSEHOLD, SPATIAL, ModelSpec, build_latent_model
from hydrocar.network import PipeSegment, WaterNetwork

from conftest import make_dataset
from oracles import posterior_grid_2node

TWO_NODE = WaterNetwork(("a", "b"), (PipeSegment("a", "b", 1.0),))


def two_node_dataset():
    return make_dataset(TWO_NODE, ["a"] * 3 + ["b"] * 3, [1, 1, 0, 0, 0, 1])


def test_zero_observations_gives_prior_mode(y_network):
    ds = make_dataset(y_network, [], [])
    approx = gaussian_approximation(ds, ModelSpec.parse("age,gender,graph"), [0.0])
    np.testing.assert_array_equal(approx.mode, np.zeros(6))


def test_intercept_symmetry(y_network):
    ds = make_dataset(y_network, ["A"] * 10, [0, 1] * 5)
    approx = gaussian_approximation(ds, ModelSpec(fixed=("intercept",)), [])
    assert abs(approx.mode[0]) < 1e-3


def test_two_node_posterior_against_quadrature():
    spec = ModelSpec(fixed=("intercept",), latent=(GRAPH,), fixed_prior_precision=1.0)
    approx = gaussian_approximation(two_node_dataset(), spec, [0.0])
    mode, _, sds = posterior_grid_2node([1, 1, 0], [0, 0, 1], weight=1.0, tau=1.0, fixed_precision=1.0)
    assert approx.mode[1] == pytest.approx(-approx.mode[2], abs=1e-10)
    assert abs(approx.mode[0] - mode[0]) < 0.02
    assert abs(approx.mode[1] - mode[1]) < 0.02
    sd = approx.marginal_sd([0, 1])
    assert sd[0] == pytest.approx(sds[0], rel=0.05)
    assert sd[1] == pytest.approx(sds[1], rel=0.05)


def _thirty_dim_model():
    net = synth.simulate_network(27, seed=4)
    rng = np.random.default_rng(4)
    n = 200
    ds = make_dataset(
        net, list(rng.choice(net.nodes, n)), rng.integers(0, 2, n),
        ages=rng.uniform(20, 80, n), genders=rng.integers(0, 2, n),
    )
    return build_latent_model(ds, ModelSpec.parse("age,gender,graph"))


def test_gradient_matches_finite_differences():
    lm = _thirty_dim_model()
    assert lm.n == 30
    rng = np.random.default_rng(0)
    theta = [0.3]
    h = 1e-5
    for _ in range(5):
        x = rng.normal(0, 1, lm.n)
        g = log_posterior_gradient(lm, theta, x)
        fd = np.array([
            (log_posterior(lm, theta, x + h * e) - log_posterior(lm, theta, x - h * e)) / (2 * h)
            for e in np.eye(lm.n)
        ])
        assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) < 1e-4


def test_newton_monotone_and_constrained():
    lm = _thirty_dim_model()
    approx = gaussian_approximation(lm, None, [0.0])
    assert all(b >= a - 1e-9 for a, b in zip(approx.history, approx.history[1:]))
    assert approx.gradient_norm < 1e-6
    graph = approx.mode[lm.layout[GRAPH]]
    assert abs(graph.sum()) < 1e-8


def test_dic_deterministic_predictor():
    n = 1000
    net = WaterNetwork(("a",))
    ds = make_dataset(net, ["a"] * n, [0, 1] * (n // 2))
    spec = ModelSpec(fixed=("intercept",), fixed_prior_precision=1e12)
    lm = build_latent_model(ds, spec)
    approx = gaussian_approximation(lm, None, [])
    out = compute_dic(lm, approx, n_draws=10_000, seed=3)
    assert out.deviance_at_mean == pytest.approx(2 * n * math.log(2), rel=1e-12)
    assert abs(out.p_eff) < 0.1


def test_dic_matches_binomial_closed_form():
    rng = np.random.default_rng(12)
    y = (rng.random(1000) < 0.3).astype(int)
    ds = make_dataset(WaterNetwork(("a",)), ["a"] * 1000, y)
    res = fit(ds, ModelSpec(fixed=("intercept",)), seed=2, n_draws=10_000)
    k, n = y.sum(), len(y)
    p = k / n
    max_ll = k * math.log(p) + (n - k) * math.log(1 - p)
    assert res.dic == pytest.approx(-2 * max_ll + 2, abs=2.0)


def test_n_draws_validation(y_network):
    ds = make_dataset(y_network, ["A", "B"], [0, 1])
    lm = build_latent_model(ds, ModelSpec(fixed=("intercept",)))
    approx = gaussian_approximation(lm, None, [])
    with pytest.raises(ValidationError):
        compute_dic(lm, approx, n_draws=1)


def test_dic_identity(y_network):
    ds = make_dataset(y_network, ["A", "B", "C"] * 5, [0, 1, 1] * 5)
    res = fit(ds, ModelSpec.parse("graph"), seed=1)
    assert res.dic == pytest.approx(res.deviance_at_mean + 2 * res.p_eff, abs=1e-9)
    assert res.p_eff == pytest.approx(res.deviance_bar - res.deviance_at_mean, abs=1e-9)


def test_all_ones_intercept():
    ds = make_dataset(WaterNetwork(("a",)), ["a"] * 50, [1] * 50)
    res = fit(ds, ModelSpec(fixed=("intercept",)), seed=1)
    assert res.fixed_effects["intercept"][0] > 2


def test_no_latent_returns_empty_theta(y_network):
    ds = make_dataset(y_network, ["A"], [1])
    assert optimize_hyperparameters(ds, ModelSpec.parse("age,gender")).shape == (0,)


@pytest.fixture(scope="module")
def graph_data():
    net = synth.simulate_network(100, seed=21)
    cfg = synth.SimulationConfig(2000, beta0=-0.3, tau_graph=1.0, seed=21)
    return synth.simulate_dataset(net, cfg)


def test_recovers_graph_precision(graph_data):
    ds, _ = graph_data
    theta = optimize_hyperparameters(ds, ModelSpec.parse("graph"))
    assert abs(theta[0] - 0.0) <= 1.0


def test_fit_is_deterministic(graph_data):
    ds, _ = graph_data
    spec = ModelSpec.parse("age,gender,graph")
    a = fit(ds, spec, seed=9)
    b = fit(ds, spec, seed=9)
    assert a.to_json() == b.to_json()
    assert a.dic == b.dic


def test_effective_parameters_grow_with_informative_effect(graph_data):
    ds, _ = graph_data
    base = fit(ds, ModelSpec.parse("age,gender"), seed=1)
    with_graph = fit(ds, ModelSpec.parse("age,gender,graph"), seed=1)
    assert base.p_eff > -0.5 and with_graph.p_eff > base.p_eff + 5


def test_full_spec_fields_and_constraints():
    net = synth.simulate_network(60, seed=8)
    cfg = synth.SimulationConfig(600, tau_graph=1.0, tau_house=4.0, tau_spatial=1.0, seed=8)
    ds, _ = synth.simulate_dataset(net, cfg)
    spec = ModelSpec.parse("age,gender,house,spatial,graph")
    res = fit(ds, spec, seed=4)
    doc = res.to_dict()
    for key in ("dic", "p_eff", "deviance_bar", "deviance_at_mean", "theta_hat", "fixed_effects"):
        assert key in doc
    assert set(res.theta_hat) == {HOUSEHOLD, SPATIAL, GRAPH}
    assert all(np.isfinite(v) for v in res.theta_hat.values())
    lm = res.latent_model
    for name in (SPATIAL, GRAPH):
        block = res.mode[lm.layout[name]]
        for comp in lm.structures[name].components:
            assert abs(block[comp].mean()) < 1e-8
    assert res.p_eff > -0.5


def test_latent_ordering_does_not_change_dic():
    net = synth.simulate_network(40, seed=6)
    cfg = synth.SimulationConfig(500, tau_graph=1.0, tau_house=2.0, seed=6)
    ds, _ = synth.simulate_dataset(net, cfg)
    a = fit(ds, ModelSpec(latent=(HOUSEHOLD, GRAPH)), seed=5, n_draws=10_000)
    b = fit(ds, ModelSpec(latent=(GRAPH, HOUSEHOLD)), seed=5, n_draws=10_000)
    assert a.dic == pytest.approx(b.dic, abs=0.5)

import math

import numpy as np
import pytest

from backstep_consensus.config import (
    BUNDLED,
    build_agents,
    build_gains,
    build_graph,
    build_scenario,
    load_bundled,
    parse_config,
)
from backstep_consensus.digraph import chain_graph, cycle_graph
from backstep_consensus.plant import eval_disturbance, example2_model, vessel_model, vessel_parameters
from backstep_consensus.sim import ConfigError

PI = math.pi
VESSEL_X0 = [[PI / 2, 0], [-PI / 4, 0], [-PI / 3, 0], [PI / 5, 0], [-PI / 2, 0]]
EXAMPLE2_X0 = [[PI, -PI / 2], [-PI / 5, -PI / 3], [-PI, PI / 4], [-PI / 2, PI / 5], [PI / 6, PI / 6]]

MINIMAL = """
dt = 0.01
t_end = 1.0
x0 = [[0.0, 0.0], [1.0, 0.0]]
[graph]
n = 2
edges = [[1, 2, 1.0], [2, 1, 1.0]]
[model]
kind = "strict_feedback"
gains = [[1.0, 1.0], [1.0, 2.0]]
theta = [[0.0], [0.0]]
regressors = ["cos_x1", "x1_sin_x2"]
tau_amplitude = [[0.0, 0.0], [0.0, 0.0]]
tau_shape = ["sin", "cos"]
[controller]
c = [1.0, 1.0]
rho = [1.0, 1.0]
mu = [1.0, 1.0]
[reference]
lambda = [1.0, 2.0]
"""


def test_all_bundled_configs_load():
    for name in BUNDLED:
        assert load_bundled(name).name == name


@pytest.mark.parametrize("name", ["example1_s1", "example1_s2"])
def test_vessel_configs_encode_library_parameters(name):
    cfg = load_bundled(name)
    agents = build_agents(cfg)
    ts = np.linspace(0, 50, 37)
    for i, agent in enumerate(agents, start=1):
        ref = vessel_model(i)
        np.testing.assert_allclose(agent.gains, ref.gains, rtol=1e-12)
        np.testing.assert_allclose(agent.theta, ref.theta, rtol=1e-12)
        assert agent.regressors == ref.regressors
        np.testing.assert_allclose(eval_disturbance(agent.disturbances[1], ts),
                                   0.2 * i * np.cos(ts) / vessel_parameters(i)["T"], atol=1e-12)
    np.testing.assert_allclose(cfg.x0, VESSEL_X0, rtol=1e-15)
    g = build_gains(cfg, 2)
    assert g.c == (4.0, 4.0) and g.mu == (0.2, 0.2) and g.rho == (2.0, 2.0)
    assert g.known_gains == (1.0, None)
    assert g.eps(10.0) == pytest.approx(math.exp(-0.5))
    assert cfg.reference.lam == [1.0, 2.0]
    assert cfg.reference.xi0 == "random"
    assert cfg.reference.xi0_interval == pytest.approx((-PI / 2, PI / 2))


def test_vessel_topologies():
    np.testing.assert_array_equal(build_graph(load_bundled("example1_s1")).weights, cycle_graph(5).weights)
    np.testing.assert_array_equal(build_graph(load_bundled("example1_s2")).weights, chain_graph(5).weights)
    np.testing.assert_array_equal(build_graph(load_bundled("example2")).weights, cycle_graph(5).weights)


def test_example2_config_encodes_library_parameters():
    cfg = load_bundled("example2")
    ts = np.linspace(0, 50, 37)
    for i, agent in enumerate(build_agents(cfg), start=1):
        ref = example2_model(i)
        np.testing.assert_allclose(agent.gains, [1.1 - 0.1 * i, (-1) ** i * (0.5 + 0.1 * i)], rtol=1e-12)
        np.testing.assert_allclose(agent.gains, ref.gains, rtol=1e-12)
        np.testing.assert_allclose(agent.theta, [1 - 0.1 * i], rtol=1e-12)
        for q in range(2):
            np.testing.assert_allclose(eval_disturbance(agent.disturbances[q], ts),
                                       eval_disturbance(ref.disturbances[q], ts), atol=1e-12)
    np.testing.assert_allclose(cfg.x0, EXAMPLE2_X0, rtol=1e-15)
    g = build_gains(cfg, 2)
    assert g.c == (5.0, 5.0) and g.mu == (0.5, 0.5) and g.rho == (1.0, 1.0)
    assert g.known_gains == (None, None)
    sc = build_scenario(cfg)
    for x0, xi0 in zip(sc.x0, sc.xi0):
        assert list(xi0.xi) == x0


def test_random_references_follow_seed():
    cfg = load_bundled("example1_s2")
    a, b, c = build_scenario(cfg), build_scenario(cfg), build_scenario(cfg, seed=7)
    assert [r.xi for r in a.xi0] == [r.xi for r in b.xi0]
    assert [r.xi for r in a.xi0] != [r.xi for r in c.xi0]
    assert a.ref_designs[0].kind == "constant"
    assert abs(a.ref_designs[0].gamma) <= PI / 2
    for r in a.xi0[1:]:
        assert abs(r.xi[0]) <= PI / 2 and r.xi[1] == 0.0


def test_minimal_config_builds():
    sc = build_scenario(parse_config(MINIMAL))
    assert sc.n == 2 and sc.dt == 0.01
    np.testing.assert_array_equal(sc.graph.weights, [[0, 1], [1, 0]])


@pytest.mark.parametrize("patch, needle", [
    (("[graph]", "bogus = 1\n[graph]"), "bogus"),
    (("dt = 0.01", "dt = 0.0"), "dt"),
    (("[[1.0, 1.0], [1.0, 2.0]]", "[[1.0, 1.0], [1.0, 0.0]]"), "gain"),
    (("lambda = [1.0, 2.0]", "lambda = [1.0, 1.0]"), "lambda"),
    (("edges = [[1, 2, 1.0], [2, 1, 1.0]]", "edges = []"), "spanning"),
    (("edges = [[1, 2, 1.0], [2, 1, 1.0]]", "edges = [[1, 3, 1.0]]"), "outside"),
    (("x0 = [[0.0, 0.0], [1.0, 0.0]]", "x0 = [[0.0, 0.0]]"), "x0"),
    (("c = [1.0, 1.0]", "c = [1.0, -1.0]"), "positive"),
])
def test_invalid_configs_rejected(patch, needle):
    text = MINIMAL.replace(*patch)
    assert text != MINIMAL
    with pytest.raises(ConfigError, match=needle):
        build_scenario(parse_config(text))


def test_malformed_toml():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("dt = = 1")

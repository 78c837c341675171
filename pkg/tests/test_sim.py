import math

import numpy as np
import pytest

from backstep_consensus.config import build_scenario, load_bundled
from backstep_consensus.controller import AgentContext, ControllerGains, StageState, evaluate_cascade
from backstep_consensus.digraph import DirectedGraph, cycle_graph
from backstep_consensus.plant import DisturbanceSignal, NonFinite, norrbin_to_strict_feedback
from backstep_consensus.refgen import RefDesign, RefState
from backstep_consensus.sim import (
    ClosedLoop,
    ConfigError,
    LyapunovParams,
    Scenario,
    Trajectory,
    build_layout,
    closed_loop_derivative,
    csv_header,
    lyapunov_stage1,
    metrics,
    pack_state,
    rk4_step,
    run_scenario,
    trapezoid_l2,
    write_csv,
)


def short(name, t_end=0.2, **kw):
    cfg = load_bundled(name).model_copy(update={"t_end": t_end, **kw})
    return build_scenario(cfg)


def test_rk4_examples():
    assert rk4_step(lambda t, y: -y, np.array([1.0]), 0.0, 0.1)[0] == pytest.approx(0.90483750, abs=1e-8)
    y = np.array([3.0, -2.0])
    np.testing.assert_array_equal(rk4_step(lambda t, y: np.zeros_like(y), y, 0.0, 0.3), y)
    assert rk4_step(lambda t, y: np.ones_like(y), np.zeros(1), 0.0, 0.5)[0] == pytest.approx(0.5)


def test_rk4_nonfinite():
    with pytest.raises(NonFinite):
        rk4_step(lambda t, y: y * np.inf, np.ones(1), 0.0, 0.1)


def global_error(dt):
    y = np.array([1.0])
    for i in range(int(round(1 / dt))):
        y = rk4_step(lambda t, y: -y, y, i * dt, dt)
    return abs(y[0] - math.exp(-1))


def test_rk4_order():
    assert global_error(0.1) / global_error(0.05) >= 14


def test_layout_lengths():
    ex2 = build_layout(short("example2"))
    assert [s.length for s in ex2.agents] == [11] * 5
    s2 = build_layout(short("example1_s2"))
    assert s2.agents[0].length == 8 and s2.agents[0].xi is None
    assert [s.length for s in s2.agents[1:]] == [10] * 4
    assert s2.size == 8 + 4 * 10


def single_agent(gamma=0.4):
    plant = norrbin_to_strict_feedback(1.0, 0.0, 1.0, DisturbanceSignal())
    ref = RefDesign.constant((1.0, 2.0), gamma)
    gains = ControllerGains((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), known_gains=(1.0, None))
    return Scenario(DirectedGraph(np.zeros((1, 1))), [plant], [ref], [gains],
                    x0=[[gamma, 0.0]], xi0=[ref.initial_state()], dt=1e-2, t_end=1.0)


def test_single_rootless_agent_is_at_equilibrium():
    sc = single_agent()
    _, y = pack_state(sc)
    assert len(y) == 8
    np.testing.assert_array_equal(closed_loop_derivative(sc, y, 0.0), np.zeros(8))


def test_batched_input_matches_single_agent_evaluation():
    sc = short("example2")
    loop = ClosedLoop(sc)
    rng = np.random.default_rng(4)
    y = loop.y0 + rng.uniform(-0.3, 0.3, loop.y0.size)
    t = 0.7
    u, z, _ = loop.outputs(t, y)
    sums = loop.neighbor_sums(y)
    for i, s in enumerate(loop.layout.agents):
        stages = [StageState(y[s.k[q]], tuple(y[s.theta[q]]), y[s.zeta[q]]) for q in range(2)]
        a = sc.agents[i]
        ctx = AgentContext(y[s.x], RefState(tuple(y[s.xi])), sc.ref_designs[i], stages, sc.gains[i],
                           a.regressors, a.p, t, sums[i])
        assert u[i] == pytest.approx(float(evaluate_cascade(ctx).u), rel=1e-12, abs=1e-12)


def test_zeta_rates_nonnegative_at_random_states():
    sc = short("example2")
    loop = ClosedLoop(sc)
    rng = np.random.default_rng(9)
    zeta = [q for s in loop.layout.agents for q in s.zeta]
    for _ in range(20):
        y = loop.y0 + rng.uniform(-1, 1, loop.y0.size)
        y[zeta] = np.abs(y[zeta])
        assert np.all(loop(rng.uniform(0, 20), y)[zeta] >= 0.0)


def test_short_run_is_deterministic_and_finite():
    a = run_scenario(short("example2"))
    b = run_scenario(short("example2"))
    np.testing.assert_array_equal(a.final_state, b.final_state)
    assert np.all(np.isfinite(a.final_state))
    assert a.times.size == 21 and a.x.shape == (21, 5, 2)
    assert np.all(np.diff(a.zeta, axis=0) >= -1e-9)


def test_vessel_divergence_is_reported():
    with pytest.raises(NonFinite, match="divergence near t="):
        run_scenario(short("example1_s1", t_end=0.5))


def test_scenario_validation():
    sc = single_agent()
    base = dict(graph=sc.graph, agents=sc.agents, ref_designs=sc.ref_designs, gains=sc.gains,
                x0=sc.x0, xi0=sc.xi0)
    with pytest.raises(ConfigError):
        Scenario(**base, dt=0.0)
    with pytest.raises(ConfigError):
        Scenario(**base, dt=0.1, t_end=0.05)
    with pytest.raises(ConfigError):
        Scenario(**{**base, "graph": DirectedGraph(np.zeros((2, 2)))})
    with pytest.raises(ConfigError):
        Scenario(**{**base, "ref_designs": [RefDesign.dynamic((1.0, 2.0), 1.0)]})


def constant_trajectory(values, times):
    n = len(values)
    T = len(times)
    x = np.zeros((T, n, 2))
    x[:, :, 0] = values
    zeros = np.zeros((T, n, 2))
    return Trajectory(times=np.asarray(times), x=x, xi1=np.zeros((T, n)), u=np.zeros((T, n)),
                      z=zeros, k=zeros, zeta=zeros, theta_hat=[[np.zeros((T, 1))] * 2] * n)


def test_metrics_examples():
    assert metrics(constant_trajectory([0.3, 0.3, 0.3], [0.0, 1.0]))["spread_final"] == 0.0
    assert metrics(constant_trajectory([0.0, 1.0], [0.0, 1.0]))["spread_final"] == 1.0
    times = np.arange(0.0, 10.0 + 5e-4, 1e-3)
    assert trapezoid_l2(times, np.exp(-times)) == pytest.approx(0.5, abs=1e-4)


def test_lyapunov_examples():
    par = LyapunovParams(theta=(0.5,), tau_bar=1.2, rho=1.0, mu=0.5)
    assert lyapunov_stage1(0.0, (0.5,), 1.2, par) == 0.0
    assert lyapunov_stage1(1.0, (0.5,), 1.2, par) == pytest.approx(0.5)
    assert lyapunov_stage1(0.0, (0.2,), 1.2, par) == pytest.approx(0.045)


def test_csv_output(tmp_path):
    tr = run_scenario(short("example2", t_end=0.05))
    assert csv_header(2, 2) == ["t", "a1_x1", "a1_x2", "a1_xi1", "a1_u", "a1_k1", "a1_k2",
                                "a1_zeta1", "a1_zeta2", "a2_x1", "a2_x2", "a2_xi1", "a2_u",
                                "a2_k1", "a2_k2", "a2_zeta1", "a2_zeta2", "spread"]
    path = tmp_path / "out.csv"
    write_csv(tr, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == csv_header(5, 2)
    assert len(lines) == 1 + tr.times.size
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_allclose(table[:, -1], tr.spread, rtol=1e-9)

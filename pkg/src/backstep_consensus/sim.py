"""Closed-loop assembly, fixed-step RK4 integration, and trajectory metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .controller import Cascade, ControllerGains, Epsilon, stage_dims, zero_stage_states
from .digraph import DirectedGraph, has_spanning_tree, partition_nodes
from .plant import AgentModel, NonFinite, eval_disturbance
from .refgen import RefDesign, RefState

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    graph: DirectedGraph
    agents: list[AgentModel]
    ref_designs: list[RefDesign]
    gains: list[ControllerGains]
    x0: list
    xi0: list[RefState]
    dt: float = 1e-3
    t_end: float = 50.0
    seed: int = 0
    sample_stride: int = 10
    stages0: list | None = None    # per agent list of StageState; zeros by default
    name: str = "scenario"

    def __post_init__(self):
        n = self.graph.n
        if not has_spanning_tree(self.graph):
            raise ConfigError("communication graph has no directed spanning tree")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_end > self.dt:
            raise ConfigError(f"t_end must exceed dt, got t_end={self.t_end}, dt={self.dt}")
        if self.sample_stride < 1:
            raise ConfigError("sample_stride must be at least 1")
        for name in ("agents", "ref_designs", "gains", "x0", "xi0"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} needs {n} entries, got {len(getattr(self, name))}")
        ms = {a.m for a in self.agents}
        if len(ms) != 1:
            raise ConfigError(f"all agents must share one order, got {sorted(ms)}")
        _, v2 = partition_nodes(self.graph)
        for i in range(n):
            want = "constant" if i in v2 else "dynamic"
            if self.ref_designs[i].kind != want:
                raise ConfigError(f"agent {i + 1} needs a {want} reference")
            if self.ref_designs[i].m != self.m or self.gains[i].m != self.m:
                raise ConfigError(f"agent {i + 1}: reference/gain order differs from model order")
            if len(self.x0[i]) != self.m or len(self.xi0[i].xi) != self.m:
                raise ConfigError(f"agent {i + 1}: initial state needs {self.m} entries")
        if self.stages0 is None:
            self.stages0 = [zero_stage_states(a.regressors, a.p, g)
                            for a, g in zip(self.agents, self.gains)]

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def m(self) -> int:
        return self.agents[0].m


# ---------------------------------------------------------------------------
# integration

def rk4_step(f: Callable, y, t: float, dt: float):
    """One classical Runge-Kutta step of ``y' = f(t, y)``."""
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    out = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"RK4 step produced non-finite state at t={t}")
    return out


# ---------------------------------------------------------------------------
# state layout

@dataclass
class AgentSlots:
    x: list[int]
    xi: list[int] | None
    k: list[int]
    zeta: list[int]
    theta: list[list[int]]

    @property
    def length(self) -> int:
        return (len(self.x) + len(self.xi or ()) + len(self.k) + len(self.zeta)
                + sum(len(t) for t in self.theta))


@dataclass
class StateLayout:
    agents: list[AgentSlots]
    size: int


def build_layout(scenario: Scenario) -> StateLayout:
    """Agent-major layout: x, then xi (dynamic references only), then (k, zeta, theta_hat) per stage."""
    pos = 0
    slots = []
    for model, ref, g in zip(scenario.agents, scenario.ref_designs, scenario.gains):
        m = model.m
        x = list(range(pos, pos + m))
        pos += m
        xi = None
        if ref.kind == "dynamic":
            xi = list(range(pos, pos + m))
            pos += m
        k, zeta, theta = [], [], []
        for d in stage_dims(model.regressors, model.p, g.known_pattern()):
            k.append(pos)
            zeta.append(pos + 1)
            theta.append(list(range(pos + 2, pos + 2 + d)))
            pos += 2 + d
        slots.append(AgentSlots(x, xi, k, zeta, theta))
    return StateLayout(slots, pos)


def pack_state(scenario: Scenario) -> tuple[StateLayout, np.ndarray]:
    layout = build_layout(scenario)
    y = np.zeros(layout.size)
    for i, s in enumerate(layout.agents):
        y[s.x] = scenario.x0[i]
        if s.xi is not None:
            y[s.xi] = scenario.xi0[i].xi
        for ell, st in enumerate(scenario.stages0[i]):
            if len(st.theta_hat) != len(s.theta[ell]):
                raise ConfigError(f"agent {i + 1} stage {ell + 1}: initial estimate has wrong dimension")
            y[s.k[ell]] = st.k
            y[s.zeta[ell]] = st.zeta
            y[s.theta[ell]] = st.theta_hat
    return layout, y


# ---------------------------------------------------------------------------
# closed loop

def _stack(values):
    return np.array(values, dtype=float)


class _Group:
    """Agents sharing regressors, parameter dimension, and known-gain pattern."""

    def __init__(self, scenario: Scenario, layout: StateLayout, members: list[int]):
        self.members = np.array(members)
        agents = [scenario.agents[i] for i in members]
        gains = [scenario.gains[i] for i in members]
        refs = [scenario.ref_designs[i] for i in members]
        slots = [layout.agents[i] for i in members]
        model = agents[0]
        m, p = model.m, model.p
        self.m, self.p = m, p
        self.regs = [model.regressor(ell) for ell in range(1, m + 1)]

        pattern = gains[0].known_pattern()
        known = tuple(None if not pattern[q] else _stack([g.known_gains[q] for g in gains])
                      for q in range(m))
        batched = ControllerGains(
            c=tuple(_stack([g.c[q] for g in gains]) for q in range(m)),
            rho=tuple(_stack([g.rho[q] for g in gains]) for q in range(m)),
            mu=tuple(_stack([g.mu[q] for g in gains]) for q in range(m)),
            eps=Epsilon(_stack([g.eps.scale for g in gains]), _stack([g.eps.decay for g in gains])),
            known_gains=known,
        )
        self.cascade = Cascade(model.regressors, p, batched)
        self.dims = self.cascade.dims

        self.gamma_plant = [_stack([a.gains[q] for a in agents]) for q in range(m)]
        self.theta = [_stack([a.theta[j] for a in agents]) for j in range(p)]
        self.dist = [[a.disturbances[q] for a in agents] for q in range(m)]
        self.dist_amp = [_stack([d.amplitude for d in ds]) for ds in self.dist]
        self.dist_freq = [_stack([d.frequency for d in ds]) for ds in self.dist]
        self.dist_phase = [_stack([d.phase for d in ds]) for ds in self.dist]
        self.dist_table = [any(d.kind == "table" for d in ds) for ds in self.dist]

        self.x_idx = [np.array([s.x[q] for s in slots]) for q in range(m)]
        self.k_idx = [np.array([s.k[q] for s in slots]) for q in range(m)]
        self.zeta_idx = [np.array([s.zeta[q] for s in slots]) for q in range(m)]
        self.th_idx = [[np.array([s.theta[q][j] for s in slots]) for j in range(self.dims[q])]
                       for q in range(m)]

        dyn = [r.kind == "dynamic" for r in refs]
        self.dyn_local = np.flatnonzero(dyn)
        self.dyn_agents = self.members[self.dyn_local]
        self.xi_idx = [np.array([slots[a].xi[q] for a in self.dyn_local], dtype=int) for q in range(m)]
        self.xi_base = [np.array([0.0 if r.kind == "dynamic" else (r.gamma if q == 0 else 0.0)
                                  for r in refs]) for q in range(m)]
        self.ref_gamma = _stack([refs[a].gamma for a in self.dyn_local])
        self.ref_lam = [_stack([refs[a].lam[q] for a in self.dyn_local]) for q in range(m)]

    def disturbance(self, q: int, t: float):
        if self.dist_table[q]:
            return _stack([eval_disturbance(d, t) for d in self.dist[q]])
        return self.dist_amp[q] * np.cos(self.dist_freq[q] * t + self.dist_phase[q])

    def unpack(self, y, neighbor_sum):
        m = self.m
        x = [y[idx] for idx in self.x_idx]
        xi = []
        for q in range(m):
            col = self.xi_base[q].copy()
            col[self.dyn_local] = y[self.xi_idx[q]]
            xi.append(col)
        top = np.zeros(len(self.members))
        acc = self.ref_gamma * neighbor_sum[self.dyn_agents]
        for q in range(m):
            acc = acc - self.ref_lam[q] * xi[q][self.dyn_local]
        top[self.dyn_local] = acc
        k = [y[idx] for idx in self.k_idx]
        zeta = [y[idx] for idx in self.zeta_idx]
        theta = [[y[idx] for idx in th] for th in self.th_idx]
        return x, xi, top, k, theta, zeta

    def evaluate(self, y, t, neighbor_sum):
        x, xi, top, k, theta, zeta = self.unpack(y, neighbor_sum)
        try:
            res = self.cascade.evaluate(x, xi, top, k, theta, zeta, t)
        except NonFinite as exc:
            raise NonFinite(f"{exc} (agents {[int(i) + 1 for i in self.members]})") from None
        return x, xi, top, res

    def derivative(self, y, t, neighbor_sum, dy):
        x, xi, top, res = self.evaluate(y, t, neighbor_sum)
        m = self.m
        u = res.u
        for q in range(m):
            drive = x[q + 1] if q < m - 1 else u
            phi = self.regs[q](x[:q + 1], self.p)
            rate = self.gamma_plant[q] * drive + self.disturbance(q, t)
            for j in range(self.p):
                rate = rate + self.theta[j] * phi[j]
            dy[self.x_idx[q]] = rate
        for q in range(m):
            if self.dyn_local.size:
                dy[self.xi_idx[q]] = xi[q + 1][self.dyn_local] if q < m - 1 else top[self.dyn_local]
            dy[self.k_idx[q]] = res.dk[q]
            dy[self.zeta_idx[q]] = res.dzeta[q]
            for j, idx in enumerate(self.th_idx[q]):
                dy[idx] = res.dtheta[q][j]
        return res


class ClosedLoop:
    """Right-hand side of the full multi-agent system over the flat state."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.layout, self.y0 = pack_state(scenario)
        self.adjacency = np.asarray(scenario.graph.weights)
        self.x1_idx = np.array([s.x[0] for s in self.layout.agents])
        keys = {}
        for i, (a, g) in enumerate(zip(scenario.agents, scenario.gains)):
            keys.setdefault((a.regressors, a.p, g.known_pattern()), []).append(i)
        self.groups = [_Group(scenario, self.layout, members) for members in keys.values()]

    def neighbor_sums(self, y):
        return self.adjacency @ y[self.x1_idx]

    def __call__(self, t, y):
        dy = np.empty_like(y)
        s = self.neighbor_sums(y)
        for grp in self.groups:
            grp.derivative(y, t, s, dy)
        if not np.all(np.isfinite(dy)):
            self._report_nonfinite(dy, t)
        return dy

    def _report_nonfinite(self, dy, t):
        for i, slots in enumerate(self.layout.agents):
            for ell in range(len(slots.k)):
                idx = [slots.x[ell], slots.k[ell], slots.zeta[ell], *slots.theta[ell]]
                if not np.all(np.isfinite(dy[idx])):
                    raise NonFinite(f"non-finite derivative for agent {i + 1}, stage {ell + 1} at t={t}")
        raise NonFinite(f"non-finite derivative at t={t}")

    def outputs(self, t, y):
        """Per-agent (u, z, xi) at the given state, ordered by agent."""
        n, m = self.scenario.n, self.scenario.m
        u = np.empty(n)
        z = np.empty((n, m))
        xi1 = np.empty(n)
        s = self.neighbor_sums(y)
        for grp in self.groups:
            _, xi, _, res = grp.evaluate(y, t, s)
            u[grp.members] = res.u
            xi1[grp.members] = xi[0]
            for q in range(m):
                z[grp.members, q] = res.z[q]
        return u, z, xi1


def closed_loop_derivative(scenario: Scenario, y, t) -> np.ndarray:
    return ClosedLoop(scenario)(t, np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray        # (T, n, m)
    xi1: np.ndarray      # (T, n)
    u: np.ndarray        # (T, n)
    z: np.ndarray        # (T, n, m)
    k: np.ndarray        # (T, n, m)
    zeta: np.ndarray     # (T, n, m)
    theta_hat: list      # [agent][stage] -> (T, dim)
    final_state: np.ndarray = field(repr=False, default=None)

    @property
    def spread(self) -> np.ndarray:
        out = self.x[:, :, 0]
        return out.max(axis=1) - out.min(axis=1)

    def at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def signal_families(self) -> dict:
        fams = {"x": self.x, "xi1": self.xi1, "u": self.u, "z": self.z, "k": self.k, "zeta": self.zeta}
        th = [arr for per_agent in self.theta_hat for arr in per_agent if arr.size]
        fams["theta_hat"] = np.concatenate([a.ravel() for a in th]) if th else np.zeros(0)
        return fams


def run_scenario(scenario: Scenario, progress: Callable | None = None) -> Trajectory:
    loop = ClosedLoop(scenario)
    layout = loop.layout
    y = loop.y0.copy()
    steps = int(round(scenario.t_end / scenario.dt))
    stride = scenario.sample_stride
    n_samples = steps // stride + 1
    n, m = scenario.n, scenario.m
    rec = {
        "times": np.empty(n_samples),
        "x": np.empty((n_samples, n, m)),
        "xi1": np.empty((n_samples, n)),
        "u": np.empty((n_samples, n)),
        "z": np.empty((n_samples, n, m)),
        "k": np.empty((n_samples, n, m)),
        "zeta": np.empty((n_samples, n, m)),
    }
    theta = [[np.empty((n_samples, len(idx))) for idx in s.theta] for s in layout.agents]
    x_idx = np.array([s.x for s in layout.agents])
    k_idx = np.array([s.k for s in layout.agents])
    zeta_idx = np.array([s.zeta for s in layout.agents])

    def record(slot, t, y):
        u, z, xi1 = loop.outputs(t, y)
        rec["times"][slot] = t
        rec["x"][slot] = y[x_idx]
        rec["xi1"][slot] = xi1
        rec["u"][slot] = u
        rec["z"][slot] = z
        rec["k"][slot] = y[k_idx]
        rec["zeta"][slot] = y[zeta_idx]
        for i, s in enumerate(layout.agents):
            for ell, idx in enumerate(s.theta):
                theta[i][ell][slot] = y[idx]

    record(0, 0.0, y)
    dt = scenario.dt
    # overflow on the way to a blow-up is reported as NonFinite, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, steps + 1):
            t = (step - 1) * dt
            try:
                y = rk4_step(loop, y, t, dt)
            except NonFinite as exc:
                raise NonFinite(f"{scenario.name}: divergence near t={t:.6g}: {exc}") from None
            if step % stride == 0:
                record(step // stride, step * dt, y)
                if progress is not None:
                    progress(step * dt)
    log.debug("%s: %d steps done", scenario.name, steps)
    return Trajectory(final_state=y, theta_hat=theta, **rec)


# ---------------------------------------------------------------------------
# metrics

def trapezoid_l2(times, z) -> np.ndarray:
    """Integral of z**2 over time along axis 0 by the trapezoid rule."""
    z = np.asarray(z, dtype=float)
    return np.trapezoid(z * z, np.asarray(times, dtype=float), axis=0)


def metrics(tr: Trajectory) -> dict:
    if tr.times.size == 0:
        raise ValueError("empty trajectory")
    spread = tr.spread
    sup = {name: float(np.max(np.abs(arr))) if np.size(arr) else 0.0
           for name, arr in tr.signal_families().items()}
    return {
        "spread_final": float(spread[-1]),
        "spread_series": spread,
        "sup_norms": sup,
        "z_l2": trapezoid_l2(tr.times, tr.z),   # (n, m)
    }


@dataclass(frozen=True)
class LyapunovParams:
    theta: tuple       # true parameters paired with the stage-1 estimate
    tau_bar: float     # true robust-gain target, tau* + 1 at stage 1
    rho: float
    mu: float


def lyapunov_params(scenario: Scenario) -> list[LyapunovParams]:
    out = []
    for a, g in zip(scenario.agents, scenario.gains):
        theta = () if a.regressor(1).is_zero else a.theta
        out.append(LyapunovParams(theta, a.disturbances[0].bound + 1.0, g.rho[0], g.mu[0]))
    return out


def lyapunov_stage1(z1, theta_hat, zeta, par: LyapunovParams):
    tilde = np.asarray(par.theta, dtype=float) - np.asarray(theta_hat, dtype=float)
    sq = np.sum(tilde * tilde, axis=-1) if tilde.size else 0.0
    return 0.5 * z1 * z1 + sq / (2 * par.rho) + (par.tau_bar - zeta) ** 2 / (2 * par.mu)


def lyapunov_monitor(tr: Trajectory, true_params: Sequence[LyapunovParams]) -> np.ndarray:
    """Stage-1 Lyapunov candidate per agent, shape (T, n). Diagnostic only."""
    cols = []
    for i, par in enumerate(true_params):
        th = tr.theta_hat[i][0]
        th = th if th.shape[1] else np.zeros((tr.times.size, 0))
        cols.append(lyapunov_stage1(tr.z[:, i, 0], th, tr.zeta[:, i, 0], par))
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# output

def csv_header(n: int, m: int) -> list[str]:
    cols = ["t"]
    for i in range(1, n + 1):
        cols += [f"a{i}_x{q}" for q in range(1, m + 1)]
        cols += [f"a{i}_xi1", f"a{i}_u"]
        cols += [f"a{i}_k{q}" for q in range(1, m + 1)]
        cols += [f"a{i}_zeta{q}" for q in range(1, m + 1)]
    return cols + ["spread"]


def trajectory_table(tr: Trajectory) -> np.ndarray:
    T, n, m = tr.x.shape
    blocks = [tr.times[:, None]]
    for i in range(n):
        blocks += [tr.x[:, i, :], tr.xi1[:, i, None], tr.u[:, i, None], tr.k[:, i, :], tr.zeta[:, i, :]]
    blocks.append(tr.spread[:, None])
    return np.hstack(blocks)


def write_csv(tr: Trajectory, path) -> None:
    n, m = tr.x.shape[1:]
    np.savetxt(path, trajectory_table(tr), delimiter=",", header=",".join(csv_header(n, m)),
               comments="", fmt="%.10g")


def summary_text(scenario: Scenario, tr: Trajectory) -> str:
    met = metrics(tr)
    lines = [
        f"scenario: {scenario.name}",
        f"agents: {scenario.n}  order: {scenario.m}  dt: {scenario.dt:g}  t_end: {scenario.t_end:g}  seed: {scenario.seed}",
        f"spread_final: {met['spread_final']:.6g}",
        f"spread_at_5s: {tr.spread[tr.at(5.0)]:.6g}",
    ]
    lines += [f"sup_{name}: {val:.6g}" for name, val in met["sup_norms"].items()]
    for i in range(scenario.n):
        l2 = "  ".join(f"{v:.6g}" for v in met["z_l2"][i])
        lines.append(f"agent {i + 1}: x1_final={tr.x[-1, i, 0]:.6g}  z_l2=[{l2}]")
    return "\n".join(lines) + "\n"

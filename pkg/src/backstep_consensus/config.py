"""Scenario configuration: a TOML file validated against a strict schema.

Node and stage indices are 1-based in configs. All randomness (random
initial references, constants of rootless agents) flows from ``seed``.
"""

from __future__ import annotations

import math
import sys
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controller import ControllerGains, Epsilon
from .digraph import DirectedGraph, GraphError, chain_graph, cycle_graph, partition_nodes
from .plant import AgentModel, DisturbanceSignal, ModelError, norrbin_to_strict_feedback
from .refgen import RefDesign, RefError, validate_lambda
from .sim import ConfigError, Scenario

BUNDLED = ("example1_s1", "example1_s2", "example2")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GraphConfig(_Strict):
    n: int = Field(ge=1)
    topology: Optional[Literal["cycle", "chain"]] = None
    edges: Optional[list[tuple[int, int, float]]] = None   # (source, target, weight)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.topology is None) == (self.edges is None):
            raise ValueError("give exactly one of graph.topology or graph.edges")
        for src, dst, w in self.edges or ():
            if not (1 <= src <= self.n and 1 <= dst <= self.n):
                raise ValueError(f"edge ({src}, {dst}) references a node outside 1..{self.n}")
            if w < 0 or not math.isfinite(w):
                raise ValueError(f"edge ({src}, {dst}) has invalid weight {w}")
        return self


class NorrbinConfig(_Strict):
    kind: Literal["norrbin"]
    T: list[float]
    W: list[float]
    M: list[float]
    rho_amplitude: list[float]
    rho_frequency: float = 1.0


class StrictFeedbackConfig(_Strict):
    """Generic model; ``tau_shape`` picks sin or cos per channel."""

    kind: Literal["strict_feedback"]
    gains: list[list[float]]
    theta: list[list[float]]
    regressors: list[str]
    tau_amplitude: list[list[float]]
    tau_shape: list[Literal["sin", "cos"]]
    tau_frequency: float = 1.0


class ControllerConfig(_Strict):
    c: list[float]
    rho: list[float]
    mu: list[float]
    eps_scale: float = Field(1.0, gt=0)
    eps_decay: float = Field(0.05, gt=0)
    # stage (1-based, as a string key) -> known high-frequency gain
    known_gains: dict[str, float] = {}

    @field_validator("known_gains")
    @classmethod
    def _stage_keys(cls, v):
        for key in v:
            if not key.isdigit() or int(key) < 1:
                raise ValueError(f"known_gains keys are 1-based stage numbers, got {key!r}")
        return v


class ReferenceConfig(_Strict):
    lam: list[float] = Field(alias="lambda")
    xi0: Union[Literal["match_state", "random"], list[list[float]]] = "match_state"
    xi0_interval: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    constant_interval: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    constant_value: Optional[float] = None


class OutputConfig(_Strict):
    csv: str = "trajectory.csv"
    summary: str = "summary.txt"


class VerifyConfig(_Strict):
    suites: Optional[list[str]] = None
    seed: int = 0


class ScenarioConfig(_Strict):
    name: str = "scenario"
    dt: float = 1e-3
    t_end: float = 50.0
    seed: int = 0
    sample_stride: int = Field(10, ge=1)
    graph: GraphConfig
    model: Union[NorrbinConfig, StrictFeedbackConfig] = Field(discriminator="kind")
    controller: ControllerConfig
    reference: ReferenceConfig
    x0: list[list[float]]
    output: OutputConfig = OutputConfig()
    verify: VerifyConfig = VerifyConfig()


# ---------------------------------------------------------------------------
# loading

def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(text: str) -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def bundled_config_path(name: str) -> Path:
    if name not in BUNDLED:
        raise ConfigError(f"no bundled config {name!r}; choose from {BUNDLED}")
    return Path(str(resources.files(__package__) / "configs" / f"{name}.toml"))


def load_bundled(name: str) -> ScenarioConfig:
    return load_config(bundled_config_path(name))


# ---------------------------------------------------------------------------
# building domain objects

def build_graph(cfg: ScenarioConfig) -> DirectedGraph:
    gc = cfg.graph
    try:
        if gc.topology == "cycle":
            return cycle_graph(gc.n)
        if gc.topology == "chain":
            return chain_graph(gc.n)
        return DirectedGraph.from_edges(gc.n, [(s - 1, d - 1, w) for s, d, w in gc.edges])
    except GraphError as exc:
        raise ConfigError(f"graph: {exc}") from None


def _per_agent(name: str, values, n: int):
    if len(values) != n:
        raise ConfigError(f"{name} needs {n} entries, got {len(values)}")
    return values


def build_agents(cfg: ScenarioConfig) -> list[AgentModel]:
    n = cfg.graph.n
    mc = cfg.model
    try:
        if mc.kind == "norrbin":
            cols = [_per_agent(f"model.{k}", getattr(mc, k), n) for k in ("T", "W", "M", "rho_amplitude")]
            return [norrbin_to_strict_feedback(T, W, M, DisturbanceSignal.sinusoid(a, mc.rho_frequency))
                    for T, W, M, a in zip(*cols)]
        agents = []
        for i in range(n):
            amps = _per_agent("model.tau_amplitude", mc.tau_amplitude, n)[i]
            if len(amps) != len(mc.tau_shape):
                raise ConfigError("model.tau_amplitude rows must match model.tau_shape")
            dist = [DisturbanceSignal.sine(a, mc.tau_frequency) if shape == "sin"
                    else DisturbanceSignal.sinusoid(a, mc.tau_frequency)
                    for a, shape in zip(amps, mc.tau_shape)]
            agents.append(AgentModel(
                gains=_per_agent("model.gains", mc.gains, n)[i],
                theta=_per_agent("model.theta", mc.theta, n)[i],
                regressors=mc.regressors,
                disturbances=dist,
            ))
        return agents
    except ModelError as exc:
        raise ConfigError(f"model: {exc}") from None


def build_gains(cfg: ScenarioConfig, m: int) -> ControllerGains:
    cc = cfg.controller
    known = [None] * m
    for key, val in cc.known_gains.items():
        stage = int(key)
        if stage > m:
            raise ConfigError(f"controller.known_gains: stage {stage} exceeds order {m}")
        known[stage - 1] = val
    try:
        return ControllerGains(tuple(cc.c), tuple(cc.rho), tuple(cc.mu),
                               Epsilon(cc.eps_scale, cc.eps_decay), tuple(known))
    except ValueError as exc:
        raise ConfigError(f"controller: {exc}") from None


def reference_roots(cfg: ScenarioConfig) -> np.ndarray:
    try:
        return validate_lambda(cfg.reference.lam)
    except RefError as exc:
        raise ConfigError(f"reference.lambda: {exc}") from None


def build_scenario(cfg: ScenarioConfig, seed: int | None = None) -> Scenario:
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    graph = build_graph(cfg)
    agents = build_agents(cfg)
    n, m = graph.n, agents[0].m
    x0 = [list(map(float, row)) for row in _per_agent("x0", cfg.x0, n)]
    rc = cfg.reference
    if len(rc.lam) != m:
        raise ConfigError(f"reference.lambda needs {m} entries, got {len(rc.lam)}")
    reference_roots(cfg)
    _, v2 = partition_nodes(graph)
    d = graph.in_degrees()

    # draw order: initial references of agents with neighbors, then the constants
    lo, hi = rc.xi0_interval
    refs, xi0 = [None] * n, [None] * n
    for i in range(n):
        if i in v2:
            continue
        refs[i] = RefDesign.dynamic(rc.lam, d[i])
        if rc.xi0 == "match_state":
            start = x0[i]
        elif rc.xi0 == "random":
            start = [rng.uniform(lo, hi)] + [0.0] * (m - 1)
        else:
            start = _per_agent("reference.xi0", rc.xi0, n)[i]
        try:
            xi0[i] = refs[i].initial_state(start)
        except RefError as exc:
            raise ConfigError(f"reference.xi0: {exc}") from None
    for i in v2:
        gamma = rc.constant_value if rc.constant_value is not None else rng.uniform(*rc.constant_interval)
        refs[i] = RefDesign.constant(rc.lam, gamma)
        xi0[i] = refs[i].initial_state()

    gains = build_gains(cfg, m)
    return Scenario(graph=graph, agents=agents, ref_designs=refs, gains=[gains] * n,
                    x0=x0, xi0=xi0, dt=cfg.dt, t_end=cfg.t_end, seed=seed,
                    sample_stride=cfg.sample_stride, name=cfg.name)

"""Strict-feedback agent dynamics and the model libraries for the two benchmark examples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dual as dn


class ModelError(ValueError):
    pass


class ZeroGain(ModelError):
    pass


class ZeroTimeConstant(ModelError):
    pass


class NonFinite(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# disturbances

@dataclass(frozen=True)
class DisturbanceSignal:
    """Bounded time signal: zero, ``amplitude*cos(frequency*t + phase)``, or a table.

    Tables are ``(t, value)`` knots linearly interpolated and held constant
    outside their range.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0
    table: tuple = ()
    bound: float | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "sinusoid", "table"):
            raise ModelError(f"unknown disturbance kind {self.kind!r}")
        natural = {
            "zero": 0.0,
            "sinusoid": abs(self.amplitude),
            "table": max((abs(v) for _, v in self.table), default=0.0),
        }[self.kind]
        if self.kind == "table":
            ts = [t for t, _ in self.table]
            if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
                raise ModelError("table knots must be nonempty with increasing times")
        if self.bound is None:
            object.__setattr__(self, "bound", natural)
        elif self.bound < natural:
            raise ModelError(f"declared bound {self.bound} below signal peak {natural}")

    @classmethod
    def sinusoid(cls, amplitude, frequency=1.0, phase=0.0) -> "DisturbanceSignal":
        return cls("sinusoid", amplitude, frequency, phase)

    @classmethod
    def sine(cls, amplitude, frequency=1.0) -> "DisturbanceSignal":
        return cls("sinusoid", amplitude, frequency, -math.pi / 2)

    def scaled(self, factor: float) -> "DisturbanceSignal":
        if self.kind == "table":
            return DisturbanceSignal("table", table=tuple((t, factor * v) for t, v in self.table))
        return DisturbanceSignal(self.kind, factor * self.amplitude, self.frequency, self.phase)


def eval_disturbance(d: DisturbanceSignal, t):
    if d.kind == "zero":
        return 0.0 * np.asarray(t, dtype=float) if np.ndim(t) else 0.0
    if d.kind == "sinusoid":
        return d.amplitude * np.cos(d.frequency * t + d.phase)
    ts, vs = zip(*d.table)
    return np.interp(t, ts, vs)


# ---------------------------------------------------------------------------
# regressor catalog; each entry maps the leading states to a list of features

@dataclass(frozen=True)
class Regressor:
    name: str
    dim: int | None       # None: zero vector of the model's parameter dimension
    min_order: int
    fn: Callable = field(repr=False, compare=False)

    @property
    def is_zero(self) -> bool:
        return self.dim is None

    def __call__(self, x: Sequence, p: int) -> list:
        if self.dim is None:
            return [0.0] * p
        return self.fn(x)


REGRESSORS = {
    "zero": Regressor("zero", None, 1, lambda x: []),
    "cos_x1": Regressor("cos_x1", 1, 1, lambda x: [dn.cos(x[0])]),
    "x1_sin_x2": Regressor("x1_sin_x2", 1, 2, lambda x: [x[0] * dn.sin(x[1])]),
    "norrbin": Regressor("norrbin", 2, 2, lambda x: [x[1], x[1] * x[1] * x[1]]),
}


def get_regressor(name: str) -> Regressor:
    try:
        return REGRESSORS[name]
    except KeyError:
        raise ModelError(f"unknown regressor {name!r}; catalog: {sorted(REGRESSORS)}") from None


# ---------------------------------------------------------------------------
# agent model

@dataclass(frozen=True)
class AgentModel:
    """One agent in strict-feedback form.

    Channel l (1-based) evolves as ``gains[l] * x[l+1] + theta . phi_l(x[:l]) + tau_l(t)``,
    with the control input in place of ``x[m+1]`` on the last channel.
    """

    gains: tuple
    theta: tuple
    regressors: tuple
    disturbances: tuple

    def __post_init__(self):
        object.__setattr__(self, "gains", tuple(float(g) for g in self.gains))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "disturbances", tuple(self.disturbances))
        m = len(self.gains)
        if m < 1:
            raise ModelError("model order must be at least 1")
        for ell, g in enumerate(self.gains, start=1):
            if g == 0 or not math.isfinite(g):
                raise ZeroGain(f"high-frequency gain of channel {ell} must be nonzero and finite, got {g}")
        if len(self.regressors) != m or len(self.disturbances) != m:
            raise ModelError("need one regressor and one disturbance per channel")
        p = len(self.theta)
        for ell, name in enumerate(self.regressors, start=1):
            reg = get_regressor(name)
            if reg.min_order > ell:
                raise ModelError(f"regressor {name!r} needs {reg.min_order} states, channel {ell} has {ell}")
            if reg.dim is not None and reg.dim != p:
                raise ModelError(f"regressor {name!r} has dimension {reg.dim}, theta has {p}")

    @property
    def m(self) -> int:
        return len(self.gains)

    @property
    def p(self) -> int:
        return len(self.theta)

    def regressor(self, ell: int) -> Regressor:
        """Regressor of 1-based channel ``ell``."""
        return get_regressor(self.regressors[ell - 1])

    def phi(self, ell: int, x: Sequence) -> list:
        return self.regressor(ell)(x[:ell], self.p)


def agent_derivative(model: AgentModel, x, u, t) -> np.ndarray:
    x = [float(v) for v in x]
    if len(x) != model.m:
        raise ModelError(f"state has {len(x)} entries, model order is {model.m}")
    out = np.empty(model.m)
    for ell in range(1, model.m + 1):
        drive = x[ell] if ell < model.m else float(u)
        phi = model.phi(ell, x)
        out[ell - 1] = (model.gains[ell - 1] * drive
                        + sum(th * f for th, f in zip(model.theta, phi))
                        + eval_disturbance(model.disturbances[ell - 1], t))
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"agent derivative not finite at t={t}: {out}")
    return out


def norrbin_to_strict_feedback(T: float, W: float, M: float, rho: DisturbanceSignal) -> AgentModel:
    """Course dynamics ``T*th'' + th' + W*th'^3 = M*psi + rho`` as a two-channel model."""
    if T == 0:
        raise ZeroTimeConstant("Norrbin time constant T must be nonzero")
    return AgentModel(
        gains=(1.0, M / T),
        theta=(-1.0 / T, -W / T),
        regressors=("zero", "norrbin"),
        disturbances=(DisturbanceSignal(), rho.scaled(1.0 / T)),
    )


# ---------------------------------------------------------------------------
# benchmark parameter libraries; i is the 1-based agent label

def vessel_parameters(i: int) -> dict:
    return {
        "T": (-1) ** i + 0.02 * i,
        "W": 0.4 - 0.05 * i,
        "M": 20 + 0.5 * i,
        "rho_amplitude": 0.2 * i,
    }


def vessel_model(i: int) -> AgentModel:
    par = vessel_parameters(i)
    return norrbin_to_strict_feedback(par["T"], par["W"], par["M"],
                                      DisturbanceSignal.sinusoid(par["rho_amplitude"]))


def example2_parameters(i: int) -> dict:
    return {
        "gains": (1.1 - 0.1 * i, (-1) ** i * (0.5 + 0.1 * i)),
        "theta": (1 - 0.1 * i,),
        "tau1_amplitude": 0.6 - 0.1 * i,
        "tau2_amplitude": 0.1 * i,
    }


def example2_model(i: int) -> AgentModel:
    par = example2_parameters(i)
    return AgentModel(
        gains=par["gains"],
        theta=par["theta"],
        regressors=("cos_x1", "x1_sin_x2"),
        disturbances=(DisturbanceSignal.sine(par["tau1_amplitude"]),
                      DisturbanceSignal.sinusoid(par["tau2_amplitude"])),
    )

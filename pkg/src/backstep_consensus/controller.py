"""Adaptive backstepping with Nussbaum gains.

Every stage l builds a virtual control ``alpha_l = N(k_l) * w_l`` where the
bracket ``w_l`` combines a linear error term, a parameter-estimate term, a
smooth tanh robust term, and the known part of the time derivative of the
previous virtual control. The partial derivatives of ``alpha_{l-1}`` that
enter stage l come from nested forward-mode :mod:`dual` passes, so any order
works without hand-derived closed forms.

All arithmetic is elementwise: every quantity may be a float (one agent) or
a numpy array (a batch of structurally identical agents).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import dual as dn
from .plant import NonFinite, get_regressor
from .refgen import RefDesign, RefState, ref_rate_top


class DimensionMismatch(ValueError):
    pass


def nussbaum(k):
    return k * k * dn.cos(k)


def robust_term(zeta, eta, z, eps):
    return zeta * eta * dn.tanh(eta * z / eps)


@dataclass(frozen=True)
class Epsilon:
    """Decaying tanh width ``scale * exp(-decay * t)`` with closed-form derivatives."""

    scale: float = 1.0
    decay: float = 0.05

    def __post_init__(self):
        if np.any(np.asarray(self.scale) <= 0) or np.any(np.asarray(self.decay) <= 0):
            raise ValueError("epsilon scale and decay must be positive")

    def __call__(self, t, order: int = 0):
        return self.scale * (-self.decay) ** order * np.exp(-self.decay * t)

    @property
    def integral_bound(self):
        return self.scale / self.decay


@dataclass(frozen=True)
class ControllerGains:
    """Per-stage gains. ``known_gains[l]`` is None unless stage l's high-frequency
    gain is known, in which case that stage inverts it instead of running a
    Nussbaum search."""

    c: tuple
    rho: tuple
    mu: tuple
    eps: Epsilon = field(default_factory=Epsilon)
    known_gains: tuple = ()

    def __post_init__(self):
        m = len(self.c)
        if m < 1 or len(self.rho) != m or len(self.mu) != m:
            raise ValueError("c, rho, mu must have one entry per stage")
        for name in ("c", "rho", "mu"):
            vals = getattr(self, name)
            if any(np.any(np.asarray(v) <= 0) for v in vals):
                raise ValueError(f"controller gains {name} must be positive")
        known = tuple(self.known_gains) or (None,) * m
        if len(known) != m:
            raise ValueError("known_gains must have one entry per stage")
        if any(g is not None and np.any(np.asarray(g) == 0) for g in known):
            raise ValueError("a known gain must be nonzero")
        object.__setattr__(self, "known_gains", known)

    @property
    def m(self) -> int:
        return len(self.c)

    def known_pattern(self) -> tuple:
        return tuple(g is not None for g in self.known_gains)


@dataclass(frozen=True)
class StageState:
    k: float = 0.0
    theta_hat: tuple = ()
    zeta: float = 0.0


def stage_dims(regressors: Sequence[str], p: int, known: Sequence[bool]) -> list[int]:
    """Dimension of every stage's parameter estimate.

    Stage 1 estimates the model parameters, or nothing when its regressor is
    identically zero; stage l adds one slot per earlier stage whose gain is
    unknown (it multiplies a partial of the previous virtual control).
    """
    m = len(regressors)
    dims = [0 if get_regressor(regressors[0]).is_zero else p]
    for ell in range(2, m + 1):
        dims.append(sum(1 for q in range(ell - 1) if not known[q]) + p)
    return dims


# ---------------------------------------------------------------------------
# single-stage laws

def stage1_control(z1, phi1, xi2, s: StageState, g: ControllerGains, t):
    """Stage-1 virtual control; returns ``(alpha_1, w_1)``."""
    if len(phi1) != len(s.theta_hat):
        raise DimensionMismatch(f"phi1 has {len(phi1)} entries, estimate has {len(s.theta_hat)}")
    eps = g.eps(t)
    w = g.c[0] * z1 + _dot(s.theta_hat, phi1) + robust_term(s.zeta, 1.0, z1, eps) - xi2
    return nussbaum(s.k) * w, w


def stage1_rates(z1, phi1, w1, g: ControllerGains, eps_t):
    dtheta = [g.rho[0] * f * z1 for f in phi1]
    dzeta = g.mu[0] * z1 * dn.tanh(z1 / eps_t)
    return dtheta, dzeta, w1 * z1


def stage_control(ell: int, z, phibar, eta, varpi_prev, s: StageState, g: ControllerGains, t):
    """Virtual control of stage ``ell`` (1-based, >= 2); the last stage's is the input."""
    if not 2 <= ell <= g.m:
        raise ValueError(f"stage {ell} outside [2, {g.m}]")
    if len(phibar) != len(s.theta_hat):
        raise DimensionMismatch(f"regressor has {len(phibar)} entries, estimate has {len(s.theta_hat)}")
    w = (g.c[ell - 1] * z + _dot(s.theta_hat, phibar)
         + robust_term(s.zeta, eta, z, g.eps(t)) - varpi_prev)
    return nussbaum(s.k) * w, w


def stage_rates(ell: int, z, phibar, eta, w, g: ControllerGains, eps_t):
    dtheta = [g.rho[ell - 1] * f * z for f in phibar]
    dzeta = g.mu[ell - 1] * eta * z * dn.tanh(eta * z / eps_t)
    return dtheta, dzeta, w * z


def _dot(a, b):
    acc = 0.0
    for u, v in zip(a, b):
        acc = acc + u * v
    return acc


# ---------------------------------------------------------------------------
# full cascade

@dataclass
class StageRecord:
    z: object
    phi: list          # raw regressor phi_l(x_1..x_l)
    phibar: list       # regressor paired with the stage estimate
    eta: object        # None at stage 1, where the robust term is unscaled
    varpi: object      # known derivative part of alpha_{l-1} (xi_1 rate at stage 1)
    w: object
    alpha: object
    dtheta: list | None = None
    dzeta: object = None
    dk: object = None

    def unwrap(self, tag: int) -> "StageRecord":
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = [dn.value(e, tag) for e in v] if isinstance(v, list) else dn.value(v, tag)
        return StageRecord(**out)


@dataclass
class CascadeResult:
    u: object
    stages: list

    @property
    def z(self):
        return [s.z for s in self.stages]

    @property
    def alpha(self):
        return [s.alpha for s in self.stages]

    @property
    def eta(self):
        return [s.eta for s in self.stages]

    @property
    def varpi(self):
        return [s.varpi for s in self.stages]

    @property
    def phibar(self):
        return [s.phibar for s in self.stages]

    @property
    def dk(self):
        return [s.dk for s in self.stages]

    @property
    def dzeta(self):
        return [s.dzeta for s in self.stages]

    @property
    def dtheta(self):
        return [s.dtheta for s in self.stages]


class Cascade:
    """The m-stage controller of one agent, or of a batch sharing one structure.

    Seed variables are keyed ``("x", l)``, ``("k", l)``, ``("th", l, j)``,
    ``("zeta", l)``, ``("eps", p)`` for the p-th derivative of epsilon, and
    ``("xi", l)``; stage and state indices are 1-based, ``j`` is 0-based.
    """

    def __init__(self, regressors: Sequence[str], p: int, gains: ControllerGains):
        self.m = len(regressors)
        if gains.m != self.m:
            raise DimensionMismatch(f"gains have {gains.m} stages, model has {self.m}")
        self.regs = [get_regressor(r) for r in regressors]
        self.p = p
        self.gains = gains
        self.known = gains.known_gains
        self.dims = stage_dims(regressors, p, gains.known_pattern())

    def variables(self, x, xi, k, theta_hat, zeta, t) -> dict:
        m = self.m
        if not (len(x) == len(xi) == len(k) == len(zeta) == len(theta_hat) == m):
            raise DimensionMismatch(f"cascade needs {m} entries per state family")
        v = {}
        for ell in range(1, m + 1):
            v["x", ell] = x[ell - 1]
            v["xi", ell] = xi[ell - 1]
            v["k", ell] = k[ell - 1]
            v["zeta", ell] = zeta[ell - 1]
            th = theta_hat[ell - 1]
            if len(th) != self.dims[ell - 1]:
                raise DimensionMismatch(
                    f"stage {ell} estimate has {len(th)} entries, expected {self.dims[ell - 1]}")
            for j, val in enumerate(th):
                v["th", ell, j] = val
        for order in range(m):
            v["eps", order] = self.gains.eps(t, order)
        return v

    def evaluate(self, x, xi, xi_dot_top, k, theta_hat, zeta, t) -> CascadeResult:
        v = self.variables(x, xi, k, theta_hat, zeta, t)
        stages = self._stages(self.m, v, xi_dot_top)
        self._add_rates(self.m, stages[-1], v)
        for s in stages:
            if s.eta is None:
                s.eta = 1.0
        res = CascadeResult(u=stages[-1].alpha, stages=stages)
        probe = 0.0
        for s in stages:
            probe = probe + s.alpha + s.dk + s.dzeta
        if not np.isfinite(probe).all():
            for ell, s in enumerate(stages, start=1):
                for name in ("alpha", "dk", "dzeta"):
                    if not np.isfinite(getattr(s, name)).all():
                        raise NonFinite(f"cascade {name} not finite at stage {ell}, t={t}")
        return res

    def alpha(self, ell: int, v: dict, xi_dot_top=0.0):
        return self._stages(ell, v, xi_dot_top)[-1].alpha

    def alpha_partials(self, ell: int, v: dict, xi_dot_top=0.0):
        """``(alpha_ell, {key: d alpha_ell / d key})`` at the point ``v``."""
        tag = dn.new_tag()
        seeded = {key: dn.Dual.seed(tag, key, val) for key, val in v.items()}
        a = self._stages(ell, seeded, xi_dot_top)[-1].alpha
        return dn.value(a, tag), {key: dn.partial(a, tag, key) for key in v}

    # -- internals ---------------------------------------------------------

    def _xidot(self, q: int, v: dict, xi_dot_top):
        return v["xi", q + 1] if q < self.m else xi_dot_top

    def _close(self, ell: int, z, phibar, eta, varpi, v):
        g = self.gains
        i = ell - 1
        th = [v["th", ell, j] for j in range(self.dims[i])]
        if eta is None:
            robust = v["zeta", ell] * dn.tanh(z / v["eps", 0])
        else:
            robust = robust_term(v["zeta", ell], eta, z, v["eps", 0])
        w = g.c[i] * z + _dot(th, phibar) + robust - varpi
        if self.known[i] is None:
            alpha = nussbaum(v["k", ell]) * w
        else:
            alpha = -w / self.known[i]
        return w, alpha

    def _add_rates(self, ell: int, rec: StageRecord, v: dict) -> None:
        # rates of stage l are consumed only outside the pass that differentiates alpha_l
        g = self.gains
        i = ell - 1
        z, eps = rec.z, v["eps", 0]
        arg = z / eps if rec.eta is None else rec.eta * z / eps
        scale = g.mu[i] if rec.eta is None else g.mu[i] * rec.eta
        rec.dtheta = [g.rho[i] * z * f for f in rec.phibar]
        rec.dzeta = scale * z * dn.tanh(arg)
        rec.dk = rec.w * z if self.known[i] is None else 0.0 * z

    def _stage1(self, v: dict, xi_dot_top) -> StageRecord:
        x1 = v["x", 1]
        z = x1 - v["xi", 1]
        phi = self.regs[0]([x1], self.p)
        phibar = [] if self.regs[0].is_zero else list(phi)
        varpi = self._xidot(1, v, xi_dot_top)
        w, alpha = self._close(1, z, phibar, None, varpi, v)
        return StageRecord(z, phi, phibar, None, varpi, w, alpha)

    def _stage(self, ell: int, v: dict, prev: list, a_prev, dpart, xi_dot_top) -> StageRecord:
        x = [v["x", q] for q in range(1, ell + 1)]
        z = x[ell - 1] - a_prev
        dx_raw = [dpart("x", q) for q in range(1, ell)]
        dx = [0.0 if d is None else d for d in dx_raw]
        phi = self.regs[ell - 1](x, self.p)
        phibar = [dx[q] * x[q + 1] for q in range(ell - 1) if self.known[q] is None]
        for j in range(self.p):
            acc = phi[j]
            for q in range(ell - 1):
                if dx_raw[q] is not None:
                    acc = acc - dx[q] * prev[q].phi[j]
            phibar.append(acc)
        eta = dn.sqrt(1.0 + _dot(dx, dx))

        varpi = 0.0
        for q in range(1, ell):
            rec = prev[q - 1]
            terms = [(dpart("k", q), rec.dk), (dpart("zeta", q), rec.dzeta),
                     (dpart("eps", q - 1), v["eps", q])]
            terms += [(dpart("th", q, j), rec.dtheta[j]) for j in range(self.dims[q - 1])]
            for d, rate in terms:
                if d is not None:
                    varpi = varpi + d * rate
            if self.known[q - 1] is not None:
                varpi = varpi + dx[q - 1] * self.known[q - 1] * x[q]
        for q in range(1, ell + 1):
            d = dpart("xi", q)
            if d is not None:
                varpi = varpi + d * self._xidot(q, v, xi_dot_top)

        w, alpha = self._close(ell, z, phibar, eta, varpi, v)
        return StageRecord(z, phi, phibar, eta, varpi, w, alpha)

    def _stages(self, upto: int, v: dict, xi_dot_top) -> list:
        if upto == 1:
            return [self._stage1(v, xi_dot_top)]
        tag = dn.new_tag()
        seeded = {key: dn.Dual.seed(tag, key, val) for key, val in v.items()}
        inner = self._stages(upto - 1, seeded, xi_dot_top)
        a_prev = inner[-1].alpha

        def dpart(*key):
            if isinstance(a_prev, dn.Dual) and a_prev.tag == tag:
                return a_prev.d.get(key)
            return None

        prev = [rec.unwrap(tag) for rec in inner]
        self._add_rates(upto - 1, prev[-1], v)
        stage = self._stage(upto, v, prev, dn.value(a_prev, tag), dpart, xi_dot_top)
        return prev + [stage]


# ---------------------------------------------------------------------------
# single-agent entry point

@dataclass
class AgentContext:
    x: Sequence
    xi: RefState
    ref: RefDesign
    stages: Sequence[StageState]
    gains: ControllerGains
    regressors: Sequence[str]
    p: int
    t: float
    neighbor_weighted_output_sum: float = 0.0


def evaluate_cascade(ctx: AgentContext) -> CascadeResult:
    cascade = Cascade(ctx.regressors, ctx.p, ctx.gains)
    if ctx.ref.kind == "dynamic":
        top = ref_rate_top(ctx.ref.lam, ctx.ref.gamma, ctx.xi.xi, ctx.neighbor_weighted_output_sum)
    else:
        top = 0.0
    return cascade.evaluate(
        list(ctx.x), list(ctx.xi.xi), top,
        [s.k for s in ctx.stages], [tuple(s.theta_hat) for s in ctx.stages],
        [s.zeta for s in ctx.stages], ctx.t)


def zero_stage_states(regressors: Sequence[str], p: int, gains: ControllerGains) -> list[StageState]:
    dims = stage_dims(regressors, p, gains.known_pattern())
    return [StageState(0.0, (0.0,) * d, 0.0) for d in dims]

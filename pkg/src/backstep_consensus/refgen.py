"""Reference-output generators and the similarity transform used to analyse them.

Agents with in-neighbors run a stable chain of integrators driven by the
weighted sum of neighbor outputs; rootless agents hold a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .digraph import ZeroInDegree

REALITY_TOL = 1e-8
CLUSTER_TOL = 1e-4


class RefError(ValueError):
    pass


class ComplexRoots(RefError):
    pass


class NonNegativeRoot(RefError):
    pass


class ConstantKind(RefError):
    pass


class DegenerateTransform(RefError):
    pass


def companion(lam) -> tuple[np.ndarray, np.ndarray]:
    lam = np.asarray(lam, dtype=float)
    m = lam.size
    b = np.zeros((m, m))
    b[:-1, 1:] = np.eye(m - 1)
    b[-1, :] = -lam
    a = np.zeros(m)
    a[-1] = 1.0
    return b, a


def _merge_clusters(roots: np.ndarray) -> np.ndarray:
    # a root of multiplicity r is perturbed by ~eps**(1/r); the cluster mean is not
    out = roots.astype(complex).copy()
    used = np.zeros(roots.size, dtype=bool)
    for i in range(roots.size):
        if used[i]:
            continue
        close = np.abs(roots - roots[i]) <= CLUSTER_TOL * max(1.0, abs(roots[i]))
        close &= ~used
        out[close] = roots[close].mean()
        used |= close
    return out


def validate_lambda(lam) -> np.ndarray:
    """Roots of ``s^m + lam[m-1] s^(m-1) + ... + lam[0]``, sorted by ascending magnitude.

    Raises unless every root is real and negative.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1 or lam.size < 1:
        raise RefError("lambda must be a nonempty vector")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise RefError(f"lambda entries must be positive, got {lam.tolist()}")
    roots = _merge_clusters(np.linalg.eigvals(companion(lam)[0]))
    bad = np.abs(roots.imag) > REALITY_TOL * np.abs(roots)
    if np.any(bad):
        raise ComplexRoots(f"characteristic polynomial has complex roots {roots[bad]}")
    real = roots.real
    if np.any(real >= 0):
        raise NonNegativeRoot(f"characteristic polynomial has nonnegative roots {real[real >= 0]}")
    return real[np.argsort(np.abs(real), kind="stable")]


def gamma_for(d_i: float, lambda1: float) -> float:
    if d_i <= 0:
        raise ZeroInDegree(f"in-degree must be positive, got {d_i}")
    return float(lambda1) / float(d_i)


@dataclass(frozen=True)
class RefDesign:
    lam: tuple
    gamma: float
    kind: str = "dynamic"

    def __post_init__(self):
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        if self.kind not in ("dynamic", "constant"):
            raise RefError(f"unknown reference kind {self.kind!r}")
        validate_lambda(self.lam)

    @classmethod
    def dynamic(cls, lam, in_degree: float) -> "RefDesign":
        return cls(lam, gamma_for(in_degree, lam[0]), "dynamic")

    @classmethod
    def constant(cls, lam, gamma: float) -> "RefDesign":
        return cls(lam, gamma, "constant")

    @property
    def m(self) -> int:
        return len(self.lam)

    def initial_state(self, xi0=None) -> "RefState":
        if self.kind == "constant":
            return RefState((self.gamma,) + (0.0,) * (self.m - 1))
        xi0 = (0.0,) * self.m if xi0 is None else tuple(float(v) for v in xi0)
        if len(xi0) != self.m:
            raise RefError(f"initial reference state needs {self.m} entries")
        return RefState(xi0)


@dataclass(frozen=True)
class RefState:
    xi: tuple

    def __post_init__(self):
        if not all(np.isfinite(self.xi)):
            raise RefError("reference state must be finite")


def ref_rate_top(lam, gamma, xi, neighbor_sum):
    """Last-channel rate ``gamma*sum_j a_ij x_j1 - sum_p lam_p xi_p``; works on agent arrays."""
    acc = gamma * neighbor_sum
    for lp, xp in zip(lam, xi):
        acc = acc - lp * xp
    return acc


def ref_derivative(design: RefDesign, state: RefState, neighbor_weighted_output_sum: float) -> np.ndarray:
    if design.kind != "dynamic":
        raise ConstantKind("a constant reference has no dynamics")
    xi = np.asarray(state.xi, dtype=float)
    out = np.empty(design.m)
    out[:-1] = xi[1:]
    out[-1] = ref_rate_top(design.lam, design.gamma, xi, neighbor_weighted_output_sum)
    return out


def build_companion(design: RefDesign) -> tuple[np.ndarray, np.ndarray]:
    return companion(design.lam)


def build_transform(design: RefDesign, root_order) -> tuple[np.ndarray, np.ndarray]:
    """Lower-triangular J and bidiagonal Lambda with ``J B = Lambda J``."""
    delta = np.asarray(root_order, dtype=float)
    m = design.m
    if delta.shape != (m,):
        raise RefError(f"need {m} roots, got {delta.shape}")
    j = np.zeros((m, m))
    j[:, 0] = 1.0
    for ell in range(1, m):
        for p in range(1, ell + 1):
            j[ell, p] = j[ell - 1, p] - j[ell - 1, p - 1] / delta[ell - 1]
    diag = np.abs(np.diag(j))
    if np.any(diag <= 1e-12):
        raise DegenerateTransform(f"transform diagonal degenerate: {np.diag(j)}")
    lam_mat = np.diag(delta)
    lam_mat[np.arange(m - 1), np.arange(1, m)] = -delta[:-1]
    return j, lam_mat


def transform_residuals(design: RefDesign, root_order) -> tuple[float, float]:
    """(max |J B - Lambda J|, |j_mm + delta_m / lambda_1|)."""
    b, _ = build_companion(design)
    j, lam_mat = build_transform(design, root_order)
    delta_m = float(np.asarray(root_order, dtype=float)[-1])
    return (float(np.max(np.abs(j @ b - lam_mat @ j))),
            abs(j[-1, -1] + delta_m / design.lam[0]))

"""Randomized invariant suites behind the ``verify`` subcommand.

Each suite is deterministic given its seed and reports the worst observed
violation alongside a pass/fail verdict.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .controller import Cascade, ControllerGains, nussbaum
from .digraph import (
    DirectedGraph,
    block_rank_schur,
    build_augmented_laplacian_c1,
    build_augmented_laplacian_c2,
    has_spanning_tree,
    laplacian,
    partition_nodes,
    rank,
)
from .refgen import RefDesign, build_companion, build_transform, validate_lambda

TANH_KAPPA = 0.2785
TRANSFORM_TOL = 1e-9
SENSITIVITY_TOL = 1e-6
PERTURB_J = 1e-3


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.elapsed:.2f} s)"


# ---------------------------------------------------------------------------
# Nussbaum and tanh

def nussbaum_running_average(k_max: float = 200.0, points: int = 10_000):
    """``(k, (1/k) * int_0^k N)`` on ``points`` samples of ``(0, k_max]``, trapezoid rule."""
    k = np.linspace(0.0, k_max, points + 1)
    n = nussbaum(k)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (n[1:] + n[:-1]) * np.diff(k))))
    return k[1:], cum[1:] / k[1:]


def suite_nussbaum(seed: int = 0, level: float = 20.0) -> SuiteResult:
    _, avg = nussbaum_running_average()
    hi, lo = float(avg.max()), float(avg.min())
    return SuiteResult("nussbaum", hi > level and lo < -level,
                       f"running average spans [{lo:.1f}, {hi:.1f}], need beyond +/-{level:g}")


def tanh_gap(z, eps):
    return np.abs(z) - z * np.tanh(z / eps)


def suite_tanh(seed: int = 0, samples: int = 100_000) -> SuiteResult:
    rng = np.random.default_rng(seed)
    eps = 1.0 - rng.random(samples)              # (0, 1]
    z = rng.uniform(-5.0, 5.0, samples) * np.where(rng.random(samples) < 0.5, eps, 1.0)
    gap = tanh_gap(z, eps)
    ratio = float(np.max(gap / eps))
    ok = bool(np.all(gap >= 0.0) and np.all(gap <= TANH_KAPPA * eps))
    return SuiteResult("tanh", ok, f"min gap {gap.min():.3g}, max gap/eps {ratio:.6f} <= {TANH_KAPPA}")


# ---------------------------------------------------------------------------
# similarity transform

def random_design(rng, m_max: int = 4) -> tuple[RefDesign, np.ndarray]:
    m = int(rng.integers(1, m_max + 1))
    while True:
        roots = -rng.uniform(0.2, 3.0, m)
        if m == 1 or np.min(np.diff(np.sort(roots))) > 0.05:
            break
    lam = np.poly(roots)[1:][::-1]               # s^m + lam_m s^(m-1) + ... + lam_1
    design = RefDesign(tuple(lam), 1.0)
    return design, validate_lambda(design.lam)


def transform_check(design: RefDesign, roots, perturb: float = 0.0) -> tuple[float, float, int]:
    b, _ = build_companion(design)
    j, lam_mat = build_transform(design, roots)
    if perturb:
        j = j.copy()
        j[-1, 0] += perturb
    ident = float(np.max(np.abs(j @ b - lam_mat @ j)))
    corner = abs(j[-1, -1] + roots[-1] / design.lam[0])
    return ident, corner, rank(j)


def suite_transform(seed: int = 0, designs: int = 100, perturb_j: bool = False) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst_i = worst_c = 0.0
    singular = 0
    for _ in range(designs):
        design, roots = random_design(rng)
        ident, corner, r = transform_check(design, roots, PERTURB_J if perturb_j else 0.0)
        worst_i, worst_c = max(worst_i, ident), max(worst_c, corner)
        singular += r < design.m
    ok = worst_i <= TRANSFORM_TOL and worst_c <= TRANSFORM_TOL and singular == 0
    note = " (perturbed J)" if perturb_j else ""
    return SuiteResult("transform", ok,
                       f"{designs} designs{note}: max|JB-LJ| {worst_i:.2e}, "
                       f"max|j_mm+d_m/l_1| {worst_c:.2e}, singular J {singular}")


# ---------------------------------------------------------------------------
# block rank through the Schur complement

def random_block_matrix(rng, max_size: int = 6) -> tuple[np.ndarray, int]:
    """Integer matrix of random rank whose leading ell x ell block is invertible."""
    while True:
        rows, cols = (int(v) for v in rng.integers(1, max_size + 1, 2))
        k = int(rng.integers(1, min(rows, cols) + 1))
        e = rng.integers(-2, 3, (rows, k)) @ rng.integers(-2, 3, (k, cols))
        ell = int(rng.integers(1, k + 1))
        if round(abs(np.linalg.det(e[:ell, :ell]))) >= 1:
            return e.astype(float), ell


def suite_lemma1(seed: int = 0, matrices: int = 200) -> SuiteResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(matrices):
        e, ell = random_block_matrix(rng)
        mismatches += block_rank_schur(e, ell) != rank(e)
    return SuiteResult("lemma1", mismatches == 0, f"{matrices} matrices, {mismatches} mismatches")


# ---------------------------------------------------------------------------
# graph rank claims

WEIGHTS = (0.0, 0.5, 1.0, 2.0)


def random_spanning_digraph(rng, rootless: bool, max_n: int = 6) -> DirectedGraph:
    """Random digraph with a spanning tree; ``rootless`` forces node 0 to have no in-edges."""
    while True:
        n = int(rng.integers(2, max_n + 1))
        w = rng.choice(WEIGHTS, (n, n))
        np.fill_diagonal(w, 0.0)
        if rootless:
            w[0, :] = 0.0
        g = DirectedGraph(w)
        if not has_spanning_tree(g):
            continue
        v2 = partition_nodes(g)[1]
        if v2 == ([0] if rootless else []):
            return g


def laplacian_checks(mat: np.ndarray) -> tuple[float, bool]:
    off = mat - np.diag(np.diag(mat))
    return float(np.max(np.abs(mat.sum(axis=1)))), bool(np.all(off <= 0.0))


def suite_rank(seed: int = 0, graphs: int = 50) -> SuiteResult:
    rng = np.random.default_rng(seed)
    failures = []
    worst_row = 0.0
    for idx in range(graphs):
        rootless = idx % 2 == 1
        g = random_spanning_digraph(rng, rootless)
        n = g.n
        m = int(rng.integers(1, 4))
        delta = rng.uniform(-3.0, -0.1, (n, m))
        if rank(laplacian(g)) != n - 1:
            failures.append(f"graph {idx}: rank L != n-1")
        if rootless:
            aug, want = build_augmented_laplacian_c2(g, 0, delta, m), (n - 1) * m
        else:
            aug, want = build_augmented_laplacian_c1(g, delta, m), n * m - 1
        row, nonpos = laplacian_checks(aug)
        worst_row = max(worst_row, row)
        if rank(aug) != want:
            failures.append(f"graph {idx}: augmented rank {rank(aug)} != {want}")
        if row > 1e-12 or not nonpos:
            failures.append(f"graph {idx}: row sums {row:.2e} or positive off-diagonal")
    detail = f"{graphs} graphs, max |row sum| {worst_row:.2e}"
    if failures:
        detail += "; " + "; ".join(failures[:3])
    return SuiteResult("rank", not failures, detail)


# ---------------------------------------------------------------------------
# sensitivities of the Example-2 style controller

def example2_cascade() -> Cascade:
    return Cascade(("cos_x1", "x1_sin_x2"), 1, ControllerGains((5.0, 5.0), (1.0, 1.0), (0.5, 0.5)))


def random_interior_point(rng, cascade: Cascade) -> tuple[dict, float]:
    # away from the steep-tanh corner, where truncation error of the oracle dominates
    m = cascade.m
    x = rng.uniform(-1.5, 1.5, m)
    xi = rng.uniform(-1.5, 1.5, m)
    k = rng.uniform(0.5, 3.0, m)
    zeta = rng.uniform(0.0, 1.0, m)
    theta = [rng.uniform(-1.0, 1.0, d) for d in cascade.dims]
    t = rng.uniform(0.0, 10.0)
    v = cascade.variables(list(x), list(xi), list(k), theta, list(zeta), t)
    return {key: float(val) for key, val in v.items()}, float(rng.uniform(-1.5, 1.5))


def fd_relative_error(exact: float, approx: float) -> float:
    """Error relative to the partial's magnitude, floored at one for tiny partials."""
    return abs(exact - approx) / max(1.0, abs(exact))


def central_difference(f: Callable[[dict], float], v: dict, key) -> float:
    """Central difference with step ``1e-6 * max(1, |v|)``, evaluated in extended precision.

    Virtual controls reach 1e4 and more, where double-precision roundoff
    alone (~1e-16 |f| / h) would exceed the tolerance being checked.
    """
    v = {k: np.longdouble(val) for k, val in v.items()}
    h = np.longdouble(1e-6) * max(1, abs(v[key]))
    up, down = dict(v), dict(v)
    up[key] += h
    down[key] -= h
    return float((f(up) - f(down)) / (2 * h))


def suite_sensitivity(seed: int = 0, points: int = 100) -> SuiteResult:
    rng = np.random.default_rng(seed)
    cascade = example2_cascade()
    worst = 0.0
    for _ in range(points):
        v, top = random_interior_point(rng, cascade)
        for ell in (1, 2):
            _, partials = cascade.alpha_partials(ell, v, top)
            f = lambda p: cascade.alpha(ell, p, np.longdouble(top))
            for key, exact in partials.items():
                worst = max(worst, fd_relative_error(float(exact), central_difference(f, v, key)))
    return SuiteResult("sensitivity", worst < SENSITIVITY_TOL,
                       f"{points} points, worst relative error {worst:.2e} < {SENSITIVITY_TOL:g}")


SUITES = {
    "nussbaum": suite_nussbaum,
    "tanh": suite_tanh,
    "transform": suite_transform,
    "lemma1": suite_lemma1,
    "rank": suite_rank,
    "sensitivity": suite_sensitivity,
}


def run_suites(names=None, seed: int = 0, perturb_j: bool = False) -> list[SuiteResult]:
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    out = []
    for name in names:
        start = time.perf_counter()
        res = suite_transform(seed, perturb_j=True) if name == "transform" and perturb_j else SUITES[name](seed)
        res.elapsed = time.perf_counter() - start
        out.append(res)
    return out

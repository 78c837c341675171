"""Weighted digraphs, Laplacians, and the augmented Laplacians of the q-dynamics.

Weights follow the receiving-row convention: ``weights[i, j] = a_ij`` is the
weight of the edge carrying node j's output into node i. Nodes are 0-based
here; configs and reports use 1-based labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RANK_TOL = 1e-9


class GraphError(ValueError):
    pass


class SingularBlock(GraphError):
    pass


class ZeroInDegree(GraphError):
    pass


class BadRoot(GraphError):
    pass


def as_matrix(entries) -> np.ndarray:
    """Coerce to a finite 2-D float array."""
    m = np.array(entries, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


@dataclass(frozen=True)
class DirectedGraph:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise GraphError(f"adjacency must be square with n >= 1, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise GraphError("adjacency weights must be finite")
        if np.any(w < 0):
            raise GraphError("adjacency weights must be nonnegative")
        np.fill_diagonal(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_edges(cls, n: int, edges) -> "DirectedGraph":
        """Build from ``(src, dst, weight)`` triples with 0-based nodes."""
        w = np.zeros((n, n))
        for src, dst, weight in edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise GraphError(f"edge ({src}, {dst}) out of range for n={n}")
            w[dst, src] = weight
        return cls(w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def in_degrees(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.weights[i] > 0)]


def cycle_graph(n: int, weight: float = 1.0) -> DirectedGraph:
    """Directed cycle 1 -> 2 -> ... -> n -> 1."""
    return DirectedGraph.from_edges(n, [(i, (i + 1) % n, weight) for i in range(n)])


def chain_graph(n: int, weight: float = 1.0) -> DirectedGraph:
    """Directed chain 1 -> 2 -> ... -> n; node 1 has no in-neighbors."""
    return DirectedGraph.from_edges(n, [(i, i + 1, weight) for i in range(n - 1)])


def laplacian(g: DirectedGraph) -> np.ndarray:
    return np.diag(g.in_degrees()) - g.weights


def _reachable_from(g: DirectedGraph, root: int) -> set[int]:
    # information flows j -> i whenever a_ij > 0
    seen = {root}
    stack = [root]
    while stack:
        j = stack.pop()
        for i in np.flatnonzero(g.weights[:, j] > 0):
            i = int(i)
            if i not in seen:
                seen.add(i)
                stack.append(i)
    return seen


def spanning_tree_roots(g: DirectedGraph) -> list[int]:
    return [r for r in range(g.n) if len(_reachable_from(g, r)) == g.n]


def has_spanning_tree(g: DirectedGraph) -> bool:
    return any(len(_reachable_from(g, r)) == g.n for r in range(g.n))


def partition_nodes(g: DirectedGraph) -> tuple[list[int], list[int]]:
    """Split nodes into (with in-neighbors, without in-neighbors)."""
    d = g.in_degrees()
    v1 = [i for i in range(g.n) if d[i] != 0]
    v2 = [i for i in range(g.n) if d[i] == 0]
    return v1, v2


def rank(m, tol: float = DEFAULT_RANK_TOL, scale: float | None = None) -> int:
    """Numerical rank by Gaussian elimination with partial pivoting.

    A pivot counts when its magnitude exceeds ``tol * scale``; ``scale``
    defaults to the largest absolute entry of ``m``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.size == 0:
        return 0
    if scale is None:
        scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return 0
    thresh = tol * scale
    rows, cols = a.shape
    r = 0
    for c in range(cols):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[p, c]) <= thresh:
            continue
        if p != r:
            a[[r, p]] = a[[p, r]]
        factors = a[r + 1:, c] / a[r, c]
        a[r + 1:, c:] -= np.outer(factors, a[r, c:])
        r += 1
    return r


def block_rank_schur(e, ell: int, tol: float = DEFAULT_RANK_TOL) -> int:
    """rank(E) computed as rank(A) + rank(D - C A^-1 B) for the leading ell x ell block A."""
    e = as_matrix(e)
    rows, cols = e.shape
    if not 1 <= ell <= min(rows, cols):
        raise ValueError(f"ell={ell} outside [1, {min(rows, cols)}]")
    scale = float(np.max(np.abs(e)))
    a = e[:ell, :ell]
    if rank(a, tol, scale) < ell:
        raise SingularBlock(f"leading {ell}x{ell} block is singular")
    b, c, d = e[:ell, ell:], e[ell:, :ell], e[ell:, ell:]
    if d.size == 0:
        return ell
    schur = d - c @ np.linalg.solve(a, b)
    return ell + rank(schur, tol, scale)


def _check_delta(delta, n: int, m: int) -> np.ndarray:
    delta = np.array(delta, dtype=float)
    if delta.shape != (n, m):
        raise ValueError(f"delta must have shape ({n}, {m}), got {delta.shape}")
    if np.any(delta >= 0):
        raise ValueError("all delta entries must be negative")
    return delta


def _chain_blocks(delta: np.ndarray, a_bar: np.ndarray) -> np.ndarray:
    """Stage-major block matrix with rows (-delta_l, delta_l) and last row (delta_m A_bar, ..., -delta_m)."""
    n, m = delta.shape
    out = np.zeros((n * m, n * m))
    for ell in range(m - 1):
        idx = slice(ell * n, (ell + 1) * n)
        nxt = slice((ell + 1) * n, (ell + 2) * n)
        out[idx, idx] = np.diag(-delta[:, ell])
        out[idx, nxt] = np.diag(delta[:, ell])
    last = slice((m - 1) * n, m * n)
    out[last, 0:n] += delta[:, m - 1, None] * a_bar
    out[last, last] += np.diag(-delta[:, m - 1])
    return out


def build_augmented_laplacian_c1(g: DirectedGraph, delta, m: int) -> np.ndarray:
    """Augmented Laplacian for the case where every node has an in-neighbor.

    The state ordering is stage-major: q_{1..n,1}, then q_{1..n,2}, and so on.
    """
    delta = _check_delta(delta, g.n, m)
    d = g.in_degrees()
    if np.any(d <= 0):
        zero = [i + 1 for i in np.flatnonzero(d <= 0)]
        raise ZeroInDegree(f"nodes {zero} have zero in-degree")
    a_bar = g.weights / d[:, None]
    return _chain_blocks(delta, a_bar)


def build_augmented_laplacian_c2(g: DirectedGraph, root: int, delta, m: int) -> np.ndarray:
    """Augmented Laplacian for the case with a single rootless node.

    Ordering: the root's constant reference first, then the remaining nodes
    in ascending index, stage-major. ``delta`` rows for the root are ignored.
    """
    n = g.n
    d = g.in_degrees()
    if not 0 <= root < n or d[root] != 0:
        raise BadRoot(f"node {root + 1} is not a rootless node")
    others = [i for i in range(n) if i != root]
    if any(d[i] <= 0 for i in others):
        raise BadRoot("more than one node has zero in-degree")
    delta = np.array(delta, dtype=float)
    if delta.shape != (n, m):
        raise ValueError(f"delta must have shape ({n}, {m}), got {delta.shape}")
    sub = _check_delta(delta[others], n - 1, m)
    # normalize by full-graph in-degrees so every row still sums to zero
    d_o = d[others]
    a_bar = g.weights[np.ix_(others, others)] / d_o[:, None]
    h = g.weights[others, root] / d_o
    size = (n - 1) * m + 1
    out = np.zeros((size, size))
    out[1:, 1:] = _chain_blocks(sub, a_bar)
    out[1 + (n - 1) * (m - 1):, 0] = sub[:, m - 1] * h
    return out

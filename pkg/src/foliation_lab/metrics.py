"""Sub-elliptic distance on the nilmanifold grid and exact 2-Wasserstein costs.

Distances come from Dijkstra on a lattice whose edges are straight
horizontal segments.  A segment with planar displacement ``(a h, b h)``
starting at column ``i`` raises ``z`` by ``b h^2 (i + a/2)``, which is a whole
number of ``h^2`` cells whenever ``a b`` is even.  The graph therefore lives
on an ``N x N x N^2`` lattice (z resolved to ``h^2``) where every edge is an
exact horizontal curve of length ``h sqrt(a^2 + b^2)``.  Graph distances are
lengths of genuine horizontal paths, so they bound the true distance from
above; the finite direction set costs at most the factor ``direction_factor``.
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import dijkstra

from .heat import NilGrid

for _key in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_key}", "1")
import ot  # noqa: E402

_BASE_MOVES = ((1, 0), (0, 1), (2, 1), (1, 2), (3, 2), (2, 3))
# graph distance <= direction_factor * d_H + ROUNDING_C * sqrt(h), calibrated
# against the exact group distance for separations below 0.45
ROUNDING_C = 0.5
MOVES = tuple(sorted({(sa * a, sb * b) for a, b in _BASE_MOVES for sa in (1, -1) for sb in (1, -1)}))


def direction_factor(moves=MOVES) -> float:
    """Worst ratio of graph length to Euclidean length for planar segments."""
    angles = np.sort(np.unique(np.round(np.arctan2([m[1] for m in moves], [m[0] for m in moves]), 14)))
    gaps = np.diff(np.concatenate([angles, angles[:1] + 2 * np.pi]))
    return float(1.0 / np.cos(gaps.max() / 2))


# ---------------------------------------------------------------------------
# graph


@dataclass(frozen=True)
class _Graph:
    N: int
    matrix: sps.csr_matrix
    vertical: bool

    @property
    def nz(self) -> int:
        return self.N * self.N

    def node(self, i, j, kf):
        return (np.asarray(i) * self.N + np.asarray(j)) * self.nz + np.asarray(kf)

    def coarse_nodes(self):
        """Node ids of the coarse grid points in the heat-grid flat order."""
        N = self.N
        i, j, k = np.meshgrid(*(np.arange(N),) * 3, indexing="ij")
        return self.node(i, j, k * N).ravel()


def _reduce_fine(N, i, j, kf):
    nz = N * N
    wraps = -(i // N)
    i = i + wraps * N
    kf = kf + wraps * j * N          # (x + 1, y, z) ~ (x, y, z - y), with y = j N cells
    return i, np.mod(j, N), np.mod(kf, nz)


@functools.lru_cache(maxsize=8)
def _build_graph(N: int, vertical: bool) -> _Graph:
    h = 1.0 / N
    nz = N * N
    i, j, kf = (a.ravel() for a in np.meshgrid(np.arange(N), np.arange(N), np.arange(nz), indexing="ij"))
    src = (i * N + j) * nz + kf
    rows, cols, vals = [], [], []
    for a, b in MOVES:
        lift = (b * (2 * i + a)) // 2
        ti, tj, tk = _reduce_fine(N, i + a, j + b, kf + lift)
        rows.append(src)
        cols.append((ti * N + tj) * nz + tk)
        vals.append(np.full(src.size, h * math.hypot(a, b)))
    if vertical:
        for s in (1, -1):
            rows.append(src)
            cols.append((i * N + j) * nz + np.mod(kf + s, nz))
            vals.append(np.full(src.size, h * h))
    n = N * N * nz
    mat = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return _Graph(N, mat, vertical)


# ---------------------------------------------------------------------------
# distance fields


@dataclass
class DistanceField:
    source: tuple
    grid: NilGrid
    d: np.ndarray
    meta: dict = field(default_factory=dict)

    def at(self, i, j, k) -> float:
        return float(self.d[int(self.grid.index(i, j, k))])

    @property
    def rounding_radius(self) -> float:
        return self.meta["rounding_radius"]

    @property
    def lower(self) -> np.ndarray:
        """Lower envelope for the true distance implied by the graph bounds."""
        return np.maximum(lower_envelope(self.d, self.grid.N), planar_distance(self.grid, self.source))


def lower_envelope(d, N: int):
    return np.maximum(np.asarray(d) - ROUNDING_C / math.sqrt(N), 0.0) / direction_factor()


def planar_distance(grid: NilGrid, x0, targets=None) -> np.ndarray:
    """Flat-torus distance of the (x, y) projections from ``x0``.

    Horizontal curves project to planar curves of the same length, so this
    is a lower bound for the sub-elliptic distance.
    """
    flat = np.arange(grid.size) if targets is None else np.asarray(targets, dtype=np.int64)
    ti, tj, _ = grid.unravel(flat)
    di = np.abs(np.asarray(ti) - int(x0[0])) % grid.N
    dj = np.abs(np.asarray(tj) - int(x0[1])) % grid.N
    di, dj = np.minimum(di, grid.N - di), np.minimum(dj, grid.N - dj)
    return grid.h * np.hypot(di, dj)


def _meta(graph: _Graph) -> dict:
    return {
        "graph_step": 1.0 / graph.N,
        "vertical_step": 1.0 / graph.N ** 2,
        "direction_factor": direction_factor(),
        "rounding_radius": ROUNDING_C / math.sqrt(graph.N),
        "moves": len(MOVES),
        "nodes": graph.matrix.shape[0],
        "edges": int(graph.matrix.nnz),
        "vertical_edges": graph.vertical,
    }


def cc_distance(grid: NilGrid, x0, vertical: bool = False) -> DistanceField:
    """Graph distance from ``x0`` (grid indices) to every grid point.

    With ``vertical=True`` unit-speed Z edges are added, which gives the
    Riemannian distance of the metric with ``eps = 1`` for comparison.
    """
    x0 = tuple(int(a) for a in x0)
    if not all(0 <= a < grid.N for a in x0):
        raise ValueError(f"source {x0} outside the grid")
    graph = _build_graph(grid.N, bool(vertical))
    src = int(graph.node(x0[0], x0[1], x0[2] * grid.N))
    full = dijkstra(graph.matrix, directed=True, indices=src)
    return DistanceField(x0, grid, full[graph.coarse_nodes()], _meta(graph))


def distance_matrix(grid: NilGrid, sources=None) -> np.ndarray:
    """Distances between grid points; rows are sources (default: all points)."""
    graph = _build_graph(grid.N, False)
    coarse = graph.coarse_nodes()
    rows = coarse if sources is None else coarse[np.asarray(sources, dtype=np.int64)]
    return dijkstra(graph.matrix, directed=True, indices=rows)[:, coarse]


def lower_distance_matrix(grid: NilGrid, sources=None) -> np.ndarray:
    """Rigorous lower bounds for the true distances, row by row as ``distance_matrix``."""
    rows = np.arange(grid.size) if sources is None else np.asarray(sources, dtype=np.int64)
    D = lower_envelope(distance_matrix(grid, rows), grid.N)
    for r, s in enumerate(rows):
        np.maximum(D[r], planar_distance(grid, grid.unravel(s)), out=D[r])
    return D


# ---------------------------------------------------------------------------
# optimal transport


@dataclass
class TransportPlan:
    plan: np.ndarray          # coupling on the full point sets
    mu0: np.ndarray
    mu1: np.ndarray
    cost: float               # sum of plan * squared distance
    dual_u: np.ndarray
    dual_v: np.ndarray
    certificate: dict

    @property
    def distance(self) -> float:
        return math.sqrt(max(self.cost, 0.0))

    def marginal_residual(self) -> float:
        return float(max(np.max(np.abs(self.plan.sum(axis=1) - self.mu0)),
                         np.max(np.abs(self.plan.sum(axis=0) - self.mu1))))


def _check_measure(mu, n, name):
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.size != n:
        raise ValueError(f"{name} has {mu.size} entries, expected {n}")
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise ValueError(f"{name} must be a finite nonnegative vector")
    return mu


def optimal_transport(distances, mu0, mu1) -> TransportPlan:
    """Exact optimal coupling for the cost ``distances**2`` by network simplex.

    Optimality is certified by dual feasibility on the supports and a zero
    duality gap, computed here independently of the solver.
    """
    D = np.asarray(distances, dtype=float)
    mu0 = _check_measure(mu0, D.shape[0], "mu0")
    mu1 = _check_measure(mu1, D.shape[1], "mu1")
    if abs(mu0.sum() - mu1.sum()) > 1e-12:
        raise ValueError(f"mass mismatch {mu0.sum() - mu1.sum():.3g}")
    s0, s1 = np.flatnonzero(mu0 > 0), np.flatnonzero(mu1 > 0)
    C = D[np.ix_(s0, s1)] ** 2
    a, b = mu0[s0], mu1[s1]
    b = b * (a.sum() / b.sum())          # identical totals for the solver
    sub, log = ot.emd(a, b, C, log=True, numItermax=10_000_000)
    if log["result_code"] != 1:
        raise RuntimeError(f"network simplex failed: {log['warning']}")
    u, v = np.asarray(log["u"]), np.asarray(log["v"])
    cost = float(np.sum(sub * C))
    scale = max(1.0, float(C.max()))
    certificate = {
        "dual_violation": float(max(0.0, np.max(u[:, None] + v[None, :] - C))) / scale,
        "duality_gap": abs(float(a @ u + b @ v) - cost) / scale,
    }
    plan = np.zeros(D.shape)
    plan[np.ix_(s0, s1)] = sub
    dual_u, dual_v = np.full(D.shape[0], np.nan), np.full(D.shape[1], np.nan)
    dual_u[s0], dual_v[s1] = u, v
    result = TransportPlan(plan, mu0, mu1, cost, dual_u, dual_v, certificate)
    if certificate["dual_violation"] > 1e-9 or certificate["duality_gap"] > 1e-9:
        raise RuntimeError(f"optimality certificate failed: {certificate}")
    return result


def wasserstein2(grid: NilGrid, mu0, mu1, distances=None) -> float:
    """W_2 for the sub-elliptic graph distance between measures on the grid."""
    if grid.size > 1024:
        raise ValueError(f"exact transport limited to 1024 points, grid has {grid.size}")
    if distances is None:
        distances = distance_matrix(grid)
    return optimal_transport(distances, mu0, mu1).distance

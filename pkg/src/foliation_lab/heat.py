"""Heat semigroup on the compact Heisenberg nilmanifold, and SU(2) spectra.

The nilmanifold is the quotient of the polarised Heisenberg group
``(x,y,z)(x',y',z') = (x+x', y+y', z+z'+x y')`` by its integer lattice,
acting on the left.  Its identifications are

    (x, y, z) ~ (x + 1, y, z + y) ~ (x, y + 1, z) ~ (x, y, z + 1),

so on an ``N**3`` grid with spacing ``h = 1/N`` leaving through the
x-boundary shifts the z index by the y index.  The left-invariant fields
``X1 = d/dx``, ``X2 = d/dy + x d/dz`` and ``Z = d/dz`` descend to the quotient.

Stencils follow the frame flows.  The X2 flow moves ``z`` by ``x h``, which
is ``w = i/N`` cells at column ``i``; it is resolved by linear interpolation
between the two nearest planes.  Interpolation alone adds a vertical
diffusion ``w(1-w) d^2/dz^2`` that does not vanish under refinement, so the
z stencil carries the weight ``eps - w(1-w)`` (clipped at 0) instead of
``eps``.  For ``eps >= 1/4`` this makes the generator a consistent
second-order discretisation of ``Delta_eps`` with nonnegative off-diagonals.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, splu
from scipy.special import ive


class InstabilityError(RuntimeError):
    """Raised when a time stepper blows up."""


class EigenError(RuntimeError):
    """Raised when the eigensolver does not reach the requested residual."""


DENSE_LIMIT = 12 ** 3
SCHEMES = ("chebyshev", "taylor", "cn", "euler")


# ---------------------------------------------------------------------------
# grid and fields


@dataclass(frozen=True)
class NilGrid:
    N: int

    def __post_init__(self):
        if self.N < 4 or self.N % 2:
            raise ValueError(f"N must be even and >= 4, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def size(self) -> int:
        return self.N ** 3

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    def index(self, i, j, k):
        N = self.N
        return (np.asarray(i) * N + np.asarray(j)) * N + np.asarray(k)

    def unravel(self, idx):
        return np.unravel_index(idx, (self.N,) * 3)

    def indices(self):
        """(i, j, k) arrays of every grid point in flat order."""
        return np.meshgrid(*(np.arange(self.N),) * 3, indexing="ij")

    def coordinates(self):
        i, j, k = self.indices()
        return i * self.h, j * self.h, k * self.h

    def reduce(self, i, j, k):
        """Canonical representative of integer indices under the lattice."""
        N = self.N
        i, j, k = (np.asarray(a, dtype=np.int64) for a in (i, j, k))
        a = -(i // N)                # x-wraps needed to bring i into [0, N)
        i = i + a * N
        k = k + a * j                # each backward wrap adds y (in cells)
        return i, np.mod(j, N), np.mod(k, N)

    def x_step(self, i, j, k, sign: int = 1):
        """Neighbour along X1, with the twist applied on wrap."""
        return self.reduce(np.asarray(i) + sign, j, k)


def build_grid(N: int) -> NilGrid:
    return NilGrid(int(N))


@dataclass
class Field:
    grid: NilGrid
    values: np.ndarray
    eps: float = float("nan")
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.size)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def cube(self) -> np.ndarray:
        return self.values.reshape((self.grid.N,) * 3)

    # -- export ----------------------------------------------------------------
    def to_binary(self, path) -> None:
        """Little-endian header (int64 N, float64 eps, float64 t) then float64 values."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qdd", self.grid.N, self.eps, self.t))
            fh.write(self.values.astype("<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "Field":
        data = Path(path).read_bytes()
        N, eps, t = struct.unpack_from("<qdd", data)
        values = np.frombuffer(data, dtype="<f8", offset=struct.calcsize("<qdd"))
        return cls(build_grid(N), values.copy(), eps, t)

    def to_csv(self, path) -> None:
        i, j, k = (a.ravel() for a in self.grid.indices())
        h = self.grid.h
        table = np.column_stack([i, j, k, i * h, j * h, k * h, self.values])
        header = f"# N={self.grid.N} eps={self.eps!r} t={self.t!r}\ni,j,k,x,y,z,value"
        np.savetxt(path, table, delimiter=",", header=header, comments="",
                   fmt=["%d", "%d", "%d", "%.17g", "%.17g", "%.17g", "%.17g"])


def lift(grid: NilGrid, fn) -> np.ndarray:
    """Evaluate ``fn(x, y, z)`` at the grid points (flat order)."""
    x, y, z = grid.coordinates()
    return np.broadcast_to(np.asarray(fn(x, y, z), dtype=float), x.shape).ravel().copy()


# ---------------------------------------------------------------------------
# generator


def _shift(grid: NilGrid, targets, weights) -> sps.csr_matrix:
    rows = np.concatenate([np.arange(grid.size)] * len(targets))
    cols = np.concatenate([grid.index(*t).ravel() for t in targets])
    vals = np.concatenate([np.broadcast_to(w, (grid.N,) * 3).ravel() for w in weights])
    return sps.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))


@dataclass
class Stencils:
    """Averaging operators along the frame flows (each row sums to 1)."""

    x_fwd: sps.csr_matrix
    x_bwd: sps.csr_matrix
    y_fwd: sps.csr_matrix
    y_bwd: sps.csr_matrix
    z_fwd: sps.csr_matrix
    z_bwd: sps.csr_matrix
    w: np.ndarray              # interpolation offset per point, in cells


def frame_stencils(grid: NilGrid) -> Stencils:
    i, j, k = grid.indices()
    w = i / grid.N                                    # z offset of the X2 flow, in cells
    return Stencils(
        x_fwd=_shift(grid, [grid.x_step(i, j, k, +1)], [1.0]),
        x_bwd=_shift(grid, [grid.x_step(i, j, k, -1)], [1.0]),
        y_fwd=_shift(grid, [grid.reduce(i, j + 1, k), grid.reduce(i, j + 1, k + 1)], [1 - w, w]),
        y_bwd=_shift(grid, [grid.reduce(i, j - 1, k), grid.reduce(i, j - 1, k - 1)], [1 - w, w]),
        z_fwd=_shift(grid, [grid.reduce(i, j, k + 1)], [1.0]),
        z_bwd=_shift(grid, [grid.reduce(i, j, k - 1)], [1.0]),
        w=w.ravel(),
    )


@dataclass
class GeneratorMatrix:
    grid: NilGrid
    eps: float
    matrix: sps.csr_matrix
    horizontal: sps.csr_matrix
    vertical: sps.csr_matrix       # plain z second difference
    vertical_weight: np.ndarray    # per-point coefficient of ``vertical``
    stencils: Stencils
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.grid.size

    def apply(self, values) -> np.ndarray:
        return self.matrix @ np.asarray(values, dtype=float)

    def diag_max(self) -> float:
        return float(np.max(np.abs(self.matrix.diagonal())))

    def norm1(self) -> float:
        return float(abs(self.matrix).sum(axis=0).max())

    def gradient(self, values) -> np.ndarray:
        """Central horizontal differences ``(X1 f, X2 f)`` on the generator's stencils."""
        s, h = self.stencils, self.grid.h
        v = np.asarray(values, dtype=float)
        g1 = (s.x_fwd @ v - s.x_bwd @ v) / (2 * h)
        g2 = (s.y_fwd @ v - s.y_bwd @ v) / (2 * h)
        return np.stack([g1, g2], axis=-1)

    def grad_sq(self, values) -> np.ndarray:
        g = self.gradient(values)
        return np.sum(g ** 2, axis=-1)

    def dirichlet(self, values) -> float:
        """Normalised Dirichlet form ``-<L f, f>`` for the probability weights."""
        v = np.asarray(values, dtype=float)
        return float(-(v @ (self.matrix @ v)) / self.grid.size)

    def row_sum_residual(self) -> float:
        return float(np.max(np.abs(np.asarray(self.matrix.sum(axis=1)).ravel())))

    def symmetry_residual(self) -> float:
        diff = self.matrix - self.matrix.T
        return float(np.max(np.abs(diff.data), initial=0.0))


def assemble_generator(grid: NilGrid, eps: float, compensate: bool = True) -> GeneratorMatrix:
    """Sparse ``L_eps`` with exact zero row sums and symmetric off-diagonals.

    ``compensate=False`` gives the plain scheme with vertical weight ``eps``,
    which converges to ``Delta_H + (eps + x(1-x)) Z^2`` instead.
    """
    eps = float(eps)
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    s = frame_stencils(grid)
    inv_h2 = 1.0 / grid.h ** 2
    eye = sps.identity(grid.size, format="csr")
    hor = (s.x_fwd + s.x_bwd + s.y_fwd + s.y_bwd - 4 * eye) * inv_h2
    ver = (s.z_fwd + s.z_bwd - 2 * eye) * inv_h2
    if compensate:
        weight = np.maximum(eps - s.w * (1 - s.w), 0.0)
    else:
        weight = np.full(grid.size, eps)
    L = hor + sps.diags(weight) @ ver if np.any(weight) else hor.copy()
    L = 0.5 * (L + L.T)
    L = _fix_diagonal(L.tocsr())
    meta = {"compensated": bool(compensate),
            "clipped_points": int(np.count_nonzero(eps - s.w * (1 - s.w) < 0)) if compensate else 0}
    return GeneratorMatrix(grid, eps, L, hor.tocsr(), ver.tocsr(), weight, s, meta)


@functools.lru_cache(maxsize=16)
def _cached_generator(N: int, eps: float) -> GeneratorMatrix:
    return assemble_generator(build_grid(N), eps)


def generator_for(grid: NilGrid, eps_or_gen) -> GeneratorMatrix:
    """Return ``eps_or_gen`` if it is a generator, else the (cached) one for ``eps``."""
    if isinstance(eps_or_gen, GeneratorMatrix):
        if eps_or_gen.grid != grid:
            raise ValueError("generator was assembled on a different grid")
        return eps_or_gen
    return _cached_generator(grid.N, float(eps_or_gen))


def _fix_diagonal(L: sps.csr_matrix) -> sps.csr_matrix:
    """Drop explicit zeros and set the diagonal to minus the off-diagonal row sums."""
    L = L.tolil()
    L.setdiag(0.0)
    L = L.tocsr()
    L.eliminate_zeros()
    off = np.asarray(L.sum(axis=1)).ravel()
    return (L - sps.diags(off)).tocsr()


# ---------------------------------------------------------------------------
# time stepping


def evolve(field_or_values, eps, t: float, scheme: str = "chebyshev",
           dt: float | None = None) -> Field:
    """Approximate ``exp(t L) f``.

    Schemes: ``chebyshev`` (Chebyshev expansion over the Gershgorin interval,
    accurate to rounding), ``taylor`` (truncated Taylor series on substeps with
    ``||dt L||_1 <= 1``), ``cn`` (Crank-Nicolson with step ``dt``) and
    ``euler`` (explicit, ``dt = 0.9 / max|diag|`` unless given).
    """
    t = float(t)
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if isinstance(field_or_values, Field):
        gen = generator_for(field_or_values.grid, eps)
        values = field_or_values.values
    elif isinstance(eps, GeneratorMatrix):
        gen, values = eps, field_or_values
    else:
        raise TypeError("pass a Field, or raw values together with a GeneratorMatrix")
    u = np.array(values, dtype=float).reshape(gen.size)
    if t == 0:
        return Field(gen.grid, u, gen.eps, 0.0)
    return Field(gen.grid, propagate(gen, u, t, scheme, dt), gen.eps, t)


def propagate(gen: GeneratorMatrix, values, t: float, scheme: str = "chebyshev",
              dt: float | None = None) -> np.ndarray:
    """``exp(t L)`` applied to an array whose first axis is the grid (extra axes batch)."""
    t = float(t)
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    u = np.array(values, dtype=float)
    if u.shape[0] != gen.size:
        raise ValueError(f"expected {gen.size} rows, got {u.shape[0]}")
    if t == 0:
        return u
    if scheme == "chebyshev":
        u = _chebyshev(gen.matrix, u, t, 2 * gen.diag_max())
    elif scheme == "taylor":
        u = _taylor(gen.matrix, u, t, gen.norm1())
    elif scheme == "cn":
        u = _crank_nicolson(gen.matrix, u, t, dt or t / max(1, math.ceil(t * gen.diag_max())))
    elif scheme == "euler":
        u = _euler(gen.matrix, u, t, dt or 0.9 / gen.diag_max())
    else:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return u


def _chebyshev(L, u, t, lam_max, tol: float = 1e-18):
    """``exp(tL) u`` for symmetric ``L`` with spectrum in ``[-lam_max, 0]``.

    With ``B = I + 2L/lam_max`` and ``s = t lam_max / 2``,
    ``exp(tL) = ive(0, s) + 2 sum_k ive(k, s) T_k(B)``; the scaled Bessel
    weights lie in ``[0, 1]`` so the sum has no cancellation.
    """
    s = 0.5 * t * lam_max
    scale = 2.0 / lam_max
    apply_b = lambda v: v + scale * (L @ v)  # noqa: E731
    prev, cur = u, apply_b(u)
    acc = ive(0, s) * prev + 2 * ive(1, s) * cur
    k = 1
    while True:
        k += 1
        weight = ive(k, s)
        if k > s and weight < tol:
            break
        prev, cur = cur, 2 * apply_b(cur) - prev
        acc += 2 * weight * cur
    return acc


def _taylor(L, u, t, norm, theta: float = 1.0, tol: float = 1e-17):
    steps = max(1, math.ceil(t * norm / theta))
    tau = t / steps
    # smallest K with theta^(K+1)/(K+1)! below tol
    K, term = 0, 1.0
    while term > tol:
        K += 1
        term *= theta / (K + 1)
    for _ in range(steps):
        acc = u.copy()
        v = u
        for k in range(1, K + 1):
            v = (tau / k) * (L @ v)
            acc += v
        u = acc
    return u


def _crank_nicolson(L, u, t, dt):
    steps = max(1, round(t / dt))
    dt = t / steps
    eye = sps.identity(L.shape[0], format="csc")
    lu = splu((eye - 0.5 * dt * L).tocsc())
    rhs_op = (eye + 0.5 * dt * L).tocsr()
    for _ in range(steps):
        u = lu.solve(rhs_op @ u)
    return u


def _euler(L, u, t, dt):
    bound = 2.0 / np.max(np.abs(L.diagonal()))
    steps = max(1, math.ceil(t / dt))
    dt = t / steps
    start = max(1.0, float(np.max(np.abs(u))))
    for n in range(steps):
        u = u + dt * (L @ u)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > 1e6 * start:
            raise InstabilityError(
                f"explicit Euler blew up at step {n + 1}/{steps}: dt={dt:.3g} exceeds "
                f"the stability bound {bound:.3g}")
    return u


def heat_kernel(grid: NilGrid, eps, t: float, x0, scheme: str = "chebyshev") -> Field:
    """``p_t(x0, .)`` with respect to the normalised volume (sum p h^3 = 1)."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    gen = generator_for(grid, eps)
    delta = np.zeros(grid.size)
    delta[int(grid.index(*x0))] = 1.0 / grid.cell_volume
    return evolve(delta, gen, t, scheme)


# ---------------------------------------------------------------------------
# spectra


@dataclass
class GapResult:
    gap: float
    vector: np.ndarray
    residual: float
    method: str


def spectral_gap(target, eps=None, tol: float = 1e-8) -> GapResult:
    """Smallest nonzero eigenvalue of ``-L`` and its eigenvector.

    ``target`` is a grid (with ``eps``), a GeneratorMatrix or any sparse
    symmetric generator with a one-dimensional kernel.
    """
    if isinstance(target, NilGrid):
        target = generator_for(target, eps)
    L = target.matrix if isinstance(target, GeneratorMatrix) else sps.csr_matrix(target)
    n = L.shape[0]
    if n <= DENSE_LIMIT:
        w, V = np.linalg.eigh(-L.toarray())
        lam, vec, method = float(w[1]), V[:, 1], "dense"
    else:
        # Lanczos for the smallest end; the kernel is the constants
        try:
            w, V = eigsh(-L, k=3, which="SA", tol=1e-11)
        except ArpackNoConvergence as exc:
            raise EigenError(f"Lanczos did not converge: {exc}") from exc
        order = np.argsort(w)
        lam, vec, method = float(w[order[1]]), V[:, order[1]], "lanczos"
    vec = vec / np.linalg.norm(vec)
    residual = float(np.linalg.norm(L @ vec + lam * vec))
    if residual > tol * max(1.0, lam):
        raise EigenError(f"eigen residual {residual:.3g} above {tol:g}")
    return GapResult(lam, vec, residual, method)


def ring_generator(N: int) -> sps.csr_matrix:
    """Nearest-neighbour Laplacian of a ring with spacing 1/N."""
    main = -2.0 * np.ones(N)
    off = np.ones(N - 1)
    L = sps.diags([off, main, off], [-1, 0, 1], format="lil")
    L[0, N - 1] = L[N - 1, 0] = 1.0
    return (L * N ** 2).tocsr()


def su2_spectrum(eps: float, jmax: float) -> list[tuple[float, int]]:
    """Eigenvalues of ``-Delta_eps`` on SU(2) with multiplicities.

    With ``[X1, X2] = 2Z`` (and cyclic) the frame acts on the spin-j
    representation as ``-2i`` times the spin operators, so the eigenvalue for
    weight ``k in {-j..j}`` is ``4 (j(j+1) + (eps-1) k^2)`` with multiplicity
    ``2j+1`` from the other factor of ``V_j (x) V_j*``.
    """
    eps = float(eps)
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    two_jmax = round(2 * jmax)
    if abs(two_jmax - 2 * jmax) > 1e-12 or not 0 <= jmax <= 50:
        raise ValueError(f"jmax must be a half-integer in [0, 50], got {jmax}")
    table: dict[float, int] = {}
    for two_j in range(two_jmax + 1):
        j = two_j / 2
        for two_k in range(-two_j, two_j + 1, 2):
            k = two_k / 2
            lam = 4.0 * (j * (j + 1) + (eps - 1.0) * k * k)
            key = round(lam, 10)
            table[key] = table.get(key, 0) + two_j + 1
    return sorted(table.items())


def su2_gap(eps: float, jmax: float = 4) -> float:
    return min(lam for lam, _ in su2_spectrum(eps, jmax) if lam > 1e-12)


# right multiplication by i, j, k on quaternions (a, b, c, d) = a + b i + c j + d k
_QUAT_RIGHT = {
    "i": np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float),
    "j": np.array([[0, 0, -1, 0], [0, 0, 0, -1], [1, 0, 0, 0], [0, 1, 0, 0]], dtype=float),
    "k": np.array([[0, 0, 0, -1], [0, 0, 1, 0], [0, -1, 0, 0], [1, 0, 0, 0]], dtype=float),
}


def _monomials(degree: int, dim: int = 4):
    if dim == 1:
        return [(degree,)]
    return [(a,) + rest for a in range(degree, -1, -1) for rest in _monomials(degree - a, dim - 1)]


def _vector_field_matrix(A: np.ndarray, degree: int) -> np.ndarray:
    """Matrix of ``f -> <A q, grad f>`` on homogeneous polynomials of ``degree``."""
    monos = _monomials(degree)
    index = {m: r for r, m in enumerate(monos)}
    out = np.zeros((len(monos), len(monos)))
    for col, m in enumerate(monos):
        for mu in range(4):
            if m[mu] == 0:
                continue
            lowered = list(m)
            lowered[mu] -= 1
            for nu in range(4):
                if A[mu, nu] == 0:
                    continue
                raised = lowered.copy()
                raised[nu] += 1
                out[index[tuple(raised)], col] += m[mu] * A[mu, nu]
    return out


def su2_polynomial_spectrum(eps: float, degree: int) -> np.ndarray:
    """Eigenvalues of ``-Delta_eps`` on degree-``degree`` polynomials restricted to S^3.

    Unit quaternions realise SU(2); right multiplication by ``i, j, k`` gives
    left-invariant fields with ``[X1, X2] = 2Z`` and cyclic.  The
    polynomial space is invariant, so its spectrum is part of the exact one.
    """
    X1, X2, Z = (_vector_field_matrix(_QUAT_RIGHT[u], degree) for u in "ijk")
    op = -(X1 @ X1 + X2 @ X2 + eps * (Z @ Z))
    return np.sort(np.linalg.eigvals(op).real)

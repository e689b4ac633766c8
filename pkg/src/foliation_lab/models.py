"""Model foliations given by structure constants of a left-invariant frame.

The frame ``e_1..e_{n+m}`` is orthonormal for the reference metric ``g``; the
first ``n`` fields span the horizontal bundle, the last ``m`` the vertical
one.  Structure constants are stored as ``c[a, b, c]`` with
``[e_b, e_c] = sum_a c[a, b, c] e_a``.  Connection coefficients follow the
same index layout: ``gamma[c, a, b]`` is the ``e_c`` component of
``nabla_{e_a} e_b``.

For left-invariant frames every connection coefficient is constant, so
connections and curvature reduce to algebra on ``c``.  Charts realise the
frame as vector fields in coordinates and are only needed for pointwise
calculus.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import bernoulli

from .expr import Expr, parse
from .jets import Jet, coordinate_jets, jet_matmul, jet_space


class ModelError(ValueError):
    """Raised for invalid model definitions."""


class ChartDomainError(ValueError):
    """Raised when a point lies outside the chart domain."""


ALGEBRAIC_TOL = 1e-12


# ---------------------------------------------------------------------------
# charts


class ExpressionChart:
    """Frame fields given by closed-form coefficient expressions.

    ``frame[a][mu]`` is the ``d/dx_mu`` coefficient of ``e_a``.
    """

    def __init__(self, coordinates, frame, radius: float | None = None):
        self.coordinates = tuple(coordinates)
        self.dim = len(self.coordinates)
        self.frame = [
            [f if isinstance(f, Expr) else parse(str(f), self.coordinates) for f in row]
            for row in frame
        ]
        self.radius = radius

    def check_point(self, point):
        point = np.asarray(point, dtype=float)
        if point.shape != (self.dim,):
            raise ChartDomainError(f"expected a point with {self.dim} coordinates, got {point.shape}")
        if not np.all(np.isfinite(point)):
            raise ChartDomainError("point has non-finite coordinates")
        if self.radius is not None and np.linalg.norm(point) > self.radius:
            raise ChartDomainError(f"|p| = {np.linalg.norm(point):.3g} exceeds chart radius {self.radius}")
        return point

    def frame_jets(self, point, order: int) -> Jet:
        point = self.check_point(point)
        coords = coordinate_jets(point, order, jet_space(self.dim, order))
        rows = []
        for row in self.frame:
            rows.append(np.stack([e.evaluate(coords).coeffs for e in row]))
        return Jet(np.stack(rows), order, coords[0].space)

    def frame_values(self, point) -> np.ndarray:
        return self.frame_jets(point, 0).value


class ExponentialChart:
    """Exponential coordinates of the first kind, ``u -> exp(sum_a u_a e_a)``.

    The left-invariant field ``e_a`` at ``exp(u)`` has coordinate components
    ``phi(ad_u) e_a`` with ``phi(z) = z / (1 - exp(-z))``.  The power series
    is summed in Horner form over ``ad_u**2``; it converges while the
    spectral radius of ``ad_u`` stays below ``2*pi``.
    """

    N_TERMS = 30

    def __init__(self, c: np.ndarray, radius: float = 1.0, names=None):
        self.c = np.asarray(c, dtype=float)
        self.dim = self.c.shape[0]
        self.radius = radius
        self.coordinates = tuple(names or [f"u{i + 1}" for i in range(self.dim)])
        b = bernoulli(2 * self.N_TERMS)
        self._coeffs = [b[2 * k] / math.factorial(2 * k) for k in range(self.N_TERMS + 1)]

    check_point = ExpressionChart.check_point

    def frame_jets(self, point, order: int) -> Jet:
        point = self.check_point(point)
        space = jet_space(self.dim, order)
        u = coordinate_jets(point, order, space)
        u_stack = np.stack([x.coeffs for x in u])  # (dim, M)
        # ad_u[a, b] = sum_c u_c c[a, c, b]
        ad = Jet(np.einsum("acb,cm->abm", self.c, u_stack), order, space)
        ad2 = jet_matmul(ad, ad)
        eye = Jet.constant(np.eye(self.dim), space, order)
        series = eye * self._coeffs[self.N_TERMS]
        for k in range(self.N_TERMS - 1, 0, -1):
            series = eye * self._coeffs[k] + jet_matmul(ad2, series)
        phi = eye + ad * 0.5 + jet_matmul(ad2, series)
        # frame[a, mu] = phi[mu, a]
        return Jet(np.swapaxes(phi.coeffs, 0, 1), order, space)

    def frame_values(self, point) -> np.ndarray:
        return self.frame_jets(point, 0).value


# ---------------------------------------------------------------------------
# model container


@dataclass(frozen=True, eq=False)
class FoliationModel:
    name: str
    n: int
    m: int
    c: np.ndarray
    chart: object = None
    quotient: dict | None = None
    sample_radius: float = 1.0

    @property
    def dim(self) -> int:
        return self.n + self.m

    @property
    def horizontal(self) -> slice:
        return slice(0, self.n)

    @property
    def vertical(self) -> slice:
        return slice(self.n, self.n + self.m)

    def sample_point(self, rng: np.random.Generator) -> np.ndarray:
        """Random chart point: a cube for global charts, a ball otherwise."""
        if self.chart is None:
            raise ModelError(f"model {self.name!r} has no chart")
        if getattr(self.chart, "radius", None) is None:
            return rng.uniform(-self.sample_radius, self.sample_radius, size=self.dim)
        v = rng.normal(size=self.dim)
        v /= np.linalg.norm(v)
        return v * self.sample_radius * rng.uniform() ** (1.0 / self.dim)

    def with_constants(self, c: np.ndarray, name: str | None = None) -> "FoliationModel":
        return FoliationModel(name or self.name, self.n, self.m, np.asarray(c, dtype=float),
                              self.chart, self.quotient, self.sample_radius)


def _fill_brackets(dim: int, brackets) -> np.ndarray:
    """Assemble c from 1-based (a, b, c, value) entries, completing antisymmetry."""
    c = np.zeros((dim, dim, dim))
    given = {}
    for entry in brackets:
        a, b, cc, value = entry
        a, b, cc = int(a) - 1, int(b) - 1, int(cc) - 1
        if not all(0 <= i < dim for i in (a, b, cc)):
            raise ModelError(f"bracket index out of range in {tuple(entry)}")
        given[(a, b, cc)] = float(value)
    for (a, b, cc), value in given.items():
        mirror = given.get((a, cc, b))
        if mirror is not None and abs(mirror + value) > ALGEBRAIC_TOL:
            raise ModelError(
                f"antisymmetry violated for triple (a,b,c)=({a + 1},{b + 1},{cc + 1}): "
                f"c^a_bc={value}, c^a_cb={mirror}"
            )
        if b == cc and value != 0:
            raise ModelError(f"antisymmetry violated: [e_{b + 1}, e_{b + 1}] has component {value}")
        c[a, b, cc] = value
        c[a, cc, b] = -value
    return c


def jacobi_tensor(c: np.ndarray) -> np.ndarray:
    """jac[d, a, b, e] = component d of [[e_a, e_b], e_e] + cyclic."""
    t = np.einsum("kab,dke->dabe", c, c)
    return t + np.transpose(t, (0, 2, 3, 1)) + np.transpose(t, (0, 3, 1, 2))


def check_algebra(c: np.ndarray, n: int) -> None:
    """Raise ModelError naming the first failing triple."""
    anti = c + np.transpose(c, (0, 2, 1))
    if np.max(np.abs(anti), initial=0.0) > ALGEBRAIC_TOL:
        a, b, cc = np.unravel_index(np.argmax(np.abs(anti)), anti.shape)
        raise ModelError(f"antisymmetry violated for triple (a,b,c)=({a + 1},{b + 1},{cc + 1})")
    jac = jacobi_tensor(c)
    if np.max(np.abs(jac), initial=0.0) > ALGEBRAIC_TOL:
        d, a, b, e = np.unravel_index(np.argmax(np.abs(jac)), jac.shape)
        raise ModelError(f"Jacobi identity violated for triple ({a + 1},{b + 1},{e + 1})")
    vert = np.abs(c[:n, n:, n:])
    if vert.size and vert.max() > ALGEBRAIC_TOL:
        a, b, cc = np.unravel_index(np.argmax(vert), vert.shape)
        raise ModelError(
            f"vertical distribution not integrable: c^{a + 1}_{b + n + 1},{cc + n + 1} != 0"
        )


def model_from_brackets(name: str, n: int, m: int, brackets, chart=None, quotient=None,
                        sample_radius: float = 1.0) -> FoliationModel:
    c = _fill_brackets(n + m, brackets)
    check_algebra(c, n)
    return FoliationModel(name, n, m, c, chart, quotient, sample_radius)


def _heisenberg() -> FoliationModel:
    chart = ExpressionChart(("x", "y", "z"), [["1", "0", "0"], ["0", "1", "x"], ["0", "0", "1"]])
    quotient = {
        "lattice": "integer",
        "group_law": "(x,y,z)*(x',y',z') = (x+x', y+y', z+z'+x*y')",
        "x_wrap": "(x, y, z) -> (x - 1, y, z - y)",
    }
    return model_from_brackets("heisenberg", 2, 1, [(3, 1, 2, 1.0)], chart, quotient)


def _su2() -> FoliationModel:
    brackets = [(3, 1, 2, 2.0), (1, 2, 3, 2.0), (2, 3, 1, 2.0)]
    c = _fill_brackets(3, brackets)
    chart = ExponentialChart(c, radius=1.0)
    return model_from_brackets("su2", 2, 1, brackets, chart, None, sample_radius=0.8)


def _abelian() -> FoliationModel:
    chart = ExpressionChart(("x", "y", "z"), [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])
    return model_from_brackets("abelian", 2, 1, [], chart)


CATALOG = {"heisenberg": _heisenberg, "su2": _su2, "abelian": _abelian}


def load_model(name: str) -> FoliationModel:
    """Built-in model by name, or a JSON model config file path.

    Config schema::

        {"name": "...", "n": 2, "m": 1,
         "brackets": [[a, b, c, value], ...],      # [e_b, e_c] = value e_a, 1-based
         "chart": {"coordinates": ["x", "y", "z"],
                   "frame": [["1", "0", "0"], ...],  # optional; default exponential
                   "radius": null},
         "quotient": null}
    """
    if name in CATALOG:
        return CATALOG[name]()
    path = Path(name)
    if not path.exists():
        raise ModelError(f"unknown model {name!r}; built-ins are {sorted(CATALOG)}")
    cfg = json.loads(path.read_text())
    return model_from_config(cfg)


def model_from_config(cfg: dict) -> FoliationModel:
    try:
        n, m = int(cfg["n"]), int(cfg["m"])
        brackets = cfg.get("brackets", [])
    except KeyError as exc:
        raise ModelError(f"model config missing field {exc}") from None
    c = _fill_brackets(n + m, brackets)
    check_algebra(c, n)
    chart_cfg = cfg.get("chart") or {}
    if "frame" in chart_cfg:
        coords = chart_cfg.get("coordinates") or [f"x{i + 1}" for i in range(n + m)]
        chart = ExpressionChart(coords, chart_cfg["frame"], chart_cfg.get("radius"))
    else:
        chart = ExponentialChart(c, radius=chart_cfg.get("radius", 1.0), names=chart_cfg.get("coordinates"))
    return FoliationModel(cfg.get("name", "custom"), n, m, c, chart, cfg.get("quotient"),
                          float(cfg.get("sample_radius", 0.8 if chart.radius else 1.0)))


# ---------------------------------------------------------------------------
# connections


@dataclass
class ConnectionCoeffs:
    gamma: np.ndarray
    eps: float | None = None
    kind: str = ""

    def covariant(self, a: int, b: int) -> np.ndarray:
        """Components of nabla_{e_a} e_b."""
        return self.gamma[:, a, b]


def frame_scale(model: FoliationModel, eps: float) -> np.ndarray:
    s = np.ones(model.dim)
    s[model.vertical] = math.sqrt(eps)
    return s


def scaled_constants(model: FoliationModel, eps: float) -> np.ndarray:
    """Structure constants in the g_eps-orthonormal frame {X_i, sqrt(eps) Z_l}."""
    s = frame_scale(model, eps)
    return model.c * s[None, :, None] * s[None, None, :] / s[:, None, None]


def koszul(c: np.ndarray) -> np.ndarray:
    """Levi-Civita coefficients of an orthonormal frame with constant brackets.

    2 <D_a b, c> = <[a,b],c> - <[b,c],a> + <[c,a],b>.
    """
    # transpose (2, 0, 1) places c[a, b, c] at [c, a, b]; (1, 2, 0) places c[b, c, a] there
    return 0.5 * (c - np.transpose(c, (2, 0, 1)) + np.transpose(c, (1, 2, 0)))


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return eps


def levi_civita(model: FoliationModel, eps: float = 1.0) -> ConnectionCoeffs:
    """Levi-Civita connection of g_eps in its orthonormal frame {X_i, sqrt(eps) Z_l}."""
    eps = _check_eps(eps)
    return ConnectionCoeffs(koszul(scaled_constants(model, eps)), eps, "levi-civita")


def bott_connection(model: FoliationModel) -> ConnectionCoeffs:
    """Bott connection in the g-orthonormal frame (independent of eps)."""
    D = koszul(model.c)
    g = np.zeros_like(D)
    H, V = model.horizontal, model.vertical
    g[H, H, H] = D[H, H, H]              # (D_X Y)_H
    g[H, V, H] = model.c[H, V, H]        # [Z, X]_H
    g[V, H, V] = model.c[V, H, V]        # [X, Z]_V
    g[V, V, V] = D[V, V, V]              # (D_Z W)_V
    return ConnectionCoeffs(g, None, "bott")


def torsion_free_residual(conn: ConnectionCoeffs, c: np.ndarray) -> float:
    """max |nabla_a b - nabla_b a - [a, b]| over frame pairs."""
    g = conn.gamma
    return float(np.max(np.abs(g - np.transpose(g, (0, 2, 1)) - c), initial=0.0))


def metric_residual(conn: ConnectionCoeffs, weights: np.ndarray) -> float:
    """max |<nabla_a e_b, e_c>_w + <e_b, nabla_a e_c>_w| for a diagonal metric w."""
    g = conn.gamma
    lhs = g * weights[:, None, None]                 # [c, a, b] -> <nabla_a b, c>
    res = lhs + np.transpose(lhs, (2, 1, 0))         # + <nabla_a c, b>
    return float(np.max(np.abs(res), initial=0.0))


def curvature_tensor(gamma: np.ndarray, c: np.ndarray) -> np.ndarray:
    """R[e, a, b, d]: component e of R(e_a, e_b) e_d for constant coefficients.

    R(a, b) = nabla_a nabla_b - nabla_b nabla_a - nabla_[a,b].
    """
    t1 = np.einsum("ead,dbc->eabc", gamma, gamma)
    t2 = np.einsum("ebd,dac->eabc", gamma, gamma)
    t3 = np.einsum("dab,edc->eabc", c, gamma)
    return t1 - t2 - t3


def ricci_from_curvature(R: np.ndarray, trace_indices=None) -> np.ndarray:
    """Ric(b, d) = sum_a <R(e_a, e_b) e_d, e_a> over an orthonormal frame."""
    idx = range(R.shape[0]) if trace_indices is None else trace_indices
    return sum(R[a, a, :, :] for a in idx)


# ---------------------------------------------------------------------------
# torsion, J and curvature pack


@dataclass
class CurvaturePack:
    torsion: np.ndarray          # T[l, i, j]: Z_l component of T(X_i, X_j)
    J: np.ndarray                # J[l]: matrix of J_{Z_l} on H (columns = images)
    J2: np.ndarray
    M2: np.ndarray
    RicH: np.ndarray | None = None
    RicV: np.ndarray | None = None


def torsion_and_j(model: FoliationModel) -> CurvaturePack:
    """T(X, Y) = -[X, Y]_V and J_Z from g_H(J_Z X, Y) = g_V(Z, T(X, Y)).

    With ``J_Z X_i = sum_j J[j, i] X_j`` the defining relation gives
    ``J[l][j, i] = T[l, i, j] = -c[n+l, i, j]``, i.e. ``J[l] = c[n+l, :n, :n]``.
    """
    n = model.n
    T = -model.c[n:, :n, :n]
    J = np.transpose(T, (0, 2, 1)).copy()
    J2 = np.einsum("lij,ljk->ik", J, J)
    M2 = -0.25 * np.einsum("lij,kji->lk", J, J)
    return CurvaturePack(T, J, J2, M2)


def leaf_ricci(model: FoliationModel) -> np.ndarray:
    V = model.vertical
    cv = model.c[V, V, V]
    gv = koszul(cv)
    return ricci_from_curvature(curvature_tensor(gv, cv))


def horizontal_ricci(model: FoliationModel) -> np.ndarray:
    """Ricci_H(Y, W) = sum_i <R(X_i, Y) W, X_i> for the Bott connection, Y, W horizontal."""
    R = curvature_tensor(bott_connection(model).gamma, model.c)
    ric = ricci_from_curvature(R, range(model.n))
    return ric[model.horizontal, model.horizontal]


def curvatures(model: FoliationModel) -> CurvaturePack:
    pack = torsion_and_j(model)
    pack.RicH = horizontal_ricci(model)
    pack.RicV = leaf_ricci(model)
    return pack


def ricci_epsilon(model: FoliationModel, eps: float) -> np.ndarray:
    """Ricci tensor of g_eps from its Levi-Civita curvature, in the g_eps-orthonormal frame."""
    eps = _check_eps(eps)
    c = scaled_constants(model, eps)
    R = curvature_tensor(koszul(c), c)
    return ricci_from_curvature(R)


def ricci_epsilon_formula(model: FoliationModel, eps: float) -> np.ndarray:
    """Block assembly of Ricci_eps from Ricci_H, Ricci_V and J.

    In the g_eps-orthonormal frame:
      HH: Ricci_H - ||J X||^2 / (2 eps)   ->  RicH + J2 / (2 eps)
      HV: 0
      VV: eps * (Ricci_V + Tr(J_Z^* J_W) / (4 eps^2))  ->  eps RicV + M2 / eps
    """
    eps = _check_eps(eps)
    pack = curvatures(model)
    out = np.zeros((model.dim, model.dim))
    H, V = model.horizontal, model.vertical
    out[H, H] = 0.5 * (pack.RicH + pack.RicH.T) + pack.J2 / (2.0 * eps)
    out[V, V] = eps * pack.RicV + pack.M2 / eps
    return out


def ricci_formula_residual(model: FoliationModel, eps: float) -> float:
    return float(np.max(np.abs(ricci_epsilon(model, eps) - ricci_epsilon_formula(model, eps))))


# ---------------------------------------------------------------------------
# constants


@dataclass
class CurvatureConstants:
    rho1: float
    kappa: float
    rho2: float
    rho3: float
    certificates: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"rho1": self.rho1, "kappa": self.kappa, "rho2": self.rho2, "rho3": self.rho3}

    def rho_tilde(self, eps: float) -> float:
        return self.rho1 - self.kappa / eps


def _extreme(mat: np.ndarray, which: str):
    if mat.size == 0:
        return 0.0, np.zeros(0)
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    i = 0 if which == "min" else -1
    return float(w[i]), v[:, i]


def extract_constants(model: FoliationModel) -> CurvatureConstants:
    """Sharp constants with the eigenvector attaining each bound."""
    pack = curvatures(model)
    rho1, v1 = _extreme(pack.RicH, "min")
    kappa, vk = _extreme(-pack.J2, "max")
    rho2, v2 = _extreme(pack.M2, "min")
    rho3, v3 = _extreme(pack.RicV, "min")
    clean = lambda x: 0.0 if abs(x) < 1e-14 else x  # noqa: E731
    return CurvatureConstants(
        clean(rho1), clean(max(kappa, 0.0)), clean(rho2), clean(rho3),
        {"rho1": v1, "kappa": vk, "rho2": v2, "rho3": v3},
    )


def certify_constants(model: FoliationModel, consts: CurvatureConstants) -> dict:
    """Min eigenvalues of the four bound matrices; each must be ~0 (>= -tol and <= tol)."""
    pack = curvatures(model)
    n, m = model.n, model.m
    mats = {
        "rho1": 0.5 * (pack.RicH + pack.RicH.T) - consts.rho1 * np.eye(n),
        "kappa": consts.kappa * np.eye(n) + pack.J2,
        "rho2": pack.M2 - consts.rho2 * np.eye(m),
        "rho3": pack.RicV - consts.rho3 * np.eye(m),
    }
    return {k: float(np.linalg.eigvalsh(v)[0]) for k, v in mats.items()}


# ---------------------------------------------------------------------------
# structural validation


@dataclass
class ValidationReport:
    model: str
    checks: dict

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.checks.values())

    def as_dict(self) -> dict:
        return {"model": self.model, "passed": self.passed, "checks": self.checks}


def bracket_generating_step(model: FoliationModel, max_step: int = 10) -> int | None:
    """Smallest s such that brackets of length <= s of horizontal fields span everything."""
    dim, n = model.dim, model.n
    span = np.eye(dim)[:, :n]
    layer = span
    for step in range(1, max_step + 1):
        if np.linalg.matrix_rank(span, tol=1e-10) == dim:
            return step
        # brackets of horizontal generators with the previous layer
        new = np.einsum("abc,bi,cj->aij", model.c, np.eye(dim)[:, :n], layer).reshape(dim, -1)
        if new.size == 0:
            return None
        layer = new
        span = np.hstack([span, new])
    return None


def chart_bracket_residual(model: FoliationModel, rng: np.random.Generator, samples: int = 5) -> float:
    """Max difference between brackets of the realised fields and c at random points."""
    worst = 0.0
    for _ in range(samples):
        p = model.sample_point(rng)
        A = model.chart.frame_jets(p, 1)      # A[a, mu]
        dA = np.stack([A.diff(mu).value for mu in range(model.dim)], axis=-1)  # [a, mu, nu] = d_nu A[a,mu]
        a0 = A.value
        # [e_a, e_b]^mu = e_a(A[b,mu]) - e_b(A[a,mu])
        br = np.einsum("an,bmn->abm", a0, dA) - np.einsum("bn,amn->abm", a0, dA)
        expected = np.einsum("kab,km->abm", model.c, a0)
        worst = max(worst, float(np.max(np.abs(br - expected))))
    return worst


def yang_mills_residual(model: FoliationModel) -> float:
    """max_Y |sum_i (nabla_{X_i} T)(X_i, Y)| with the Bott connection."""
    n = model.n
    g = bott_connection(model).gamma
    T = torsion_and_j(model).torsion          # [l, i, j]
    gHH = g[:n, :n, :n]                       # [d, a, b] horizontal
    gV = g[n:, :n, n:]                        # [k, a, l]: Z_k part of nabla_{X_a} Z_l
    # (nabla_a T)(b, c)^k = sum_l T[l,b,c] gV[k,a,l] - sum_d gHH[d,a,b] T[k,d,c] - sum_d gHH[d,a,c] T[k,b,d]
    term1 = np.einsum("lbc,kal->kabc", T, gV)
    term2 = np.einsum("dab,kdc->kabc", gHH, T)
    term3 = np.einsum("dac,kbd->kabc", gHH, T)
    nablaT = term1 - term2 - term3
    div = np.einsum("kiic->kc", nablaT)
    return float(np.max(np.abs(div), initial=0.0))


def validate_structure(model: FoliationModel, seed: int = 0) -> ValidationReport:
    c = model.c
    H, V = model.horizontal, model.vertical
    checks = {}

    def add(name, residual, passed=None, **extra):
        ok = residual < ALGEBRAIC_TOL if passed is None else passed
        checks[name] = {"passed": bool(ok), "residual": float(residual), **extra}

    add("antisymmetry", np.max(np.abs(c + np.transpose(c, (0, 2, 1))), initial=0.0))
    add("jacobi", np.max(np.abs(jacobi_tensor(c)), initial=0.0))
    add("vertical_integrability", np.max(np.abs(c[H, V, V]), initial=0.0))
    step = bracket_generating_step(model)
    checks["bracket_generating"] = {"passed": step is not None, "step": step}
    D = koszul(c)
    add("totally_geodesic_leaves", np.max(np.abs(D[H, V, V]), initial=0.0))
    lie = c[H, V, H] + np.transpose(c[H, V, H], (2, 1, 0))
    add("bundle_like", np.max(np.abs(lie), initial=0.0))
    add("yang_mills", yang_mills_residual(model))
    add("unimodular", np.max(np.abs(np.einsum("aab->b", c)), initial=0.0))
    bott = bott_connection(model)
    add("bott_metric", max(metric_residual(bott, 1.0 / frame_scale(model, e) ** 2)
                           for e in (0.25, 0.5, 1.0, 2.0, 4.0)))
    if model.chart is not None:
        res = chart_bracket_residual(model, np.random.default_rng(seed))
        add("chart_consistency", res, res < 1e-10)
    return ValidationReport(model.name, checks)

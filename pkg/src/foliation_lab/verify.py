"""Inequality harness: signed margins of the curvature and semigroup bounds.

Every margin is ``RHS - LHS`` of a "<=" statement, so a nonnegative margin
means the bound holds.  Semigroup checks run on the Heisenberg nilmanifold
grid with discrete horizontal gradients taken on the generator's stencils;
a theorem-backed check passes when its minimum margin is at least
``-tau(N)`` with ``tau(N) = C / N`` and ``C`` frozen per check in
``TOLERANCE_C``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import calculus, heat, metrics, models
from .jets import jet_space

# Calibrated once on N = 12, 16, 24 with eps = 1 and frozen.  Every margin
# with the sharp constants came out nonnegative, so C only has to stay below
# the canary: with kappa halved, the extremal field at t = 0.001 sits near
# -1.2e-4 for N >= 12, which is under -10 C / N for C = 5e-5.
TOLERANCE_C = {
    "gradient": 5e-5,
    "gradient_log": 5e-5,
    "gradient_sup": 5e-5,
    "reverse_log_sobolev": 5e-5,
    "reverse_poincare": 5e-5,
    "reverse_sup": 5e-5,
    "wang_harnack": 5e-5,
    "log_harnack": 5e-5,
    "kernel_bound": 5e-5,
    "kernel_bound_strong": 5e-5,
    "entropy_wasserstein": 5e-5,
}

DESCRIPTIONS = {
    "ricci_formula": "Ricci of the canonical variation vs curvature formulas",
    "bochner": "Bochner identities for Gamma_2 split",
    "t2": "horizontal T2 curvature bound",
    "cd": "generalized curvature-dimension inequality",
    "cd_classical": "nu = 0 gap vs classical Gamma_2 assembly",
    "gradient": "squared horizontal gradient bound",
    "gradient_log": "logarithmic horizontal gradient bound",
    "gradient_sup": "sup-norm horizontal gradient bound",
    "reverse_log_sobolev": "reverse log-Sobolev inequality",
    "reverse_poincare": "reverse Poincare inequality",
    "reverse_sup": "sup-norm regularisation bound",
    "wang_harnack": "Wang dimension-free Harnack inequality",
    "wang_harnack_jensen": "Wang-Harnack at x = y (Jensen case)",
    "log_harnack": "log-Harnack inequality",
    "log_harnack_jensen": "log-Harnack at x = y (Jensen case)",
    "kernel_bound": "heat kernel lower bound (time-halved log-Harnack)",
    "kernel_bound_strong": "heat kernel lower bound with the doubled exponent",
    "kernel_diagonal": "heat kernel on the diagonal is at least 1",
    "poincare": "Poincare inequality from positive curvature",
    "entropy_wasserstein": "entropy bound by the 2-Wasserstein distance",
    "entropy_wasserstein_self": "entropy-Wasserstein with g = P_t f",
    "lsi": "log-Sobolev constant estimate",
    "gradient_refinement": "squared gradient bound across grid refinement",
    "wang_harnack_refinement": "Wang-Harnack across grid refinement",
    "log_harnack_refinement": "log-Harnack across grid refinement",
}


def tau(check: str, N: int, constants: dict | None = None) -> float:
    table = {**TOLERANCE_C, **(constants or {})}
    return table[check] / N


# ---------------------------------------------------------------------------
# rate constants


def _x_over_expm1(x: float) -> float:
    """``x / (e^x - 1)`` with its value 1 at 0."""
    if x == 0:
        return 1.0
    if x > 0:
        return x * math.exp(-x) / -math.expm1(-x)
    return x / math.expm1(x)


@dataclass(frozen=True)
class RateConstant:
    """Time factors built from ``rho_tilde = rho1 - kappa/eps``."""

    rho_tilde: float

    def decay(self, t: float) -> float:
        return math.exp(-2 * self.rho_tilde * t)

    def decay_sup(self, t: float) -> float:
        return math.exp(-self.rho_tilde * t)

    def harnack(self, t: float) -> float:
        """``2 r / (e^{2 r t} - 1)``, limit ``1/t``."""
        _positive_time(t)
        return _x_over_expm1(2 * self.rho_tilde * t) / t

    def reverse_poincare(self, t: float) -> float:
        """``r / (e^{2 r t} - 1)``, limit ``1/(2t)``."""
        return 0.5 * self.harnack(t)

    def kernel_halved(self, t: float) -> float:
        """``2 r / (e^{r t} - 1)``, limit ``2/t``."""
        _positive_time(t)
        return 2 * _x_over_expm1(self.rho_tilde * t) / t


def _positive_time(t):
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")


def rate_constant(model, eps: float, consts=None) -> RateConstant:
    consts = consts or models.extract_constants(model)
    return RateConstant(consts.rho_tilde(eps))


def mutate_constants(consts: models.CurvatureConstants, kappa_factor: float = 0.5):
    """A deliberately wrong constant set for the sensitivity canary."""
    return dataclasses.replace(consts, kappa=consts.kappa * kappa_factor)


# ---------------------------------------------------------------------------
# reports


@dataclass
class CheckReport:
    check: str
    params: dict
    samples: int
    min_margin: float
    tolerance: float
    theorem_backed: bool = True
    applicable: bool = True
    margins: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    trend: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        if not self.applicable:
            return "NOT-APPLICABLE"
        return "PASS" if self.min_margin >= -self.tolerance else "FAIL"

    @property
    def failed(self) -> bool:
        return self.theorem_backed and self.status == "FAIL"

    @property
    def description(self) -> str:
        return DESCRIPTIONS.get(self.check, self.check)

    def to_dict(self) -> dict:
        m = np.asarray(self.margins, dtype=float)
        summary = {}
        if m.size:
            summary = {"count": int(m.size), "min": float(m.min()), "max": float(m.max()),
                       "median": float(np.median(m))}
        return _jsonable({
            "check": self.check, "description": self.description, "params": self.params,
            "samples": self.samples, "min_margin": self.min_margin, "tolerance": self.tolerance,
            "status": self.status, "theorem_backed": self.theorem_backed,
            "margin_summary": summary, "trend": self.trend, "details": self.details,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _report(check, params, margins, tol, **kw) -> CheckReport:
    margins = np.asarray(margins, dtype=float).ravel()
    if margins.size == 0:
        raise ValueError(f"{check}: no margins to report")
    return CheckReport(check, params, int(margins.size), float(margins.min()), float(tol),
                       margins=margins, **kw)


# ---------------------------------------------------------------------------
# pointwise checks


def check_ricci_formula(model, eps_list, tol: float = 1e-10) -> CheckReport:
    res = np.array([models.ricci_formula_residual(model, e) for e in eps_list])
    return _report("ricci_formula", {"model": model.name, "eps": list(eps_list)}, -res, tol,
                   details={"max_residual": float(res.max())})


def check_pointwise(model, eps_list, nu_list, samples: int, seed: int, consts=None,
                    extremal_points: int = 0, tol: float = 1e-9,
                    classical_tol: float = 1e-12) -> list[CheckReport]:
    """Bochner residuals, T2 and CD gaps, and the classical-form agreement."""
    study = calculus.pointwise_study(model, eps_list, nu_list, samples, seed, consts,
                                     extremal_points=extremal_points)
    rows = study["rows"]
    params = {"model": model.name, "eps": list(eps_list), "nu": [str(n) for n in nu_list],
              "samples": samples, "seed": seed, "extremal_points": extremal_points,
              "constants": study["constants"]}

    def collect(*keys):
        return np.array([r[k] for r in rows for k in keys if k in r], dtype=float)

    reports = []
    res = np.concatenate([collect("rH"), collect("rV")])
    reports.append(_report("bochner", params, -res, tol, details={"max_residual": float(res.max())}))
    for name, keys in (("t2", ("t2_gap", "t2_extremal")), ("cd", ("cd_gap", "cd_extremal"))):
        vals = collect(*keys)
        if vals.size:
            reports.append(_report(name, params, vals, tol, details={
                "min_random": float(collect(keys[0]).min()),
                "min_extremal": float(collect(keys[1]).min()) if collect(keys[1]).size else None}))
    diffs = [abs(r["cd_gap"] - r["classical_gap"]) / r["scale"] for r in rows if "classical_gap" in r]
    if diffs:
        absd = [abs(r["cd_gap"] - r["classical_gap"]) for r in rows if "classical_gap" in r]
        reports.append(_report("cd_classical", params, -np.array(diffs), classical_tol,
                               details={"max_abs_diff": float(max(absd)),
                                        "max_rel_diff": float(max(diffs))}))
    return reports


# ---------------------------------------------------------------------------
# test-function ensembles


def _theta(x, y, z, width, freq, phase, terms=6):
    """Sum over translates making a z-frequency compatible with the x-wrap twist."""
    out = np.zeros(np.broadcast(x, y, z).shape)
    for m in range(-terms, terms + 1):
        out += np.exp(-width * (x + m) ** 2) * np.cos(2 * np.pi * freq * (z + m * y) + phase)
    return out


def positive_fields(grid: heat.NilGrid, count: int, seed: int, amplitude: float = 0.5) -> np.ndarray:
    """``count`` fields ``1 + a * mix`` with ``max|mix| = 1`` and ``a <= amplitude``.

    The mix combines low torus modes in ``(x, y)`` and twisted theta modes
    with unit z-frequency, all of which descend to the nilmanifold.
    Returns an array of shape ``(grid.size, count)``.
    """
    if count < 1:
        raise ValueError("need at least one field")
    if not 0 < amplitude <= 0.5:
        raise ValueError(f"amplitude must lie in (0, 0.5], got {amplitude}")
    rng = np.random.default_rng(seed)
    x, y, z = grid.coordinates()
    out = np.empty((grid.size, count))
    for c in range(count):
        mix = np.zeros_like(x)
        for _ in range(3):
            p, q = rng.integers(-2, 3, 2)
            mix += rng.normal() * np.cos(2 * np.pi * (p * x + q * y) + rng.uniform(0, 2 * np.pi))
        for _ in range(2):
            mix += rng.normal() * _theta(x, y, z, rng.uniform(2, 6), 1, rng.uniform(0, 2 * np.pi))
        mix /= np.max(np.abs(mix))
        out[:, c] = (1 + amplitude * rng.uniform(0.2, 1.0) * mix).ravel()
    return out


def _plateau(r, inner, outer):
    """Smooth radial cutoff: 1 for ``r <= inner``, 0 for ``r >= outer``."""
    s = np.clip((outer - r) / (outer - inner), 0.0, 1.0)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1 - s, 1.0)), 0.0)
    return a / (a + b)


def extremal_field(grid: heat.NilGrid, model, eps: float, consts, amplitude: float = 0.5,
                   center=(0.5, 0.5, 0.5), plateau=(0.3, 0.48)) -> np.ndarray:
    """Positive field whose jet at ``center`` minimises the T2 gap for ``consts``.

    The minimising jet is a cubic polynomial; it is multiplied by a smooth
    plateau supported inside the fundamental domain, so the field descends
    to the quotient and agrees with the polynomial near ``center``.
    """
    center = np.asarray(center, dtype=float)
    _, v = calculus.extremal_gap(model, center, lambda pc: pc.t2_gap(eps, consts))
    space = jet_space(model.dim, calculus.JET_ORDER)
    basis = [a for a in space.monomials if 1 <= sum(a) <= calculus.JET_ORDER]
    x, y, z = grid.coordinates()
    d = np.stack([x, y, z]) - center[:, None, None, None]
    q = sum(c * np.prod([d[i] ** a[i] for i in range(3)], axis=0) for a, c in zip(basis, v))
    bump = _plateau(np.sqrt(np.sum(d ** 2, axis=0)), *plateau)
    f = 1 + amplitude * bump * q
    if f.min() <= 0:
        raise ValueError("amplitude too large: field not positive")
    return f.ravel()


def sample_pairs(grid: heat.NilGrid, count: int, seed: int, per_source: int = 5, near: int = 3):
    """``count`` distinct-point pairs sharing ``ceil(count / per_source)`` sources.

    Of each source's targets, ``near`` are offset by at most two grid steps
    per axis (where the distance penalty is weakest) and the rest are uniform.
    """
    if not 0 <= near <= per_source:
        raise ValueError("need 0 <= near <= per_source")
    rng = np.random.default_rng(seed)
    sources = rng.choice(grid.size, size=math.ceil(count / per_source), replace=False)
    offsets = [o for o in np.ndindex(5, 5, 5) if o != (2, 2, 2)]
    pairs = []
    for s in sources:
        i, j, k = (int(a) for a in grid.unravel(s))
        chosen = rng.choice(len(offsets), size=near, replace=False)
        targets = {int(grid.index(*grid.reduce(i + a - 2, j + b - 2, k + c - 2)))
                   for a, b, c in (offsets[n] for n in chosen)}
        while len(targets) < per_source:
            o = int(rng.integers(grid.size))
            if o != s:
                targets.add(o)
        pairs.extend((int(s), o) for o in sorted(targets))
    return pairs[:count]


# ---------------------------------------------------------------------------
# semigroup checks


def _generator(model, grid, eps):
    if model.quotient is None:
        raise models.ModelError(f"semigroup checks need a compact quotient; {model.name!r} has none")
    return heat.generator_for(grid, eps)


def _fset(fset, grid, positive: bool):
    F = np.asarray(fset, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.size == 0 or F.shape[1] == 0:
        raise ValueError("fset is empty")
    if F.shape[0] != grid.size:
        raise ValueError(f"fields have {F.shape[0]} values, grid has {grid.size}")
    if positive and F.min() <= 0:
        raise ValueError("fields must be strictly positive")
    return F


def _params(model, grid, eps, t, **extra):
    return {"model": model.name, "N": grid.N, "eps": eps, "t": t, **extra}


def check_gradient_bounds(model, grid, eps, t, fset, consts=None, tol_constants=None) -> list[CheckReport]:
    """Squared, logarithmic and sup-norm gradient bounds, pointwise on the grid."""
    gen = _generator(model, grid, eps)
    F = _fset(fset, grid, positive=True)
    rate = rate_constant(model, eps, consts)
    k = F.shape[1]
    grad_sq = gen.grad_sq(F)
    P = heat.propagate(gen, np.hstack([F, grad_sq, grad_sq / F]), t)
    PF, P_grad, P_log = P[:, :k], P[:, k:2 * k], P[:, 2 * k:]
    lhs = gen.grad_sq(PF)
    params = _params(model, grid, eps, t, fields=k, rho_tilde=rate.rho_tilde)
    sup_lhs = np.sqrt(lhs.max(axis=0))
    sup_rhs = rate.decay_sup(t) * np.sqrt(grad_sq.max(axis=0))
    return [
        _report("gradient", params, rate.decay(t) * P_grad - lhs, tau("gradient", grid.N, tol_constants)),
        _report("gradient_log", params, rate.decay(t) * P_log - lhs / PF,
                tau("gradient_log", grid.N, tol_constants)),
        _report("gradient_sup", params, sup_rhs - sup_lhs, tau("gradient_sup", grid.N, tol_constants)),
    ]


def check_reverse_inequalities(model, grid, eps, t, fset, consts=None, tol_constants=None) -> list[CheckReport]:
    """Reverse log-Sobolev, reverse Poincare and the sup-norm regularisation bound."""
    _positive_time(t)
    gen = _generator(model, grid, eps)
    F = _fset(fset, grid, positive=True)
    rate = rate_constant(model, eps, consts)
    k = F.shape[1]
    P = heat.propagate(gen, np.hstack([F, F * np.log(F), F ** 2]), t)
    PF, P_flogf, P_sq = P[:, :k], P[:, k:2 * k], P[:, 2 * k:]
    grad = gen.grad_sq(PF)
    params = _params(model, grid, eps, t, fields=k, rho_tilde=rate.rho_tilde)
    ent = P_flogf - PF * np.log(PF)
    var = P_sq - PF ** 2
    sup_rhs = math.sqrt(rate.reverse_poincare(t)) * np.abs(F).max(axis=0)
    return [
        _report("reverse_log_sobolev", params, rate.harnack(t) * ent - grad / PF,
                tau("reverse_log_sobolev", grid.N, tol_constants)),
        _report("reverse_poincare", params, rate.reverse_poincare(t) * var - grad,
                tau("reverse_poincare", grid.N, tol_constants)),
        _report("reverse_sup", params, sup_rhs - np.sqrt(grad.max(axis=0)),
                tau("reverse_sup", grid.N, tol_constants)),
    ]


def pair_distances(grid, pairs):
    """Graph distances and rigorous lower bounds for ``(source, target)`` flat indices."""
    pairs = [(int(a), int(b)) for a, b in pairs]
    cache = {}
    d, lower = np.empty(len(pairs)), np.empty(len(pairs))
    for n, (a, b) in enumerate(pairs):
        if a not in cache:
            field = metrics.cc_distance(grid, grid.unravel(a))
            cache[a] = (field.d, field.lower)
        d[n], lower[n] = cache[a][0][b], cache[a][1][b]
    return d, lower


def check_wang_harnack(model, grid, eps, t, alpha, pairs, fset, consts=None,
                       tol_constants=None, distances=None) -> list[CheckReport]:
    """Log-form margins ``ln RHS - ln LHS`` of the Wang inequality.

    The distance is a rigorous lower bound (graph distance envelope and
    planar projection), so the margins are conservative.  Diagonal pairs are reported separately as the Jensen case.
    """
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    gen = _generator(model, grid, eps)
    F = _fset(fset, grid, positive=True)
    rate = rate_constant(model, eps, consts)
    k = F.shape[1]
    P = heat.propagate(gen, np.hstack([F, F ** alpha]), t)
    PF, P_pow = P[:, :k], P[:, k:]
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    d_lower = pair_distances(grid, pairs)[1] if distances is None else np.asarray(distances)
    coef = alpha / (4 * (alpha - 1)) * rate.harnack(t)
    x, y = pairs[:, 0], pairs[:, 1]
    margins = np.log(P_pow[y]) - alpha * np.log(PF[x]) + coef * d_lower[:, None] ** 2
    diag = np.log(P_pow) - alpha * np.log(PF)
    params = _params(model, grid, eps, t, alpha=alpha, fields=k, pairs=len(pairs), rho_tilde=rate.rho_tilde)
    return [
        _report("wang_harnack", params, margins, tau("wang_harnack", grid.N, tol_constants),
                details={"distance": "lower envelope", "exponent_factor": coef}),
        _report("wang_harnack_jensen", params, diag, 0.0),
    ]


def check_log_harnack_and_kernel(model, grid, eps, t, pairs, fset, consts=None,
                                 tol_constants=None, distances=None) -> list[CheckReport]:
    """Log-Harnack margins and the heat kernel lower bounds along the same pairs.

    Two kernel exponents are evaluated: the one obtained by applying
    log-Harnack at time ``t/2`` (theorem-backed), and the stronger variant
    with ``e^{2 r t}`` in place of ``e^{r t}`` (reported only).
    """
    gen = _generator(model, grid, eps)
    F = _fset(fset, grid, positive=True)
    rate = rate_constant(model, eps, consts)
    k = F.shape[1]
    P = heat.propagate(gen, np.hstack([F, np.log(F)]), t)
    PF, P_log = P[:, :k], P[:, k:]
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    d_lower = pair_distances(grid, pairs)[1] if distances is None else np.asarray(distances)
    x, y = pairs[:, 0], pairs[:, 1]
    quarter = 0.25 * rate.harnack(t)
    margins = np.log(PF[y]) - P_log[x] + quarter * d_lower[:, None] ** 2
    diag = np.log(PF) - P_log

    sources = np.unique(x)
    deltas = np.zeros((grid.size, sources.size))
    deltas[sources, np.arange(sources.size)] = 1.0 / grid.cell_volume
    kernels = heat.propagate(gen, deltas, t)
    col = {s: c for c, s in enumerate(sources)}
    p_xy = np.array([kernels[b, col[a]] for a, b in pairs])
    p_xx = kernels[sources, np.arange(sources.size)]
    log_p = np.log(np.maximum(p_xy, np.finfo(float).tiny))
    halved = log_p + 0.25 * rate.kernel_halved(t) * d_lower ** 2
    strong = log_p + quarter * d_lower ** 2
    params = _params(model, grid, eps, t, fields=k, pairs=len(pairs), rho_tilde=rate.rho_tilde)
    return [
        _report("log_harnack", params, margins, tau("log_harnack", grid.N, tol_constants),
                details={"distance": "lower envelope"}),
        _report("log_harnack_jensen", params, diag, 0.0),
        _report("kernel_bound", params, halved, tau("kernel_bound", grid.N, tol_constants),
                details={"exponent": "2r/(e^{rt}-1)", "min_kernel": float(p_xy.min())}),
        _report("kernel_bound_strong", params, strong, tau("kernel_bound_strong", grid.N, tol_constants),
                theorem_backed=False, details={"exponent": "2r/(e^{2rt}-1)"}),
        _report("kernel_diagonal", params, np.log(p_xx), 0.0),
    ]


def check_poincare(model, eps, grid=None, consts=None, jmax: float = 6) -> CheckReport:
    """Spectral gap against ``rho_tilde`` when it is positive.

    SU(2) uses the closed-form spectrum; other models need a grid.
    """
    rate = rate_constant(model, eps, consts)
    if model.name == "su2":
        gap, source = heat.su2_gap(eps, jmax), "closed form"
    elif grid is not None:
        gap, source = heat.spectral_gap(_generator(model, grid, eps)).gap, f"grid N={grid.N}"
    else:
        raise ValueError(f"no spectrum available for {model.name!r} without a grid")
    applicable = rate.rho_tilde > 0
    params = {"model": model.name, "eps": eps, "rho_tilde": rate.rho_tilde}
    if grid is not None:
        params["N"] = grid.N
    return _report("poincare", params, [gap - max(rate.rho_tilde, 0.0)], 0.0,
                   applicable=applicable,
                   details={"spectral_gap": gap, "source": source,
                            "hypothesis": "rho1 - kappa/eps > 0",
                            "note": "" if applicable else "hypothesis not met"})


def entropy(values) -> float:
    """``Ent(h) = mean(h ln h) - mean(h) ln mean(h)`` for the normalised volume."""
    h = np.asarray(values, dtype=float)
    if h.min() < 0:
        raise ValueError("entropy needs a nonnegative function")
    logs = np.where(h > 0, np.log(np.where(h > 0, h, 1.0)), 0.0)
    mean = h.mean()
    return float(np.mean(h * logs) - mean * math.log(mean))


def check_entropy_wasserstein(model, grid, eps, t, pairs_fg, consts=None,
                              tol_constants=None, distances=None) -> list[CheckReport]:
    """``Ent(P_t f) <= Ent(g) + 1/2 r/(e^{2rt}-1) W^2(g mu, f mu)`` for each ``(f, g)``.

    Transport uses rigorous lower bounds for the distance.  The
    self-coupling ``g = P_t f`` is reported separately.
    """
    _positive_time(t)
    gen = _generator(model, grid, eps)
    rate = rate_constant(model, eps, consts)
    if distances is None:
        distances = metrics.lower_distance_matrix(grid)
    coef = 0.5 * rate.reverse_poincare(t)
    margins, self_margins, w2s = [], [], []
    for f, g in pairs_fg:
        f, g = np.asarray(f, dtype=float), np.asarray(g, dtype=float)
        for name, h in (("f", f), ("g", g)):
            if h.min() < 0:
                raise ValueError(f"{name} must be nonnegative")
            if abs(h.mean() - 1.0) > 1e-10:
                raise ValueError(f"{name} must have unit mass for the normalised volume")
        Pf = heat.propagate(gen, f, t)
        w2 = metrics.optimal_transport(distances, g / grid.size, f / grid.size).cost
        margins.append(entropy(g) + coef * w2 - entropy(Pf))
        w2_self = metrics.optimal_transport(distances, Pf / Pf.sum(), f / f.sum()).cost
        self_margins.append(coef * w2_self)
        w2s.append(w2)
    params = _params(model, grid, eps, t, pairs=len(margins), rho_tilde=rate.rho_tilde)
    return [
        _report("entropy_wasserstein", params, margins, tau("entropy_wasserstein", grid.N, tol_constants),
                details={"distance": "lower envelope", "w2": w2s}),
        _report("entropy_wasserstein_self", params, self_margins, 0.0),
    ]


def unit_mass_fields(grid, count, seed, amplitude=0.5):
    F = positive_fields(grid, count, seed, amplitude)
    return F / F.mean(axis=0)


def estimate_lsi_constant(model, grid, eps, fset, perturbation: float = 1e-3) -> CheckReport:
    """``C_hat = max Ent(f^2) / E(f)`` over ``fset`` plus first-eigenvector perturbations.

    The perturbations ``1 +- delta v1`` make the ratio approach ``2/lambda_1``,
    so ``C_hat >= 2/lambda_1`` (the Poincare consequence of log-Sobolev)
    up to ``O(delta^2)``.  The margin reported is ``C_hat / (2/lambda_1) - 1``.
    """
    gen = _generator(model, grid, eps)
    F = np.asarray(fset, dtype=float)
    F = F[:, None] if F.ndim == 1 else F
    gap = heat.spectral_gap(gen)
    v = gap.vector / np.sqrt(np.mean(gap.vector ** 2))
    candidates = [F[:, c] for c in range(F.shape[1])]
    candidates += [1 + perturbation * v, 1 - perturbation * v]
    ratios, excluded = [], 0
    for f in candidates:
        energy = gen.dirichlet(f)
        ent = entropy(f ** 2)
        if energy <= 1e-14 * np.mean(f ** 2) * gen.diag_max():
            excluded += 1
            continue
        ratios.append(ent / energy)
    c_hat = max(ratios)
    comparison = 2.0 / gap.gap
    params = {"model": model.name, "N": grid.N, "eps": eps, "fields": F.shape[1]}
    return _report("lsi", params, [c_hat / comparison - 1.0], 1e-4,
                   details={"c_hat": c_hat, "poincare_comparison": comparison,
                            "spectral_gap": gap.gap, "excluded": excluded,
                            "finite": bool(np.isfinite(c_hat)),
                            "best_random": max(ratios[:-2]) if len(ratios) > 2 else None})


# ---------------------------------------------------------------------------
# refinement


SEMIGROUP_CHECKS = {
    "gradient": check_gradient_bounds,
    "gradient_log": check_gradient_bounds,
    "gradient_sup": check_gradient_bounds,
    "reverse_log_sobolev": check_reverse_inequalities,
    "reverse_poincare": check_reverse_inequalities,
    "reverse_sup": check_reverse_inequalities,
}


def refinement_study(check_id: str, Ns, params: dict) -> CheckReport:
    """Minimum margins of one check across grids.

    ``params``: ``model``, ``eps``, ``t``, ``fields``, ``seed`` and optionally
    ``consts``, ``alpha``, ``pairs``, ``field_kind`` (``random`` or
    ``extremal``) and ``tol_constants``.  Each grid must satisfy its own
    ``tau(N)``; ``details['nondecreasing']`` records whether the minimum
    margin never decreases with N, and ``details['improving']`` whether its
    negative part never grows.
    """
    Ns = [int(n) for n in Ns]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("Ns must be increasing")
    model = params["model"]
    model = models.load_model(model) if isinstance(model, str) else model
    eps, t = float(params["eps"]), float(params["t"])
    consts = params.get("consts")
    tol_constants = params.get("tol_constants")
    trend, worst, all_margins = {}, math.inf, []
    for N in Ns:
        grid = heat.build_grid(N)
        F = _study_fields(grid, model, eps, params)
        if check_id in SEMIGROUP_CHECKS:
            reports = SEMIGROUP_CHECKS[check_id](model, grid, eps, t, F, consts, tol_constants)
        elif check_id == "wang_harnack":
            pairs = sample_pairs(grid, params.get("pairs", 50), params.get("seed", 0))
            reports = check_wang_harnack(model, grid, eps, t, params.get("alpha", 2.0), pairs, F,
                                         consts, tol_constants)
        elif check_id == "log_harnack":
            pairs = sample_pairs(grid, params.get("pairs", 50), params.get("seed", 0))
            reports = check_log_harnack_and_kernel(model, grid, eps, t, pairs, F, consts, tol_constants)
        else:
            raise ValueError(f"no refinement study for {check_id!r}")
        rep = next(r for r in reports if r.check == check_id)
        trend[N] = {"min_margin": rep.min_margin, "tolerance": rep.tolerance, "status": rep.status}
        worst = min(worst, rep.min_margin + rep.tolerance)
        all_margins.append(rep.margins)
    mins = [trend[N]["min_margin"] for N in Ns]
    details = {
        "nondecreasing": all(b >= a for a, b in zip(mins, mins[1:])),
        "improving": all(min(b, 0.0) >= min(a, 0.0) for a, b in zip(mins, mins[1:])),
    }
    out = {k: v for k, v in params.items() if k not in ("consts", "model", "tol_constants")}
    out.update(model=model.name, Ns=Ns)
    if consts is not None:
        out["constants"] = consts.as_dict()
    # min_margin is relative to each grid's tolerance so that one threshold applies
    return CheckReport(f"{check_id}_refinement", out, int(sum(m.size for m in all_margins)), float(worst), 0.0,
                       margins=np.concatenate(all_margins), trend=trend, details=details)


def _study_fields(grid, model, eps, params):
    kind = params.get("field_kind", "random")
    if kind == "random":
        return positive_fields(grid, params.get("fields", 20), params.get("seed", 0))
    if kind == "extremal":
        consts = params.get("consts") or models.extract_constants(model)
        return extremal_field(grid, model, eps, consts)
    raise ValueError(f"unknown field kind {kind!r}")

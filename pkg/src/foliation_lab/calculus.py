"""Pointwise differential calculus on model foliations.

Everything here is evaluated from Taylor jets of a test function and of the
chart frame, so derivatives are exact up to rounding.  The expensive part
(jets and frame derivatives) depends only on ``(model, f, p)``; it is held by
:class:`PointCalculus`, and every eps- or nu-dependent quantity is cheap
algebra on top of it.

Conventions: ``e_a`` is the g-orthonormal frame of the model, the first
``n`` horizontal.  Hessians use the Bott connection,
``hess[a, b] = e_a(e_b f) - (nabla_{e_a} e_b) f``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models
from .expr import TestFunction, random_test_function
from .jets import Jet, jet_space

JET_ORDER = 3


# ---------------------------------------------------------------------------
# frame operators on jets


def frame_derivative(A: Jet, g: Jet) -> Jet:
    """``e_a g`` for every frame field; result has a new leading axis ``a``.

    ``A[a, mu]`` holds the coordinate components of the frame as jets.
    """
    space = g.space
    if g.order < 1:
        raise ValueError("jet order exhausted")
    order = min(g.order - 1, A.order)
    dg = np.stack([g.coeffs @ space.deriv[mu] for mu in range(space.dim)])
    M = space.size
    outer = np.einsum("amp,m...q->a...pq", A.coeffs, dg)
    c = outer.reshape(outer.shape[:-2] + (M * M,)) @ space.mul_flat
    return Jet(c * space.mask(order), order, space)


def sublaplacian(A: Jet, gamma: np.ndarray, g: Jet, index) -> Jet:
    """Trace of the covariant Hessian of ``g`` over the frame fields in ``index``."""
    eg = frame_derivative(A, g)
    eeg = frame_derivative(A, eg)
    out = None
    for i in index:
        term = eeg[i, i] - _contract(gamma[:, i, i], eg)
        out = term if out is None else out + term
    return out


def _contract(weights, jets: Jet) -> Jet:
    """sum_c weights[c] * jets[c] for a jet vector."""
    return Jet(np.tensordot(weights, jets.coeffs, axes=(0, 0)), jets.order, jets.space)


def _square_sum(jets: Jet, index) -> Jet:
    out = None
    for i in index:
        term = jets[i] * jets[i]
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# operator values


@dataclass
class OperatorValues:
    gradH: np.ndarray
    gradV: np.ndarray
    deltaH: float
    deltaV: float
    deltaEps: float
    gammaEps: float
    hessHH: np.ndarray
    hessVH: np.ndarray
    hessHV: np.ndarray
    hessVV: np.ndarray
    norms: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


class PointCalculus:
    """All eps-independent derivative data of ``f`` at ``p`` on ``model``.

    ``f`` may be a :class:`TestFunction` or a jet at ``p`` directly.  A jet
    with leading axes describes a batch of functions; every method then
    returns an array over the batch instead of a float.
    """

    def __init__(self, model: models.FoliationModel, f, p, order: int = JET_ORDER):
        if model.chart is None:
            raise models.ModelError(f"model {model.name!r} has no chart")
        if order < 3:
            raise ValueError("the second-order operators need jets of order >= 3")
        self.model = model
        self.point = model.chart.check_point(p)
        n, dim = model.n, model.dim
        self.H = list(range(n))
        self.V = list(range(n, dim))
        self.gamma = models.bott_connection(model).gamma

        self.F = f if isinstance(f, Jet) else f.jet(self.point, order)
        self.A = model.chart.frame_jets(self.point, self.F.order)
        self.Ef = frame_derivative(self.A, self.F)                 # order 2
        self.EEf = frame_derivative(self.A, self.Ef)               # order 1, [a, b] = e_a e_b f
        conn = np.einsum("cab,c...->ab...", self.gamma, self.Ef.truncate(1).coeffs)
        self.hess_jet = Jet(self.EEf.coeffs - conn, 1, self.F.space)
        self.lapH = _trace(self.hess_jet, self.H)                  # order 1
        self.lapV = _trace(self.hess_jet, self.V)

        self.grad = self.Ef.value
        self.hess = self.hess_jet.value
        self.grad_lapH = frame_derivative(self.A, self.lapH).value
        self.grad_lapV = frame_derivative(self.A, self.lapV).value

        self.sqH = _square_sum(self.Ef, self.H)                    # ||grad_H f||^2, order 2
        self.sqV = _square_sum(self.Ef, self.V)
        # L_X ||grad_Y f||^2 for X, Y in {H, V}
        self.L = {}
        for X, idx in (("H", self.H), ("V", self.V)):
            for Y, sq in (("H", self.sqH), ("V", self.sqV)):
                self.L[X + Y] = _value(sublaplacian(self.A, self.gamma, sq, idx)) if (sq and idx) else 0.0

    # -- first order data ---------------------------------------------------
    @property
    def gradH(self):
        return self.grad[self.H]

    @property
    def gradV(self):
        return self.grad[self.V]

    def _pairing(self, X: str, Y: str):
        """<grad_Y (Laplacian_X f), grad_Y f>."""
        g = self.grad_lapH if X == "H" else self.grad_lapV
        idx = self.H if Y == "H" else self.V
        return _dot(g[idx], self.grad[idx])

    def piece(self, X: str, Y: str):
        """1/2 L_X ||grad_Y f||^2 - <grad_Y L_X f, grad_Y f>."""
        return 0.5 * self.L[X + Y] - self._pairing(X, Y)

    # -- eps-dependent operators -------------------------------------------
    def operators(self, eps: float) -> OperatorValues:
        h = self.hess
        H, V = self.H, self.V
        blocks = {
            "hessHH": h[np.ix_(H, H)], "hessVH": h[np.ix_(V, H)],
            "hessHV": h[np.ix_(H, V)], "hessVV": h[np.ix_(V, V)],
        }
        dH, dV = _value(self.lapH), _value(self.lapV)
        gH, gV = self.gradH, self.gradV
        norms = {k: float(np.sum(v ** 2)) for k, v in blocks.items()}
        return OperatorValues(
            gradH=gH, gradV=gV, deltaH=dH, deltaV=dV, deltaEps=dH + eps * dV,
            gammaEps=float(gH @ gH + eps * (gV @ gV)), norms=norms, **blocks,
        )

    def gamma2_h(self):
        return self.piece("H", "H")

    def t2(self, eps: float):
        return self.piece("H", "H") + eps * self.piece("V", "H")

    def gamma2v_eps(self, eps: float):
        return self.piece("H", "V") + eps * self.piece("V", "V")

    def gamma2_eps(self, eps: float):
        """Definitional 1/2 L_eps Gamma_eps(f) - Gamma_eps(f, L_eps f), assembled from jets."""
        gam = self.sqH if not self.V else self.sqH + self.sqV * eps
        grad_lap = self.grad_lapH + eps * self.grad_lapV
        weights = np.ones(self.model.dim)
        weights[self.V] = eps
        return 0.5 * self._lap_eps(gam, eps) - _dot(_expand(weights, self.grad) * self.grad, grad_lap)

    def _lap_eps(self, g: Jet, eps: float):
        out = _value(sublaplacian(self.A, self.gamma, g, self.H))
        if eps and self.V:
            out = out + eps * _value(sublaplacian(self.A, self.gamma, g, self.V))
        return out

    def hess_norms(self):
        """Squared Frobenius norms of the VH, HV and VV Hessian blocks."""
        h = self.hess
        H, V = self.H, self.V
        sq = lambda rows, cols: np.sum(h[np.ix_(rows, cols)] ** 2, axis=(0, 1))  # noqa: E731
        return sq(V, H), sq(H, V), sq(V, V)

    def bochner_residuals(self, eps: float):
        """Residuals of the horizontal and vertical Bochner identities.

        The left sides apply the full operator ``L_eps`` to the squared
        gradients; the right sides come from Hessian blocks and the
        leafwise Ricci tensor.
        """
        vh, hv, vv = self.hess_norms()
        grad_lap = self.grad_lapH + eps * self.grad_lapV
        lhs_h = 0.5 * self._lap_eps(self.sqH, eps) - _dot(self.gradH, grad_lap[self.H])
        rhs_h = self.gamma2_h() + eps * vh
        if not self.V:
            return _num(np.abs(lhs_h - rhs_h)), 0.0
        lhs_v = 0.5 * self._lap_eps(self.sqV, eps) - _dot(self.gradV, grad_lap[self.V])
        ricV = models.leaf_ricci(self.model)
        ric_term = np.einsum("l...,lk,k...->...", self.gradV, ricV, self.gradV)
        rhs_v = eps * vv + eps * ric_term + hv
        return _num(np.abs(lhs_h - rhs_h)), _num(np.abs(lhs_v - rhs_v))

    def mixed_hessian_symmetry(self):
        vh, hv, _ = self.hess_norms()
        return _num(np.abs(hv - vh))

    def t2_gap(self, eps: float, consts: models.CurvatureConstants):
        eps = _positive(eps)
        gH = self.gradH
        return _num(self.t2(eps) - (consts.rho1 - consts.kappa / eps) * _dot(gH, gH))

    def cd_sides(self, eps: float, nu: float, consts: models.CurvatureConstants):
        eps, nu = _cd_domain(eps, nu)
        lhs = self.gamma2_eps(eps) + nu * self.gamma2v_eps(eps)
        return _num(lhs), self.cd_rhs(eps, nu, consts)

    def cd_rhs(self, eps: float, nu: float, consts: models.CurvatureConstants):
        dim_c, hor_c, ver_c = cd_coefficients(consts, self.model.n, self.model.m, eps, nu)
        gH, gV = self.gradH, self.gradV
        lap = _value(self.lapH) + eps * _value(self.lapV)
        gamma_eps = _dot(gH, gH) + eps * _dot(gV, gV)
        return _num(dim_c * lap ** 2 + hor_c * gamma_eps + ver_c * _dot(gV, gV))

    def cd_gap(self, eps: float, nu: float, consts: models.CurvatureConstants):
        lhs, rhs = self.cd_sides(eps, nu, consts)
        return lhs - rhs

    def classical_gamma2(self, eps: float):
        """||D^2 f||^2 + Ric_eps(grad f, grad f) with the Levi-Civita connection of g_eps."""
        eps = _positive(eps)
        s = models.frame_scale(self.model, eps)
        gamma = models.levi_civita(self.model, eps).gamma
        grad = _expand(s, self.grad) * self.grad             # components in {X_i, sqrt(eps) Z_l}
        ss = _expand(np.outer(s, s), self.EEf.value)
        hess = ss * self.EEf.value - np.einsum("cab,c...->ab...", gamma, grad)
        ric = models.ricci_epsilon(self.model, eps)
        return _num(np.sum(hess ** 2, axis=(0, 1)) + np.einsum("a...,ab,b...->...", grad, ric, grad))

    def classical_cd_gap(self, eps: float, consts: models.CurvatureConstants):
        return self.classical_gamma2(eps) - self.cd_rhs(eps, 0.0, consts)


def _trace(hess: Jet, idx) -> Jet:
    out = None
    for i in idx:
        out = hess[i, i] if out is None else out + hess[i, i]
    if out is None:
        return Jet.constant(0.0, hess.space, hess.order)
    return out


def _value(j):
    if isinstance(j, Jet):
        return _num(j.value)
    return 0.0 if j is None else _num(j)


def _num(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _dot(a, b):
    """Sum over the leading (frame) axis, keeping any batch axes."""
    return _num(np.sum(a * b, axis=0))


def _expand(w, like):
    """Reshape a frame-indexed array to broadcast against ``like``."""
    return np.reshape(w, np.shape(w) + (1,) * (np.ndim(like) - np.ndim(w)))


def _positive(eps: float) -> float:
    eps = float(eps)
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return eps


def _cd_domain(eps: float, nu: float):
    eps = _positive(eps)
    nu = float(nu)
    if not nu + eps > 0:
        raise ValueError(f"need nu + eps > 0, got eps={eps}, nu={nu}")
    return eps, nu


def cd_coefficients(consts: models.CurvatureConstants, n: int, m: int, eps: float, nu: float):
    """(dimension, Gamma_eps, Gamma^V) coefficients of the generalized CD bound."""
    eps, nu = float(eps), float(nu)
    rho1, kappa, rho2, rho3 = consts.rho1, consts.kappa, consts.rho2, consts.rho3
    dim_c = 1.0 / (n + m * eps / (nu + eps))
    hor_c = rho1 - kappa / (2 * eps + nu)
    ver_c = rho2 - rho1 * eps + kappa * eps / (2 * eps + nu) + rho3 * eps * (nu + eps)
    return dim_c, hor_c, ver_c


# ---------------------------------------------------------------------------
# extremal test functions


def quadratic_form(model, p, evaluate, order: int = JET_ORDER):
    """Matrix of a quadratic functional of ``f`` in the Taylor basis at ``p``.

    Every operator above is a quadratic form in the jet of ``f`` at ``p``
    (constants drop out).  ``evaluate`` maps a batched :class:`PointCalculus`
    to the batch of values; the matrix is recovered by polarisation on the
    monomials ``(x - p)**alpha`` with ``1 <= |alpha| <= order``.
    """
    space = jet_space(model.dim, order)
    basis = [i for i, a in enumerate(space.monomials) if 1 <= sum(a) <= order]
    k = len(basis)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    coeffs = np.zeros((k + len(pairs), space.size))
    for r, i in enumerate(basis):
        coeffs[r, i] = 1.0
    for r, (i, j) in enumerate(pairs, start=k):
        coeffs[r, basis[i]] = coeffs[r, basis[j]] = 1.0
    values = np.asarray(evaluate(PointCalculus(model, Jet(coeffs, order, space), p, order)))
    Q = np.diag(values[:k])
    for r, (i, j) in enumerate(pairs, start=k):
        Q[i, j] = Q[j, i] = 0.5 * (values[r] - values[i] - values[j])
    return Q


def extremal_gap(model, p, evaluate) -> tuple[float, np.ndarray]:
    """Smallest value of a quadratic gap over unit-norm jets at ``p``, and its minimiser.

    This is the exact worst case over all test functions at that point,
    since every jet is realised by a polynomial.
    """
    w, v = np.linalg.eigh(quadratic_form(model, p, evaluate))
    return float(w[0]), v[:, 0]


# ---------------------------------------------------------------------------
# functional API


def jet(f: TestFunction, p, order: int = JET_ORDER) -> Jet:
    return f.jet(p, order)


def operators(model, f, p, eps: float) -> OperatorValues:
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return PointCalculus(model, f, p).operators(eps)


def carre_du_champ(model, f, g, p, eps: float) -> float:
    """Gamma_eps(f, g) = <grad_H f, grad_H g> + eps <grad_V f, grad_V g>."""
    a = PointCalculus(model, f, p).grad
    b = PointCalculus(model, g, p).grad
    w = np.ones(model.dim)
    w[model.vertical] = eps
    return float(np.sum(w * a * b))


def gamma2_h(model, f, p) -> float:
    return PointCalculus(model, f, p).gamma2_h()


def t2(model, f, p, eps: float) -> float:
    return PointCalculus(model, f, p).t2(_positive(eps))


def gamma2_eps(model, f, p, eps: float) -> float:
    return PointCalculus(model, f, p).gamma2_eps(_positive(eps))


def gamma2v_eps(model, f, p, eps: float) -> float:
    return PointCalculus(model, f, p).gamma2v_eps(_positive(eps))


def bochner_residuals(model, f, p, eps: float) -> tuple[float, float]:
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return PointCalculus(model, f, p).bochner_residuals(eps)


def mixed_hessian_symmetry(model, f, p) -> float:
    return PointCalculus(model, f, p).mixed_hessian_symmetry()


def t2_gap(model, f, p, eps: float, consts=None) -> float:
    consts = consts or models.extract_constants(model)
    return PointCalculus(model, f, p).t2_gap(eps, consts)


def cd_gap(model, f, p, eps: float, nu: float, consts=None) -> float:
    consts = consts or models.extract_constants(model)
    return PointCalculus(model, f, p).cd_gap(eps, nu, consts)


# ---------------------------------------------------------------------------
# sampling


def random_samples(model, samples: int, seed: int):
    """Deterministic stream of ``(f, p)`` pairs."""
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        f = random_test_function(rng, model.dim)
        p = model.sample_point(rng)
        yield f, p


def pointwise_study(model, eps_list, nu_list, samples: int, seed: int, consts=None,
                    checks=("bochner", "t2", "cd"), extremal_points: int = 0) -> dict:
    """Residuals and gaps over random samples, summarised per check.

    ``consts`` may be overridden (e.g. a falsified kappa) to exercise the
    harness; by default the sharp constants of ``model`` are used.  With
    ``extremal_points > 0`` the worst-case jet at that many extra random
    points is added for the t2 and cd gaps.
    """
    consts = consts or models.extract_constants(model)
    rows = []
    for k, (f, p) in enumerate(random_samples(model, samples, seed)):
        pc = PointCalculus(model, f, p)
        for eps in eps_list:
            row = {"sample": k, "eps": eps}
            if "bochner" in checks:
                row["rH"], row["rV"] = pc.bochner_residuals(eps)
                row["mixed"] = pc.mixed_hessian_symmetry()
            if "t2" in checks and eps > 0:
                row["t2_gap"] = pc.t2_gap(eps, consts)
            rows.append(row)
            if "cd" in checks and eps > 0:
                for nu in nu_list:
                    nu_val = _resolve_nu(nu, eps)
                    cd = {"sample": k, "eps": eps, "nu": nu_val, "cd_gap": pc.cd_gap(eps, nu_val, consts)}
                    if nu_val == 0:
                        cd["classical_gap"] = pc.classical_cd_gap(eps, consts)
                        cd["scale"] = max(1.0, abs(pc.gamma2_eps(eps)), abs(pc.cd_rhs(eps, 0.0, consts)))
                    rows.append(cd)
    rng = np.random.default_rng([seed, 1])
    for k in range(extremal_points):
        p = model.sample_point(rng)
        for eps in eps_list:
            if eps <= 0:
                continue
            if "t2" in checks:
                gap, _ = extremal_gap(model, p, lambda pc: pc.t2_gap(eps, consts))
                rows.append({"extremal": k, "eps": eps, "t2_extremal": gap})
            if "cd" in checks:
                for nu in nu_list:
                    nu_val = _resolve_nu(nu, eps)
                    gap, _ = extremal_gap(model, p, lambda pc: pc.cd_gap(eps, nu_val, consts))
                    rows.append({"extremal": k, "eps": eps, "nu": nu_val, "cd_extremal": gap})
    return {"model": model.name, "constants": consts.as_dict(), "rows": rows,
            "summary": summarise(rows)}


def _resolve_nu(nu, eps):
    """``nu`` may be a number or a string like ``'-eps/2'``."""
    if isinstance(nu, str):
        text = nu.replace(" ", "")
        table = {"-eps/2": -0.5 * eps, "eps": eps, "-eps": -eps}
        if text in table:
            return table[text]
        return float(text)
    return float(nu)


def summarise(rows) -> dict:
    out = {}
    keys = (("rH", max), ("rV", max), ("mixed", max), ("t2_gap", min), ("cd_gap", min),
            ("t2_extremal", min), ("cd_extremal", min))
    for key, how in keys:
        vals = [r[key] for r in rows if key in r]
        if vals:
            out[("max_" if how is max else "min_") + key] = how(vals)
    diffs = [(abs(r["cd_gap"] - r["classical_gap"]), r["scale"]) for r in rows if "classical_gap" in r]
    if diffs:
        out["max_classical_diff"] = max(d for d, _ in diffs)
        out["max_classical_rel_diff"] = max(d / s for d, s in diffs)
    return out

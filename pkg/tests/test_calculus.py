import dataclasses
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from foliation_lab import calculus, models
from foliation_lab.expr import TestFunction, parse, random_test_function, sin
from foliation_lab.jets import multi_indices

HEIS = models.load_model("heisenberg")
SU2 = models.load_model("su2")
MODELS = {"heisenberg": HEIS, "su2": SU2}


def tf(text):
    return TestFunction(parse(text))


# -- independent oracles -------------------------------------------------


def fd_partial(f, p, alpha, h=1e-3):
    """Central finite differences, one axis at a time (4th-order stencils)."""
    p = np.asarray(p, dtype=float)
    stencils = {
        0: ([0], [1.0]),
        1: ([-2, -1, 1, 2], [1 / 12, -2 / 3, 2 / 3, -1 / 12]),
        2: ([-2, -1, 0, 1, 2], [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]),
    }
    total = 0.0
    offsets = [stencils[k] for k in alpha]
    for s0, w0 in zip(*offsets[0]):
        for s1, w1 in zip(*offsets[1]):
            for s2, w2 in zip(*offsets[2]):
                q = p + h * np.array([s0, s1, s2])
                total += w0 * w1 * w2 * float(f(q))
    return total / h ** sum(alpha)


X, Y, Z_ = sp.symbols("x y z")


def sympy_heisenberg_gamma2(expr, point, eps):
    """Brute-force Gamma_{2,eps} on the Heisenberg chart from raw partials."""
    e1 = lambda g: sp.diff(g, X)  # noqa: E731
    e2 = lambda g: sp.diff(g, Y) + X * sp.diff(g, Z_)  # noqa: E731
    e3 = lambda g: sp.diff(g, Z_)  # noqa: E731
    lap = lambda g: e1(e1(g)) + e2(e2(g)) + eps * e3(e3(g))  # noqa: E731
    gam = lambda a, b: e1(a) * e1(b) + e2(a) * e2(b) + eps * e3(a) * e3(b)  # noqa: E731
    val = sp.Rational(1, 2) * lap(gam(expr, expr)) - gam(expr, lap(expr))
    return float(val.subs({X: point[0], Y: point[1], Z_: point[2]}))


# -- jets ----------------------------------------------------------------


class TestJets:
    def test_product_partials(self):
        j = tf("x*y").jet([1.0, 2.0, 0.0], 2)
        assert j.partial((1, 1, 0)) == 1.0
        assert j.partial((2, 0, 0)) == 0.0

    def test_sine_derivative(self):
        j = tf("sin(2*pi*z)").jet([0.0, 0.0, 0.0], 3)
        assert j.partial((0, 0, 1)) == pytest.approx(2 * math.pi, rel=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_against_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        f = random_test_function(rng)
        p = rng.uniform(-1, 1, 3)
        j = f.jet(p, 3)
        for alpha in multi_indices(3, 2):
            if max(alpha) > 2:
                continue
            exact = float(j.partial(alpha))
            approx = fd_partial(f, p, alpha)
            assert abs(exact - approx) <= 1e-6 * max(1.0, abs(exact))

    def test_order_limit(self):
        with pytest.raises(ValueError):
            tf("x").jet([0, 0, 0], 5)

    def test_chart_domain(self):
        with pytest.raises(models.ChartDomainError):
            calculus.operators(SU2, tf("x"), [1.0, 1.0, 1.0], 1.0)


# -- operators ------------------------------------------------------------


class TestOperators:
    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    def test_constant(self, name):
        ops = calculus.operators(MODELS[name], tf("3.5"), [0.1, 0.2, 0.3], 1.0)
        assert ops.deltaEps == 0 and ops.gammaEps == 0
        assert not np.any(ops.gradH) and not np.any(ops.hessVH)

    def test_heisenberg_z(self):
        ops = calculus.operators(HEIS, tf("z"), [0.3, -0.7, 0.2], 1.0)
        np.testing.assert_allclose(ops.gradH, [0.0, 0.3])
        np.testing.assert_allclose(ops.gradV, [1.0])

    def test_heisenberg_sublaplacian(self):
        ops = calculus.operators(HEIS, tf("x**2 + y**2"), [0.4, 0.1, -0.5], 1.0)
        assert ops.deltaH == pytest.approx(4.0, abs=1e-14)

    def test_gamma2_h_linear(self):
        assert calculus.gamma2_h(HEIS, tf("x"), [0.2, 0.5, 0.1]) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    @pytest.mark.parametrize("eps", [0.0, 0.3, 2.0])
    def test_operator_invariants(self, name, eps):
        model = MODELS[name]
        rng = np.random.default_rng(11)
        for _ in range(10):
            f = random_test_function(rng)
            ops = calculus.operators(model, f, model.sample_point(rng), eps)
            assert ops.deltaEps == ops.deltaH + eps * ops.deltaV
            assert ops.gammaEps == pytest.approx(ops.gradH @ ops.gradH + eps * ops.gradV @ ops.gradV, rel=1e-15)
            assert ops.gammaEps >= 0

    def test_eps_domain(self):
        with pytest.raises(ValueError):
            calculus.operators(HEIS, tf("x"), [0, 0, 0], -1.0)
        for fn in (calculus.t2, calculus.gamma2_eps, calculus.gamma2v_eps):
            with pytest.raises(ValueError):
                fn(HEIS, tf("x"), [0, 0, 0], 0.0)
        with pytest.raises(ValueError):
            calculus.cd_gap(HEIS, tf("x"), [0, 0, 0], 1.0, -1.0)


class TestGamma2:
    def test_hand_value(self):
        # f = x z: Gamma_eps(f) = z^2 + x^4 + eps x^2 and Delta f = 0, so Gamma_2 = 2 eps at 0
        assert calculus.gamma2_eps(HEIS, tf("x*z"), [0, 0, 0], 1.0) == pytest.approx(2.0, abs=1e-14)

    @pytest.mark.parametrize(
        "text, point, eps",
        [
            ("x*z", (0.0, 0.0, 0.0), 1.0),
            ("x*z", (0.3, -0.2, 0.5), 0.5),
            ("sin(x + 2*z)*y**2", (0.1, 0.7, -0.4), 2.0),
            ("exp(y)*z**3 + x*y*z", (-0.6, 0.2, 0.9), 0.1),
        ],
    )
    def test_sympy_oracle(self, text, point, eps):
        expr = sp.sympify(text.replace("z", "Z_"), locals={"Z_": Z_, "x": X, "y": Y})
        expected = sympy_heisenberg_gamma2(expr, point, eps)
        got = calculus.gamma2_eps(HEIS, tf(text), point, eps)
        assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    def test_constant_zero(self, name):
        model = MODELS[name]
        for fn in (calculus.t2, calculus.gamma2_eps, calculus.gamma2v_eps):
            assert fn(model, tf("2"), [0.1, 0.1, 0.1], 1.0) == 0
        assert calculus.gamma2_h(model, tf("2"), [0.1, 0.1, 0.1]) == 0

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    def test_split(self, name):
        model = MODELS[name]
        for f, p in calculus.random_samples(model, 20, 5):
            pc = calculus.PointCalculus(model, f, p)
            for eps in (0.1, 1.0, 10.0):
                whole = pc.gamma2_eps(eps)
                parts = pc.t2(eps) + eps * pc.gamma2v_eps(eps)
                assert abs(whole - parts) < 1e-9 * max(1.0, abs(whole))

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    def test_gamma2_h_is_t2_at_zero(self, name):
        model = MODELS[name]
        for f, p in calculus.random_samples(model, 20, 6):
            pc = calculus.PointCalculus(model, f, p)
            rh, _ = pc.bochner_residuals(0.0)
            assert rh < 1e-9


# -- identities and inequalities --------------------------------------------


class TestBochner:
    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    @pytest.mark.parametrize("eps", [0.1, 1.0, 10.0])
    def test_residuals(self, name, eps):
        model = MODELS[name]
        worst = 0.0
        for f, p in calculus.random_samples(model, 200, 100):
            worst = max(worst, *calculus.PointCalculus(model, f, p).bochner_residuals(eps))
        assert worst < 1e-9

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    def test_constant(self, name):
        assert calculus.bochner_residuals(MODELS[name], tf("1"), [0.2, 0.2, 0.2], 1.0) == (0.0, 0.0)

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    def test_mixed_hessian(self, name):
        model = MODELS[name]
        for f, p in calculus.random_samples(model, 50, 8):
            assert calculus.mixed_hessian_symmetry(model, f, p) < 1e-9
        assert calculus.mixed_hessian_symmetry(model, tf("4"), [0.0, 0.1, 0.0]) == 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["heisenberg", "su2"]), st.floats(0.0, 20.0))
    def test_residuals_property(self, seed, name, eps):
        model = MODELS[name]
        (f, p), = calculus.random_samples(model, 1, seed)
        rh, rv = calculus.bochner_residuals(model, f, p, eps)
        assert rh < 1e-9 and rv < 1e-9


class TestCalculusProperties:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.0, 5.0))
    def test_linearity(self, seed, a, b, eps):
        rng = np.random.default_rng(seed)
        f, g = random_test_function(rng), random_test_function(rng)
        p = HEIS.sample_point(rng)
        combo = TestFunction(f.expr * a + g.expr * b)
        lf = calculus.operators(HEIS, f, p, eps).deltaEps
        lg = calculus.operators(HEIS, g, p, eps).deltaEps
        lc = calculus.operators(HEIS, combo, p, eps).deltaEps
        assert abs(lc - (a * lf + b * lg)) < 1e-12 * max(1.0, abs(a * lf) + abs(b * lg))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["heisenberg", "su2"]), st.floats(0.01, 5.0))
    def test_cauchy_schwarz(self, seed, name, eps):
        model = MODELS[name]
        rng = np.random.default_rng(seed)
        f, g = random_test_function(rng), random_test_function(rng)
        p = model.sample_point(rng)
        fg = calculus.carre_du_champ(model, f, g, p, eps)
        ff = calculus.carre_du_champ(model, f, f, p, eps)
        gg = calculus.carre_du_champ(model, g, g, p, eps)
        assert ff >= 0
        assert fg ** 2 <= ff * gg + 1e-12 * max(1.0, ff * gg)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["heisenberg", "su2"]), st.floats(0.01, 5.0))
    def test_chain_rule(self, seed, name, eps):
        model = MODELS[name]
        rng = np.random.default_rng(seed)
        f = random_test_function(rng)
        p = model.sample_point(rng)
        sin_f = TestFunction(sin(f.expr))
        lhs = calculus.carre_du_champ(model, sin_f, sin_f, p, eps)
        rhs = math.cos(float(f(p))) ** 2 * calculus.carre_du_champ(model, f, f, p, eps)
        assert abs(lhs - rhs) < 1e-9 * max(1.0, rhs)


class TestCurvatureDimension:
    @pytest.mark.parametrize("name, eps", [("heisenberg", 1.0), ("heisenberg", 0.3), ("su2", 10.0), ("su2", 1.0)])
    def test_t2_gap(self, name, eps):
        model = MODELS[name]
        consts = models.extract_constants(model)
        gaps = [calculus.PointCalculus(model, f, p).t2_gap(eps, consts)
                for f, p in calculus.random_samples(model, 200, 21)]
        assert min(gaps) >= -1e-9

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    @pytest.mark.parametrize("nu", [-0.5, 0.0, 1.0, 10.0])
    def test_cd_gap(self, name, nu):
        model = MODELS[name]
        consts = models.extract_constants(model)
        gaps = [calculus.PointCalculus(model, f, p).cd_gap(1.0, nu, consts)
                for f, p in calculus.random_samples(model, 200, 22)]
        assert min(gaps) >= -1e-9

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    def test_classical_form_at_nu_zero(self, name):
        model = MODELS[name]
        consts = models.extract_constants(model)
        for f, p in calculus.random_samples(model, 50, 23):
            pc = calculus.PointCalculus(model, f, p)
            for eps in (0.5, 1.0, 2.0):
                a = pc.cd_gap(eps, 0.0, consts)
                b = pc.classical_cd_gap(eps, consts)
                scale = max(1.0, abs(pc.gamma2_eps(eps)), abs(pc.cd_rhs(eps, 0.0, consts)))
                assert abs(a - b) <= 1e-12 * scale

    def test_constant_gaps(self):
        for model in MODELS.values():
            assert calculus.t2_gap(model, tf("1"), [0, 0, 0], 1.0) == 0
            assert calculus.cd_gap(model, tf("1"), [0, 0, 0], 1.0, 1.0) == 0

    @pytest.mark.parametrize("nu", [-0.5, 0.0, 1.0, 10.0])
    def test_mutation_detected_by_extremal_jet(self, nu):
        consts = models.extract_constants(HEIS)
        halved = dataclasses.replace(consts, kappa=consts.kappa / 2)
        p = [0.1, -0.3, 0.2]
        sharp, _ = calculus.extremal_gap(HEIS, p, lambda pc: pc.cd_gap(1.0, nu, consts))
        wrong, _ = calculus.extremal_gap(HEIS, p, lambda pc: pc.cd_gap(1.0, nu, halved))
        assert sharp >= -1e-9
        assert wrong < -0.01

    def test_extremal_t2_is_sharp(self):
        # the bound on T2 is attained, so the worst case sits at zero
        consts = models.extract_constants(HEIS)
        worst, _ = calculus.extremal_gap(HEIS, [0.2, 0.1, 0.0], lambda pc: pc.t2_gap(1.0, consts))
        assert abs(worst) < 1e-9

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    def test_quadratic_form_reproduces_values(self, name):
        model = MODELS[name]
        consts = models.extract_constants(model)
        (f, p), = calculus.random_samples(model, 1, 31)
        Q = calculus.quadratic_form(model, p, lambda pc: pc.cd_gap(1.0, 1.0, consts))
        F = f.jet(p, 3)
        q = np.array([F.coeffs[i] for i, a in enumerate(F.space.monomials) if 1 <= sum(a) <= 3])
        direct = calculus.PointCalculus(model, f, p).cd_gap(1.0, 1.0, consts)
        assert q @ Q @ q == pytest.approx(direct, rel=1e-12, abs=1e-12)

    def test_batched_matches_single(self):
        consts = models.extract_constants(SU2)
        samples = list(calculus.random_samples(SU2, 3, 32))
        p = samples[0][1]
        jets = [f.jet(p, 3) for f, _ in samples]
        batch = calculus.PointCalculus(SU2, calculus.Jet(np.stack([j.coeffs for j in jets]), 3, jets[0].space), p)
        got = batch.cd_gap(0.5, 1.0, consts)
        for i, (f, _) in enumerate(samples):
            single = calculus.PointCalculus(SU2, f, p).cd_gap(0.5, 1.0, consts)
            assert got[i] == pytest.approx(single, rel=1e-13, abs=1e-12)

    @pytest.mark.parametrize("name", ["heisenberg", "su2"])
    def test_small_eps_limit(self, name):
        model = MODELS[name]
        c = models.extract_constants(model)
        limit = (1.0 / model.n, c.rho1 - c.kappa / 1.0, c.rho2)
        errors = []
        for k in range(1, 5):
            coef = calculus.cd_coefficients(c, model.n, model.m, 10.0 ** -k, 1.0)
            errors.append(max(abs(a - b) for a, b in zip(coef, limit)))
        assert all(b < a for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 1e-3 * max(1.0, c.kappa)

    def test_nu_strings(self):
        assert calculus._resolve_nu("-eps/2", 2.0) == -1.0
        assert calculus._resolve_nu(3, 2.0) == 3.0

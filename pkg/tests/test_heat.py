import math

import numpy as np
import pytest
import scipy.linalg
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from foliation_lab import heat

X, Y, Z = sp.symbols("x y z")


def theta_mode(width=3.0, terms=6):
    """Smooth quotient-compatible function with nonzero z-frequency."""
    return sum(sp.exp(-width * (X + m) ** 2) * sp.cos(2 * sp.pi * (Z + m * Y))
               for m in range(-terms, terms + 1))


def sympy_laplacian(expr, eps):
    x1 = lambda g: sp.diff(g, X)  # noqa: E731
    x2 = lambda g: sp.diff(g, Y) + X * sp.diff(g, Z)  # noqa: E731
    return x1(x1(expr)) + x2(x2(expr)) + eps * sp.diff(expr, Z, 2)


def lambdified(expr):
    return sp.lambdify((X, Y, Z), expr, "numpy")


@pytest.fixture(scope="module")
def gen8():
    return heat.assemble_generator(heat.build_grid(8), 1.0)


# -- grid ------------------------------------------------------------------


class TestGrid:
    def test_point_count(self):
        assert heat.build_grid(4).size == 64

    @pytest.mark.parametrize("N", [0, 2, 3, 5, 7])
    def test_rejects_small_or_odd(self, N):
        with pytest.raises(ValueError):
            heat.build_grid(N)

    def test_x_step_is_bijection_exhaustive(self):
        g = heat.build_grid(4)
        i, j, k = g.indices()
        fwd = g.index(*g.x_step(i, j, k, +1)).ravel()
        assert sorted(fwd) == list(range(g.size))
        back = g.x_step(*g.unravel(fwd), -1)
        assert np.array_equal(g.index(*back).ravel(), np.arange(g.size))

    def test_wrap_matches_group_law(self):
        # left multiplication by the lattice element (-1, 0, 0)
        g = heat.build_grid(8)
        rng = np.random.default_rng(0)
        for _ in range(50):
            i, j, k = rng.integers(0, 8, 3)
            x, y, z = np.array([i, j, k]) / 8 + np.array([1, 0, 0])
            moved = np.array([x - 1, y, z - y]) * 8
            expected = np.mod(np.rint(moved).astype(int), 8)
            assert tuple(int(a) for a in g.reduce(i + 8, j, k)) == tuple(expected)

    def test_single_traversal_shifts_z_by_y(self):
        g = heat.build_grid(16)
        i, j, k = g.indices()
        pos = (i, j, k)
        for _ in range(g.N):
            pos = g.x_step(*pos, +1)
        assert np.array_equal(pos[0], i)
        assert np.array_equal(pos[2], np.mod(k - j, g.N))

    def test_n_traversals_are_identity(self):
        g = heat.build_grid(16)
        i, j, k = g.indices()
        pos = (i, j, k)
        for _ in range(g.N ** 2):
            pos = g.x_step(*pos, +1)
        for a, b in zip(pos, (i, j, k)):
            assert np.array_equal(a, b)


# -- generator ---------------------------------------------------------------


class TestGenerator:
    @pytest.mark.parametrize("eps", [0.0, 0.1, 0.5, 1.0, 4.0])
    @pytest.mark.parametrize("N", [4, 8, 12])
    def test_matrix_invariants(self, N, eps):
        G = heat.assemble_generator(heat.build_grid(N), eps)
        scale = G.diag_max()
        assert G.row_sum_residual() <= 1e-12 * scale
        assert G.symmetry_residual() == 0.0
        off = G.matrix - heat.sps.diags(G.matrix.diagonal())
        assert off.min() >= 0.0

    def test_constant_is_annihilated(self, gen8):
        assert np.max(np.abs(gen8.apply(np.ones(gen8.size)))) <= 1e-12 * gen8.diag_max()

    def test_eps_zero_is_horizontal_only(self):
        g = heat.build_grid(8)
        G = heat.assemble_generator(g, 0.0)
        assert not np.any(G.vertical_weight)
        assert abs(G.matrix - G.horizontal).max() < 1e-12

    def test_small_eps_clips_weight(self):
        G = heat.assemble_generator(heat.build_grid(8), 0.1)
        assert G.meta["clipped_points"] > 0
        assert G.vertical_weight.min() == 0.0

    def test_vertical_stencil_symbol(self):
        g = heat.build_grid(32)
        G = heat.assemble_generator(g, 1.0)
        f = heat.lift(g, lambda x, y, z: np.sin(2 * np.pi * z))
        mask = np.abs(f) > 1e-3
        symbol = 2 * (math.cos(2 * math.pi * g.h) - 1) / g.h ** 2
        ratio = (G.vertical @ f)[mask] / f[mask]
        assert np.max(np.abs(ratio - symbol)) <= 1e-12 * abs(symbol)

    def test_horizontal_x_mode_symbol(self):
        # functions of x alone are quotient-compatible and see only the x stencil
        g = heat.build_grid(16)
        G = heat.assemble_generator(g, 1.0)
        f = heat.lift(g, lambda x, y, z: np.cos(2 * np.pi * x))
        symbol = 2 * (math.cos(2 * math.pi * g.h) - 1) / g.h ** 2
        assert np.allclose(G.apply(f), symbol * f, atol=1e-10)

    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
    def test_second_order_consistency(self, eps):
        expr = theta_mode()
        fn, lap = lambdified(expr), lambdified(sympy_laplacian(expr, eps))
        errors = []
        for N in (8, 16, 32):
            g = heat.build_grid(N)
            G = heat.assemble_generator(g, eps)
            exact = heat.lift(g, lap)
            errors.append(np.max(np.abs(G.apply(heat.lift(g, fn)) - exact)) / np.max(np.abs(exact)))
        ratios = [errors[0] / errors[1], errors[1] / errors[2]]
        assert all(3.5 < r < 4.5 for r in ratios), errors

    def test_uncompensated_interpolation_is_inconsistent(self):
        expr = theta_mode()
        fn, lap = lambdified(expr), lambdified(sympy_laplacian(expr, 1.0))
        errors = []
        for N in (8, 16, 32):
            g = heat.build_grid(N)
            G = heat.assemble_generator(g, 1.0, compensate=False)
            exact = heat.lift(g, lap)
            errors.append(np.max(np.abs(G.apply(heat.lift(g, fn)) - exact)) / np.max(np.abs(exact)))
        assert errors[-1] > 0.1

    def test_self_adjoint(self, gen8):
        rng = np.random.default_rng(1)
        for _ in range(20):
            f, g = rng.standard_normal((2, gen8.size))
            lhs, rhs = gen8.apply(f) @ g, f @ gen8.apply(g)
            assert abs(lhs - rhs) <= 1e-12 * gen8.diag_max() * np.linalg.norm(f) * np.linalg.norm(g)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.0, 0.5, 1.0, 3.0]))
    def test_dirichlet_form_nonnegative(self, seed, eps):
        G = heat.assemble_generator(heat.build_grid(4), eps)
        f = np.random.default_rng(seed).standard_normal(G.size)
        assert G.dirichlet(f) >= -1e-12 * G.diag_max() * (f @ f) / G.size

    def test_gradient_of_x_mode(self):
        g = heat.build_grid(16)
        G = heat.assemble_generator(g, 1.0)
        f = heat.lift(g, lambda x, y, z: np.sin(2 * np.pi * x))
        x = g.coordinates()[0].ravel()
        expected = math.sin(2 * math.pi * g.h) / g.h * np.cos(2 * np.pi * x)
        grad = G.gradient(f)
        assert np.allclose(grad[:, 0], expected, atol=1e-12)
        assert np.allclose(grad[:, 1], 0.0, atol=1e-12)

    def test_generator_cache_checks_grid(self):
        G = heat.assemble_generator(heat.build_grid(8), 1.0)
        with pytest.raises(ValueError):
            heat.generator_for(heat.build_grid(4), G)


# -- evolution -----------------------------------------------------------------


def expm_oracle(G, t):
    return scipy.linalg.expm(t * G.matrix.toarray())


class TestEvolve:
    @pytest.mark.parametrize("scheme", heat.SCHEMES)
    def test_constant_unchanged(self, gen8, scheme):
        u = heat.evolve(np.full(gen8.size, 3.0), gen8, 0.2, scheme)
        assert np.allclose(u.values, 3.0, atol=1e-12)

    def test_zero_time_is_identity(self, gen8):
        f = np.random.default_rng(0).standard_normal(gen8.size)
        assert np.array_equal(heat.evolve(f, gen8, 0.0).values, f)

    def test_negative_time_rejected(self, gen8):
        with pytest.raises(ValueError):
            heat.evolve(np.ones(gen8.size), gen8, -1.0)

    def test_unknown_scheme(self, gen8):
        with pytest.raises(ValueError):
            heat.evolve(np.ones(gen8.size), gen8, 0.1, "rk4")

    def test_field_and_eps_signature(self):
        g = heat.build_grid(8)
        f = heat.Field(g, np.random.default_rng(0).random(g.size))
        u = heat.evolve(f, 1.0, 0.05)
        assert u.eps == 1.0 and u.t == 0.05

    @pytest.mark.parametrize("scheme", ["chebyshev", "taylor"])
    def test_series_schemes_match_dense_expm(self, gen8, scheme):
        g = gen8.grid
        delta = np.zeros(g.size)
        delta[g.index(3, 5, 1)] = 1 / g.cell_volume
        ref = expm_oracle(gen8, 0.05) @ delta
        u = heat.evolve(delta, gen8, 0.05, scheme).values
        assert np.linalg.norm(u - ref) / np.linalg.norm(ref) < 1e-10

    @pytest.mark.parametrize("scheme", heat.SCHEMES)
    def test_mass_conservation(self, gen8, scheme):
        rng = np.random.default_rng(7)
        h3 = gen8.grid.cell_volume
        fields = rng.standard_normal((100, gen8.size))
        for f in fields[:100 if scheme != "cn" else 25]:
            u = heat.evolve(f, gen8, 0.05, scheme).values
            assert abs(u.sum() - f.sum()) * h3 < 1e-10

    def test_crank_nicolson_second_order(self, gen8):
        f = np.random.default_rng(0).random(gen8.size)
        ref = expm_oracle(gen8, 0.05) @ f
        errs = [np.linalg.norm(heat.evolve(f, gen8, 0.05, "cn", dt=0.05 / n).values - ref)
                for n in (25, 50, 100)]
        for a, b in zip(errs, errs[1:]):
            assert 3.6 < a / b < 4.4

    def test_euler_first_order(self, gen8):
        f = np.random.default_rng(0).random(gen8.size)
        ref = expm_oracle(gen8, 0.05) @ f
        base = 0.9 / gen8.diag_max()
        errs = [np.linalg.norm(heat.evolve(f, gen8, 0.05, "euler", dt=base / n).values - ref)
                for n in (1, 2, 4)]
        for a, b in zip(errs, errs[1:]):
            assert 1.7 < a / b < 2.3

    def test_euler_blowup_detected(self, gen8):
        f = np.random.default_rng(0).standard_normal(gen8.size)
        with pytest.raises(heat.InstabilityError, match="stability bound"):
            heat.evolve(f, gen8, 0.5, "euler", dt=5.0 / gen8.diag_max())

    def test_batched_columns_match_single(self, gen8):
        F = np.random.default_rng(3).random((gen8.size, 4))
        batch = heat.propagate(gen8, F, 0.03)
        for c in range(4):
            assert np.allclose(batch[:, c], heat.propagate(gen8, F[:, c], 0.03), rtol=0, atol=1e-13)

    def test_propagate_shape_check(self, gen8):
        with pytest.raises(ValueError):
            heat.propagate(gen8, np.ones(10), 0.1)

    def test_semigroup_property(self, gen8):
        f = np.random.default_rng(2).random(gen8.size)
        once = heat.evolve(f, gen8, 0.07).values
        twice = heat.evolve(heat.evolve(f, gen8, 0.03).values, gen8, 0.04).values
        assert np.linalg.norm(once - twice) / np.linalg.norm(once) < 1e-8


# -- heat kernel -------------------------------------------------------------


class TestHeatKernel:
    def test_normalised(self):
        g = heat.build_grid(8)
        p = heat.heat_kernel(g, 1.0, 0.02, (0, 0, 0))
        assert abs(p.mass - 1.0) < 1e-10

    def test_symmetric_in_endpoints(self):
        g = heat.build_grid(8)
        a, b = (1, 2, 3), (6, 4, 0)
        pa = heat.heat_kernel(g, 1.0, 0.03, a)
        pb = heat.heat_kernel(g, 1.0, 0.03, b)
        ab, ba = pa.values[g.index(*b)], pb.values[g.index(*a)]
        assert abs(ab - ba) / abs(ab) < 1e-8

    def test_positive_after_spreading(self):
        g = heat.build_grid(8)
        p = heat.heat_kernel(g, 1.0, 0.05, (0, 0, 0))
        assert p.values.min() > 0

    @pytest.mark.parametrize("t", [0.0, -0.1])
    def test_rejects_nonpositive_time(self, t):
        with pytest.raises(ValueError):
            heat.heat_kernel(heat.build_grid(8), 1.0, t, (0, 0, 0))

    def test_converges_to_uniform(self):
        g = heat.build_grid(8)
        p = heat.heat_kernel(g, 1.0, 1.0, (0, 0, 0))
        assert np.allclose(p.values, 1.0, atol=1e-10)


# -- spectra -------------------------------------------------------------------


class TestSpectralGap:
    def test_ring_circulant(self):
        N = 8
        res = heat.spectral_gap(heat.ring_generator(N))
        assert res.gap == pytest.approx(2 * (1 - math.cos(2 * math.pi / N)) * N ** 2, rel=1e-12)

    def test_heisenberg_positive(self):
        res = heat.spectral_gap(heat.build_grid(8), 1.0)
        assert res.gap > 0 and res.residual < 1e-8

    def test_heisenberg_equals_x_mode_symbol(self):
        # the torus modes of (x, y) give the lowest eigenvalue once eps is not tiny
        res = heat.spectral_gap(heat.build_grid(8), 1.0)
        assert res.gap == pytest.approx(2 * (1 - math.cos(math.pi / 4)) * 64, rel=1e-10)

    def test_monotone_in_eps(self):
        g = heat.build_grid(8)
        gaps = [heat.spectral_gap(g, eps).gap for eps in (0.5, 1.0, 2.0)]
        assert gaps[0] <= gaps[1] + 1e-9 <= gaps[2] + 2e-9

    def test_lanczos_agrees_with_dense(self):
        g = heat.build_grid(14)
        G = heat.assemble_generator(g, 0.7)
        res = heat.spectral_gap(G)
        assert res.method == "lanczos"
        dense = np.linalg.eigvalsh(-G.matrix.toarray())
        assert res.gap == pytest.approx(dense[1], rel=1e-8)


class TestSU2Spectrum:
    def test_round_metric_pattern(self):
        spectrum = dict(heat.su2_spectrum(1.0, 3))
        for two_j in range(7):
            j = two_j / 2
            assert spectrum[round(4 * j * (j + 1), 10)] == (two_j + 1) ** 2

    @pytest.mark.parametrize("eps", [0.1, 1.0, 10.0])
    def test_gap_positive(self, eps):
        assert heat.su2_gap(eps) == pytest.approx(min(2 + eps, 8.0))

    def test_jmax_zero(self):
        assert heat.su2_spectrum(0.5, 0) == [(0.0, 1)]

    @pytest.mark.parametrize("eps, jmax", [(0.0, 1), (-1.0, 1), (1.0, 0.3), (1.0, 51)])
    def test_rejects_bad_parameters(self, eps, jmax):
        with pytest.raises(ValueError):
            heat.su2_spectrum(eps, jmax)

    def test_total_multiplicity(self):
        spectrum = heat.su2_spectrum(0.37, 2.5)
        assert sum(m for _, m in spectrum) == sum((d + 1) ** 2 for d in range(6))

    @pytest.mark.parametrize("eps", [0.1, 1.0, 2.5, 10.0])
    @pytest.mark.parametrize("degree", [1, 2, 3, 4])
    def test_matches_quaternion_polynomials(self, eps, degree):
        oracle = heat.su2_polynomial_spectrum(eps, degree)
        closed = [lam for lam, _ in heat.su2_spectrum(eps, degree / 2)]
        for lam in oracle:
            assert min(abs(lam - c) for c in closed) < 1e-9 * max(1.0, lam)
        # every weight of the top spin shows up
        j = degree / 2
        top = {round(4 * (j * (j + 1) + (eps - 1) * (k / 2) ** 2), 8)
               for k in range(-degree, degree + 1, 2)}
        assert top <= set(np.round(oracle, 8))


# -- export ----------------------------------------------------------------------


class TestExport:
    def test_binary_roundtrip(self, tmp_path):
        g = heat.build_grid(4)
        f = heat.Field(g, np.random.default_rng(0).random(g.size), eps=0.5, t=0.25)
        path = tmp_path / "field.bin"
        f.to_binary(path)
        raw = path.read_bytes()
        assert len(raw) == 24 + 8 * g.size
        assert int.from_bytes(raw[:8], "little") == 4
        back = heat.Field.from_binary(path)
        assert back.grid == g and back.eps == 0.5 and back.t == 0.25
        assert np.array_equal(back.values, f.values)

    def test_csv(self, tmp_path):
        g = heat.build_grid(4)
        f = heat.Field(g, np.arange(g.size, dtype=float))
        path = tmp_path / "field.csv"
        f.to_csv(path)
        table = np.loadtxt(path, delimiter=",", skiprows=2)
        assert table.shape == (g.size, 7)
        assert np.array_equal(table[:, 6], f.values)
        assert np.array_equal(g.index(*table[:, :3].astype(int).T), np.arange(g.size))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            heat.Field(heat.build_grid(4), np.full(64, np.nan))

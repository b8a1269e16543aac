"""Operators: diagonal shrinking-sphere drift, quadrature assemblies,
p-Laplace weak form, pointwise nonlinearities."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from evospde.geometry import (
    ConstantProfile,
    McfProfile,
    PullbackMap,
    ReferenceManifold,
    build_metric_family,
)
from evospde.operators import (
    GeneralParabolicProvider,
    McfSphereProvider,
    MovingSurfaceProvider,
    PLaplaceProvider,
    StaticHeatProvider,
    apply_nonlinearity,
    assemble_general_parabolic,
    assemble_mcf_sphere,
    assemble_moving_surface,
    make_parabolic_coefficients,
    nonlinearity,
    p_laplace_pairing,
    pairing_matrix_csv,
    sphere_vh,
    w1p_norm,
)

K = 8
DIM = 2 * K + 1


def circle(grid=0):
    return ReferenceManifold("circle", ambient_n=2, mode_count=K, grid_size=grid)


def mcf_family(T=0.2):
    return build_metric_family(circle(), McfProfile(2), T)


def static_family():
    return build_metric_family(circle(), ConstantProfile(), 1.0)


def quadrature_sphere_pairing(n, t, u_coeffs, v_coeffs, basis, grid=129):
    """Independent weak-form oracle on a dense grid.

    <A u, v> = -1/(1-2nt) int du dv + n^2/(1-2nt) int u v, evaluated with
    raw trigonometric sums, no operator code involved.
    """
    theta = np.arange(grid) * 2 * np.pi / grid
    w = 2 * np.pi / grid

    def eval_and_deriv(c):
        vals = np.full_like(theta, c[0] / math.sqrt(2 * math.pi))
        ders = np.zeros_like(theta)
        for k in range(1, (len(c) - 1) // 2 + 1):
            ck, sk = c[2 * k - 1], c[2 * k]
            vals += (ck * np.cos(k * theta) + sk * np.sin(k * theta)) / math.sqrt(math.pi)
            ders += (-k * ck * np.sin(k * theta) + k * sk * np.cos(k * theta)) / math.sqrt(math.pi)
        return vals, ders

    uu, du = eval_and_deriv(u_coeffs)
    vv, dv = eval_and_deriv(v_coeffs)
    shrink = 1.0 - 2.0 * n * t
    return float(w * (-np.sum(du * dv) / shrink + n**2 / shrink * np.sum(uu * vv)))


class TestMcfSphereAssembly:
    def test_first_mode_against_quadrature(self):
        op = assemble_mcf_sphere(2, 0.0, K)
        assert op.diagonal[1] == pytest.approx(3.0, abs=1e-14)
        e1 = np.eye(DIM)[1]
        oracle = quadrature_sphere_pairing(2, 0.0, e1, e1, None)
        assert op.pairing(e1, e1) == pytest.approx(oracle, abs=1e-10)

    def test_neutral_mode(self):
        for t in (0.0, 0.1, 0.2):
            op = assemble_mcf_sphere(2, t, K)
            assert op.diagonal[3] == 0.0
            assert op.diagonal[4] == 0.0
            e3 = np.eye(DIM)[3]
            oracle = quadrature_sphere_pairing(2, t, e3, e3, None)
            assert abs(oracle) < 1e-10

    def test_constant_mode_at_late_time(self):
        op = assemble_mcf_sphere(2, 0.2, K)
        assert op.diagonal[0] == pytest.approx(20.0, rel=1e-12)
        e0 = np.eye(DIM)[0]
        oracle = quadrature_sphere_pairing(2, 0.2, e0, e0, None)
        assert op.pairing(e0, e0) == pytest.approx(oracle, abs=1e-10)

    def test_collapse_rejected(self):
        with pytest.raises(ValueError):
            assemble_mcf_sphere(2, 0.25, K)

    def test_pairing_symmetric(self):
        op = assemble_mcf_sphere(2, 0.1, K)
        rng = np.random.default_rng(1)
        for _ in range(25):
            u, v = rng.normal(size=DIM), rng.normal(size=DIM)
            assert op.pairing(u, v) == pytest.approx(op.pairing(v, u), abs=1e-12)

    def test_action_matches_diagonal(self):
        op = assemble_mcf_sphere(2, 0.1, K)
        u = np.arange(DIM, dtype=float)
        assert np.array_equal(op.action(u), op.diagonal * u)


class TestMovingSurfaceAssembly:
    def test_static_circle_gives_plain_spectrum(self):
        mf = static_family()
        op = assemble_moving_surface(mf, lambda theta, t: np.zeros_like(theta), 0.3, k1=1.0)
        lam = mf.base.basis.eigenvalues
        assert np.allclose(op.diagonal, -lam, atol=1e-12)
        dense = op.dense_pairing_matrix(DIM)
        assert np.allclose(dense, np.diag(-lam), atol=1e-8)

    def test_matches_sphere_operator(self):
        mf = mcf_family()
        k1 = 4.0 / (1.0 - 0.8)
        ms = assemble_moving_surface(mf, sphere_vh(2), 0.1, k1=k1)
        sph = assemble_mcf_sphere(2, 0.1, K)
        diff = np.abs(ms.dense_action_matrix(DIM) - np.diag(sph.diagonal))
        assert diff.max() <= 1e-8

    def test_constant_vh_constant_mode_pairing(self):
        mf = mcf_family()
        k1 = 2.5
        op = assemble_moving_surface(mf, lambda theta, t: np.full_like(theta, k1), 0.15, k1=k1)
        e0 = np.eye(DIM)[0]
        h_gt_sq = mf.h_g_norm_sq(e0, 0.15)
        assert op.pairing(e0, e0) == pytest.approx(-k1 * h_gt_sq, rel=1e-12)

    def test_quadrature_offdiagonal_small(self):
        mf = mcf_family()
        op = assemble_moving_surface(mf, sphere_vh(2), 0.05, k1=20.0)
        P = op.pairing_matrix
        off = P - np.diag(np.diag(P))
        assert np.abs(off).max() <= 1e-8

    def test_action_pairing_consistency(self):
        # <action(u), v> in the weighted product equals the assembled form
        mf = mcf_family()
        vh = lambda theta, t: -4.0 / (1.0 - 4.0 * t) * (1.0 + 0.1 * np.cos(theta))
        op = assemble_moving_surface(mf, vh, 0.1, k1=25.0)
        rng = np.random.default_rng(2)
        for _ in range(20):
            u, v = rng.normal(size=DIM), rng.normal(size=DIM)
            lhs = mf.sqrt_det(0.1) * float(op.action(u) @ v)
            assert lhs == pytest.approx(op.pairing(u, v), rel=1e-8, abs=1e-10)

    def test_vh_bound_enforced(self):
        mf = mcf_family()
        with pytest.raises(ValueError, match="k1"):
            assemble_moving_surface(mf, sphere_vh(2), 0.2, k1=1.0)


class TestGeneralParabolicAssembly:
    def setup_method(self):
        self.mf = mcf_family()
        self.pmap = PullbackMap(self.mf)
        self.static_pmap = PullbackMap(static_family())

    def test_reduction_to_laplacian(self):
        coef = make_parabolic_coefficients(circle(), 1.0, 0.0, 0.0)
        op = assemble_general_parabolic(coef, self.static_pmap, 0.5)
        lam = self.mf.base.basis.eigenvalues
        assert np.allclose(op.diagonal, -lam, atol=1e-14)

    def test_constant_reaction_shift(self):
        gamma = 0.7
        coef = make_parabolic_coefficients(circle(), 1.0, 0.0, gamma)
        op = assemble_general_parabolic(coef, self.static_pmap, 0.2)
        lam = self.mf.base.basis.eigenvalues
        # oracle: quadrature of -du dv - gamma u v over basis pairs
        basis = self.mf.base.basis
        for m in (0, 1, 4):
            e = np.eye(DIM)[m]
            de = basis.grid_deriv(e)
            ge = basis.to_grid(e)
            oracle = -basis.quad(de * de) - gamma * basis.quad(ge * ge)
            assert op.pairing(e, e) == pytest.approx(oracle, abs=1e-10)
            assert op.diagonal[m] == pytest.approx(-lam[m] - gamma, abs=1e-12)

    def test_isotropic_time_scaling(self):
        # change-of-variables oracle at three times: diagonal -lam/f(t)
        coef = make_parabolic_coefficients(circle(), 1.0, 0.0, 0.0)
        lam = self.mf.base.basis.eigenvalues
        for t in (0.0, 0.1, 0.2):
            op = assemble_general_parabolic(coef, self.pmap, t)
            f = float(self.mf.factor(t))
            assert np.allclose(op.diagonal, -lam / f, rtol=1e-12)

    def test_varying_coefficient_dense_path(self):
        a = lambda theta: 1.0 + 0.3 * np.cos(theta)
        coef = make_parabolic_coefficients(circle(), a, 0.0, 0.1)
        op = assemble_general_parabolic(coef, self.static_pmap, 0.0)
        assert op.diagonal is None
        basis = self.mf.base.basis
        rng = np.random.default_rng(3)
        for _ in range(10):
            u, v = rng.normal(size=DIM), rng.normal(size=DIM)
            du, dv = basis.grid_deriv(u), basis.grid_deriv(v)
            gu, gv = basis.to_grid(u), basis.to_grid(v)
            oracle = -basis.quad(a(basis.theta) * du * dv) - 0.1 * basis.quad(gu * gv)
            assert op.pairing(u, v) == pytest.approx(oracle, rel=1e-10, abs=1e-12)
            assert float(op.action(u) @ v) == pytest.approx(oracle, rel=1e-10, abs=1e-12)

    def test_coefficient_validation(self):
        with pytest.raises(ValueError, match="positive lower bound"):
            make_parabolic_coefficients(circle(), lambda th: np.cos(th), 0.0, 0.0)
        # any nonzero periodic advection field has somewhere nonnegative divergence
        with pytest.raises(ValueError, match="divergence"):
            make_parabolic_coefficients(circle(), 1.0, lambda th: np.sin(th), 0.0)
        with pytest.raises(ValueError, match="divergence"):
            make_parabolic_coefficients(circle(), 1.0, 0.5, 0.0)


class TestPLaplace:
    def test_zero_input(self):
        mf = static_family()
        u = np.zeros(DIM)
        v = np.zeros(DIM)
        v[2] = 1.3
        assert p_laplace_pairing(u, v, 4.0, mf) == 0.0

    def test_cosine_quartic_value(self):
        # <A u, u> = -int sin^4 for u = cos theta at p = 4
        oracle, err = quad(lambda th: np.sin(th) ** 4, 0.0, 2.0 * np.pi)
        assert oracle == pytest.approx(3.0 * math.pi / 4.0, abs=1e-10)
        mf = static_family()
        u = np.zeros(DIM)
        u[1] = math.sqrt(math.pi)  # cos(theta) in the normalized basis
        val = p_laplace_pairing(u, u, 4.0, mf)
        assert val == pytest.approx(-3.0 * math.pi / 4.0, abs=1e-10)
        assert val == pytest.approx(-oracle, abs=1e-10)

    def test_dual_norm_bound(self):
        # |<A u, v>| <= ||u||_V^{p-1} ||v||_V on random mean-zero pairs
        mf = static_family()
        rng = np.random.default_rng(7)
        for p in (3.0, 4.0):
            for _ in range(100):
                u = rng.normal(size=DIM)
                v = rng.normal(size=DIM)
                u[0] = v[0] = 0.0
                lhs = abs(p_laplace_pairing(u, v, p, mf))
                rhs = w1p_norm(u, p, mf) ** (p - 1.0) * w1p_norm(v, p, mf)
                assert lhs <= rhs * (1.0 + 1e-10)

    def test_monotonicity(self):
        mf = static_family()
        rng = np.random.default_rng(8)
        for p in (3.0, 4.0):
            for _ in range(200):
                u = rng.normal(size=DIM)
                v = rng.normal(size=DIM)
                u[0] = v[0] = 0.0
                d = u - v
                gap = p_laplace_pairing(u, d, p, mf) - p_laplace_pairing(v, d, p, mf)
                assert gap <= 1e-10

    def test_hemicontinuity_probe(self):
        # lambda sweep at step 1e-2 has jumps bounded by the local slope
        mf = static_family()
        prov = PLaplaceProvider(4.0, mf)
        rng = np.random.default_rng(9)
        lams = np.arange(-1.0, 1.0 + 5e-3, 1e-2)
        for _ in range(20):
            u, v, x = (rng.normal(size=DIM) for _ in range(3))
            u[0] = v[0] = x[0] = 0.0
            vals = prov.sweep_pairing(u, v, x, lams, 0.0)
            gaps = np.abs(np.diff(vals))
            slope = np.max(np.abs(vals[2:] - vals[:-2])) / 0.02
            assert gaps.max() <= slope * 1e-2 * 1.5 + 1e-12

    def test_rejects_bad_input(self):
        mf = static_family()
        u = np.zeros(DIM)
        u[0] = 1.0
        with pytest.raises(ValueError, match="mean-zero"):
            p_laplace_pairing(u, u, 4.0, mf)
        with pytest.raises(ValueError, match="p must be > 2"):
            p_laplace_pairing(np.zeros(DIM), np.zeros(DIM), 2.0, mf)


class TestNonlinearity:
    def test_zero(self):
        basis = circle().basis
        nl = nonlinearity("zero")
        u = np.random.default_rng(0).normal(size=DIM)
        assert np.allclose(apply_nonlinearity(nl, u, basis), 0.0, atol=0)

    def test_linear_scales_coefficients(self):
        basis = circle().basis
        nl = nonlinearity("linear", gamma=0.5)
        u = np.random.default_rng(1).normal(size=DIM)
        out = apply_nonlinearity(nl, u, basis)
        assert np.allclose(out, 0.5 * u, atol=1e-12)

    def test_tanh_on_constant(self):
        basis = circle().basis
        nl = nonlinearity("tanh", gamma=1.0)
        u = np.zeros(DIM)
        u[0] = 2.0 * math.sqrt(2.0 * math.pi)  # grid value 2 everywhere
        out = apply_nonlinearity(nl, u, basis)
        grid = basis.to_grid(out)
        assert np.allclose(grid, math.tanh(2.0), atol=1e-12)

    @given(st.floats(-5.0, 5.0), st.floats(-5.0, 5.0))
    @settings(max_examples=100, deadline=None)
    def test_catalog_monotone_lipschitz(self, s, r):
        for kind, gamma in (("linear", 0.7), ("tanh", 1.3)):
            nl = nonlinearity(kind, gamma)
            fs, fr = float(nl.phi(np.float64(s))), float(nl.phi(np.float64(r)))
            assert (fs - fr) * (s - r) >= 0.0
            assert abs(fs - fr) <= nl.c_lip * abs(s - r) + 1e-12
            assert nl.phi(np.float64(0.0)) == 0.0

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            nonlinearity("linear", gamma=-1.0)
        with pytest.raises(ValueError):
            nonlinearity("cubic")


class TestProviders:
    def test_mcf_constants(self):
        prov = McfSphereProvider(circle(), 0.2)
        consts = prov.analytic_constants()
        assert consts["c"] == pytest.approx(40.0, rel=1e-12)
        assert consts["c3"] == pytest.approx(40.0, rel=1e-12)
        assert consts["c1"] == pytest.approx(42.0, rel=1e-12)
        assert consts["c2"] == 2.0

    def test_moving_surface_constants(self):
        mf = mcf_family()
        prov = MovingSurfaceProvider(mf, sphere_vh(2), k1=20.0)
        consts = prov.analytic_constants()
        a2 = math.sqrt(0.2)
        assert consts["c"] == pytest.approx(2 * 20.0 / a2, rel=1e-9)
        assert consts["c2"] == pytest.approx(2 * a2 * 1.0 / 5.0, rel=1e-9)

    def test_plaplace_poincare(self):
        prov = PLaplaceProvider(4.0, static_family())
        assert prov.poincare_constant() == pytest.approx(1.0, abs=1e-14)
        consts = prov.analytic_constants()
        assert consts["alpha"] == 4.0 and consts["c3"] == 1.0

    def test_static_heat_diag(self):
        prov = StaticHeatProvider(circle())
        op = prov.operator(0.3)
        assert np.array_equal(op.diagonal, -circle().basis.eigenvalues)

    def test_general_parabolic_constants_positive(self):
        mf = mcf_family()
        coef = make_parabolic_coefficients(circle(), 1.0, 0.0, 0.5)
        prov = GeneralParabolicProvider(coef, PullbackMap(mf))
        consts = prov.analytic_constants()
        assert consts["c2"] > 0.0 and consts["c3"] > 0.0


def test_pairing_matrix_csv(tmp_path):
    op = assemble_mcf_sphere(2, 0.0, 2)
    mat = op.dense_pairing_matrix(5)
    path = tmp_path / "pairing.csv"
    pairing_matrix_csv(mat, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "row,col,value"
    assert len(lines) == 1 + 25

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from latticecss.gauge import reconstruct_g
from latticecss.lattice import LatticeWindow, ModelParams, mass
from latticecss.stationary import (
    NewtonOptions,
    SeedSpec,
    StationaryState,
    asymmetric_tail_check,
    constraint_pairing,
    continuum_soliton,
    default_half_width,
    newton_solve,
    residual_h_derivative,
    sampled_soliton,
    scalar_root_double,
    scalar_root_single,
    stationary_jacobian,
    stationary_residual,
)

params_st = st.builds(
    ModelParams,
    lam=st.floats(0.1, 10), p=st.floats(0.2, 4), omega=st.floats(0.1, 10), h=st.floats(0.01, 1e3))


def fd_jac(u, params, step=1e-6):
    cols = []
    for j in range(u.size):
        e = np.zeros(u.size)
        e[j] = step
        cols.append((stationary_residual(u + e, params) - stationary_residual(u - e, params)) / (2 * step))
    return np.column_stack(cols)


class TestScalarRoots:
    def test_closed_form_single(self):
        u = scalar_root_single(ModelParams(1, 1, 1, 2))
        assert u == pytest.approx(math.sqrt((-1 + math.sqrt(5)) / 2), rel=1e-14)
        assert u == pytest.approx(0.786151, abs=1e-6)

    def test_closed_form_double(self):
        params = ModelParams(1, 1, 1, 2)
        u = scalar_root_single(params)
        w = scalar_root_double(params, u)
        # quadratic in w^2: w^4 + w^2 - u^2 = 0
        w2 = (-1 + math.sqrt(1 + 4 * u * u)) / 2
        assert w == pytest.approx(math.sqrt(w2), rel=1e-14)
        assert w == pytest.approx(0.65702, abs=1e-5)

    @given(params_st)
    def test_single_against_brentq(self, params):
        f = lambda x: params.lam * x ** (2 * params.p) + params.h**2 / 4 * x**4 - params.omega
        ref = brentq(f, 0, 1e3, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        u = scalar_root_single(params)
        assert u == pytest.approx(ref, rel=1e-13)
        assert abs(f(u)) <= 1e-13 * params.omega

    @given(params_st)
    def test_double_below_single_and_consistent(self, params):
        u = scalar_root_single(params)
        w = scalar_root_double(params, u)
        assert 0 < w < u
        lam, p, om, h = params.lam, params.p, params.omega, params.h
        assert abs(lam * w ** (2 * p) - om + h * h / 4 * (w**4 + u**4)) <= 1e-13 * om

    @given(params_st, st.floats(1.01, 10))
    def test_root_decreases_with_h(self, params, factor):
        # strictly decreasing; ties only where the h^2 term is below rounding
        assert scalar_root_single(params.with_h(params.h * factor)) <= (
            scalar_root_single(params) * (1 + 1e-15))

    def test_asymptotic_ratio(self):
        h = 1e3
        u = scalar_root_single(ModelParams(1, 1, 1, h))
        assert abs(u * math.sqrt(h) / 4**0.25 - 1) < 1e-2


class TestSoliton:
    def test_peak_and_evenness(self):
        params = ModelParams(1, 1, 1, 1)
        assert continuum_soliton(0.0, params) == pytest.approx(math.sqrt(2))
        x = np.linspace(0, 20, 101)
        assert np.array_equal(continuum_soliton(x, params), continuum_soliton(-x, params))

    @pytest.mark.parametrize("p", [0.5, 1.0, 1.5, 2.0, 3.0])
    def test_ode_second_order(self, p):
        params = ModelParams(1.3, p, 0.8, 1)
        errs = []
        for dx in (4e-3, 2e-3):
            x = np.arange(-8, 8, dx)
            q = continuum_soliton(x, params)
            qpp = (q[2:] - 2 * q[1:-1] + q[:-2]) / dx**2
            m = q[1:-1]
            errs.append(np.max(np.abs(qpp - 0.8 * m + 1.3 * m ** (2 * p + 1))))
        assert errs[1] < 1e-4
        assert 3.5 < errs[0] / errs[1] < 4.5

    def test_no_overflow_far_out(self):
        assert continuum_soliton(1e4, ModelParams(1, 1, 1, 1)) == 0.0


class TestResidual:
    def test_zero(self):
        assert np.all(stationary_residual(np.zeros(9), ModelParams(1, 1, 1, 1)) == 0)

    def test_single_site_couplings(self):
        params = ModelParams(1, 1, 1, 50)
        u0 = scalar_root_single(params)
        u = np.zeros(11)
        u[5] = u0
        f = stationary_residual(u, params)
        h2 = params.h**2
        assert f[4] == pytest.approx(u0 / h2, rel=1e-12)
        assert f[6] == pytest.approx(u0 / h2, rel=1e-12)
        # the local bracket vanishes by the root equation
        assert f[5] == pytest.approx(-2 * u0 / h2, rel=1e-9)
        assert np.max(np.abs(f)) == pytest.approx(2 * u0 / h2, rel=1e-9)

    def test_matches_explicit_difference_equations(self, rng):
        params = ModelParams(0.7, 1.3, 1.1, 0.9)
        u = rng.standard_normal(15)
        g = reconstruct_g(u, 0.0, params.h)
        pad = np.concatenate([[0.0], u, [0.0]])
        expected = [
            (pad[i + 2] - 2 * pad[i + 1] + pad[i]) / params.h**2 - params.omega * u[i]
            + g[i] * u[i] + params.lam * abs(u[i]) ** (2 * params.p) * u[i]
            for i in range(15)
        ]
        assert np.allclose(stationary_residual(u, params), expected, rtol=1e-13, atol=1e-13)

    def test_h_derivative_matches_fd(self, rng):
        params = ModelParams(1, 1.5, 1, 1.7)
        u = rng.uniform(-1, 1, 20)
        d = 1e-6
        fd = (stationary_residual(u, params.with_h(1.7 + d))
              - stationary_residual(u, params.with_h(1.7 - d))) / (2 * d)
        assert np.allclose(residual_h_derivative(u, params), fd, rtol=1e-7, atol=1e-7)


class TestJacobian:
    def test_zero_field(self):
        params = ModelParams(1, 1, 2.0, 0.5)
        j = stationary_jacobian(np.zeros(6), params)
        lap = (np.diag(np.full(5, 1.0), 1) + np.diag(np.full(5, 1.0), -1) - 2 * np.eye(6)) / 0.25
        assert np.allclose(j, lap - 2.0 * np.eye(6))

    @pytest.mark.parametrize("p", [0.5, 1.0, 2.0, 3.0])
    def test_finite_differences(self, rng, p):
        params = ModelParams(1.2, p, 0.9, 1.3)
        for _ in range(10):
            u = rng.uniform(-1, 1, 41)
            ja = stationary_jacobian(u, params)
            assert np.max(np.abs(ja - fd_jac(u, params))) <= 1e-6 * np.max(np.abs(ja))

    @pytest.mark.parametrize("p", [0.75, 1.0, 1.5])
    def test_single_site_diagonal_cases(self, p):
        h = 20.0
        params = ModelParams(1, p, 1, h)
        u0 = scalar_root_single(params)
        v = u0 * math.sqrt(h)
        u = np.zeros(7)
        u[3] = u0
        diag = np.diag(stationary_jacobian(u, params)) + 2 / h**2
        assert diag[1] == pytest.approx(-h ** (-p) * v ** (2 * p), rel=1e-12)
        assert diag[3] == pytest.approx(2 * p * h ** (-p) * v ** (2 * p) + v**4, rel=1e-12)
        assert diag[5] == pytest.approx(-1.0, rel=1e-12)


class TestSeeds:
    def test_margin(self):
        w = LatticeWindow(-5, 5, 1.0)
        params = ModelParams(1, 1, 1, 1)
        with pytest.raises(ValueError):
            SeedSpec("single_site", center=4).build(w, params)
        with pytest.raises(ValueError):
            SeedSpec("double_site", center=3).build(w, params)
        SeedSpec("double_site", center=2).build(w, params)

    def test_double_site_layout(self):
        w = LatticeWindow(-5, 5, 2.0)
        params = ModelParams(1, 1, 1, 2.0)
        u = SeedSpec("double_site").build(w, params)
        assert u[w.index(0)] == pytest.approx(0.65702, abs=1e-5)
        assert u[w.index(1)] == pytest.approx(0.786151, abs=1e-6)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SeedSpec("triple_site")


class TestNewton:
    def test_zero_seed(self):
        params = ModelParams(1, 1, 1, 3)
        w = LatticeWindow(-5, 5, 3)
        st = newton_solve(np.zeros(11), params, w)
        assert st.converged and st.iterations == 0 and np.all(st.u == 0)

    def test_single_site_h30(self):
        params = ModelParams(1, 1, 1, 30)
        st = newton_solve(SeedSpec("single_site"), params)
        assert st.converged and st.residual_linf <= 1e-12
        assert st.residual_linf == pytest.approx(np.max(np.abs(stationary_residual(st.u, params))))
        assert np.array_equal(st.g, reconstruct_g(st.u, 0.0, 30))

    def test_l1_distance_rates(self):
        # right half: O(h^-2) relative to U(h); left half: O(h^(p-2))
        for p in (0.5, 1.0, 1.5):
            right, left, total = [], [], []
            hs = (30.0, 60.0, 120.0)
            for h in hs:
                params = ModelParams(1, p, 1, h)
                st = newton_solve(SeedSpec("single_site"), params)
                u0 = scalar_root_single(params)
                i0 = st.window.index(0)
                dist = np.abs(st.u - SeedSpec("single_site").build(st.window, params)) / u0
                right.append(np.sum(dist[i0 + 1:]) * h**2)
                left.append(np.sum(dist[:i0]) * h ** (2 - p))
                total.append(np.sum(dist))
            assert max(right) / min(right) < 1.2
            assert max(left) / min(left) < 1.2
            assert total[0] > total[1] > total[2]

    def test_double_site_h30(self):
        params = ModelParams(1, 1, 1, 30)
        st = newton_solve(SeedSpec("double_site"), params)
        assert st.converged
        big, small = scalar_root_single(params), scalar_root_double(params)
        assert st.value(0) == pytest.approx(small, rel=1e-2)
        assert st.value(1) == pytest.approx(big, rel=1e-2)
        others = np.delete(st.u, [st.window.index(0), st.window.index(1)])
        assert np.max(np.abs(others)) < 0.1 * small

    def test_window_expands(self):
        params = ModelParams(1, 1, 1, 2.0)
        st = newton_solve(SeedSpec("single_site"), params, LatticeWindow(-4, 4, 2.0))
        assert st.converged
        assert st.window.size > 9
        assert max(abs(st.u[0]), abs(st.u[-1])) <= 1e-10 * np.max(np.abs(st.u))

    def test_singular_jacobian_reported(self):
        params = ModelParams(1, 1, 1, 10)
        opts = NewtonOptions(jacobian=lambda u, p: np.zeros((u.size, u.size)))
        st = newton_solve(SeedSpec("single_site"), params, options=opts)
        assert not st.converged and st.message == "singular Jacobian"

    def test_divergence_reported(self):
        params = ModelParams(1, 1, 1, 10)
        opts = NewtonOptions(jacobian=lambda u, p: -stationary_jacobian(u, p))
        st = newton_solve(SeedSpec("single_site"), params, options=opts)
        assert not st.converged
        assert "backtracking" in st.message or "singular" in st.message

    def test_max_iter_reported(self):
        params = ModelParams(1, 1, 1, 10)
        st = newton_solve(SeedSpec("single_site"), params, max_iter=1, tol=1e-15)
        assert not st.converged and st.message == "max_iter reached"

    def test_scaling_equivariance_cubic(self):
        h, om = 2.0, 1.0
        a = newton_solve(SeedSpec("single_site"), ModelParams(1, 1, om, h))
        b = newton_solve(h * a.u, ModelParams(1, 1, h * h * om, 1.0), a.window.with_h(1.0))
        assert b.converged and b.iterations <= 1
        assert np.max(np.abs(b.u - h * a.u)) <= 1e-10
        assert np.max(np.abs(b.g - h * h * a.g)) <= 1e-10

    def test_scaling_equivariance_independent_solves(self):
        h, om = 2.0, 1.0
        a = newton_solve(SeedSpec("single_site"), ModelParams(1, 1, om, h))
        b = newton_solve(SeedSpec("single_site"), ModelParams(1, 1, h * h * om, 1.0))
        lo, hi = max(a.window.n_min, b.window.n_min), min(a.window.n_max, b.window.n_max)
        ua = a.u[a.window.index(lo):a.window.index(hi) + 1]
        ub = b.u[b.window.index(lo):b.window.index(hi) + 1]
        assert np.max(np.abs(ub - h * ua)) <= 1e-10

    def test_default_half_width_tracks_decay(self):
        assert default_half_width(ModelParams(1, 1, 1, 100)) == 8
        assert default_half_width(ModelParams(1, 1, 1, 0.1)) > 100


class TestConstraintIdentity:
    def test_symmetric_local_sum(self):
        params = ModelParams(1, 1.5, 1, 1)
        u = np.exp(-0.3 * np.arange(-10, 11) ** 2)
        quintic, full = asymmetric_tail_check(u, params)
        assert full - 0.25 * quintic == pytest.approx(0.0, abs=1e-15)

    def test_pairing_identity_random(self, rng):
        # holds for any profile up to the Laplacian boundary term
        for p in (0.5, 1.0, 2.5):
            params = ModelParams(0.8, p, 1.3, 0.7)
            u = rng.uniform(-1, 1, 25)
            _, full = asymmetric_tail_check(u, params)
            boundary = (u[-1] ** 2 - u[0] ** 2) / params.h**2
            assert full + boundary == pytest.approx(constraint_pairing(u, params), abs=1e-12)

    @pytest.mark.parametrize("p,h", [(1, 5.0), (1.5, 3.0), (1, 30.0)])
    def test_solved_state(self, p, h):
        params = ModelParams(1, p, 1, h)
        st = newton_solve(SeedSpec("single_site"), params)
        _, full = asymmetric_tail_check(st.u, params)
        assert abs(full) <= 10 * 1e-12 * 2 * np.sum(np.abs(st.u))

    def test_soliton_quintic_sum(self):
        params = ModelParams(1, 1, 1, 0.05)
        q6 = quad(lambda x: 8 / np.cosh(x) ** 6, -60, 60, points=[0])[0]
        assert q6 == pytest.approx(128 / 15, rel=1e-12)
        w = LatticeWindow.centered(1200, 0.05)
        quintic, _ = asymmetric_tail_check(sampled_soliton(w, params), params)
        assert quintic > 0
        assert quintic * 0.05 == pytest.approx(q6, rel=1e-2)


def test_state_from_profile_and_mass():
    params = ModelParams(1, 1, 1, 4)
    u = np.zeros(7)
    u[3] = 0.5
    st = StationaryState.from_profile(u, params, LatticeWindow(-3, 3, 4))
    assert st.mass == pytest.approx(mass(u, 4))
    assert not st.converged

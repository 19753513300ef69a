import math

import numpy as np
import pytest
import sympy

from latticecss.continuation import (
    Branch,
    BranchPoint,
    FoldNotFound,
    StepControl,
    arclength_continue,
    connection_mismatch,
    constraint_defect,
    fold_h_or_none,
    locate_fold,
    natural_continue,
    scale_solution,
    scaled_coefficients,
    scaled_potential_residual,
    scaled_system_residual,
    scaling_exponent,
    tangent,
)
from latticecss.lattice import LatticeWindow, ModelParams
from latticecss.stationary import SeedSpec, newton_solve, stationary_residual


def solve(kind, p, omega, h):
    st = newton_solve(SeedSpec(kind), ModelParams(1, p, omega, h))
    assert st.converged
    return st


@pytest.fixture(scope="module")
def cubic_branch():
    return arclength_continue(solve("single_site", 1, 1, 10.0), -1, h_max=200)


class TestNatural:
    def test_toward_anti_continuum(self):
        br = natural_continue(solve("single_site", 1, 1, 30.0), 100.0)
        assert br.termination == "target reached"
        assert br.points[-1].h == pytest.approx(100.0)
        assert abs(br.points[-1].mass - 2.0) / 2.0 < 0.02
        assert all(pt.state.converged for pt in br.points)

    def test_toward_continuum_terminates(self):
        br = natural_continue(solve("single_site", 1, 1, 5.0), 0.1)
        assert br.termination.startswith("step floor reached")
        assert 1.0 < br.points[-1].h < 2.0

    def test_zero_branch(self):
        w = LatticeWindow(-5, 5, 2.0)
        zero = newton_solve(np.zeros(11), ModelParams(1, 1, 1, 2.0), w)
        br = natural_continue(zero, 20.0)
        assert br.termination == "target reached"
        assert all(pt.mass == 0 for pt in br.points)

    def test_rejects_unconverged_start(self):
        st = newton_solve(SeedSpec("single_site"), ModelParams(1, 1, 1, 10), max_iter=0)
        with pytest.raises(ValueError):
            natural_continue(st, 20.0)


class TestTangent:
    def test_matches_secant(self):
        params = ModelParams(1, 1, 1, 10.0)
        a = solve("single_site", 1, 1, 10.0)
        w = 1 / np.linalg.norm(a.u)
        t = tangent(a.u, params, w)
        d = 1e-5
        b = newton_solve(a.u, params.with_h(10.0 * math.exp(d)), a.window)
        secant = np.append((b.u - a.u) / d, 1.0)
        secant /= math.sqrt(w * w * secant[:-1] @ secant[:-1] + 1)
        assert np.allclose(t, secant, atol=1e-4)

    def test_in_kernel_of_extended_jacobian(self):
        from latticecss.stationary import residual_h_derivative, stationary_jacobian
        params = ModelParams(1, 1, 1, 3.0)
        a = solve("single_site", 1, 1, 3.0)
        t = tangent(a.u, params, 1.0)
        r = stationary_jacobian(a.u, params) @ t[:-1] + 3.0 * residual_h_derivative(a.u, params) * t[-1]
        assert np.max(np.abs(r)) < 1e-10


class TestArclength:
    def test_single_fold_connects_to_double_site(self, cubic_branch):
        br = cubic_branch
        assert len(br.folds) == 1
        assert len(br.fold_brackets()) == 1
        h_star = br.folds[0]
        assert 1.0 < h_star < 2.0
        assert br.h_values.min() >= h_star * (1 - 1e-6)
        # the far end is the double-site state, with larger mass at equal h
        end = br.points[-1]
        diag = connection_mismatch(br)
        assert diag["double_site"] < 1e-6 and not diag["mismatch"]
        single = solve("single_site", 1, 1, end.h)
        assert end.mass > single.mass

    def test_points_are_solutions(self, cubic_branch):
        for pt in cubic_branch.points:
            assert pt.state.converged
            assert np.max(np.abs(stationary_residual(pt.state.u, pt.state.params))) <= 1e-12
            assert abs(constraint_defect(pt)) <= 1e-9
            assert pt.mass == pytest.approx(pt.h * np.sum(pt.state.u ** 2))

    def test_arc_increasing_and_continuous(self, cubic_branch):
        arcs = np.array([pt.arc_param for pt in cubic_branch.points])
        assert np.all(np.diff(arcs) > 0)
        # no jumps: consecutive masses close relative to the step
        m = cubic_branch.masses
        assert np.max(np.abs(np.diff(m))) < 0.5

    def test_sign_change_exactly_once_in_bracket(self, cubic_branch):
        signs = np.sign([pt.tangent_dh for pt in cubic_branch.points])
        assert np.count_nonzero(np.diff(signs)) == 1

    def test_rejects_bad_direction(self):
        with pytest.raises(ValueError):
            arclength_continue(solve("single_site", 1, 1, 10.0), 0)

    def test_p2_closed_loop_two_folds(self):
        br = arclength_continue(solve("single_site", 2, 1, 3.0), 1, h_max=1e3)
        assert len(br.folds) == 2
        small, large = sorted(br.folds)
        assert small < 3.0 < large < 1e3
        assert br.h_values.max() <= large * (1 + 1e-6)
        assert br.h_values.min() >= small * (1 - 1e-6)


class TestFold:
    def test_scaling_cubic(self):
        folds = []
        for om in (1.0, 4.0, 10.0):
            br = arclength_continue(solve("single_site", 1, om, 10.0 / math.sqrt(om)), -1,
                                    max_folds=1)
            folds.append(br.fold_h * math.sqrt(om))
        assert max(folds) / min(folds) - 1 < 1e-4

    def test_refinement_reaches_relative_accuracy(self, cubic_branch):
        i = cubic_branch.fold_brackets()[0]
        coarse = locate_fold(cubic_branch, i, rtol=1e-3)
        fine = locate_fold(cubic_branch, i, rtol=1e-8)
        assert abs(coarse - fine) / fine < 1e-3
        assert abs(cubic_branch.folds[0] - fine) / fine < 1e-6

    def test_p_three_halves_decreases_with_omega(self):
        h1 = arclength_continue(solve("single_site", 1.5, 1, 5.0), -1, max_folds=1).fold_h
        h10 = arclength_continue(solve("single_site", 1.5, 10, 2.0), -1, max_folds=1).fold_h
        assert h10 < h1

    def test_monotone_branch_has_no_fold(self):
        br = natural_continue(solve("single_site", 1, 1, 30.0), 60.0)
        with pytest.raises(FoldNotFound):
            locate_fold(br)
        assert fold_h_or_none(br) is None
        assert br.fold_h is None

    def test_synthetic_branch_without_fold(self):
        st = solve("single_site", 1, 1, 30.0)
        pts = [BranchPoint(h, st, 1.0, float(i), 1.0) for i, h in enumerate((1.0, 2.0, 3.0))]
        with pytest.raises(FoldNotFound):
            locate_fold(Branch(pts, st.params))


class TestScaling:
    def test_presets(self):
        assert scaling_exponent("critical", 1.5) == pytest.approx(2.0)
        assert scaling_exponent("unit", 3) == 1.0
        assert scaling_exponent("inverse", 3) == -1.0
        with pytest.raises(ValueError):
            scaling_exponent("critical", 2)

    def test_coefficients_symbolic(self):
        h, p, a = sympy.symbols("h p a", positive=True)
        u, g, om, lam = sympy.symbols("U G Omega lambda", positive=True)
        ut, gt, omt = sympy.symbols("Ut Gt Omegat", positive=True)
        # substitute the scaling into the unscaled first equation (per-site terms)
        subs = {u: h ** (-a) * ut, g: h ** (2 - 4 * a) * gt, om: h ** (-2 * a * p) * omt}
        mult = h ** (a * (2 * p + 1))
        lap_coeff = sympy.powsimp(mult * h**-2 * h ** (-a))
        om_coeff = sympy.powsimp(mult * (om * u).subs(subs) / omt / ut)
        g_coeff = sympy.powsimp(mult * (g * u).subs(subs) / gt / ut)
        c_lap, c_om, c_g = scaled_coefficients(h, p, a)
        assert sympy.simplify(sympy.powsimp(c_lap / lap_coeff)) == 1
        assert sympy.simplify(sympy.powsimp(c_om / h ** (2 * a * p))) == 1
        assert sympy.simplify(om_coeff) == 1
        assert sympy.simplify(sympy.powsimp(c_g / g_coeff)) == 1
        # nonlinear term carries no power of h
        assert sympy.simplify(mult * ((h ** (-a) * ut) ** (2 * p + 1)) / ut ** (2 * p + 1)) == 1

    def test_p2_unit_pattern(self):
        h = sympy.symbols("h", positive=True)
        c_lap, c_om, c_g = scaled_coefficients(h, 2, 1)
        assert sympy.simplify(c_lap - h**2) == 0
        assert sympy.simplify(c_om / h**4) == 1  # i.e. coefficient 1 on Omega~ = h^4 Omega
        assert sympy.simplify(c_g - h**2) == 0

    def test_cubic_unit_is_h_free(self):
        h = sympy.symbols("h", positive=True)
        c_lap, c_om, c_g = scaled_coefficients(h, 1, 1)
        assert c_lap == 1 and c_g == 1 and sympy.simplify(c_om - h**2) == 0

    def test_inverse_p2_pattern(self):
        h = sympy.symbols("h", positive=True)
        c_lap, _, c_g = scaled_coefficients(h, 2, -1)
        assert sympy.simplify(c_lap - h**-6) == 0 and sympy.simplify(c_g - h**2) == 0

    @pytest.mark.parametrize("p,a", [(1, 1), (1.5, "critical"), (2, "unit"), (2, "inverse"),
                                     (1, 0.37), (0.5, 2.0)])
    def test_round_trip(self, p, a):
        st = solve("single_site", p, 1, 3.0)
        a_num = scaling_exponent(a, p) if isinstance(a, str) else a
        ut, gt, omt = scale_solution(st.u, st.g, st.params, a_num)
        r = scaled_system_residual(ut, gt, st.params, a)
        scale = st.params.h ** (a_num * (2 * st.params.p + 1))
        assert np.max(np.abs(r)) <= 1e-10 * max(scale, 1.0)
        assert np.max(np.abs(scaled_potential_residual(ut, gt))) <= 1e-12 * max(1.0, np.max(gt))

    def test_cubic_reproduces_unit_spacing_problem(self):
        st = solve("single_site", 1, 1, 2.0)
        ut, gt, omt = scale_solution(st.u, st.g, st.params, 1.0)
        assert omt == pytest.approx(4.0)
        assert np.allclose(ut, 2.0 * st.u) and np.allclose(gt, 4.0 * st.g)
        # (hU) solves the same equations at h = 1, Omega = h^2 Omega
        assert np.max(np.abs(stationary_residual(ut, ModelParams(1, 1, omt, 1.0)))) < 1e-10

    def test_degenerate_ap_one_allowed(self):
        st = solve("single_site", 2, 1, 3.0)
        r = scaled_system_residual(*scale_solution(st.u, st.g, st.params, 0.5)[:2], st.params, 0.5)
        assert np.all(np.isfinite(r))

import numpy as np
import pytest

from nematicflow.coefficients import CoefficientFunctions, LeslieCoefficients, preset
from nematicflow.grid_state import Grid1D, InitialData, gaussian_bump, make_state
from nematicflow.parabolic_kernel import (
    KernelOps,
    KernelQuadrature,
    ParametrixBuilder,
    ThetaField,
    assemble_F,
    frozen_kernel,
    potential_M,
    potential_Mx,
    solve_v_kernel,
)

SPECIAL = preset("chl20-special")
HEAT = LeslieCoefficients(0.0, 0.0, 0.0, 2.0, 0.0, 0.0, k1=1.0, k3=1.0)


def smooth_theta_field(amplitude=0.5):
    x = np.linspace(-8, 8, 161)
    t = np.linspace(0, 1, 21)
    vals = amplitude * np.exp(-x[None, :] ** 2 / 4) * (1 + 0.5 * np.sin(2 * t))[:, None]
    return ThetaField(x, t, vals)


def sqrt_kink_theta_field(amplitude=0.9):
    # saturates the C^{1/2} modulus in x: drives the worst-case kernel bounds
    x = np.linspace(-8, 8, 641)
    t = np.linspace(0, 1, 21)
    prof = amplitude * np.sqrt(np.abs(x)) * np.exp(-x ** 2 / 8)
    vals = np.tile(prof, (21, 1))
    return ThetaField(x, t, vals)


class TestFrozenKernel:
    def test_paper_literal_origin_value(self):
        assert frozen_kernel(0.0, 1.0, 0.0, 0.0, 1.0, "paper-literal") == 0.5

    def test_normalized_unit_mass(self):
        x = np.linspace(-30, 30, 4001)
        for s in (0.1, 0.5, 2.0):
            H = frozen_kernel(x, s, 0.0, 0.0, 1.3, "normalized")
            assert np.trapezoid(H, x) == pytest.approx(1.0, abs=1e-8)

    def test_parabolic_scaling(self):
        lam = 2.0
        h1 = frozen_kernel(lam * 0.7, lam ** 2 * 0.3, 0.0, 0.0, 1.0, "normalized")
        h2 = frozen_kernel(0.7, 0.3, 0.0, 0.0, 1.0, "normalized")
        assert h1 == pytest.approx(h2 / lam, rel=1e-14)

    def test_positive_and_symmetric(self):
        x = np.linspace(-5, 5, 101)
        H = frozen_kernel(x, 0.7, 0.0, 0.0, 0.8, "paper-literal")
        assert np.all(H > 0)
        np.testing.assert_allclose(H, H[::-1], rtol=1e-14)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            frozen_kernel(0.0, 0.5, 0.0, 1.0, 1.0)


class TestGammaReductions:
    def test_constant_g_gamma1_zero_gives_exact_gaussian(self):
        tf = ThetaField.constant(0.5)
        pb = ParametrixBuilder(tf, SPECIAL, gamma1=0.0)
        rng = np.random.default_rng(7)
        x = rng.uniform(-3, 3, 1000)
        t = rng.uniform(0.05, 1.0, 1000)
        got = pb.gamma_point(x, t, 0.3, 0.0)
        want = frozen_kernel(x, t, 0.3, 0.0, 1.0, "normalized")
        assert np.max(np.abs(got - want) / want) < 1e-6

    def test_constant_g_gamma1_one_damped_gaussian(self):
        tf = ThetaField.constant(0.5)
        pb = ParametrixBuilder(tf, SPECIAL, gamma1=1.0)
        rng = np.random.default_rng(8)
        x = rng.uniform(-3, 3, 1000)
        t = rng.uniform(0.05, 1.0, 1000)
        got = pb.gamma_point(x, t, -0.2, 0.0)
        want = np.exp(-t) * frozen_kernel(x, t, -0.2, 0.0, 1.0, "normalized")
        assert np.max(np.abs(got - want) / want) < 1e-6

    def test_gamma_positive_and_mass_decay(self):
        # variable g: Gamma > 0; x-mass tracks e^{-gamma1 dt} within 1e-4
        co = preset("soft-anisotropic")
        tf = smooth_theta_field(0.4)
        pb = ParametrixBuilder(tf, co, gamma1=co.gamma1)
        x = np.linspace(-8, 8, 321)
        for dt in (0.2, 0.5):
            vals = pb.gamma_point(x, np.full_like(x, dt), 0.1, 0.0)
            core = np.abs(x - 0.1) <= 6 * np.sqrt(4 * 1.2 * dt)  # > 1e-9 envelope
            assert np.all(vals[core] > 0)
            mass = np.trapezoid(vals, x)
            assert mass <= 1.0 + 1e-6
        tf1 = ThetaField.constant(0.3)
        pb1 = ParametrixBuilder(tf1, co, gamma1=co.gamma1)
        vals = pb1.gamma_point(x, np.full_like(x, 0.5), 0.1, 0.0)
        assert np.trapezoid(vals, x) == pytest.approx(np.exp(-co.gamma1 * 0.5), abs=1e-4)


class TestParametrixResidual:
    def fd_residual(self, pb, xi, tau, pts, hx=0.08, ht=0.01):
        """max |L Gamma| off-diagonal by centered finite differences."""
        worst = 0.0
        for (x0, t0) in pts:
            xs = np.array([x0 - hx, x0, x0 + hx, x0, x0])
            ts = np.array([t0, t0, t0, t0 - ht, t0 + ht])
            g5 = pb.gamma_point(xs, ts, xi, tau)
            d_t = (g5[4] - g5[3]) / (2 * ht)
            d_xx = (g5[0] - 2 * g5[1] + g5[2]) / hx ** 2
            g_here = pb.fns.g(pb.theta(x0, t0))
            worst = max(worst, abs(d_t - g_here * d_xx + pb.gamma1 * g5[1]))
        return worst

    def test_residual_decreases_under_quadrature_refinement(self):
        co = preset("soft-anisotropic")
        tf = smooth_theta_field(0.5)
        pts = [(-1.0, 0.5), (0.7, 0.35), (1.8, 0.6)]
        res = []
        for quad in (KernelQuadrature(n_hermite=10, n_sigma=16, volterra_terms=3),
                     KernelQuadrature(n_hermite=20, n_sigma=32, volterra_terms=4,
                                      sigma_cut=5e-4)):
            pb = ParametrixBuilder(tf, co, gamma1=co.gamma1, quad=quad)
            res.append(self.fd_residual(pb, -0.5, 0.0, pts))
        assert res[1] <= 0.5 * res[0], res

    def test_phi_bound_exponent_near_five_fourths(self):
        # sqrt-rough theta saturates |Phi| <= C s^(-5/4) exp(-d y^2 / 4 s)
        co = preset("soft-anisotropic")
        tf = sqrt_kink_theta_field()
        pb = ParametrixBuilder(tf, co, gamma1=0.0)
        xi, tau = 0.0, 0.0
        svals = np.geomspace(0.02, 0.4, 8)
        y = np.linspace(-4, 4, 481)
        env = []
        for s in svals:
            phi_row = pb.kernel_K(y, tau + s, xi, tau)  # leading Volterra term
            g_src = pb.fns.g(pb.theta(xi, tau))
            gauss = np.exp(-(y - xi) ** 2 / (8 * g_src * s))  # d = 1/(2 g)
            env.append(np.max(np.abs(phi_row) / gauss))
        slope = np.polyfit(np.log(svals), np.log(env), 1)[0]
        assert abs(slope - (-1.25)) < 0.15, slope

    def test_gamma_h_difference_exponent(self):
        # |Gamma - H| settles at the s^{-1/4}-type near-diagonal correction
        co = preset("soft-anisotropic")
        tf = sqrt_kink_theta_field()
        pb = ParametrixBuilder(tf, co, gamma1=0.0,
                               quad=KernelQuadrature(n_sigma=64))
        xi, tau = 0.0, 0.0
        svals = np.geomspace(0.05, 0.8, 6)
        diffs = []
        for s in svals:
            got = pb.gamma_point(np.array([xi]), np.array([tau + s]), xi, tau)[0]
            H = frozen_kernel(xi, tau + s, xi, tau, pb.fns.g(pb.theta(xi, tau)),
                              "normalized")
            diffs.append(abs(got - H))
        slope = np.polyfit(np.log(svals), np.log(diffs), 1)[0]
        assert abs(slope - (-0.25)) < 0.15, slope


class TestPotentials:
    def test_unit_source_constant_g_gives_time(self):
        g = Grid1D(-8, 8, 129)
        times = np.linspace(0, 1, 9)
        ops = KernelOps(ThetaField.constant(0.0), SPECIAL, 0.0, g.x, times)
        M = potential_M(np.ones((9, 129)), ops)
        inner = np.abs(g.x) < 4
        for k in (2, 5, 8):
            np.testing.assert_allclose(M[k][inner], times[k], atol=1e-10)

    def test_zero_source(self):
        g = Grid1D(-8, 8, 65)
        times = np.linspace(0, 1, 5)
        ops = KernelOps(ThetaField.constant(0.0), SPECIAL, 1.0, g.x, times)
        assert np.all(potential_M(np.zeros((5, 65)), ops) == 0.0)
        assert np.all(potential_Mx(np.zeros((5, 65)), ops) == 0.0)

    def test_duhamel_linearity(self):
        co = preset("soft-anisotropic")
        tf = smooth_theta_field(0.4)
        g = Grid1D(-8, 8, 97)
        times = np.linspace(0, 0.5, 6)
        ops = KernelOps(tf, co, co.gamma1, g.x, times)
        rng = np.random.default_rng(5)
        f1 = rng.normal(size=(6, 97))
        f2 = rng.normal(size=(6, 97))
        lhs = potential_M(f1 + f2, ops)
        rhs = potential_M(f1, ops) + potential_M(f2, ops)
        np.testing.assert_allclose(lhs, rhs, atol=1e-11)

    def test_norm_scalings_in_T(self):
        # ||M_f||_inf <~ T^{1/4} ||f||_{L2}: the fitted constant is stable in T
        co = preset("soft-anisotropic")
        tf = smooth_theta_field(0.4)
        g = Grid1D(-8, 8, 97)
        rng = np.random.default_rng(11)
        consts = []
        for T in (0.25, 0.5, 1.0):
            times = np.linspace(0, T, 7)
            ops = KernelOps(tf, co, 0.0, g.x, times)
            f = rng.normal(size=(7, 97))
            M = potential_M(f, ops)
            l2 = np.sqrt(np.trapezoid([g.integral(f[k] ** 2) for k in range(7)], times))
            consts.append(np.max(np.abs(M)) / (T ** 0.25 * l2))
        consts = np.array(consts)
        assert np.max(consts) <= 3.0 * np.min(consts)
        assert np.max(consts) < 1.0  # comfortable fitted constant


class TestVSolve:
    def test_pure_heat_matches_exact(self):
        g = Grid1D(-8, 8, 129)
        times = np.linspace(0, 1, 9)
        v0 = np.exp(-g.x ** 2)
        tt = np.zeros((9, 129))
        v, v_x = solve_v_kernel(ThetaField.constant(0.0), tt, v0, HEAT, g.x, times)
        for k in (2, 4, 8):
            t = times[k]
            exact = np.exp(-g.x ** 2 / (1 + 4 * t)) / np.sqrt(1 + 4 * t)
            rel = np.sqrt(g.integral((v[k] - exact) ** 2) / g.integral(exact ** 2))
            assert rel < 1e-3, (k, rel)

    def test_short_time_recovers_initial_data(self):
        g = Grid1D(-8, 8, 129)
        v0 = np.exp(-g.x ** 2)
        tt = lambda n: np.zeros((n, 129))
        devs = []
        for t_small in (1e-3, 1e-4):
            times = np.array([0.0, t_small])
            v, _ = solve_v_kernel(ThetaField.constant(0.0), tt(2), v0, HEAT,
                                  g.x, times)
            devs.append(np.max(np.abs(v[1] - v0)))
        assert devs[1] < devs[0] < 1e-2


class TestASolve:
    def test_zero_data_gives_zero(self):
        g = Grid1D(-8, 8, 97)
        times = np.linspace(0, 0.5, 5)
        tf = ThetaField.constant(0.0)
        from nematicflow.parabolic_kernel import solve_A_kernel
        zero = np.zeros((5, 97))
        A, A_x = solve_A_kernel(tf, zero, zero, zero, zero, np.zeros(97),
                                SPECIAL, g, times)
        assert np.max(np.abs(A)) == 0.0
        assert np.max(np.abs(A_x)) == 0.0

    def test_special_case_F_reduction(self):
        # g = h = 1, gamma1 = 2: primes vanish, F = G + f with
        # G = -2 A0 and f = v_x + c^2 theta_x + J0'
        g = Grid1D(-8, 8, 257)
        times = np.linspace(0, 0.5, 4)
        rng = np.random.default_rng(3)
        th = 0.3 * np.exp(-g.x ** 2) * (1 + 0.1 * np.arange(4))[:, None]
        tf = ThetaField(g.x, times, th)
        theta_t = rng.normal(size=(4, g.n)) * np.exp(-g.x ** 2)
        theta_x = np.stack([g.ddx(th[k]) for k in range(4)])
        v_x = rng.normal(size=(4, g.n)) * np.exp(-g.x ** 2)
        J0 = gaussian_bump(0.4)(g.x)
        fns = CoefficientFunctions(SPECIAL)
        F = assemble_F(tf, theta_t, theta_x, v_x, J0, fns, g, times)
        c2 = fns.c2(th)
        expected = (v_x + c2 * theta_x + g.ddx(J0)[None, :]
                    - 2.0 * g.antider(J0)[None, :])
        np.testing.assert_allclose(F, expected, atol=1e-12)

    def test_A_x_routes_agree(self):
        # Gamma_x route vs numerical ddx of the Gamma route
        co = preset("soft-anisotropic")
        g = Grid1D(-8, 8, 129)
        times = np.linspace(0, 0.4, 5)
        tf = smooth_theta_field(0.3)
        from nematicflow.parabolic_kernel import solve_A_kernel
        th_t = 0.2 * np.exp(-g.x ** 2)[None, :] * np.ones((5, 1))
        th_x = 0.1 * np.exp(-g.x ** 2)[None, :] * np.ones((5, 1))
        v_x = 0.1 * np.exp(-g.x ** 2 / 2)[None, :] * np.ones((5, 1))
        J = 0.3 * np.exp(-g.x ** 2)[None, :] * np.ones((5, 1))
        J0 = J[0]
        A, A_x = solve_A_kernel(tf, th_t, th_x, v_x, J, J0, co, g, times)
        inner = np.abs(g.x) < 5
        for k in (2, 4):
            dd = g.ddx(A[k])
            denom = np.max(np.abs(A_x[k][inner])) + 1e-12
            assert np.max(np.abs((dd - A_x[k])[inner])) / denom < 5e-2


class TestDerivationCheck:
    def test_manufactured_fields_satisfy_defect_identity(self):
        from nematicflow.parabolic_kernel import derive_A_equation_check
        co = preset("soft-anisotropic")
        res = derive_A_equation_check(co, n=513, t0=0.3, dt=1e-4)
        assert res["residual_l2"] < 5e-4, res

    def test_zero_fields_zero_residual(self):
        from nematicflow.parabolic_kernel import derive_A_equation_check
        res = derive_A_equation_check(SPECIAL, n=129, t0=0.2, dt=1e-4,
                                      u_amp=0.0, th_amp=0.0)
        assert res["residual_l2"] < 1e-14

    def test_refinement_shrinks_residual(self):
        from nematicflow.parabolic_kernel import derive_A_equation_check
        co = preset("soft-anisotropic")
        r1 = derive_A_equation_check(co, n=257, t0=0.3, dt=1e-4)["residual_l2"]
        r2 = derive_A_equation_check(co, n=513, t0=0.3, dt=1e-4)["residual_l2"]
        assert r2 < 0.5 * r1

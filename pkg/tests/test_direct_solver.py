import numpy as np
import pytest

from nematicflow.coefficients import CoefficientFunctions, LeslieCoefficients, preset
from nematicflow.diagnostics import cancellation_monitor, energy
from nematicflow.direct_solver import (
    DirectSolverConfig,
    run,
    run_special_case,
    run_wave,
    step,
)
from nematicflow.grid_state import (
    Grid1D,
    InitialData,
    gaussian_bump,
    initial_data_preset,
    make_state,
)

SPECIAL = preset("chl20-special")


def make_mms():
    """Forcings for the manufactured solution via sympy (exact closed forms)."""
    import sympy as sp

    co = preset("soft-anisotropic")
    x, t = sp.symbols("x t")
    th_s = sp.Rational(1, 2) + sp.exp(-t) * sp.cos(x) / 4
    u_s = sp.exp(-t) * sp.sin(x) / 2
    a = co
    g_s = (a.alpha1 * sp.sin(th_s) ** 2 * sp.cos(th_s) ** 2
           + (a.alpha5 - a.alpha2) / 2 * sp.sin(th_s) ** 2
           + (a.alpha3 + a.alpha6) / 2 * sp.cos(th_s) ** 2 + a.alpha4 / 2)
    h_s = a.alpha3 * sp.cos(th_s) ** 2 - a.alpha2 * sp.sin(th_s) ** 2
    c_s = sp.sqrt(a.k1 * sp.cos(th_s) ** 2 + a.k3 * sp.sin(th_s) ** 2)
    f_u = sp.diff(u_s, t) - sp.diff(g_s * sp.diff(u_s, x) + h_s * sp.diff(th_s, t), x)
    f_th = (sp.diff(th_s, t, 2) + co.gamma1 * sp.diff(th_s, t)
            - c_s * sp.diff(c_s * sp.diff(th_s, x), x) + h_s * sp.diff(u_s, x))
    lam = lambda e: sp.lambdify((x, t), e, "numpy")
    return co, lam(u_s), lam(th_s), lam(sp.diff(th_s, t)), lam(f_u), lam(f_th)


class TestBasics:
    def test_zero_state_stays_zero(self):
        g = Grid1D(-8.0, 8.0, 129)
        state, _ = make_state(g, InitialData(), SPECIAL)
        traj = run(state, SPECIAL, DirectSolverConfig(dt=0.01, t_final=0.5, n_saves=6))
        assert all(e == 0.0 for e in traj.energies)
        assert np.all(traj.states[-1].u == 0.0)
        assert np.all(traj.states[-1].theta_t == 0.0)

    def test_step_zero_is_zero(self):
        g = Grid1D(-8.0, 8.0, 129)
        state, _ = make_state(g, InitialData(), SPECIAL)
        out = step(state, SPECIAL, 0.01)
        assert np.all(out.u == 0.0) and np.all(out.theta_t == 0.0)

    def test_step_cfl_violation_raises(self):
        g = Grid1D(-8.0, 8.0, 129)
        state, _ = make_state(g, InitialData(), SPECIAL)
        with pytest.raises(ValueError, match="CFL"):
            step(state, SPECIAL, 10 * g.dx)

    def test_trajectory_times_strictly_increasing(self):
        g = Grid1D(-8.0, 8.0, 129)
        state, _ = make_state(g, initial_data_preset("gaussian", theta_amp=0.2), SPECIAL)
        traj = run(state, SPECIAL, DirectSolverConfig(dt=0.01, t_final=0.3, n_saves=4))
        assert np.all(np.diff(traj.times) > 0)
        assert traj.states[0].t == 0.0
        np.testing.assert_array_equal(traj.states[0].theta, state.theta)

    def test_decoupled_heat_equation_matches_exact(self):
        # alpha2 = alpha3 = 0 gives h = 0, gamma1 = 0, g = alpha4/2 = 1
        heat = LeslieCoefficients(0.0, 0.0, 0.0, 2.0, 0.0, 0.0, k1=1.0, k3=1.0)
        g = Grid1D(-8.0, 8.0, 257)
        state, _ = make_state(g, InitialData(u0=gaussian_bump(1.0)), heat)
        traj = run(state, heat, DirectSolverConfig(dt=5e-4, t_final=0.5, n_saves=2))
        tf = traj.states[-1].t
        exact = np.exp(-g.x ** 2 / (1 + 4 * tf)) / np.sqrt(1 + 4 * tf)
        err = np.sqrt(g.integral((traj.states[-1].u - exact) ** 2))
        assert err < 5e-4


@pytest.fixture(scope="module")
def mms():
    return make_mms()


class TestManufactured:
    def run_mms(self, mms, n, nt, scheme):
        co, uf, thf, thtf, fu, fth = mms
        g = Grid1D(0.0, 2 * np.pi * (1 - 1.0 / n), n, boundary_mode="periodic")
        data = InitialData(u0=uf(g.x, 0.0), theta0=thf(g.x, 0.0), theta1=thtf(g.x, 0.0))
        st, _ = make_state(g, data, co)
        cfg = DirectSolverConfig(dt=0.5 / nt, t_final=0.5, scheme=scheme,
                                 n_saves=2, cfl_safety=1.0)
        tr = run(st, co, cfg, forcing_u=fu, forcing_theta=fth)
        s = tr.states[-1]
        return (np.max(np.abs(s.u - uf(g.x, s.t)))
                + np.max(np.abs(s.theta - thf(g.x, s.t))))

    def test_imex1_first_order_in_dt(self, mms):
        # errors vs a small-dt reference of the same spatial grid
        co, uf, thf, thtf, fu, fth = mms
        errs = [self.run_mms(mms, 256, nt, "imex1") for nt in (30, 60, 120)]
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 0.8), (errs, orders)

    def test_imex2_second_order_in_dt(self, mms):
        errs = []
        for n, nt in ((128, 15), (256, 30), (512, 60)):
            errs.append(self.run_mms(mms, n, nt, "imex2"))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.7), (errs, orders)


class TestSpecialCase:
    def test_special_case_matches_general_nodewise(self):
        g = Grid1D(-8.0, 8.0, 257)
        data = initial_data_preset("gaussian", theta_amp=0.3, u_amp=0.2, theta1_amp=0.1)
        state, _ = make_state(g, data, SPECIAL)
        cfg = DirectSolverConfig(dt=0.02, t_final=0.25, n_saves=4)
        t_gen = run(state, SPECIAL, cfg)
        t_spec = run_special_case(state, cfg)
        for a, b in zip(t_gen.states, t_spec.states):
            assert np.max(np.abs(a.u - b.u)) <= 1e-12
            assert np.max(np.abs(a.theta - b.theta)) <= 1e-12
            assert np.max(np.abs(a.theta_t - b.theta_t)) <= 1e-12

    def test_special_case_zero_data(self):
        g = Grid1D(-8.0, 8.0, 129)
        state, _ = make_state(g, InitialData(), SPECIAL)
        traj = run_special_case(state, DirectSolverConfig(dt=0.01, t_final=0.2))
        assert np.all(traj.states[-1].u == 0.0)

    def test_special_case_velocity_decays(self):
        g = Grid1D(-8.0, 8.0, 257)
        data = initial_data_preset("gaussian", u_amp=0.5, theta_amp=0.0)
        state, _ = make_state(g, data, SPECIAL)
        traj = run_special_case(state, DirectSolverConfig(dt=0.01, t_final=0.5, n_saves=3))
        peaks = [np.max(np.abs(s.u)) for s in traj.states]
        assert peaks[-1] < peaks[0]


class TestStructure:
    def test_energy_monotone_on_smooth_run(self):
        g = Grid1D(-8.0, 8.0, 513)
        data = initial_data_preset("gaussian", theta_amp=0.4, u_amp=0.3)
        state, _ = make_state(g, data, SPECIAL)
        traj = run(state, SPECIAL, DirectSolverConfig(dt=0.005, t_final=1.0, n_saves=11))
        e = np.array(traj.energies)
        assert np.all(np.diff(e) <= 1e-10)

    def test_undamped_uncoupled_wave_conserves_energy(self):
        co = preset("special-anisotropic")
        fns = CoefficientFunctions(co)
        drifts = []
        for n, dt in ((513, 4e-3), (1025, 2e-3)):
            g = Grid1D(-8.0, 8.0, n)
            data = initial_data_preset("gaussian", theta_amp=0.3)
            state, _ = make_state(g, data, co)
            cfg = DirectSolverConfig(dt=dt, t_final=1.0, n_saves=11,
                                     damping_on=False, coupling_on=False)
            traj = run(state, co, cfg)
            es = [energy(s, fns)[0] for s in traj.states]
            drifts.append(np.max(np.abs(np.array(es) - es[0])) / es[0])
        assert drifts[0] < 1e-3
        assert drifts[1] < 0.35 * drifts[0]  # second order in (dx, dt) jointly

    def test_parity_preserved(self):
        # the symmetry class of the system: u odd, theta even
        g = Grid1D(-8.0, 8.0, 257)
        u0 = 0.3 * g.x * np.exp(-g.x ** 2)
        th0 = 0.4 * np.exp(-g.x ** 2)
        state, _ = make_state(g, InitialData(u0=u0, theta0=th0), SPECIAL)
        traj = run(state, SPECIAL, DirectSolverConfig(dt=0.01, t_final=0.4, n_saves=3))
        for s in traj.states:
            assert np.max(np.abs(s.u + s.u[::-1])) < 1e-12
            assert np.max(np.abs(s.theta - s.theta[::-1])) < 1e-12

    def test_large_gradient_data_raises_blowup_flag_with_bounded_J(self):
        co = preset("special-anisotropic")
        g = Grid1D(-8.0, 8.0, 2049)
        data = initial_data_preset("cusp")
        state, _ = make_state(g, data, co)
        cfg = DirectSolverConfig(dt=1.0, t_final=0.8, n_saves=17, cfl_safety=0.45,
                                 blowup_ceiling=12.0)  # ~7x initial gradient scale
        traj = run(state, co, cfg)
        assert traj.blown_up and traj.blowup_time is not None
        sup_j = max(np.max(np.abs(s.J)) for s in traj.states)
        assert sup_j < 12.0  # J stayed an order below the tripping fields


class TestWaveSolver:
    def test_constant_state_is_stationary(self):
        g = Grid1D(-8.0, 8.0, 129)
        cfg = DirectSolverConfig(dt=0.01, t_final=0.5, n_saves=3)
        wt = run_wave(g, np.full(g.n, 0.4), np.zeros(g.n), SPECIAL, cfg, j_eval=None)
        assert np.max(np.abs(wt.theta[-1] - 0.4)) < 1e-14

    def test_wave_damping_dissipates(self):
        co = preset("soft-anisotropic")
        fns = CoefficientFunctions(co)
        g = Grid1D(-8.0, 8.0, 513)
        th0 = 0.3 * np.exp(-g.x ** 2)
        cfg = DirectSolverConfig(dt=0.005, t_final=1.0, n_saves=6)
        wt = run_wave(g, th0, np.zeros(g.n), co, cfg)
        es = [0.5 * g.integral(tt ** 2 + fns.c2(th) * g.ddx(th) ** 2)
              for th, tt in zip(wt.theta, wt.theta_t)]
        assert es[-1] < es[0]

    def test_wave_constant_source_pushes_theta(self):
        # J > 0 with h > 0 drives theta down near the center
        g = Grid1D(-8.0, 8.0, 257)
        cfg = DirectSolverConfig(dt=0.01, t_final=0.3, n_saves=2)
        j = lambda x, t: 0.5 * np.exp(-x ** 2)
        wt = run_wave(g, np.zeros(g.n), np.zeros(g.n), SPECIAL, cfg, j_eval=j)
        mid = g.n // 2
        assert wt.theta[-1][mid] < 0.0


def test_cancellation_monitor_smooth_run_quiet():
    g = Grid1D(-8.0, 8.0, 257)
    data = initial_data_preset("gaussian", theta_amp=0.3, u_amp=0.2, theta1_amp=0.1)
    state, _ = make_state(g, data, SPECIAL)
    traj = run(state, SPECIAL, DirectSolverConfig(dt=0.01, t_final=0.5, n_saves=6))
    rep = cancellation_monitor(traj, SPECIAL)
    assert not rep.blowup
    assert np.all(rep.max_theta_t <= rep.max_theta_t[0] * 2.0)

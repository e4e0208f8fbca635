"""Reference IMEX finite-difference solver for the coupled flow/director system.

The velocity diffusion (g(theta) u_x)_x is treated implicitly (backward Euler
for scheme "imex1", Crank-Nicolson for "imex2") with g frozen at the explicit
director angle; the wave part advances by damped leapfrog, which is neutrally
stable at CFL < 1 and integrates the damping term centered in time. Fluxes use
half-node coefficient averaging, mirroring the weak form.

Also hosts the finite-difference solver for the source-forced wave equation
  theta_tt + (gamma1 - h^2/g) theta_t = c (c theta_x)_x - h J(x,t),
used by the coupling loop in smooth regimes and by cross-solver checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import CoefficientFunctions, LeslieCoefficients
from .diagnostics import energy
from .grid_state import FloatArray, Grid1D, PhysicalState, refresh_derived

Forcing = Optional[Callable[[FloatArray, float], FloatArray]]


@dataclass(slots=True)
class DirectSolverConfig:
    dt: float
    t_final: float
    cfl_safety: float = 0.9
    scheme: str = "imex2"
    n_saves: int = 11
    save_times: Optional[Sequence[float]] = None
    blowup_ceiling: float = 1e6
    damping_on: bool = True    # test-only switch: gamma1 term in the wave
    coupling_on: bool = True   # test-only switch: both h-coupling sources

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.t_final <= 0:
            raise ValueError("dt and t_final must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.scheme not in ("imex1", "imex2"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def requested_save_times(self) -> np.ndarray:
        if self.save_times is not None:
            ts = np.asarray(sorted(self.save_times), dtype=float)
            if ts[0] < 0 or ts[-1] > self.t_final + 1e-12:
                raise ValueError("save times must lie in [0, t_final]")
            return ts
        return np.linspace(0.0, self.t_final, max(self.n_saves, 2))


@dataclass(slots=True)
class Trajectory:
    """Ordered snapshots of a run plus per-save energies and blowup info."""

    states: list[PhysicalState]
    dt: float
    scheme: str
    energies: list[float] = field(default_factory=list)
    blown_up: bool = False
    blowup_time: Optional[float] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def __post_init__(self) -> None:
        ts = self.times
        if len(ts) and np.any(np.diff(ts) <= 0):
            raise ValueError("snapshot times must be strictly increasing")


def cfl_dt(grid: Grid1D, fns: CoefficientFunctions, safety: float) -> float:
    return safety * grid.dx / fns.c_max()


# -- spatial operators -------------------------------------------------------

def _ddx2(f: FloatArray, dx: float, periodic: bool) -> FloatArray:
    if periodic:
        return (np.roll(f, -1) - np.roll(f, 1)) / (2 * dx)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * dx)
    out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * dx)
    out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * dx)
    return out


def _flux_div(coef: FloatArray, f: FloatArray, dx: float, periodic: bool) -> FloatArray:
    """D(coef * D f) with coef averaged to half nodes; zero at pinned ends."""
    out = np.zeros_like(f)
    if periodic:
        ch = 0.5 * (coef + np.roll(coef, -1))
        flux = ch * (np.roll(f, -1) - f) / dx      # flux_{i+1/2}
        out[:] = (flux - np.roll(flux, 1)) / dx
    else:
        ch = 0.5 * (coef[:-1] + coef[1:])
        flux = ch * np.diff(f) / dx
        out[1:-1] = np.diff(flux) / dx
    return out


def _product_flux_div(a: FloatArray, b: FloatArray, dx: float, periodic: bool) -> FloatArray:
    """D of the half-node average of (a*b): the conservative (a b)_x source."""
    ab = a * b
    out = np.zeros_like(ab)
    if periodic:
        half = 0.5 * (ab + np.roll(ab, -1))
        out[:] = (half - np.roll(half, 1)) / dx
    else:
        half = 0.5 * (ab[:-1] + ab[1:])
        out[1:-1] = np.diff(half) / dx
    return out


def _solve_diffusion(g_arr: FloatArray, rhs: FloatArray, coef: float, dx: float,
                     periodic: bool) -> FloatArray:
    """Solve (I - coef*L) u = rhs, L = flux-form diffusion with g at half nodes.

    Dirichlet rows pin the end values to rhs's end values in decay mode;
    periodic mode uses the Sherman-Morrison rank-one correction on the
    wrapped tridiagonal system.
    """
    n = rhs.size
    r = coef / dx ** 2
    if not periodic:
        gh = 0.5 * (g_arr[:-1] + g_arr[1:])
        lower = np.zeros(n)
        diag = np.ones(n)
        upper = np.zeros(n)
        diag[1:-1] = 1.0 + r * (gh[1:] + gh[:-1])
        upper[2:] = -r * gh[1:]     # superdiag entry for row i is at ab[0, i+1]
        lower[:-2] = -r * gh[:-1]
        ab = np.vstack([upper, diag, lower])
        return solve_banded((1, 1), ab, rhs)

    gh = 0.5 * (g_arr + np.roll(g_arr, -1))   # gh[i] couples i and i+1
    diag = 1.0 + r * (gh + np.roll(gh, 1))
    upper_val = -r * gh           # A[i, i+1] for i = 0..n-2 ; A[n-1, 0] = -r*gh[n-1]
    lower_val = -r * np.roll(gh, 1)

    # Sherman-Morrison: fold the two corner entries into u v^T
    a_corner = upper_val[-1]      # A[n-1, 0]
    b_corner = lower_val[0]       # A[0, n-1]
    gamma = -diag[0]
    d2 = diag.copy()
    d2[0] -= gamma
    d2[-1] -= a_corner * b_corner / gamma

    ab = np.zeros((3, n))
    ab[1] = d2
    ab[0, 1:] = upper_val[:-1]
    ab[2, :-1] = lower_val[1:]

    u = np.zeros(n)
    u[0] = gamma
    u[-1] = a_corner
    v = np.zeros(n)
    v[0] = 1.0
    v[-1] = b_corner / gamma

    y = solve_banded((1, 1), ab, rhs)
    q = solve_banded((1, 1), ab, u)
    return y - q * (v @ y) / (1.0 + v @ q)


# -- coupled system ----------------------------------------------------------

class _Stepper:
    """Internal leapfrog/IMEX kernel holding the per-run constants."""

    def __init__(self, grid: Grid1D, fns: CoefficientFunctions, config: DirectSolverConfig,
                 forcing_u: Forcing = None, forcing_theta: Forcing = None):
        self.grid = grid
        self.fns = fns
        self.cfg = config
        self.periodic = grid.boundary_mode == "periodic"
        self.gamma1 = fns.gamma1 if config.damping_on else 0.0
        self.forcing_u = forcing_u
        self.forcing_theta = forcing_theta

    def wave_rhs(self, theta: FloatArray, u: FloatArray, t: float) -> FloatArray:
        fns, g = self.fns, self.grid
        c = fns.c(theta)
        rhs = c * _flux_div(c, theta, g.dx, self.periodic)
        if self.cfg.coupling_on:
            rhs = rhs - fns.h(theta) * _ddx2(u, g.dx, self.periodic)
        if self.forcing_theta is not None:
            rhs = rhs + self.forcing_theta(g.x, t)
        return rhs

    def theta_step(self, th_prev: Optional[FloatArray], th: FloatArray,
                   theta_t0: Optional[FloatArray], u: FloatArray, t: float,
                   dt: float) -> FloatArray:
        """One leapfrog step; with th_prev None, the Taylor self-start."""
        rhs = self.wave_rhs(th, u, t)
        if th_prev is None:
            th_next = th + dt * theta_t0 + 0.5 * dt ** 2 * (rhs - self.gamma1 * theta_t0)
        else:
            a = 1.0 / dt ** 2 + self.gamma1 / (2 * dt)
            th_next = (rhs + (2 * th - th_prev) / dt ** 2
                       + self.gamma1 * th_prev / (2 * dt)) / a
        if not self.periodic:
            th_next[0], th_next[-1] = th[0], th[-1]
        return th_next

    def u_step(self, u: FloatArray, th_old: FloatArray, th_new: FloatArray,
               t: float, dt: float) -> FloatArray:
        fns, g = self.fns, self.grid
        theta_t_mid = (th_new - th_old) / dt
        if self.cfg.scheme == "imex1":
            g_arr = fns.g(th_old)
            h_arr = fns.h(th_old)
            rhs = u.copy()
            if self.cfg.coupling_on:
                rhs += dt * _product_flux_div(h_arr, theta_t_mid, g.dx, self.periodic)
            if self.forcing_u is not None:
                rhs += dt * self.forcing_u(g.x, t + dt)
            return _solve_diffusion(g_arr, rhs, dt, g.dx, self.periodic)
        # imex2: Crank-Nicolson with coefficients at the half step
        th_mid = 0.5 * (th_old + th_new)
        g_arr = fns.g(th_mid)
        h_arr = fns.h(th_mid)
        rhs = u + 0.5 * dt * _flux_div(g_arr, u, g.dx, self.periodic)
        if self.cfg.coupling_on:
            rhs += dt * _product_flux_div(h_arr, theta_t_mid, g.dx, self.periodic)
        if self.forcing_u is not None:
            rhs += dt * self.forcing_u(g.x, t + 0.5 * dt)
        return _solve_diffusion(g_arr, rhs, 0.5 * dt, g.dx, self.periodic)


def step(state: PhysicalState, coeffs: LeslieCoefficients | CoefficientFunctions,
         dt: float, config: Optional[DirectSolverConfig] = None) -> PhysicalState:
    """Advance one self-started step (exposed for composition and tests).

    Inside :func:`run` the multi-step leapfrog recursion is used instead; a
    single call here is its startup step, with theta_t updated by Heun.
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    cfg = config or DirectSolverConfig(dt=dt, t_final=dt)
    if dt > cfl_dt(state.grid, fns, cfg.cfl_safety) * (1 + 1e-12):
        raise ValueError("dt violates the wave CFL bound")
    stepper = _Stepper(state.grid, fns, cfg)
    th_next = stepper.theta_step(None, state.theta, state.theta_t, state.u, state.t, dt)
    u_next = stepper.u_step(state.u, state.theta, th_next, state.t, dt)
    rhs0 = stepper.wave_rhs(state.theta, state.u, state.t) - stepper.gamma1 * state.theta_t
    th_t1 = state.theta_t + dt * rhs0  # predictor
    rhs1 = stepper.wave_rhs(th_next, u_next, state.t + dt) - stepper.gamma1 * th_t1
    th_t_next = state.theta_t + 0.5 * dt * (rhs0 + rhs1)
    if not stepper.periodic:
        th_t_next[0], th_t_next[-1] = state.theta_t[0], state.theta_t[-1]
    if not np.all(np.isfinite(u_next)):
        raise FloatingPointError("implicit velocity solve produced non-finite values")
    out = PhysicalState(grid=state.grid, t=state.t + dt, u=u_next, theta=th_next,
                        theta_t=th_t_next, J0=state.J0, A0=state.A0)
    return refresh_derived(out, fns)


def run(state: PhysicalState, coeffs: LeslieCoefficients | CoefficientFunctions,
        config: DirectSolverConfig, forcing_u: Forcing = None,
        forcing_theta: Forcing = None) -> Trajectory:
    """Integrate the coupled system, saving snapshots at the requested times.

    The time step is the requested dt capped by the CFL bound and snapped so
    that every save time is an integer number of steps. Blowup (either field
    magnitude above config.blowup_ceiling, or a non-finite value) stops the
    run and raises the trajectory flag instead of crashing.
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    grid = state.grid
    dt_max = min(config.dt, cfl_dt(grid, fns, config.cfl_safety))
    n_steps = max(1, int(np.ceil(config.t_final / dt_max - 1e-12)))
    dt = config.t_final / n_steps
    save_steps = sorted({int(round(ts / dt)) for ts in config.requested_save_times()})

    stepper = _Stepper(grid, fns, config, forcing_u, forcing_theta)
    traj = Trajectory(states=[], dt=dt, scheme=config.scheme)

    th_prev: Optional[FloatArray] = None
    th = state.theta.copy()
    th_t0 = state.theta_t.copy()
    u = state.u.copy()
    pending: Optional[tuple[int, FloatArray, FloatArray]] = None  # (step, theta, u)

    def emit(k: int, theta_k, u_k, theta_t_k) -> None:
        snap = PhysicalState(grid=grid, t=k * dt, u=u_k.copy(), theta=theta_k.copy(),
                             theta_t=theta_t_k.copy(), J0=state.J0, A0=state.A0)
        refresh_derived(snap, fns)
        traj.states.append(snap)
        traj.energies.append(energy(snap, fns)[1])

    if 0 in save_steps:
        emit(0, th, u, th_t0)

    for k in range(n_steps + 1):  # one extra step to center theta_t at n_steps
        t_k = k * dt
        th_next = stepper.theta_step(th_prev, th, th_t0 if th_prev is None else None,
                                     u, t_k, dt)
        u_next = stepper.u_step(u, th, th_next, t_k, dt)

        if not (np.all(np.isfinite(th_next)) and np.all(np.isfinite(u_next))):
            traj.blown_up = True
            traj.blowup_time = t_k
            break

        if pending is not None:
            j, th_j, u_j = pending
            emit(j, th_j, u_j, (th_next - th_prev) / (2 * dt))
            pending = None

        theta_t_mid = (th_next - th) / dt
        u_x = _ddx2(u_next, grid.dx, stepper.periodic)
        peak = max(np.max(np.abs(theta_t_mid)), np.max(np.abs(u_x)))
        if peak > config.blowup_ceiling:
            traj.blown_up = True
            traj.blowup_time = t_k + dt
            break

        if (k + 1) in save_steps and k + 1 <= n_steps:
            pending = (k + 1, th_next, u_next)

        th_prev, th, u = th, th_next, u_next

    return traj


def run_special_case(state: PhysicalState, config: DirectSolverConfig) -> Trajectory:
    """Dedicated integration of the constant-coefficient special system.

    g = h = 1 and gamma1 = 2 are hard-coded through a constant-coefficient
    evaluator; the discretization is identical to :func:`run`, so under the
    special preset the two paths agree to machine precision.
    """
    return run(state, _SPECIAL_FNS, config)


class _ConstantSpecialFns(CoefficientFunctions):
    """g = h = 1, gamma1 = 2, gamma2 = 0, with k1 = k3 = 1."""

    def __init__(self) -> None:
        from .coefficients import preset
        super().__init__(preset("chl20-special"))

    def g(self, theta):
        return np.ones_like(theta)

    def h(self, theta):
        return np.ones_like(theta)

    def c(self, theta):
        return np.ones_like(theta)

    def c2(self, theta):
        return np.ones_like(theta)

    def dg(self, theta):
        return np.zeros_like(theta)

    def dh(self, theta):
        return np.zeros_like(theta)

    def dc(self, theta):
        return np.zeros_like(theta)


_SPECIAL_FNS = _ConstantSpecialFns()


# -- source-forced wave equation ----------------------------------------------

@dataclass(slots=True)
class WaveTrajectory:
    grid: Grid1D
    times: FloatArray
    theta: list[FloatArray]
    theta_t: list[FloatArray]

    def theta_x(self) -> list[FloatArray]:
        return [self.grid.ddx(th) for th in self.theta]


def run_wave(grid: Grid1D, theta0: FloatArray, theta1: FloatArray,
             coeffs: LeslieCoefficients | CoefficientFunctions,
             config: DirectSolverConfig,
             j_eval: Optional[Callable[[FloatArray, float], FloatArray]] = None,
             ) -> WaveTrajectory:
    """FD leapfrog for the J-forced wave equation with damping gamma1 - h^2/g.

    j_eval(x_array, t) prescribes the source; None means J = 0. The damping
    coefficient is evaluated at the current angle and integrated centered, so
    positivity of the damping keeps the recursion contractive.
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    periodic = grid.boundary_mode == "periodic"
    dt_max = min(config.dt, cfl_dt(grid, fns, config.cfl_safety))
    n_steps = max(1, int(np.ceil(config.t_final / dt_max - 1e-12)))
    dt = config.t_final / n_steps
    save_steps = sorted({int(round(ts / dt)) for ts in config.requested_save_times()})

    def rhs_of(th, t):
        c = fns.c(th)
        r = c * _flux_div(c, th, grid.dx, periodic)
        if j_eval is not None:
            r = r - fns.h(th) * j_eval(grid.x, t)
        return r

    times, thetas, theta_ts = [], [], []
    th = np.asarray(theta0, dtype=float).copy()
    th_t0 = np.asarray(theta1, dtype=float).copy()
    th_prev = None
    pending = None

    if 0 in save_steps:
        times.append(0.0)
        thetas.append(th.copy())
        theta_ts.append(th_t0.copy())

    for k in range(n_steps + 1):
        beta = fns.damping_b(th) if config.damping_on else np.zeros_like(th)
        rhs = rhs_of(th, k * dt)
        if th_prev is None:
            th_next = th + dt * th_t0 + 0.5 * dt ** 2 * (rhs - beta * th_t0)
        else:
            a = 1.0 / dt ** 2 + beta / (2 * dt)
            th_next = (rhs + (2 * th - th_prev) / dt ** 2 + beta * th_prev / (2 * dt)) / a
        if not periodic:
            th_next[0], th_next[-1] = th[0], th[-1]

        if pending is not None:
            j, th_j = pending
            times.append(j * dt)
            thetas.append(th_j)
            theta_ts.append((th_next - th_prev) / (2 * dt))
            pending = None
        if (k + 1) in save_steps and k + 1 <= n_steps:
            pending = (k + 1, th_next.copy())
        th_prev, th = th, th_next

    return WaveTrajectory(grid=grid, times=np.array(times), theta=thetas,
                          theta_t=theta_ts)

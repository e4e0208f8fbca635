"""The coupling loop: iterate J -> A_x(J) + J0 to a fixed point.

One application of the map chains the three sub-solves:
  1. wave solve of the J-forced director equation (FD in smooth mode,
     characteristic solver near gradient blowup),
  2. kernel (or FD) solve of the flow potential v with source h(theta)theta_t,
  3. kernel solve of the compatibility potential A driven by F + g' theta_x J,
and returns A_x + J0. The discrete loop is damped Picard; the continuum
argument only guarantees existence (compactness), so non-convergence is a
reported outcome, not an exception.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .coefficients import CoefficientFunctions, LeslieCoefficients
from .diagnostics import energy
from .direct_solver import DirectSolverConfig, run_wave
from .grid_state import FloatArray, Grid1D, PhysicalState
from .parabolic_kernel import (
    KernelOps,
    KernelQuadrature,
    ThetaField,
    assemble_F,
    solve_A_kernel,
    solve_v_kernel,
)
from .wave_characteristic import (
    CharConfig,
    integrate_semilinear,
    make_j_eval_bilinear,
    map_back,
    to_characteristic,
)


@dataclass(slots=True)
class FixedPointConfig:
    t_final: float = 0.5
    n_times: int = 11              # lattice slices of the space-time iterate
    tol: float = 1e-6
    max_iter: int = 50
    relaxation: float = 0.7
    alpha: float = 0.2             # Hölder exponent for norm reporting
    lam: Optional[float] = None    # weighted-norm rate; None = calibrated rule
    wave_solver: str = "auto"      # fd | characteristic | auto
    v_solver: str = "fd"           # fd | kernel
    wave_dt: float = 2e-3
    char_nx: int = 193
    quad: KernelQuadrature = field(default_factory=KernelQuadrature)

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        if not 0 < self.alpha < 0.25:
            raise ValueError("alpha must lie in (0, 1/4)")
        if self.wave_solver not in ("fd", "characteristic", "auto"):
            raise ValueError(f"unknown wave solver {self.wave_solver!r}")
        if self.v_solver not in ("fd", "kernel"):
            raise ValueError(f"unknown v solver {self.v_solver!r}")


@dataclass(slots=True)
class MapResult:
    J_new: FloatArray
    theta: FloatArray
    theta_t: FloatArray
    theta_x: FloatArray
    v: FloatArray
    v_x: FloatArray
    A: FloatArray
    A_x: FloatArray
    wave_used: str


@dataclass(slots=True)
class FixedPointReport:
    times: FloatArray
    x: FloatArray
    residual_sup: list[float]
    residual_l2: list[float]
    residual_weighted: list[float]
    ball_norms: list[float]
    k_T: float
    c0_estimate: float
    lam: float
    converged: bool
    diverged: bool
    n_iter: int
    J: FloatArray
    theta: FloatArray
    v: FloatArray
    A: FloatArray
    u: FloatArray

    def as_dict(self) -> dict:
        return {
            "converged": self.converged, "diverged": self.diverged,
            "n_iter": self.n_iter, "k_T": self.k_T, "lam": self.lam,
            "c0_estimate": self.c0_estimate,
            "residual_sup": self.residual_sup,
            "residual_l2": self.residual_l2,
            "residual_weighted": self.residual_weighted,
            "ball_norms": self.ball_norms,
            "ball_ok": bool(all(b <= self.k_T for b in self.ball_norms)),
        }


# -- weighted norms ------------------------------------------------------------

def weighted_norms(values: FloatArray, x: FloatArray, times: FloatArray,
                   lam: float, alpha: float = 0.2, n_random: int = 10_000,
                   seed: int = 0) -> dict[str, float]:
    """Exponentially weighted sup/L2/Hölder norms of a space-time field.

    The weight e^{-lam t} sits at the base point of each difference quotient;
    lam = 0 reduces to the ordinary norms.
    """
    v = np.atleast_2d(np.asarray(values, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    wt = np.exp(-lam * times)[:, None]
    vw = wt * v
    sup = float(np.max(np.abs(vw)))
    if len(times) > 1:
        slab = np.trapezoid(vw ** 2, times, axis=0)
    else:
        slab = vw[0] ** 2
    l2 = float(np.sqrt(np.trapezoid(slab, x)))

    nt, nx = v.shape
    quotients = [0.0]
    dx = np.diff(x)
    if nx > 1:
        q = np.abs(np.diff(vw, axis=1)) / dx[None, :] ** alpha
        quotients.append(float(np.max(q)))
    if nt > 1:
        dt = np.diff(times)[:, None]
        q = np.abs(np.diff(v, axis=0)) * wt[:-1] / dt ** alpha
        quotients.append(float(np.max(q)))
    rng = np.random.default_rng(seed)
    i1, i2 = rng.integers(0, nt, (2, n_random))
    j1, j2 = rng.integers(0, nx, (2, n_random))
    keep = (i1 != i2) | (j1 != j2)
    if np.any(keep):
        i1, i2, j1, j2 = i1[keep], i2[keep], j1[keep], j2[keep]
        dist = np.hypot(x[j1] - x[j2], times[i1] - times[i2])
        q = np.exp(-lam * np.minimum(times[i1], times[i2])) \
            * np.abs(v[i1, j1] - v[i2, j2]) / dist ** alpha
        quotients.append(float(np.max(q)))
    return {"sup": sup, "l2": l2, "holder": max(quotients)}


def default_lambda(e0: float, t_final: float, fns: CoefficientFunctions) -> float:
    """Weight rate sufficient for the contraction bookkeeping (diagnostic only)."""
    lam1 = (2 * np.sqrt(2)) ** 8 * t_final * e0 ** 8
    lam2 = 36.0 * e0 ** 2 * fns.dg_max() ** 2 * t_final
    return max(lam1, lam2, 1.0)


def ball_radius_k_T(J0: FloatArray, grid: Grid1D, t_final: float, c0: float,
                    alpha: float = 0.2) -> float:
    """Radius 2(||J0||_{C^alpha ∩ L2 ∩ Linf} + max(C0, C0^2) T^2) of the iterate ball."""
    sup = float(np.max(np.abs(J0)))
    l2 = float(np.sqrt(grid.integral(J0 ** 2)))
    dq = np.abs(np.diff(J0)) / grid.dx ** alpha
    holder = sup + (float(np.max(dq)) if dq.size else 0.0)
    norm = max(holder, l2, sup)
    return 2.0 * (norm + max(c0, c0 ** 2) * t_final ** 2)


# -- one application of the coupling map ----------------------------------------

def map_M(J: FloatArray, state0: PhysicalState,
          coeffs: LeslieCoefficients | CoefficientFunctions,
          config: FixedPointConfig,
          times: Optional[FloatArray] = None) -> MapResult:
    """Evaluate the coupling map on a space-time iterate J (shape nt, nx).

    Returns the new iterate A_x + J0 along with every intermediate field.
    The input J keeps its initial slice equal to J0 by construction of the
    output; sub-solver failures propagate with a stage tag.
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    grid = state0.grid
    if times is None:
        times = np.linspace(0.0, config.t_final, config.n_times)
    J = np.asarray(J, dtype=float)
    j_eval = make_j_eval_bilinear(grid.x, times, J)

    # 1. wave solve
    try:
        theta, theta_t, theta_x, wave_used = _wave_stage(
            J, j_eval, state0, fns, config, times)
    except Exception as err:
        raise RuntimeError(f"coupling map failed in the wave stage: {err}") from err

    tf = ThetaField(grid.x, times, theta)

    # 2. flow potential
    v0 = grid.antider(state0.u)
    try:
        if config.v_solver == "kernel":
            v, v_x = solve_v_kernel(tf, theta_t, v0, fns, grid.x, times,
                                    quad=config.quad)
        else:
            v, v_x = _v_fd(tf, theta_t, v0, fns, grid, times, config)
    except Exception as err:
        raise RuntimeError(f"coupling map failed in the flow stage: {err}") from err

    # 3. compatibility potential
    try:
        A, A_x = solve_A_kernel(tf, theta_t, theta_x, v_x, J, state0.J0, fns,
                                grid, times, quad=config.quad)
    except Exception as err:
        raise RuntimeError(f"coupling map failed in the potential stage: {err}") from err

    J_new = A_x + state0.J0[None, :]
    J_new[0] = state0.J0
    return MapResult(J_new=J_new, theta=theta, theta_t=theta_t, theta_x=theta_x,
                     v=v, v_x=v_x, A=A, A_x=A_x, wave_used=wave_used)


def _wave_stage(J, j_eval, state0, fns, config, times):
    grid = state0.grid
    choice = config.wave_solver
    if choice in ("fd", "auto"):
        wcfg = DirectSolverConfig(dt=config.wave_dt, t_final=float(times[-1]),
                                  save_times=times, cfl_safety=0.45)
        wt = run_wave(grid, state0.theta, state0.theta_t, fns, wcfg,
                      j_eval=lambda x, t: j_eval(x, np.full_like(x, t)))
        theta = np.stack(wt.theta)
        theta_t = np.stack(wt.theta_t)
        theta_x = np.stack([grid.ddx(th) for th in wt.theta])
        # near-singular detection: switch to the characteristic solver when
        # the compactified gradients approach the cusp range
        c = fns.c(theta)
        r = np.max(np.abs(2 * np.arctan(theta_t + c * theta_x)))
        s = np.max(np.abs(2 * np.arctan(theta_t - c * theta_x)))
        if choice == "fd" or max(r, s) < np.pi / 2:
            return theta, theta_t, theta_x, "fd"
    ccfg = CharConfig(n_x=config.char_nx, t_stop=float(times[-1]) * 1.05)
    chg = to_characteristic(grid, state0.theta, state0.theta_t, fns, ccfg)
    cst = integrate_semilinear(chg, fns, j_eval, ccfg)
    slices = map_back(cst, grid, times, fns)
    theta = np.stack([np.where(sl.covered, sl.theta, state0.theta) for sl in slices])
    theta_t = np.stack([np.where(sl.derivative_ok, sl.theta_t, 0.0) for sl in slices])
    theta_x = np.stack([np.where(sl.derivative_ok, sl.theta_x, 0.0) for sl in slices])
    theta[0], theta_t[0] = state0.theta, state0.theta_t
    theta_x[0] = grid.ddx(state0.theta)
    return theta, theta_t, theta_x, "characteristic"


def _v_fd(tf: ThetaField, theta_t: FloatArray, v0: FloatArray,
          fns: CoefficientFunctions, grid: Grid1D, times: FloatArray,
          config: FixedPointConfig) -> tuple[FloatArray, FloatArray]:
    """Crank-Nicolson integration of v_t = g v_xx + h theta_t on the grid."""
    from .direct_solver import _solve_diffusion

    nt = len(times)
    v = np.zeros((nt, grid.n))
    v[0] = v0
    periodic = grid.boundary_mode == "periodic"
    n_sub = max(1, int(np.ceil((times[1] - times[0]) / config.wave_dt)))
    for k in range(nt - 1):
        dt = (times[k + 1] - times[k]) / n_sub
        cur = v[k].copy()
        for m in range(n_sub):
            tm = times[k] + (m + 0.5) * dt
            th_m = tf(grid.x, np.full(grid.n, tm))
            g_arr = fns.g(th_m)
            lam = (tm - times[k]) / (times[k + 1] - times[k])
            tt_m = (1 - lam) * theta_t[k] + lam * theta_t[k + 1]
            rhs = cur + 0.5 * dt * _lap(g_arr, cur, grid, periodic) \
                + dt * fns.h(th_m) * tt_m
            cur = _solve_diffusion(g_arr, rhs, 0.5 * dt, grid.dx, periodic)
        v[k + 1] = cur
    v_x = np.stack([grid.ddx(v[k]) for k in range(nt)])
    return v, v_x


def _lap(g_arr, f, grid, periodic):
    from .direct_solver import _flux_div
    return _flux_div(g_arr, f, grid.dx, periodic)


# -- the Picard loop -------------------------------------------------------------

def iterate(state0: PhysicalState,
            coeffs: LeslieCoefficients | CoefficientFunctions,
            config: FixedPointConfig) -> FixedPointReport:
    """Damped Picard iteration of the coupling map from J(x, t) = J0(x).

    Divergence (secularly growing residual) sets the `diverged` flag in the
    report rather than raising. Ball membership ||J^k|| <= k_T is recorded
    per iterate with the radius from the initial data and source bounds.
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    grid = state0.grid
    times = np.linspace(0.0, config.t_final, config.n_times)
    J = np.tile(state0.J0, (config.n_times, 1))

    _, e0 = energy(state0, fns)
    lam = config.lam if config.lam is not None else default_lambda(e0, config.t_final, fns)

    res_sup: list[float] = []
    res_l2: list[float] = []
    res_wt: list[float] = []
    ball: list[float] = []
    converged = False
    diverged = False
    growth = 0
    last: Optional[MapResult] = None
    c0_est = 0.0

    n_done = 0
    for it in range(config.max_iter):
        result = map_M(J, state0, fns, config, times=times)
        n_done = it + 1
        J_new = (1 - config.relaxation) * J + config.relaxation * result.J_new
        J_new[0] = state0.J0
        diff = J_new - J
        r_sup = float(np.max(np.abs(diff)))
        slab = np.trapezoid(diff ** 2, times, axis=0)
        r_l2 = float(np.sqrt(np.trapezoid(slab, grid.x)))
        r_wt = float(np.max(np.exp(-lam * times)[:, None] * np.abs(diff)))
        res_sup.append(r_sup)
        res_l2.append(r_l2)
        res_wt.append(r_wt)

        nb = weighted_norms(J_new, grid.x, times, 0.0, config.alpha)
        ball.append(max(nb["sup"], nb["l2"], nb["sup"] + nb["holder"]))

        F_G, F_f = _split_F_norms(result, state0, fns, grid, times)
        c0_est = max(c0_est, F_G, F_f)

        J = J_new
        last = result
        if r_sup < config.tol:
            converged = True
            break
        if len(res_sup) > 1 and r_sup > res_sup[-2]:
            growth += 1
            if growth >= 5:
                diverged = True
                break
        else:
            growth = 0

    k_T = ball_radius_k_T(state0.J0, grid, config.t_final, c0_est, config.alpha)
    assert last is not None
    return FixedPointReport(times=times, x=grid.x, residual_sup=res_sup,
                            residual_l2=res_l2, residual_weighted=res_wt,
                            ball_norms=ball, k_T=k_T, c0_estimate=c0_est,
                            lam=lam, converged=converged, diverged=diverged,
                            n_iter=n_done, J=J, theta=last.theta, v=last.v,
                            A=last.A, u=last.v_x)


def _split_F_norms(result: MapResult, state0, fns, grid, times):
    """||G||_inf and ||f||_{Linf L2} of the split source, for the C0 estimate."""
    F = assemble_F(ThetaField(grid.x, times, result.theta), result.theta_t,
                   result.theta_x, result.v_x, state0.J0, fns, grid, times)
    th = result.theta
    damp = fns.gamma1 - fns.h(th) ** 2 / fns.g(th)
    f_part = (damp * result.v_x
              + fns.h(th) * fns.c2(th) / fns.g(th) * result.theta_x
              + fns.g(th) * grid.ddx(state0.J0)[None, :])
    G_part = F - f_part
    g_inf = float(np.max(np.abs(G_part)))
    f_l2 = float(np.max([np.sqrt(grid.integral(f_part[k] ** 2))
                         for k in range(len(times))]))
    return g_inf, f_l2


# -- a.e. identity checks ---------------------------------------------------------

def consistency_J(trajectory, coeffs) -> dict[str, list[float]]:
    """Per-slice L2 residuals of J = v_t/g and J = u_x + (h/g) theta_t.

    v_t is centered time differencing of the stored flow potential; the first
    and last slices use one-sided differences.
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    states = trajectory.states
    grid = states[0].grid
    times = np.array([s.t for s in states])
    v = np.stack([s.v for s in states])
    out = {"j_vt": [], "j_compat": [], "times": times.tolist()}
    for k, s in enumerate(states):
        if k == 0:
            v_t = (v[1] - v[0]) / (times[1] - times[0])
        elif k == len(states) - 1:
            v_t = (v[-1] - v[-2]) / (times[-1] - times[-2])
        else:
            v_t = (v[k + 1] - v[k - 1]) / (times[k + 1] - times[k - 1])
        r1 = s.J - v_t / fns.g(s.theta)
        r2 = s.J - grid.ddx(s.u) - fns.h(s.theta) / fns.g(s.theta) * s.theta_t
        out["j_vt"].append(float(np.sqrt(grid.integral(r1 ** 2))))
        out["j_compat"].append(float(np.sqrt(grid.integral(r2 ** 2))))
    return out

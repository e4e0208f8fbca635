"""Energy accounting, dissipation verification, Hölder moduli, and blowup monitors.

Everything here is a pure function of states/trajectories; no solver imports.
A trajectory is anything with `.states` (list of PhysicalState) — duck typed
so both the direct solver and the fixed-point loop can feed reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .coefficients import CoefficientFunctions, LeslieCoefficients
from .grid_state import FloatArray, PhysicalState

# Calibrated once on the shipped smooth presets (imex2, leapfrog wave) with a
# 4x safety margin, then frozen; see tests/test_diagnostics.py for the runs
# used. tol = C1*dx^2 + C2*dt.
DISSIPATION_CAL = {"version": 1, "c1": 40.0, "c2": 2.0}

BLOWUP_GROWTH_FACTOR = 1e3


def _fns(coeffs) -> CoefficientFunctions:
    return coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)


def energy(state: PhysicalState, coeffs: LeslieCoefficients | CoefficientFunctions,
           ) -> tuple[float, float]:
    """Wave energy E = (1/2)∫(theta_t² + c²theta_x²) and total 𝓔 = ∫(... + u²)."""
    fns = _fns(coeffs)
    g = state.grid
    th_x = g.ddx(state.theta)
    wave_density = state.theta_t ** 2 + fns.c2(state.theta) * th_x ** 2
    e = 0.5 * g.integral(wave_density)
    cal_e = g.integral(wave_density + state.u ** 2)
    return e, cal_e


def dissipation_tolerance(dx: float, dt: float) -> float:
    return DISSIPATION_CAL["c1"] * dx ** 2 + DISSIPATION_CAL["c2"] * dt


@dataclass(slots=True)
class EnergyReport:
    times: FloatArray
    e_wave: FloatArray          # E(t)
    e_total: FloatArray         # 𝓔(t)
    dissipation: FloatArray     # cumulative D(t), compatibility-field form
    dissipation_alt: FloatArray  # cumulative D(t) using the stored J field
    residual: FloatArray        # r(t) = 𝓔(t) - 𝓔(0) + D(t)
    tol: float
    passed: bool
    monotone: bool

    def max_residual(self) -> float:
        return float(np.max(self.residual))

    def as_dict(self) -> dict:
        return {
            "tol": self.tol, "passed": self.passed, "monotone": self.monotone,
            "max_residual": self.max_residual(),
            "times": self.times.tolist(),
            "e_wave": self.e_wave.tolist(),
            "e_total": self.e_total.tolist(),
            "dissipation": self.dissipation.tolist(),
            "residual": self.residual.tolist(),
        }


def dissipation_check(trajectory, coeffs, tol: Optional[float] = None,
                      sign: float = 1.0) -> EnergyReport:
    """Verify 𝓔(t) ≤ 𝓔(0) - D(t) up to the discretization tolerance.

    D(t) accumulates ∫(u_x + (h/g)theta_t)² + theta_t² dx by time-trapezoid
    over the saved slices (and again with the stored J field, which differs
    only for externally supplied J iterates). `sign` = -1 is the test-only
    switch that negates the damping integrand to prove the check can fail.
    """
    fns = _fns(coeffs)
    states: Sequence[PhysicalState] = trajectory.states
    grid = states[0].grid
    times = np.array([s.t for s in states])
    e_wave = np.empty(len(states))
    e_total = np.empty(len(states))
    d_rate = np.empty(len(states))
    d_rate_alt = np.empty(len(states))
    for i, s in enumerate(states):
        e_wave[i], e_total[i] = energy(s, fns)
        compat = grid.ddx(s.u) + fns.h(s.theta) / fns.g(s.theta) * s.theta_t
        d_rate[i] = grid.integral(compat ** 2 + s.theta_t ** 2)
        d_rate_alt[i] = grid.integral(s.J ** 2 + s.theta_t ** 2)
    d_cum = _cumtrapz(sign * d_rate, times)
    d_cum_alt = _cumtrapz(sign * d_rate_alt, times)
    residual = e_total - e_total[0] + d_cum
    if tol is None:
        dt = float(np.min(np.diff(times))) if len(times) > 1 else 0.0
        tol = dissipation_tolerance(grid.dx, getattr(trajectory, "dt", dt))
    monotone = bool(np.all(np.diff(e_total) <= tol))
    return EnergyReport(times=times, e_wave=e_wave, e_total=e_total,
                        dissipation=d_cum, dissipation_alt=d_cum_alt,
                        residual=residual, tol=tol,
                        passed=bool(np.max(residual) <= tol), monotone=monotone)


def _cumtrapz(y: FloatArray, x: FloatArray) -> FloatArray:
    out = np.zeros_like(y)
    if len(y) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


# -- Hölder modulus ----------------------------------------------------------

@dataclass(slots=True)
class HolderReport:
    alpha: float
    quotient: float
    adjacent_quotient: float
    random_quotient: float
    n_pairs: int


def holder_quotient(values: FloatArray, x: FloatArray, times: FloatArray,
                    alpha: float, n_random: int = 10_000, seed: int = 0,
                    ) -> HolderReport:
    """Empirical sup |f(p)-f(q)| / ||p-q||^alpha over a space-time lattice.

    values has shape (nt, nx). All x- and t-adjacent pairs enter, plus
    n_random seeded random pairs; the result is a lower bound for the true
    seminorm and is deterministic for fixed seed.
    """
    v = np.atleast_2d(np.asarray(values, dtype=float))
    nt, nx = v.shape
    x = np.asarray(x, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))

    quotients = []
    dvx = np.abs(np.diff(v, axis=1))
    hx = np.abs(np.diff(x))
    quotients.append(np.max(dvx / hx ** alpha) if dvx.size else 0.0)
    if nt > 1:
        dvt = np.abs(np.diff(v, axis=0))
        ht = np.abs(np.diff(times))[:, None]
        quotients.append(np.max(dvt / ht ** alpha))
    adjacent = float(max(quotients))

    rng = np.random.default_rng(seed)
    i1 = rng.integers(0, nt, n_random)
    j1 = rng.integers(0, nx, n_random)
    i2 = rng.integers(0, nt, n_random)
    j2 = rng.integers(0, nx, n_random)
    keep = (i1 != i2) | (j1 != j2)
    i1, j1, i2, j2 = i1[keep], j1[keep], i2[keep], j2[keep]
    dist = np.hypot(x[j1] - x[j2], times[i1] - times[i2])
    q_rand = np.abs(v[i1, j1] - v[i2, j2]) / dist ** alpha
    random_q = float(np.max(q_rand)) if q_rand.size else 0.0

    return HolderReport(alpha=alpha, quotient=max(adjacent, random_q),
                        adjacent_quotient=adjacent, random_quotient=random_q,
                        n_pairs=int(dvx.size + (nt - 1) * nx + i1.size))


def holder_quotient_trajectory(trajectory, field: str, alpha: float,
                               seed: int = 0) -> HolderReport:
    states = trajectory.states
    grid = states[0].grid
    vals = np.stack([getattr(s, field) for s in states])
    times = np.array([s.t for s in states])
    return holder_quotient(vals, grid.x, times, alpha, seed=seed)


# -- singularity / cancellation ----------------------------------------------

@dataclass(slots=True)
class SingularityReport:
    times: FloatArray
    max_theta_t: FloatArray
    max_u_x: FloatArray
    max_r: FloatArray
    max_s: FloatArray
    sup_j: FloatArray
    blowup: bool
    blowup_time: Optional[float]
    cancellation_ratio: float = field(default=np.nan)

    def as_dict(self) -> dict:
        return {
            "blowup": self.blowup, "blowup_time": self.blowup_time,
            "cancellation_ratio": self.cancellation_ratio,
            "times": self.times.tolist(),
            "max_theta_t": self.max_theta_t.tolist(),
            "max_u_x": self.max_u_x.tolist(),
            "sup_j": self.sup_j.tolist(),
        }


def cancellation_monitor(trajectory, coeffs,
                         threshold_factor: float = BLOWUP_GROWTH_FACTOR,
                         ) -> SingularityReport:
    """Track gradient growth against the boundedness of the compatibility field.

    The blowup flag raises when max(|theta_t|, |u_x|) exceeds
    threshold_factor times its initial value (or when the solver already
    flagged the run). The cancellation ratio growth(sup|J|)/growth(max|theta_t|)
    is reported once max|theta_t| has at least doubled, else NaN.
    """
    fns = _fns(coeffs)
    states = trajectory.states
    grid = states[0].grid
    times = np.array([s.t for s in states])
    n = len(states)
    m_tt, m_ux, m_r, m_s, m_j = (np.empty(n) for _ in range(5))
    for i, s in enumerate(states):
        th_x = grid.ddx(s.theta)
        c = fns.c(s.theta)
        m_tt[i] = np.max(np.abs(s.theta_t))
        m_ux[i] = np.max(np.abs(grid.ddx(s.u)))
        m_r[i] = np.max(np.abs(s.theta_t + c * th_x))
        m_s[i] = np.max(np.abs(s.theta_t - c * th_x))
        m_j[i] = np.max(np.abs(s.J))

    base = max(m_tt[0], m_ux[0], 1e-12)
    grown = np.maximum(m_tt, m_ux) > threshold_factor * base
    blowup = bool(np.any(grown)) or bool(getattr(trajectory, "blown_up", False))
    if np.any(grown):
        blowup_time = float(times[np.argmax(grown)])
    else:
        blowup_time = getattr(trajectory, "blowup_time", None)

    ratio = np.nan
    if m_tt[0] > 0 and np.max(m_tt) >= 2.0 * m_tt[0] and m_j[0] > 0:
        ratio = (np.max(m_j) / m_j[0]) / (np.max(m_tt) / m_tt[0])

    return SingularityReport(times=times, max_theta_t=m_tt, max_u_x=m_ux,
                             max_r=m_r, max_s=m_s, sup_j=m_j, blowup=blowup,
                             blowup_time=blowup_time, cancellation_ratio=float(ratio))

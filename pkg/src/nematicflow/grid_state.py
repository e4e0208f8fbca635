"""1-D grid, physical state container, initial data, and discrete calculus.

The unbounded line is truncated to [x_min, x_max]. In "decay" mode the data
must be effectively supported away from the ends (endpoint values below
DECAY_TOL); "periodic" mode exists for convergence studies only and does not
correspond to the physical Cauchy problem.

Antiderivatives anchor at x_min (v(x_min) = 0 replaces the far-field zero; all
uses of v go through derivatives, so the constant is immaterial).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import cumulative_trapezoid, trapezoid

from .coefficients import CoefficientFunctions, LeslieCoefficients

FloatArray = NDArray[np.float64]
Profile = Union[Callable[[FloatArray], FloatArray], FloatArray, float]

DECAY_TOL = 1e-8


@dataclass(frozen=True, slots=True)
class Grid1D:
    x_min: float
    x_max: float
    n: int
    boundary_mode: str = "decay"
    x: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ValueError("grid needs at least 3 nodes")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.boundary_mode not in ("decay", "periodic"):
            raise ValueError(f"unknown boundary_mode {self.boundary_mode!r}")
        object.__setattr__(self, "x", np.linspace(self.x_min, self.x_max, self.n))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    def refined(self, factor: int = 2) -> "Grid1D":
        """Same domain with (n-1)*factor+1 nodes (shared node locations)."""
        return Grid1D(self.x_min, self.x_max, (self.n - 1) * factor + 1, self.boundary_mode)

    # -- discrete calculus -------------------------------------------------

    def ddx(self, f: FloatArray) -> FloatArray:
        """4th-order first derivative: central interior, one-sided at ends."""
        f = np.asarray(f, dtype=float)
        dx = self.dx
        if self.boundary_mode == "periodic":
            # last node duplicates the first in value terms; use roll stencil
            return (-np.roll(f, -2) + 8 * np.roll(f, -1)
                    - 8 * np.roll(f, 1) + np.roll(f, 2)) / (12 * dx)
        out = np.empty_like(f)
        out[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * dx)
        out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * dx)
        out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * dx)
        out[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * dx)
        out[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * dx)
        return out

    def antider(self, f: FloatArray) -> FloatArray:
        """Cumulative trapezoid from x_min (discrete stand-in for int_{-inf}^x)."""
        return cumulative_trapezoid(np.asarray(f, dtype=float), self.x, initial=0.0)

    def integral(self, f: FloatArray) -> float:
        return float(trapezoid(np.asarray(f, dtype=float), self.x))


@dataclass(slots=True)
class InitialData:
    """Initial profiles; callables are sampled on the grid at state creation."""

    u0: Profile = 0.0
    theta0: Profile = 0.0
    theta1: Profile = 0.0
    theta_inf: float = 0.0  # far-field director angle (decay mode)

    def sample(self, grid: Grid1D) -> tuple[FloatArray, FloatArray, FloatArray]:
        return (_sample(self.u0, grid), _sample(self.theta0, grid), _sample(self.theta1, grid))


def _sample(p: Profile, grid: Grid1D) -> FloatArray:
    if callable(p):
        return np.asarray(p(grid.x), dtype=float) * np.ones_like(grid.x)
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n, float(arr))
    if arr.shape != (grid.n,):
        raise ValueError(f"sampled profile has shape {arr.shape}, expected ({grid.n},)")
    return arr.copy()


# -- initial-data presets ----------------------------------------------------

def gaussian_bump(amp: float, center: float = 0.0, width: float = 1.0) -> Callable:
    return lambda x: amp * np.exp(-((x - center) / width) ** 2)


def compact_bump(amp: float, center: float = 0.0, width: float = 1.0) -> Callable:
    """C^infinity bump supported exactly on |x-center| < width."""

    def f(x):
        s = (x - center) / width
        out = np.zeros_like(s)
        inside = np.abs(s) < 1.0
        out[inside] = amp * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out

    return f


def initial_data_preset(name: str, **params) -> InitialData:
    """Named initial-data families used by the run configs.

    gaussian:      theta0 Gaussian of (theta_amp, theta_width), u0 Gaussian of
                   (u_amp, u_width), theta1 Gaussian of (theta1_amp, ...), all
                   centered at `center`, on top of theta_inf.
    compact-bump:  same roles with exactly compactly supported bumps.
    plane:         constant state (theta_inf), zero velocity and angle rate.
    cusp:          steep director bump with opposed rate theta1=-kappa*c*theta0'
                   and a velocity bump chosen so the initial compatibility
                   field stays small; drives finite-time gradient blowup.
    """
    if name == "plane":
        th = params.get("theta_inf", 0.0)
        return InitialData(u0=0.0, theta0=th, theta1=0.0, theta_inf=th)
    if name in ("gaussian", "compact-bump"):
        bump = gaussian_bump if name == "gaussian" else compact_bump
        th_inf = params.get("theta_inf", 0.0)
        center = params.get("center", 0.0)
        th_amp = params.get("theta_amp", 0.2)
        th_w = params.get("theta_width", 1.0)
        u_amp = params.get("u_amp", 0.0)
        u_w = params.get("u_width", 1.0)
        t1_amp = params.get("theta1_amp", 0.0)
        t1_w = params.get("theta1_width", 1.0)
        tb = bump(th_amp, center, th_w)
        ub = bump(u_amp, center, u_w)
        t1b = bump(t1_amp, center, t1_w)
        return InitialData(u0=ub, theta0=lambda x: th_inf + tb(x), theta1=t1b,
                           theta_inf=th_inf)
    if name == "cusp":
        return _cusp_data(**params)
    raise KeyError(f"unknown initial-data preset {name!r}")


def _cusp_data(theta_amp: float = 1.6, width: float = 0.18, center: float = 0.0,
               kappa: float = 0.12, u_amp: float = -1.2, u_width: float = 0.6,
               k1: float = 1.0, k3: float = 4.0, theta_inf: float = 0.0,
               **_ignored) -> InitialData:
    # theta1 = -kappa * c(theta0) * theta0' concentrates energy in one family
    # of characteristics; needs the anisotropic wave speed (k1 != k3) to focus.
    def th0(x):
        return theta_inf + theta_amp * np.exp(-((x - center) / width) ** 2)

    def dth0(x):
        return theta_amp * np.exp(-((x - center) / width) ** 2) * (-2.0 * (x - center) / width ** 2)

    def c_of(x):
        th = th0(x)
        return np.sqrt(k1 * np.cos(th) ** 2 + k3 * np.sin(th) ** 2)

    def th1(x):
        return -kappa * c_of(x) * dth0(x)

    def u0(x):
        return u_amp * np.exp(-((x - center) / u_width) ** 2)

    return InitialData(u0=u0, theta0=th0, theta1=th1, theta_inf=theta_inf)


INITIAL_DATA_PRESETS = ("gaussian", "compact-bump", "plane", "cusp")


# -- physical state ----------------------------------------------------------

@dataclass(slots=True)
class PhysicalState:
    """One time slice of (u, theta, theta_t) with all derived fields.

    J0 and A0 are frozen at t = 0 and carried along so that A = A_hat - A0
    vanishes identically on the initial slice.
    """

    grid: Grid1D
    t: float
    u: FloatArray
    theta: FloatArray
    theta_t: FloatArray
    J0: FloatArray
    A0: FloatArray
    v: FloatArray = field(default=None, repr=False)  # type: ignore[assignment]
    J: FloatArray = field(default=None, repr=False)  # type: ignore[assignment]
    A_hat: FloatArray = field(default=None, repr=False)  # type: ignore[assignment]
    A: FloatArray = field(default=None, repr=False)  # type: ignore[assignment]

    def copy(self) -> "PhysicalState":
        return replace(
            self,
            u=self.u.copy(), theta=self.theta.copy(), theta_t=self.theta_t.copy(),
            J0=self.J0, A0=self.A0,
            v=None if self.v is None else self.v.copy(),
            J=None if self.J is None else self.J.copy(),
            A_hat=None if self.A_hat is None else self.A_hat.copy(),
            A=None if self.A is None else self.A.copy(),
        )


def compatibility_field(grid: Grid1D, u: FloatArray, theta: FloatArray,
                        theta_t: FloatArray, fns: CoefficientFunctions) -> FloatArray:
    """u_x + (h/g) theta_t evaluated on the grid."""
    return grid.ddx(u) + fns.h(theta) / fns.g(theta) * theta_t


def refresh_derived(state: PhysicalState, coeffs: LeslieCoefficients | CoefficientFunctions) -> PhysicalState:
    """Recompute v, J, A_hat, A from (u, theta, theta_t) in place. Idempotent."""
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    g = state.grid
    state.v = g.antider(state.u)
    state.J = compatibility_field(g, state.u, state.theta, state.theta_t, fns)
    state.A_hat = g.antider(state.J)
    state.A = state.A_hat - state.A0
    return state


@dataclass(slots=True)
class IntegrabilityReport:
    """Trapezoid norms of the initial compatibility field J0 (finite <=> admissible)."""

    j0_l1: float
    j0_l2: float
    dj0_l2: float
    energy0: float

    def finite(self) -> bool:
        return bool(np.isfinite([self.j0_l1, self.j0_l2, self.dj0_l2, self.energy0]).all())


def make_state(grid: Grid1D, data: InitialData,
               coeffs: LeslieCoefficients | CoefficientFunctions,
               ) -> tuple[PhysicalState, IntegrabilityReport]:
    """Build the t = 0 state with all derived fields and the admissibility report.

    In decay mode the sampled data must satisfy |u|, |theta_t|,
    |theta - theta_inf| < DECAY_TOL at both grid ends; otherwise ValueError.
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    u0, th0, th1 = data.sample(grid)

    if grid.boundary_mode == "decay":
        bad = []
        for name, arr, ref in (("u", u0, 0.0), ("theta_t", th1, 0.0),
                               ("theta", th0, data.theta_inf)):
            dev = max(abs(arr[0] - ref), abs(arr[-1] - ref))
            if dev > DECAY_TOL:
                bad.append(f"{name} endpoint deviation {dev:.3e}")
        if bad:
            raise ValueError("initial data does not decay at the truncated ends: "
                             + "; ".join(bad))

    J0 = compatibility_field(grid, u0, th0, th1, fns)
    A0 = grid.antider(J0)
    state = PhysicalState(grid=grid, t=0.0, u=u0, theta=th0, theta_t=th1, J0=J0, A0=A0)
    refresh_derived(state, fns)

    th_x = grid.ddx(th0)
    report = IntegrabilityReport(
        j0_l1=grid.integral(np.abs(J0)),
        j0_l2=float(np.sqrt(grid.integral(J0 ** 2))),
        dj0_l2=float(np.sqrt(grid.integral(grid.ddx(J0) ** 2))),
        energy0=grid.integral(th1 ** 2 + fns.c2(th0) * th_x ** 2 + u0 ** 2),
    )
    return state, report

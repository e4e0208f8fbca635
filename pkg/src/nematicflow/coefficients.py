"""Leslie viscosities, Frank constants, and the coefficient functions of the director angle.

Conventions: the six Leslie viscosities alpha1..alpha6 and the splay/bend Frank
constants k1, k3 are stored nondimensionalized (unit density and director
inertia). The rotational viscosities gamma1 = alpha3 - alpha2 and
gamma2 = alpha6 - alpha5 are derived, never set directly.

The angle-dependent coefficients are degree-<=2 trigonometric polynomials and
are evaluated here in their cos(2*theta)/cos(4*theta) form, which is exact
(same polynomial) and makes the constant-coefficient special set evaluate to
exactly 1.0 in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

# Sampling density used for the empirical minima over [0, pi]; the integrands
# are trig polynomials of degree <= 4, so 1e4 points is far beyond sufficient.
_MIN_SAMPLES = 10_000

# Relative tolerance for equality constraints (Parodi, gamma definitions).
EQUALITY_RTOL = 1e-12


@dataclass(frozen=True, slots=True)
class LeslieCoefficients:
    """Parameter set of the one-dimensional nematic flow model.

    gamma1/gamma2 are computed from the alphas; construction never validates
    the physical inequalities (see :func:`validate`), so deliberately invalid
    sets can be built for experiments.
    """

    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    alpha5: float
    alpha6: float
    k1: float
    k3: float
    gamma1: float = field(init=False, repr=False)
    gamma2: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "gamma1", self.alpha3 - self.alpha2)
        object.__setattr__(self, "gamma2", self.alpha6 - self.alpha5)

    @property
    def fields_finite(self) -> bool:
        vals = (self.alpha1, self.alpha2, self.alpha3, self.alpha4,
                self.alpha5, self.alpha6, self.k1, self.k3)
        return bool(np.all(np.isfinite(vals)))


class CoefficientFunctions:
    """Evaluator for g, h, c and their theta-derivatives, bound to one parameter set.

    All evaluators are numpy ufunc-style: scalars in, scalar out; arrays in,
    arrays out. Immutable after construction; safe to share across workers.
    """

    def __init__(self, coeffs: LeslieCoefficients):
        if not coeffs.fields_finite:
            raise ValueError("coefficient set contains non-finite entries")
        self.coeffs = coeffs
        a = coeffs
        # g = g0 + g2*cos(2't) + g4*cos(4t); identical polynomial to the
        # sin^2/cos^2 form.
        self._g0 = a.alpha1 / 8.0 + (a.alpha3 + a.alpha6 + a.alpha5 - a.alpha2) / 4.0 + a.alpha4 / 2.0
        self._g2 = (a.alpha2 + a.alpha3 + a.alpha6 - a.alpha5) / 4.0
        self._g4 = -a.alpha1 / 8.0
        # h = h0 + h2*cos(2t); under Parodi h2 == gamma2/2.
        self._h0 = (a.alpha3 - a.alpha2) / 2.0
        self._h2 = (a.alpha2 + a.alpha3) / 2.0
        # c^2 = c0 + c2*cos(2t)
        self._c0 = (a.k1 + a.k3) / 2.0
        self._c2 = (a.k1 - a.k3) / 2.0
        self.gamma1 = a.gamma1
        self.gamma2 = a.gamma2

    # -- closed-form evaluators ------------------------------------------

    def g(self, theta: ArrayLike) -> ArrayLike:
        t2 = 2.0 * theta
        return self._g0 + self._g2 * np.cos(t2) + self._g4 * np.cos(2.0 * t2)

    def dg(self, theta: ArrayLike) -> ArrayLike:
        return -2.0 * self._g2 * np.sin(2.0 * theta) - 4.0 * self._g4 * np.sin(4.0 * theta)

    def h(self, theta: ArrayLike) -> ArrayLike:
        return self._h0 + self._h2 * np.cos(2.0 * theta)

    def dh(self, theta: ArrayLike) -> ArrayLike:
        return -2.0 * self._h2 * np.sin(2.0 * theta)

    def c2(self, theta: ArrayLike) -> ArrayLike:
        return self._c0 + self._c2 * np.cos(2.0 * theta)

    def dc2(self, theta: ArrayLike) -> ArrayLike:
        return -2.0 * self._c2 * np.sin(2.0 * theta)

    def c(self, theta: ArrayLike) -> ArrayLike:
        return np.sqrt(self.c2(theta))

    def dc(self, theta: ArrayLike) -> ArrayLike:
        return self.dc2(theta) / (2.0 * self.c(theta))

    def damping_b(self, theta: ArrayLike) -> ArrayLike:
        """Positive damping coefficient gamma1 - h^2/g of the forced wave equation."""
        return self.gamma1 - self.h(theta) ** 2 / self.g(theta)

    def bundle(self, theta: ArrayLike) -> tuple:
        """(c, c', h, h^2/g - gamma1) sharing one cos/sin pair; hot-loop path."""
        u = np.cos(2.0 * theta)
        s = np.sin(2.0 * theta)
        c2v = self._c0 + self._c2 * u
        c = np.sqrt(c2v)
        dc = -self._c2 * s / c
        g = self._g0 + self._g2 * u + self._g4 * (2.0 * u * u - 1.0)
        h = self._h0 + self._h2 * u
        return c, dc, h, h * h / g - self.gamma1

    def char_b(self, theta: ArrayLike) -> ArrayLike:
        """h^2/g - gamma1, the sign convention used by the characteristic-plane system."""
        return -self.damping_b(theta)

    # -- empirical bounds -------------------------------------------------

    def c_min(self) -> float:
        # exact: c^2 is monotone between K1 and K3
        return float(np.sqrt(min(self.coeffs.k1, self.coeffs.k3)))

    def c_max(self) -> float:
        return float(np.sqrt(max(self.coeffs.k1, self.coeffs.k3)))

    def damping_min(self) -> float:
        """C_*: min over theta of gamma1 - h^2/g, by dense sampling of [0, pi]."""
        th = np.linspace(0.0, np.pi, _MIN_SAMPLES)
        return float(np.min(self.damping_b(th)))

    def diffusion_margin(self) -> float:
        """C-bar: min over theta of g - h^2/gamma1, by dense sampling of [0, pi]."""
        th = np.linspace(0.0, np.pi, _MIN_SAMPLES)
        return float(np.min(self.g(th) - self.h(th) ** 2 / self.gamma1))

    def g_min(self) -> float:
        th = np.linspace(0.0, np.pi, _MIN_SAMPLES)
        return float(np.min(self.g(th)))

    def g_max(self) -> float:
        th = np.linspace(0.0, np.pi, _MIN_SAMPLES)
        return float(np.max(self.g(th)))

    def dg_max(self) -> float:
        th = np.linspace(0.0, np.pi, _MIN_SAMPLES)
        return float(np.max(np.abs(self.dg(th))))


@dataclass(slots=True)
class RelationCheck:
    name: str
    satisfied: bool
    slack: float
    detail: str = ""


@dataclass(slots=True)
class ValidationReport:
    checks: list[RelationCheck]
    c_bar: float
    c_star: float
    passed: bool

    def failed_names(self) -> list[str]:
        return [c.name for c in self.checks if not c.satisfied]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "c_bar": self.c_bar,
            "c_star": self.c_star,
            "checks": [
                {"name": c.name, "satisfied": c.satisfied, "slack": c.slack, "detail": c.detail}
                for c in self.checks
            ],
        }


def validate(coeffs: LeslieCoefficients) -> ValidationReport:
    """Check every assumed relation on the Leslie/Frank parameters.

    Equality constraints are checked to EQUALITY_RTOL (relative); inequalities
    must hold strictly, with the numeric slack reported. Raises ValueError on
    non-finite input; invalid-but-finite sets produce a failing report.
    """
    if not coeffs.fields_finite:
        raise ValueError("validate: non-finite coefficient entries rejected")

    a = coeffs
    checks: list[RelationCheck] = []

    def eq(name: str, lhs: float, rhs: float) -> None:
        scale = max(abs(lhs), abs(rhs), 1.0)
        slack = abs(lhs - rhs)
        checks.append(RelationCheck(name, slack <= EQUALITY_RTOL * scale, slack,
                                    f"|{lhs:.15g} - {rhs:.15g}|"))

    def gt(name: str, value: float, bound: float = 0.0) -> None:
        checks.append(RelationCheck(name, value > bound, value - bound,
                                    f"value {value:.15g}"))

    eq("gamma1-definition", a.gamma1, a.alpha3 - a.alpha2)
    eq("gamma2-definition", a.gamma2, a.alpha6 - a.alpha5)
    eq("parodi", a.alpha2 + a.alpha3, a.alpha6 - a.alpha5)
    gt("frank-k1", a.k1)
    gt("frank-k3", a.k3)
    gt("alpha4-positive", a.alpha4)
    gt("dissipation-trace", 2 * a.alpha1 + 3 * a.alpha4 + 2 * a.alpha5 + 2 * a.alpha6)
    gt("gamma1-positive", a.gamma1)
    gt("shear-combination", 2 * a.alpha4 + a.alpha5 + a.alpha6)
    gt("rotational-shear-coupling",
       a.gamma1 * (2 * a.alpha4 + a.alpha5 + a.alpha6) - a.gamma2 ** 2)

    # The two derived strict-positivity margins; meaningful only when the
    # preceding relations hold (g, gamma1 > 0), so guard the division.
    if a.gamma1 > 0 and a.k1 > 0 and a.k3 > 0:
        fns = CoefficientFunctions(coeffs)
        c_bar = fns.diffusion_margin() if fns.g_min() > 0 else -np.inf
        c_star = fns.damping_min() if fns.g_min() > 0 else -np.inf
    else:
        c_bar = -np.inf
        c_star = -np.inf
    gt("diffusion-margin", c_bar)
    gt("damping-margin", c_star)

    passed = all(c.satisfied for c in checks)
    return ValidationReport(checks=checks, c_bar=c_bar, c_star=c_star, passed=passed)


# -- presets ---------------------------------------------------------------

def _special() -> LeslieCoefficients:
    return LeslieCoefficients(alpha1=0.0, alpha2=-1.0, alpha3=1.0, alpha4=1.0,
                              alpha5=0.0, alpha6=0.0, k1=1.0, k3=1.0)


def _special_anisotropic() -> LeslieCoefficients:
    # special viscosities, unequal Frank constants: nonconstant wave speed
    return LeslieCoefficients(alpha1=0.0, alpha2=-1.0, alpha3=1.0, alpha4=1.0,
                              alpha5=0.0, alpha6=0.0, k1=1.0, k3=4.0)


def _soft_anisotropic() -> LeslieCoefficients:
    # mild synthetic set: g in [0.6, 1.1], h in [0.25, 0.75], gamma1 = 1
    return LeslieCoefficients(alpha1=0.1, alpha2=-0.25, alpha3=0.75, alpha4=1.2,
                              alpha5=-0.25, alpha6=0.25, k1=1.0, k3=2.0)


def _mbba_like() -> LeslieCoefficients:
    # MBBA-magnitude viscosities (scaled by 1/10), alpha6 adjusted to satisfy
    # Parodi exactly
    a2, a3, a5 = -7.75, -0.12, 4.63
    a6 = a2 + a3 + a5
    return LeslieCoefficients(alpha1=0.65, alpha2=a2, alpha3=a3, alpha4=8.32,
                              alpha5=a5, alpha6=a6, k1=1.0, k3=1.5)


PRESETS = {
    "chl20-special": _special,
    "special-anisotropic": _special_anisotropic,
    "soft-anisotropic": _soft_anisotropic,
    "mbba-like": _mbba_like,
}


def preset(name: str) -> LeslieCoefficients:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown coefficient preset {name!r}; "
                       f"available: {sorted(PRESETS)}") from None

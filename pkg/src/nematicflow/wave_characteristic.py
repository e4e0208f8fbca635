"""Characteristic-coordinate solver for the J-forced director wave equation.

The quasilinear equation
    theta_tt + (gamma1 - h^2/g) theta_t = c(theta)(c(theta) theta_x)_x - h J
becomes semilinear in the coordinates (X, Y) that are constant along the two
characteristic families. The compactified gradient variables

    w = 2 arctan(theta_t + c theta_x),   z = 2 arctan(theta_t - c theta_x)

and the characteristic densities p, q close the system; all right-hand sides
below stay smooth even where w or z reaches pi (gradient blowup), which is
what lets the lattice solution continue across cusps.

The integral maps are iterated to a fixed point (Picard) on diagonal strips
following the initial curve Y = phi(X); each strip anchors exactly on lattice
nodes frozen by the previous strip, so strip assembly introduces no
interpolation error beyond the Picard tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import LinearNDInterpolator

from .coefficients import CoefficientFunctions, LeslieCoefficients
from .grid_state import FloatArray, Grid1D

JEval = Callable[[FloatArray, FloatArray], FloatArray]


class CharSolverError(RuntimeError):
    """Picard non-contraction or invariant violation, with location payload."""

    def __init__(self, msg: str, location: Optional[tuple] = None):
        super().__init__(msg)
        self.location = location


def zero_source(x, t):
    return np.zeros_like(x)


def make_j_eval_bilinear(x_nodes: FloatArray, t_nodes: FloatArray,
                         values: FloatArray) -> JEval:
    """Bilinear interpolant of a (t, x)-gridded source, clamped at the edges.

    values has shape (nt, nx). Clamping continues the source constantly
    outside the sampled window (in particular J(x, t<0) = J(x, 0)).
    """
    x_nodes = np.asarray(x_nodes, dtype=float)
    t_nodes = np.asarray(t_nodes, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.shape != (t_nodes.size, x_nodes.size):
        raise ValueError("values must have shape (nt, nx)")

    def j_eval(x, t):
        x = np.clip(np.asarray(x, dtype=float), x_nodes[0], x_nodes[-1])
        t = np.clip(np.asarray(t, dtype=float), t_nodes[0], t_nodes[-1])
        it = np.clip(np.searchsorted(t_nodes, t) - 1, 0, t_nodes.size - 2)
        ix = np.clip(np.searchsorted(x_nodes, x) - 1, 0, x_nodes.size - 2)
        wt = (t - t_nodes[it]) / (t_nodes[it + 1] - t_nodes[it])
        wx = (x - x_nodes[ix]) / (x_nodes[ix + 1] - x_nodes[ix])
        v00 = vals[it, ix]
        v01 = vals[it, ix + 1]
        v10 = vals[it + 1, ix]
        v11 = vals[it + 1, ix + 1]
        return ((1 - wt) * ((1 - wx) * v00 + wx * v01)
                + wt * ((1 - wx) * v10 + wx * v11))

    return j_eval


@dataclass(slots=True)
class CharConfig:
    n_x: int = 257              # lattice columns; rows follow with equal spacing
    tol: float = 1e-10
    max_sweeps: int = 200
    strip_width: Optional[float] = None   # auto from a Lipschitz estimate
    strip_advance: float = 0.5            # fraction of the strip kept per move
    overlap_tol: float = 1e-8
    delta_mask: float = 0.05              # derivative recovery: |w|,|z| < pi-delta
    max_strip_halvings: int = 4
    t_stop: Optional[float] = None        # stop once every column covers this time


@dataclass(slots=True)
class CharGrid:
    """Rectangular (X, Y) lattice plus the initial curve and its data."""

    X: FloatArray
    Y: FloatArray
    # curve samples, parameterized by the physical grid nodes
    curve_X: FloatArray
    curve_Y: FloatArray
    theta_b: FloatArray
    w_b: FloatArray
    z_b: FloatArray
    x_b: FloatArray
    t_b: FloatArray
    p_b: FloatArray
    q_b: FloatArray

    @property
    def dX(self) -> float:
        return float(self.X[1] - self.X[0])

    @property
    def dY(self) -> float:
        return float(self.Y[1] - self.Y[0])

    def phi(self, X: FloatArray) -> FloatArray:
        return np.interp(X, self.curve_X, self.curve_Y)

    def phi_inv(self, Y: FloatArray) -> FloatArray:
        return np.interp(Y, self.curve_Y[::-1], self.curve_X[::-1])

    def boundary_at_X(self, Xq: FloatArray) -> dict[str, FloatArray]:
        return {name: np.interp(Xq, self.curve_X, arr)
                for name, arr in self._fields()}

    def boundary_at_Y(self, Yq: FloatArray) -> dict[str, FloatArray]:
        return {name: np.interp(Yq, self.curve_Y[::-1], arr[::-1])
                for name, arr in self._fields()}

    def _fields(self):
        return (("theta", self.theta_b), ("w", self.w_b), ("z", self.z_b),
                ("x", self.x_b), ("t", self.t_b), ("p", self.p_b), ("q", self.q_b))


def to_characteristic(grid: Grid1D, theta0: FloatArray, theta1: FloatArray,
                      coeffs: LeslieCoefficients | CoefficientFunctions,
                      config: Optional[CharConfig] = None) -> CharGrid:
    """Build the characteristic lattice and the initial-curve data.

    X(x) = int_1^x (1 + R0^2), Y(x) = int_x^1 (1 + S0^2) with the gradient
    variables R0, S0 of (theta0, theta1); outside the truncated domain the
    integrands are continued by their far-field value 1 (exact once the data
    has decayed), which keeps the base point at x = 1 regardless of domain.
    On the curve p = q = 1 and t = 0.
    """
    cfg = config or CharConfig()
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    theta0 = np.asarray(theta0, dtype=float)
    theta1 = np.asarray(theta1, dtype=float)
    if not (np.all(np.isfinite(theta0)) and np.all(np.isfinite(theta1))):
        raise ValueError("non-finite initial data")
    th_x = grid.ddx(theta0)
    c0 = fns.c(theta0)
    R0 = theta1 + c0 * th_x
    S0 = theta1 - c0 * th_x
    if not (np.all(np.isfinite(R0)) and np.all(np.isfinite(S0))):
        raise ValueError("non-finite gradient variables")

    AX = grid.antider(1.0 + R0 ** 2)
    AY = grid.antider(1.0 + S0 ** 2)

    def at_one(A):
        # value of the cumulative integral at the base point x = 1
        if grid.x_min <= 1.0 <= grid.x_max:
            return float(np.interp(1.0, grid.x, A))
        if 1.0 > grid.x_max:
            return float(A[-1] + (1.0 - grid.x_max))
        return 1.0 - grid.x_min  # integrand ~ 1 outside the domain

    curve_X = AX - at_one(AX)
    curve_Y = at_one(AY) - AY

    n_x = max(cfg.n_x, 8)
    X_lo, X_hi = curve_X[0], curve_X[-1]
    Y_lo, Y_hi = curve_Y[-1], curve_Y[0]
    d = (X_hi - X_lo) / (n_x - 1)
    n_y = int(np.ceil((Y_hi - Y_lo) / d)) + 1
    X = X_lo + d * np.arange(n_x)
    Y = Y_lo + d * np.arange(n_y)

    return CharGrid(X=X, Y=Y, curve_X=curve_X, curve_Y=curve_Y,
                    theta_b=theta0.copy(),
                    w_b=2.0 * np.arctan(R0), z_b=2.0 * np.arctan(S0),
                    x_b=grid.x.copy(), t_b=np.zeros(grid.n),
                    p_b=np.ones(grid.n), q_b=np.ones(grid.n))


@dataclass(slots=True)
class CharState:
    grid: CharGrid
    theta: FloatArray
    w: FloatArray
    z: FloatArray
    p: FloatArray
    q: FloatArray
    x: FloatArray
    t: FloatArray
    valid: np.ndarray               # above-curve nodes with converged values
    sweeps: int
    residual_history: list[float] = field(default_factory=list)
    overlap_discrepancy: float = 0.0
    xt_mismatch: float = 0.0        # max |(x_p,t_p)-(x_m,t_m)| at convergence
    n_strips: int = 1


@dataclass(slots=True)
class PQBounds:
    a1: float
    a2: float
    argmin: tuple
    argmax: tuple


def pq_bounds(state: CharState, t_max: Optional[float] = None) -> PQBounds:
    """Extrema of the characteristic densities over the converged lattice.

    t_max restricts the scan to the physical slab t <= t_max so refinement
    comparisons run over the same region.
    """
    sel = state.valid if t_max is None else state.valid & (state.t <= t_max)
    p = np.where(sel, state.p, np.nan)
    q = np.where(sel, state.q, np.nan)
    both = np.stack([p, q])
    a1 = float(np.nanmin(both))
    a2 = float(np.nanmax(both))
    imin = np.unravel_index(np.nanargmin(both), both.shape)
    imax = np.unravel_index(np.nanargmax(both), both.shape)
    loc = lambda idx: ("p" if idx[0] == 0 else "q", int(idx[1]), int(idx[2]))
    return PQBounds(a1=a1, a2=a2, argmin=loc(imin), argmax=loc(imax))


class _Integrator:
    """Anchored cumulative trapezoid integrals on the lattice.

    Per column i, nodes j >= start[i] are live; the integral of a field F
    from the anchor to node j is  C[i, j] - C[i, start[i]] + first[i]  where
    `first` is the partial cell between the off-lattice curve and the first
    node (zero for nodal anchors). Rows work transposed.
    """

    def __init__(self, chg: CharGrid):
        self.chg = chg
        nX, nY = chg.X.size, chg.Y.size
        self.nX, self.nY = nX, nY
        # node of the first lattice row strictly above the curve, per column
        yc = chg.phi(chg.X)
        self.yc = yc
        self.k_col = np.clip(np.searchsorted(chg.Y, yc, side="right"), 0, nY)
        xc = chg.phi_inv(chg.Y)
        self.xc = xc
        self.k_row = np.clip(np.searchsorted(chg.X, xc, side="right"), 0, nX)
        self.above = np.arange(nY)[None, :] >= self.k_col[:, None]
        self.b_col = chg.boundary_at_X(chg.X)   # curve values under each column
        self.b_row = chg.boundary_at_Y(chg.Y)   # curve values left of each row

    def cum_cols(self, F: FloatArray, start: np.ndarray, base: FloatArray,
                 first: FloatArray) -> FloatArray:
        """base + int_anchor^{Y_j} F along each column (axis 1)."""
        d = self.chg.dY
        Fm = np.where(np.arange(self.nY)[None, :] >= start[:, None], F, 0.0)
        C = np.zeros_like(Fm)
        C[:, 1:] = np.cumsum(0.5 * d * (Fm[:, 1:] + Fm[:, :-1]), axis=1)
        idx = np.clip(start, 0, self.nY - 1)
        C0 = np.take_along_axis(C, idx[:, None], axis=1)
        return base[:, None] + (C - C0) + first[:, None]

    def cum_rows(self, F: FloatArray, start: np.ndarray, base: FloatArray,
                 first: FloatArray) -> FloatArray:
        """base + int_anchor^{X_i} F along each row (axis 0)."""
        d = self.chg.dX
        Fm = np.where(np.arange(self.nX)[:, None] >= start[None, :], F, 0.0)
        C = np.zeros_like(Fm)
        C[1:, :] = np.cumsum(0.5 * d * (Fm[1:, :] + Fm[:-1, :]), axis=0)
        idx = np.clip(start, 0, self.nX - 1)
        C0 = np.take_along_axis(C, idx[None, :], axis=0)
        return base[None, :] + (C - C0) + first[None, :]


def _map_integrands(theta, w, z, p, q, j_wz, j_zq, fns):
    """Integrands of the seven maps; j_wz is J on (x_m,t_m), j_zq on (x_p,t_p)."""
    c, cp, h, b = fns.bundle(theta)     # b = h^2/g - gamma1
    inv_c = 1.0 / c
    sw, cw = np.sin(w), np.cos(w)
    sz, cz = np.sin(z), np.cos(z)
    cw2 = 0.5 * (1.0 + cw)      # cos^2(w/2)
    sw2 = 0.5 * (1.0 - cw)      # sin^2(w/2)
    cz2 = 0.5 * (1.0 + cz)
    sz2 = 0.5 * (1.0 - cz)
    cp4 = 0.25 * cp * inv_c * inv_c
    b4 = 0.25 * b * inv_c
    damp = b4 * (sw * cz2 + sz * cw2)
    F_theta = 0.25 * sz * inv_c * q
    F_w = q * (cp4 * (cz2 - cw2) + damp - h * inv_c * j_wz * cz2 * cw2)
    F_z = p * (cp4 * (cw2 - cz2) + damp - h * inv_c * j_zq * cz2 * cw2)
    pq = p * q
    F_p = pq * (0.5 * cp4 * (sz - sw)
                + 2.0 * b4 * (0.25 * sw * sz + sw2 * cz2)
                - 0.5 * h * inv_c * j_wz * sw * cz2)
    F_q = pq * (0.5 * cp4 * (sw - sz)
                + 2.0 * b4 * (0.25 * sw * sz + sz2 * cw2)
                - 0.5 * h * inv_c * j_zq * sz * cw2)
    F_xp = -0.5 * cz2 * q
    F_tp = 0.5 * cz2 * q * inv_c
    F_xm = 0.5 * cw2 * p
    F_tm = 0.5 * cw2 * p * inv_c
    return {"theta": F_theta, "w": F_w, "z": F_z, "p": F_p, "q": F_q,
            "xp": F_xp, "tp": F_tp, "xm": F_xm, "tm": F_tm}


_COL_MAPS = ("theta", "w", "p", "xp", "tp")   # integrated in Y
_ROW_MAPS = ("z", "q", "xm", "tm")            # integrated in X


def integrate_semilinear(chg: CharGrid,
                         coeffs: LeslieCoefficients | CoefficientFunctions,
                         j_eval: Optional[JEval] = None,
                         config: Optional[CharConfig] = None) -> CharState:
    """Picard iteration of the characteristic integral maps over the lattice.

    The converged fields satisfy the differential form of the system with
    residual O(dX + dY). Raises CharSolverError on sustained residual growth
    (after strip-width halvings are exhausted) or if p or q loses positivity.
    """
    cfg = config or CharConfig()
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    j_eval = j_eval or zero_source
    itg = _Integrator(chg)
    nX, nY = itg.nX, itg.nY
    d = chg.dY

    # global fields, initialized by constant extension of the curve data
    bc = itg.b_col
    f = {
        "theta": np.tile(bc["theta"][:, None], (1, nY)),
        "w": np.tile(bc["w"][:, None], (1, nY)),
        "z": np.tile(bc["z"][:, None], (1, nY)),
        "p": np.tile(bc["p"][:, None], (1, nY)),
        "q": np.tile(bc["q"][:, None], (1, nY)),
        "xp": np.tile(bc["x"][:, None], (1, nY)),
        "tp": np.tile(bc["t"][:, None], (1, nY)),
        "xm": np.tile(bc["x"][:, None], (1, nY)),
        "tm": np.tile(bc["t"][:, None], (1, nY)),
    }

    width = cfg.strip_width or _auto_strip_width(chg, fns, j_eval, cfg)
    n_adv = max(1, int(round(cfg.strip_advance * width / d)))
    n_wide = max(n_adv + 1, int(round(width / d)))

    frozen = itg.k_col - 1          # last final row per column (below curve: none)
    converged_rows = itg.k_col - 1  # rows with values already accepted
    total_sweeps = 0
    residual_history: list[float] = []
    overlap_disc = 0.0
    n_strips = 0
    halvings = 0

    while np.any(frozen < nY - 1):
        band_lo = frozen + 1
        band_hi = np.minimum(frozen + n_wide, nY - 1)
        band = ((np.arange(nY)[None, :] >= band_lo[:, None])
                & (np.arange(nY)[None, :] <= band_hi[:, None]) & itg.above)
        snapshot = {k: v.copy() for k, v in f.items()}
        try:
            sweeps, hist = _picard_strip(f, itg, fns, j_eval, cfg, frozen, band)
        except CharSolverError as err:
            if halvings < cfg.max_strip_halvings and n_wide > 2:
                # non-contractive band: halve and retry this strip
                for k in f:
                    f[k] = snapshot[k]
                n_wide = max(2, n_wide // 2)
                n_adv = max(1, n_wide // 2)
                halvings += 1
                continue
            raise err
        total_sweeps += sweeps
        residual_history.extend(hist)
        n_strips += 1
        if sweeps <= 12 and halvings == 0 and cfg.strip_width is None:
            # strongly contractive band: widen to cut the strip count
            n_wide = min(2 * n_wide, nY)
            n_adv = max(1, n_wide // 2)

        # overlap consistency: re-solved nodes must match the previous strip
        overlap = band & (np.arange(nY)[None, :] <= converged_rows[:, None])
        if np.any(overlap):
            disc = max(np.max(np.abs(f[k][overlap] - snapshot[k][overlap]))
                       for k in ("theta", "w", "z", "p", "q"))
            overlap_disc = max(overlap_disc, float(disc))
        converged_rows = np.maximum(converged_rows, band_hi)
        frozen = np.minimum(frozen + n_adv, nY - 1)

        if cfg.t_stop is not None:
            fr_idx = np.clip(frozen, itg.k_col, nY - 1)
            reachable = itg.k_col <= nY - 1
            t_front = 0.5 * (f["tp"] + f["tm"])[np.arange(nX), fr_idx]
            done = (t_front >= cfg.t_stop) | (frozen >= nY - 1)
            if np.all(done[reachable]):
                break

    x = 0.5 * (f["xp"] + f["xm"])
    t = 0.5 * (f["tp"] + f["tm"])
    valid = itg.above & (np.arange(nY)[None, :] <= converged_rows[:, None])
    mism = max(float(np.max(np.abs((f["xp"] - f["xm"])[valid]), initial=0.0)),
               float(np.max(np.abs((f["tp"] - f["tm"])[valid]), initial=0.0)))
    state = CharState(grid=chg, theta=f["theta"], w=f["w"], z=f["z"],
                      p=f["p"], q=f["q"], x=x, t=t, valid=valid,
                      sweeps=total_sweeps, residual_history=residual_history,
                      overlap_discrepancy=overlap_disc, xt_mismatch=mism,
                      n_strips=n_strips)
    bad = valid & ((state.p <= 0) | (state.q <= 0))
    if np.any(bad):
        loc = np.unravel_index(np.argmax(bad), bad.shape)
        raise CharSolverError("characteristic density lost positivity",
                              location=(int(loc[0]), int(loc[1])))
    return state


def _auto_strip_width(chg: CharGrid, fns: CoefficientFunctions, j_eval: JEval,
                      cfg: CharConfig) -> float:
    th = chg.theta_b
    c_min = float(np.min(fns.c(th)))
    lip = (np.max(np.abs(fns.dc(th))) / (4 * c_min ** 2)
           + np.max(np.abs(fns.char_b(th))) / (2 * c_min)
           + np.max(np.abs(fns.h(th))) * (1.0 + np.max(np.abs(j_eval(chg.x_b, chg.t_b)))) / c_min)
    pq_scale = max(1.0, np.max(chg.p_b), np.max(chg.q_b)) ** 2
    w = 0.5 / max(lip * pq_scale, 1e-3)
    span = chg.Y[-1] - chg.Y[0]
    return float(np.clip(w, 4 * chg.dY, max(span, 4 * chg.dY)))


def _picard_strip(f: dict, itg: _Integrator, fns, j_eval, cfg: CharConfig,
                  frozen: np.ndarray, band: np.ndarray) -> tuple[int, list[float]]:
    chg = itg.chg
    nX, nY = itg.nX, itg.nY

    # column anchors: frozen node if the column has one, else the curve
    col_nodal = frozen >= itg.k_col          # a frozen valid node exists
    col_start = np.where(col_nodal, np.clip(frozen, 0, nY - 1), itg.k_col)
    # row anchors, transposed logic: node (i,j) frozen iff j <= frozen[i]
    jj = np.arange(nY)
    fc = np.array([np.max(np.where(frozen >= j, np.arange(nX), -1)) for j in jj])
    row_nodal = np.full(nY, False)
    row_start = itg.k_row.copy()
    has = fc >= 0
    row_nodal[has] = jj[has] > itg.k_col[fc[has]] - 1   # anchor node above curve
    row_nodal &= has
    row_start[row_nodal] = fc[row_nodal]

    hist: list[float] = []
    growth = 0
    prev_res = np.inf
    for sweep in range(cfg.max_sweeps):
        res = 0.0
        loc = (0, 0)
        for group in (_COL_MAPS, _ROW_MAPS) if sweep % 2 == 0 else (_ROW_MAPS, _COL_MAPS):
            j_wz = j_eval(f["xm"], f["tm"])
            j_zq = j_eval(f["xp"], f["tp"])
            F = _map_integrands(f["theta"], f["w"], f["z"], f["p"], f["q"],
                                j_wz, j_zq, fns)
            new = {}
            if group is _COL_MAPS:
                first, base = _col_anchor_terms(f, itg, fns, j_eval, col_nodal,
                                                col_start, F)
                for name in group:
                    new[name] = itg.cum_cols(F[name], col_start, base[name], first[name])
            else:
                first, base = _row_anchor_terms(f, itg, fns, j_eval, row_nodal,
                                                row_start, F)
                for name in group:
                    new[name] = itg.cum_rows(F[name], row_start, base[name], first[name])
            for name in group:
                delta = np.abs(new[name] - f[name])[band]
                if delta.size:
                    m = float(np.max(delta))
                    if m > res:
                        res = m
                        loc_idx = np.argmax(np.where(band, np.abs(new[name] - f[name]), -1.0))
                        loc = tuple(int(v) for v in np.unravel_index(loc_idx, band.shape))
                f[name] = np.where(band, new[name], f[name])
        hist.append(res)
        if res < cfg.tol:
            return sweep + 1, hist
        growth = growth + 1 if res > prev_res else 0
        prev_res = res
        if growth >= 5:
            raise CharSolverError(
                f"Picard residual grew for 5 consecutive sweeps (last {res:.3e})",
                location=loc)
    raise CharSolverError(f"Picard did not reach tol={cfg.tol:g} in "
                          f"{cfg.max_sweeps} sweeps (last {hist[-1]:.3e})",
                          location=None)


def _col_anchor_terms(f, itg: _Integrator, fns, j_eval, nodal, start, F):
    """Anchor values and first partial-cell contributions for column maps."""
    chg = itg.chg
    nX, nY = itg.nX, itg.nY
    bc = itg.b_col
    names = {"theta": "theta", "w": "w", "p": "p", "xp": "x", "tp": "t"}
    # curve-anchored columns: integrand at the curve point
    jc = j_eval(bc["x"], bc["t"])
    Fc = _map_integrands(bc["theta"], bc["w"], bc["z"], bc["p"], bc["q"],
                         jc, jc, fns)
    k = np.clip(itg.k_col, 0, nY - 1)
    eta = chg.Y[k] - itg.yc                      # curve -> first node distance
    base, first = {}, {}
    for name, bname in names.items():
        F_at_k = np.take_along_axis(F[name], k[:, None], axis=1)[:, 0]
        fc_first = 0.5 * eta * (Fc[name] + F_at_k)
        anchor_val = np.take_along_axis(f[name], np.clip(start, 0, nY - 1)[:, None],
                                        axis=1)[:, 0]
        base[name] = np.where(nodal, anchor_val, bc[bname])
        first[name] = np.where(nodal, 0.0, fc_first)
    return first, base


def _row_anchor_terms(f, itg: _Integrator, fns, j_eval, nodal, start, F):
    chg = itg.chg
    nX, nY = itg.nX, itg.nY
    br = itg.b_row
    names = {"z": "z", "q": "q", "xm": "x", "tm": "t"}
    jc = j_eval(br["x"], br["t"])
    Fc = _map_integrands(br["theta"], br["w"], br["z"], br["p"], br["q"],
                         jc, jc, fns)
    k = np.clip(itg.k_row, 0, nX - 1)
    eta = chg.X[k] - itg.xc
    base, first = {}, {}
    for name, bname in names.items():
        F_at_k = np.take_along_axis(F[name], k[None, :], axis=0)[0, :]
        fc_first = 0.5 * eta * (Fc[name] + F_at_k)
        anchor_val = np.take_along_axis(f[name], np.clip(start, 0, nX - 1)[None, :],
                                        axis=0)[0, :]
        base[name] = np.where(nodal, anchor_val, br[bname])
        first[name] = np.where(nodal, 0.0, fc_first)
    return first, base


# -- diagnostics on the lattice ------------------------------------------------

def residual_semilinear(state: CharState,
                        coeffs: LeslieCoefficients | CoefficientFunctions,
                        j_eval: Optional[JEval] = None) -> dict[str, float]:
    """Max residual of the differential system, by central differences.

    Evaluated on interior nodes whose full stencil is valid; the converged
    integral solution satisfies these at O(dX + dY).
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    j_eval = j_eval or zero_source
    f = state
    chg = state.grid
    j_here = j_eval(f.x, f.t)
    F = _map_integrands(f.theta, f.w, f.z, f.p, f.q, j_here, j_here, fns)

    ok = f.valid
    core = ok & np.roll(ok, 1, 0) & np.roll(ok, -1, 0) & np.roll(ok, 1, 1) & np.roll(ok, -1, 1)
    core[[0, -1], :] = False
    core[:, [0, -1]] = False

    def dX(a):
        return (np.roll(a, -1, 0) - np.roll(a, 1, 0)) / (2 * chg.dX)

    def dY(a):
        return (np.roll(a, -1, 1) - np.roll(a, 1, 1)) / (2 * chg.dY)

    out = {}
    out["theta_Y"] = float(np.max(np.abs((dY(f.theta) - F["theta"]))[core], initial=0.0))
    th_x_id = f.p * np.sin(f.w) / (4 * fns.c(f.theta))
    out["theta_X"] = float(np.max(np.abs((dX(f.theta) - th_x_id))[core], initial=0.0))
    out["w_Y"] = float(np.max(np.abs((dY(f.w) - F["w"]))[core], initial=0.0))
    out["z_X"] = float(np.max(np.abs((dX(f.z) - F["z"]))[core], initial=0.0))
    out["p_Y"] = float(np.max(np.abs((dY(f.p) - F["p"]))[core], initial=0.0))
    out["q_X"] = float(np.max(np.abs((dX(f.q) - F["q"]))[core], initial=0.0))
    out["x_X"] = float(np.max(np.abs((dX(f.x) - F["xm"]))[core], initial=0.0))
    out["t_Y"] = float(np.max(np.abs((dY(f.t) - F["tp"]))[core], initial=0.0))
    return out


def jacobian_residual(state: CharState,
                      coeffs: LeslieCoefficients | CoefficientFunctions,
                      corner_mask: float = 0.1) -> tuple[FloatArray, np.ndarray]:
    """Relative deviation of the coordinate-change Jacobian identity.

    Compares the finite-difference det d(x,t)/d(X,Y) with
    p q (1+cos w)(1+cos z) / (8c), i.e. the reciprocal of -2c X_x Y_x.
    Masked where w or z approaches pi (the map degenerates there).
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    f = state
    chg = state.grid
    dx_X = (np.roll(f.x, -1, 0) - np.roll(f.x, 1, 0)) / (2 * chg.dX)
    dx_Y = (np.roll(f.x, -1, 1) - np.roll(f.x, 1, 1)) / (2 * chg.dY)
    dt_X = (np.roll(f.t, -1, 0) - np.roll(f.t, 1, 0)) / (2 * chg.dX)
    dt_Y = (np.roll(f.t, -1, 1) - np.roll(f.t, 1, 1)) / (2 * chg.dY)
    det_fd = dx_X * dt_Y - dx_Y * dt_X
    cw2 = 1.0 + np.cos(f.w)
    cz2 = 1.0 + np.cos(f.z)
    det_id = f.p * f.q * cw2 * cz2 / (8 * fns.c(f.theta))
    ok = f.valid
    core = ok & np.roll(ok, 1, 0) & np.roll(ok, -1, 0) & np.roll(ok, 1, 1) & np.roll(ok, -1, 1)
    core[[0, -1], :] = False
    core[:, [0, -1]] = False
    core &= (cw2 > corner_mask) & (cz2 > corner_mask)
    rel = np.where(core, np.abs(det_fd / det_id - 1.0), np.nan)
    return rel, core


def energy_line_integral(state: CharState, t_slice: float) -> float:
    """Line integral of (1-cos w)p/4 dX - (1-cos z)q/4 dY along {t = t_slice}.

    Equals int (theta_t^2 + c^2 theta_x^2) dx = 2E(t) over the covered range.
    """
    f = state
    nX, nY = f.t.shape
    Yc = np.full(nX, np.nan)
    vals = {}
    for name, arr in (("w", f.w), ("z", f.z), ("p", f.p), ("q", f.q)):
        vals[name] = np.full(nX, np.nan)
    for i in range(nX):
        col_t = np.where(f.valid[i], f.t[i], -np.inf)
        jhit = np.where((col_t[:-1] <= t_slice) & (col_t[1:] > t_slice))[0]
        if jhit.size == 0:
            continue
        j = jhit[0]
        lam = (t_slice - col_t[j]) / (col_t[j + 1] - col_t[j])
        Yc[i] = f.grid.Y[j] + lam * f.grid.dY
        for name, arr in (("w", f.w), ("z", f.z), ("p", f.p), ("q", f.q)):
            vals[name][i] = (1 - lam) * arr[i, j] + lam * arr[i, j + 1]
    good = np.isfinite(Yc)
    idx = np.where(good)[0]
    if idx.size < 2:
        return np.nan
    gX = f.grid.X[idx]
    gY = Yc[idx]
    fw = (1 - np.cos(vals["w"][idx])) * vals["p"][idx] / 4
    fz = (1 - np.cos(vals["z"][idx])) * vals["q"][idx] / 4
    dXs = np.diff(gX)
    dYs = np.diff(gY)
    return float(np.sum(0.5 * (fw[1:] + fw[:-1]) * dXs
                        - 0.5 * (fz[1:] + fz[:-1]) * dYs))


# -- resampling back to the physical plane -------------------------------------

@dataclass(slots=True)
class MappedSlice:
    t: float
    x: FloatArray
    theta: FloatArray
    theta_t: FloatArray
    theta_x: FloatArray
    covered: np.ndarray
    derivative_ok: np.ndarray
    tie_discrepancy: float


def map_back(state: CharState, grid: Grid1D, times,
             coeffs: LeslieCoefficients | CoefficientFunctions,
             delta_mask: float = 0.05) -> list[MappedSlice]:
    """Resample theta (and derivatives where recoverable) to physical slices.

    The image point cloud is bin-averaged on a fine (x, t) raster first (tie
    handling: mean, max spread recorded), then triangulated linear
    interpolation evaluates each requested slice. Nodes outside the image
    hull come back masked in `covered`; derivative recovery additionally
    requires |w|, |z| < pi - delta_mask.
    """
    fns = coeffs if isinstance(coeffs, CoefficientFunctions) else CoefficientFunctions(coeffs)
    f = state
    t_all = f.t[f.valid]
    if t_all.size == 0:
        raise CharSolverError("no converged lattice nodes to map back")
    t_max = float(np.max(t_all))
    out = []
    c = fns.c(f.theta)
    # w, z continue smoothly past +-pi across a cusp; the gradient variables
    # R = tan(w/2), S = tan(z/2) are 2pi-periodic in them, so mask and
    # evaluate on the wrapped representatives
    w_wrap = np.mod(f.w + np.pi, 2 * np.pi) - np.pi
    z_wrap = np.mod(f.z + np.pi, 2 * np.pi) - np.pi
    R = np.tan(0.5 * w_wrap)
    S = np.tan(0.5 * z_wrap)
    deriv_ok = (np.abs(w_wrap) < np.pi - delta_mask) & (np.abs(z_wrap) < np.pi - delta_mask)
    theta_t_nodes = np.where(deriv_ok, 0.5 * (R + S), 0.0)
    theta_x_nodes = np.where(deriv_ok, (R - S) / (2 * c), 0.0)

    for t_s in np.atleast_1d(times):
        t_s = float(t_s)
        window = max(4 * state.grid.dY, 0.05 * max(t_max, 1e-12))
        sel = f.valid & (np.abs(f.t - t_s) <= window)
        if not np.any(sel):
            out.append(MappedSlice(t=t_s, x=grid.x, theta=np.full(grid.n, np.nan),
                                   theta_t=np.full(grid.n, np.nan),
                                   theta_x=np.full(grid.n, np.nan),
                                   covered=np.zeros(grid.n, bool),
                                   derivative_ok=np.zeros(grid.n, bool),
                                   tie_discrepancy=np.nan))
            continue
        pts = np.column_stack([f.x[sel], f.t[sel]])
        th = f.theta[sel]
        xc, tc, thc, spread = _bin_average(pts, th, grid.dx / 2, window / 8)
        interp = LinearNDInterpolator(np.column_stack([xc, tc]), thc)
        theta_s = interp(grid.x, np.full(grid.n, t_s))
        covered = np.isfinite(theta_s)

        sel_d = sel & deriv_ok
        theta_t_s = np.full(grid.n, np.nan)
        theta_x_s = np.full(grid.n, np.nan)
        dmask = np.zeros(grid.n, bool)
        if np.count_nonzero(sel_d) > 4:
            pd = np.column_stack([f.x[sel_d], f.t[sel_d]])
            xt, tt, vt, _ = _bin_average(pd, theta_t_nodes[sel_d], grid.dx / 2, window / 8)
            _, _, vx, _ = _bin_average(pd, theta_x_nodes[sel_d], grid.dx / 2, window / 8)
            it = LinearNDInterpolator(np.column_stack([xt, tt]),
                                      np.column_stack([vt, vx]))
            got = it(grid.x, np.full(grid.n, t_s))
            theta_t_s, theta_x_s = got[:, 0], got[:, 1]
            dmask = np.isfinite(theta_t_s)
        out.append(MappedSlice(t=t_s, x=grid.x, theta=theta_s, theta_t=theta_t_s,
                               theta_x=theta_x_s, covered=covered,
                               derivative_ok=dmask, tie_discrepancy=spread))
    return out


def _bin_average(pts: FloatArray, vals: FloatArray, dx_bin: float, dt_bin: float):
    """Centroid-average duplicate cloud points per (x, t) raster cell."""
    ix = np.floor(pts[:, 0] / max(dx_bin, 1e-12)).astype(np.int64)
    it = np.floor(pts[:, 1] / max(dt_bin, 1e-12)).astype(np.int64)
    key = ix * 2_000_003 + it
    order = np.argsort(key, kind="stable")
    key_s = key[order]
    starts = np.flatnonzero(np.concatenate([[True], key_s[1:] != key_s[:-1]]))
    counts = np.diff(np.append(starts, key_s.size))
    sums_x = np.add.reduceat(pts[order, 0], starts)
    sums_t = np.add.reduceat(pts[order, 1], starts)
    sums_v = np.add.reduceat(vals[order], starts)
    vmax = np.maximum.reduceat(vals[order], starts)
    vmin = np.minimum.reduceat(vals[order], starts)
    spread = float(np.max(vmax - vmin)) if starts.size else 0.0
    return (sums_x / counts, sums_t / counts, sums_v / counts, spread)

"""Backward flow ``phi(t,x,y) = y + int_t^T H(x, phi) dzeta`` and its derivatives.

The flow is integrated jointly with its x/y-derivatives up to the orders the
transformed driver needs (the "ensemble"), tabulated on a (t, x, y) grid and
interpolated with tensor-product splines in (x, y), linearly in t.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .fields import FLOW_JET, VectorFieldFamily
from .rough_paths import PiecewiseLinearPath, RoughPath2

log = logging.getLogger(__name__)

# ensemble component order
PHI, DX, DY, DXX, DXY, DYY, DYYY, DXYY, DXXY = range(9)
COMPONENTS = ("phi", "dx", "dy", "dxx", "dxy", "dyy", "dyyy", "dxyy", "dxxy")
# components whose deviation from the identity flow vanishes at the terminal time
DEVIATIONS = ("dx", "dy", "dxx", "dxy", "dyy", "dyyy", "dxyy", "dxxy")


class FlowAccuracyError(RuntimeError):
    pass


class FlowDomainError(ValueError):
    pass


class FlowNumericError(RuntimeError):
    pass


class UnsupportedDriverError(ValueError):
    pass


def terminal_state(X, Y) -> np.ndarray:
    S = np.zeros((9,) + X.shape)
    S[PHI] = Y
    S[DY] = 1.0
    return S


def prolong(g: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Right-hand side of the ensemble for a scalar field with jet ``g``.

    ``g`` holds the FLOW_JET derivatives of the field evaluated at ``(x, phi)``.
    Obtained by differentiating ``d phi = G(x, phi)`` in x and y.
    """
    gv, gx, gy, gxx, gxy, gyy, gyyy, gxyy, gxxy = g
    p, px, py, pxx, pxy, pyy, pyyy, pxyy, pxxy = S
    R = np.empty_like(S)
    R[PHI] = gv
    R[DX] = gx + gy * px
    R[DY] = gy * py
    R[DXX] = gxx + 2.0 * gxy * px + gyy * px * px + gy * pxx
    R[DXY] = gxy * py + gyy * px * py + gy * pxy
    R[DYY] = gyy * py * py + gy * pyy
    R[DYYY] = gyyy * py ** 3 + 3.0 * gyy * py * pyy + gy * pyyy
    R[DXYY] = (gxyy + gyyy * px) * py * py + 2.0 * gyy * py * pxy + (gxy + gyy * px) * pyy + gy * pxyy
    R[DXXY] = (
        gxxy * py
        + 2.0 * gxyy * px * py
        + gyyy * px * px * py
        + gyy * pxx * py
        + 2.0 * gxy * pxy
        + 2.0 * gyy * px * pxy
        + gy * pxxy
    )
    return R


@dataclass
class _Step:
    """One driver interval ``[s, t]``: level-1 increment and Levy area."""

    s: float
    t: float
    inc: np.ndarray
    area: np.ndarray | None


def _effective_jet(H: VectorFieldFamily, step: _Step, X, P) -> np.ndarray:
    # log-ODE field: sum_k inc^k H_k - sum_{k<l} a^{kl} [H_k, H_l]
    g = 0.0
    for k, comp in enumerate(H.components):
        if step.inc[k] != 0.0:
            g = g + step.inc[k] * comp.jet(X, P)
    if step.area is not None:
        for k in range(H.d):
            for l in range(k + 1, H.d):
                a = step.area[k, l]
                if a != 0.0:
                    g = g - a * H.bracket(k, l).jet(X, P)
    if np.ndim(g) == 0:
        return np.zeros((len(FLOW_JET),) + X.shape)
    return g


def _substeps(H: VectorFieldFamily, step: _Step, max_increment: float) -> int:
    size = float(np.sum(np.abs(step.inc)))
    if step.area is not None:
        size += float(np.sum(np.abs(step.area))) * max(1.0, H.C_H)
    return max(1, int(math.ceil(max(H.C_H, 1e-12) * size / max_increment)))


def _rk4_interval(H, step: _Step, X, S, n_sub: int) -> np.ndarray:
    du = 1.0 / n_sub

    def rhs(state):
        return prolong(_effective_jet(H, step, X, state[PHI]), state)

    for _ in range(n_sub):
        k1 = rhs(S)
        k2 = rhs(S + 0.5 * du * k1)
        k3 = rhs(S + 0.5 * du * k2)
        k4 = rhs(S + du * k3)
        S = S + (du / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return S


def _integrate(H, steps, x_grid, y_grid, tab_times, max_increment, sub_factor=1):
    """Integrate backward over ``steps`` (descending), recording at ``tab_times``."""
    X, Y = np.meshgrid(x_grid, y_grid, indexing="ij")
    S = terminal_state(X, Y)
    table = np.empty((tab_times.size, 9) + X.shape)
    k = tab_times.size - 1
    table[k] = S
    for st in steps:
        if not H.identically_zero:
            S = _rk4_interval(H, st, X, S, sub_factor * _substeps(H, st, max_increment))
        if not np.all(np.isfinite(S[PHI])):
            raise FlowNumericError("flow blew up; reduce the window or the driver size")
        while k > 0 and abs(tab_times[k - 1] - st.s) <= 1e-12 * max(1.0, abs(st.s)):
            k -= 1
            table[k] = S
    if k != 0:
        raise FlowDomainError("tabulation times not aligned with driver intervals")
    return table


def _steps_from_path(zeta: PiecewiseLinearPath, t0: float, t1: float, tab_times) -> list:
    path = zeta.with_knots(np.concatenate([tab_times, [t0, t1]]))
    t, v = path.times, path.values
    tol = 1e-12 * max(1.0, t1)
    i0 = int(np.argmin(np.abs(t - t0)))
    i1 = int(np.argmin(np.abs(t - t1)))
    if abs(t[i0] - t0) > tol or abs(t[i1] - t1) > tol:
        raise FlowDomainError("window outside driver domain")
    return [_Step(t[i], t[i + 1], v[i + 1] - v[i], None) for i in range(i1 - 1, i0 - 1, -1)]


def _steps_from_rough(rp: RoughPath2, t0: float, t1: float, tab_times) -> list:
    if rp.p >= 3:
        raise UnsupportedDriverError("rough paths with p >= 3 are not supported")
    fine = rp.refine(np.concatenate([tab_times, [t0, t1]]))
    i0, i1 = fine.index_of(t0), fine.index_of(t1)
    steps = []
    for i in range(i1 - 1, i0 - 1, -1):
        a = fine.areas[i]
        steps.append(_Step(fine.times[i], fine.times[i + 1], fine.increments[i], a if np.any(a != 0.0) else None))
    return steps


@dataclass
class FlowEnsemble:
    """Tabulated flow and derivatives on ``[t0, T_e] x x_grid x y_grid``."""

    t0: float
    T_e: float
    tab_times: np.ndarray
    x_grid: np.ndarray
    y_grid: np.ndarray
    table: np.ndarray  # (Nt, 9, Nx, Ny)
    interp_order: int = 3
    identity: bool = False  # H == 0: phi = y exactly, tables only kept for export
    _splines: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        # derivatives up to order 2 are read off the splines
        if self.interp_order not in (3, 5):
            raise ValueError("interp_order must be 3 or 5")

    # -- interpolation ------------------------------------------------------
    def _spline(self, it: int, comp: int) -> RectBivariateSpline:
        key = (it, comp)
        sp = self._splines.get(key)
        if sp is None:
            k = self.interp_order
            sp = RectBivariateSpline(self.x_grid, self.y_grid, self.table[it, comp], kx=k, ky=k, s=0)
            self._splines[key] = sp
        return sp

    def _time_weights(self, t: float):
        tt = self.tab_times
        tol = 1e-12 * max(1.0, abs(t))
        if t < tt[0] - tol or t > tt[-1] + tol:
            raise FlowDomainError(f"t={t} outside flow window [{tt[0]}, {tt[-1]}]")
        j = int(np.searchsorted(tt, t))
        if j < tt.size and abs(tt[j] - t) <= tol:
            return [(j, 1.0)]
        if j > 0 and abs(tt[j - 1] - t) <= tol:
            return [(j - 1, 1.0)]
        w = (t - tt[j - 1]) / (tt[j] - tt[j - 1])
        return [(j - 1, 1.0 - w), (j, w)]

    def clip(self, x, y):
        x = np.clip(x, self.x_grid[0], self.x_grid[-1])
        y = np.clip(y, self.y_grid[0], self.y_grid[-1])
        return x, y

    def outside_fraction(self, x, y) -> float:
        x, y = np.asarray(x), np.asarray(y)
        out = (x < self.x_grid[0]) | (x > self.x_grid[-1]) | (y < self.y_grid[0]) | (y > self.y_grid[-1])
        return float(np.mean(out)) if out.size else 0.0

    def component(self, name: str, t: float, x, y, dx: int = 0, dy: int = 0) -> np.ndarray:
        comp = COMPONENTS.index(name)
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if self.identity:
            self._time_weights(t)
            if comp == PHI and dx == 0:
                return y.copy() if dy == 0 else np.full(x.shape, 1.0 if dy == 1 else 0.0)
            return np.full(x.shape, 1.0 if (comp == DY and dx == dy == 0) else 0.0)
        xc, yc = self.clip(x, y)
        out = 0.0
        for it, w in self._time_weights(t):
            out = out + w * self._spline(it, comp).ev(xc.ravel(), yc.ravel(), dx=dx, dy=dy)
        return np.reshape(out, x.shape)

    def evaluate(self, t: float, x, y, names=COMPONENTS) -> dict:
        """Ensemble quantities at ``(t, x, y)`` plus ``inv_dy = 1/dy``."""
        out = {name: self.component(name, t, x, y) for name in set(names) | {"dy"}}
        out["inv_dy"] = 1.0 / out["dy"]
        return out

    def phi(self, t: float, x, y) -> np.ndarray:
        return self.component("phi", t, x, y)

    def slice(self, t: float) -> np.ndarray:
        """Raw table at a tabulated time, shape ``(9, Nx, Ny)``."""
        w = self._time_weights(t)
        return sum(wi * self.table[i] for i, wi in w)

    # -- inverse ------------------------------------------------------------
    def invert(self, t: float, x, y, max_iter: int = 50) -> np.ndarray:
        return invert_flow(self, t, x, y, max_iter=max_iter)

    # -- diagnostics --------------------------------------------------------
    def deviation_profile(self) -> np.ndarray:
        """Per tabulated time, max over the grid of the eight terminal-vanishing deviations."""
        dev = np.abs(self.table[:, [DX, DXX, DXY, DYY, DYYY, DXYY, DXXY]]).max(axis=(1, 2, 3))
        dev = np.maximum(dev, np.abs(self.table[:, DY] - 1.0).max(axis=(1, 2)))
        return dev

    def uniform_bound(self) -> float:
        tab = self.table
        inv = np.abs(1.0 / tab[:, DY]).max()
        return float(max(np.abs(tab[:, 1:]).max(), inv))

    def min_dy(self) -> float:
        return float(self.table[:, DY].min())

    def to_json(self) -> dict:
        return {
            "t0": self.t0,
            "T_e": self.T_e,
            "tab_times": self.tab_times.tolist(),
            "x_grid": self.x_grid.tolist(),
            "y_grid": self.y_grid.tolist(),
            "components": list(COMPONENTS),
            "table": self.table.tolist(),
        }


def _prepare_grids(window, x_grid, y_grid, tab_times):
    t0, t1 = float(window[0]), float(window[1])
    if not t1 > t0:
        raise FlowDomainError("window must have positive length")
    tab = np.linspace(t0, t1, 2) if tab_times is None else np.asarray(tab_times, dtype=float)
    tab = np.unique(np.concatenate([tab[(tab > t0) & (tab < t1)], [t0, t1]]))
    return t0, t1, np.asarray(x_grid, dtype=float), np.asarray(y_grid, dtype=float), tab


def _solve(H, steps_fn, window, x_grid, y_grid, tab_times, max_increment, check, check_tol, interp_order):
    t0, t1, xg, yg, tab = _prepare_grids(window, x_grid, y_grid, tab_times)
    steps = steps_fn(t0, t1, tab)
    table = _integrate(H, steps, xg, yg, tab, max_increment)
    if check and not H.identically_zero:
        # half-step self-consistency on a subsample of the grid
        sx = xg[:: max(1, xg.size // 5)]
        sy = yg[:: max(1, yg.size // 5)]
        coarse = _integrate(H, steps, sx, sy, tab[[0, -1]], max_increment)[0]
        fine = _integrate(H, steps, sx, sy, tab[[0, -1]], max_increment, sub_factor=2)[0]
        err = float(np.max(np.abs(coarse - fine) / (1.0 + np.abs(fine))))
        if err > check_tol:
            raise FlowAccuracyError(f"step-doubling discrepancy {err:.2e} exceeds {check_tol:.1e}; lower max_increment")
    return FlowEnsemble(t0, t1, tab, xg, yg, table, interp_order, identity=H.identically_zero)


def solve_flow_smooth(H: VectorFieldFamily, zeta: PiecewiseLinearPath, window, x_grid, y_grid, tab_times=None,
                      max_increment: float = 0.05, check: bool = True, check_tol: float = 1e-6,
                      interp_order: int = 3) -> FlowEnsemble:
    """Flow driven by a piecewise-linear path: RK4 on each linear segment."""
    if zeta.dim != H.d:
        raise FlowDomainError("driver dimension does not match the number of vector fields")
    return _solve(H, lambda a, b, tab: _steps_from_path(zeta, a, b, tab), window, x_grid, y_grid, tab_times,
                  max_increment, check, check_tol, interp_order)


def solve_flow_rough(H: VectorFieldFamily, rp: RoughPath2, window, x_grid, y_grid, tab_times=None,
                     max_increment: float = 0.05, check: bool = True, check_tol: float = 1e-6,
                     interp_order: int = 3) -> FlowEnsemble:
    """Flow driven by a level-2 rough path.

    Each interval is a log-ODE step: the field ``sum inc^k H_k`` corrected by
    the Levy areas times the brackets ``[H_k, H_l]``, integrated over unit time
    with RK4. For zero areas this coincides with ``solve_flow_smooth``.
    """
    if rp.p >= 3:
        raise UnsupportedDriverError("rough paths with p >= 3 are not supported")
    if rp.dim != H.d:
        raise FlowDomainError("driver dimension does not match the number of vector fields")
    return _solve(H, lambda a, b, tab: _steps_from_rough(rp, a, b, tab), window, x_grid, y_grid, tab_times,
                  max_increment, check, check_tol, interp_order)


def invert_flow(flow: FlowEnsemble, t: float, x, y, max_iter: int = 50, tol: float = 1e-10) -> np.ndarray:
    """Solve ``phi(t, x, y_tilde) = y`` for ``y_tilde`` by Newton's method.

    Iterates to machine precision; succeeds when the residual is below
    ``tol * (1 + |y|)``.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    lo = flow.phi(t, x, np.full(x.shape, flow.y_grid[0]))
    hi = flow.phi(t, x, np.full(x.shape, flow.y_grid[-1]))
    slack = 1e-12 * (1.0 + np.abs(y))
    if np.any((y < lo - slack) | (y > hi + slack)):
        raise FlowDomainError("value outside the range of phi(t, x, .) on the tabulated y-window")
    # start from the linear interpolation between the window ends
    yt = flow.y_grid[0] + (y - lo) / np.maximum(hi - lo, 1e-300) * (flow.y_grid[-1] - flow.y_grid[0])
    yt = np.clip(yt, flow.y_grid[0], flow.y_grid[-1])
    for _ in range(max_iter):
        r = flow.phi(t, x, yt) - y
        d = flow.component("phi", t, x, yt, dy=1)
        step = r / d
        yt = np.clip(yt - step, flow.y_grid[0], flow.y_grid[-1])
        if np.all(np.abs(step) <= 4e-16 * (1.0 + np.abs(yt))):
            break
    res = np.abs(flow.phi(t, x, yt) - y)
    if np.any(res > tol * (1.0 + np.abs(y))):
        raise FlowNumericError(f"Newton inversion did not converge (max residual {res.max():.2e})")
    return yt


def psi_identities(q: dict) -> dict:
    """Derivatives of the y-inverse expressed through phi-derivatives at ``(t, x, y_tilde)``."""
    py, px, pxx, pxy, pyy = q["dy"], q["dx"], q["dxx"], q["dxy"], q["dyy"]
    psi_y = 1.0 / py
    psi_x = -px / py
    psi_yy = -pyy / py ** 3
    psi_xy = pyy * px / py ** 3 - pxy / py ** 2
    # from 0 = psi_xx + 2 psi_xy phi_x + psi_yy phi_x^2 + psi_y phi_xx
    psi_xx = -2.0 * psi_xy * px - psi_yy * px * px - psi_y * pxx
    return {"x": psi_x, "y": psi_y, "yy": psi_yy, "xy": psi_xy, "xx": psi_xx}


def derivative_identity_residuals(flow: FlowEnsemble, times, xs, ys_tilde, h: float = 1e-3) -> dict:
    """Max residual of the five inverse-derivative identities.

    The inverse's derivatives come from central differences (step ``h``) of
    ``invert_flow``; the identities use interpolated phi-derivative tables.
    """
    worst = {"x": 0.0, "y": 0.0, "yy": 0.0, "xy": 0.0, "xx": 0.0}
    X, YT = np.meshgrid(np.asarray(xs, float), np.asarray(ys_tilde, float), indexing="ij")
    for t in np.atleast_1d(times):
        q = flow.evaluate(float(t), X, YT)
        y = q["phi"]
        ident = psi_identities(q)

        def psi(dx, dy):
            return invert_flow(flow, float(t), X + dx * h, y + dy * h)

        c = psi(0, 0)
        fd = {
            "x": (psi(1, 0) - psi(-1, 0)) / (2 * h),
            "y": (psi(0, 1) - psi(0, -1)) / (2 * h),
            "xx": (psi(1, 0) - 2 * c + psi(-1, 0)) / h ** 2,
            "yy": (psi(0, 1) - 2 * c + psi(0, -1)) / h ** 2,
            "xy": (psi(1, 1) - psi(1, -1) - psi(-1, 1) + psi(-1, -1)) / (4 * h * h),
        }
        for key in worst:
            worst[key] = max(worst[key], float(np.max(np.abs(fd[key] - ident[key]))))
    return worst


@dataclass
class SmallnessWindow:
    h: float
    L: float
    warning: bool


def flow_smallness_window(flow: FlowEnsemble, eps: float) -> SmallnessWindow:
    """Largest tabulated ``h`` with all deviations below ``eps`` on ``[T_e - h, T_e]``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    dev = flow.deviation_profile()
    tt = flow.tab_times
    k = tt.size - 1
    while k > 0 and dev[k - 1] < eps:
        k -= 1
    L = flow.uniform_bound()
    if k == tt.size - 1:
        return SmallnessWindow(float(tt[-1] - tt[-2]), L, True)
    return SmallnessWindow(float(tt[-1] - tt[k]), L, False)

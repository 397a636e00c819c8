"""Monte-Carlo route: Euler forward paths, regression backward induction, untransformation."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowEnsemble, solve_flow_rough
from .problem import ProblemSpec
from .rough_paths import PiecewiseLinearPath, RoughPath2, lift_smooth
from .rpde import FDGrid, _flow_grids, global_constants, solve_rpde, time_grid, window_bounds, FD_TOL
from .transform import TransformedDriver, build_transformed_driver

log = logging.getLogger(__name__)


class RegressionWarning(UserWarning):
    pass


@dataclass
class BsdePaths:
    times: np.ndarray
    X: np.ndarray  # (n_paths, Nt)
    dW: np.ndarray  # (n_paths, Nt - 1)
    seed: int
    Yt: np.ndarray | None = None
    Zt: np.ndarray | None = None
    Y: np.ndarray | None = None
    Z: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def to_csv_rows(self, max_paths: int = 100):
        for p in range(min(max_paths, self.n_paths)):
            for k, t in enumerate(self.times):
                yt = self.Yt[p, k] if self.Yt is not None else float("nan")
                y = self.Y[p, k] if self.Y is not None else float("nan")
                yield p, t, self.X[p, k], yt, y


def simulate_forward(spec: ProblemSpec, times, n_paths: int, seed: int, x0: float | None = None) -> BsdePaths:
    """Euler-Maruyama for ``dX = b dt + sigma dW`` from ``x0`` at ``times[0]``."""
    times = np.asarray(times, dtype=float)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("the simulation grid must be uniform")
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((n_paths, dt.size)) * np.sqrt(dt)[None, :]
    X = np.empty((n_paths, times.size))
    X[:, 0] = spec.x0 if x0 is None else x0
    for k in range(dt.size):
        X[:, k + 1] = X[:, k] + spec.b(times[k], X[:, k]) * dt[k] + spec.sigma(times[k], X[:, k]) * dW[:, k]
    return BsdePaths(times, X, dW, seed)


class _Projector:
    """Least squares on ``1, xi, ..., xi^deg`` with ``xi`` the standardized state.

    ``xi`` is winsorized at ``+-winsor`` so tail paths get the boundary value of
    the fitted polynomial instead of its extrapolation.
    """

    def __init__(self, x: np.ndarray, degree: int, winsor: float = 3.0):
        self.constant = bool(np.ptp(x) == 0.0)
        if self.constant:
            self.degree = 0
            return
        xi = np.clip((x - x.mean()) / x.std(), -winsor, winsor)
        deg = degree
        while True:
            A = np.vander(xi, deg + 1, increasing=True)
            if deg == 0 or np.linalg.matrix_rank(A) == deg + 1:
                break
            warnings.warn(f"rank-deficient regression basis; degree reduced to {deg - 1}", RegressionWarning)
            deg -= 1
        self.degree = deg
        self.A = A

    def __call__(self, y: np.ndarray) -> np.ndarray:
        if self.constant:
            return np.full_like(y, y.mean())
        coef, *_ = np.linalg.lstsq(self.A, y, rcond=None)
        return self.A @ coef


def solve_bsde_regression(td: TransformedDriver, terminal: np.ndarray, paths: BsdePaths, M: float,
                          k0: int = 0, k1: int | None = None, degree: int = 4, picard: int = 1) -> dict:
    """Backward regression for ``-dY~ = f~ dt - Z~ dW`` on ``times[k0..k1]``.

    Fills ``paths.Yt``/``paths.Zt`` in place on that index range and returns
    clipping fractions and the per-path telescoped estimator of ``Y~_{k0}``.
    """
    k1 = paths.times.size - 1 if k1 is None else k1
    n, Nt = paths.X.shape
    if paths.Yt is None:
        paths.Yt = np.full((n, Nt), np.nan)
        paths.Zt = np.full((n, Nt), np.nan)
    lo_y, hi_y = td.flow.y_grid[0], td.flow.y_grid[-1]
    xw = (td.flow.x_grid[0], td.flow.x_grid[-1])
    paths.Yt[:, k1] = terminal
    est = np.array(terminal, dtype=float)
    clipped_x = 0.0
    clipped_y = 0
    for k in range(k1 - 1, k0 - 1, -1):
        t, dt = paths.times[k], paths.times[k + 1] - paths.times[k]
        X = paths.X[:, k]
        Xc = np.clip(X, *xw)
        clipped_x = max(clipped_x, float(np.mean(Xc != X)))
        proj = _Projector(X, degree)
        y_next = paths.Yt[:, k + 1]
        z = proj(y_next * paths.dW[:, k] / dt)
        y_proxy = y_next
        for _ in range(1 + picard):
            drv = td(t, Xc, np.clip(y_proxy, lo_y, hi_y), z)
            y = proj(y_next + drv * dt)
            y_proxy = y
        out = np.abs(y) > M + 1.0
        clipped_y += int(out.sum())
        paths.Yt[:, k] = np.clip(y, -M - 1.0, M + 1.0)
        paths.Zt[:, k] = z
        est = est + drv * dt
    return {"clip_x_fraction": clipped_x, "clip_y_count": clipped_y, "estimator": est}


def untransform_solution(flow: FlowEnsemble, paths: BsdePaths, spec: ProblemSpec, k0: int = 0,
                         k1: int | None = None) -> float:
    """``Y = phi(t, X, Y~)`` and ``Z = d_y phi Z~ + d_x phi sigma`` on ``times[k0..k1]``.

    Returns the fraction of (path, time) points clipped to the flow's window.
    """
    k1 = paths.times.size - 1 if k1 is None else k1
    if paths.Y is None:
        paths.Y = np.full_like(paths.X, np.nan)
        paths.Z = np.full_like(paths.X, np.nan)
    frac = 0.0
    for k in range(k0, k1 + 1):
        t = paths.times[k]
        X, Yt = paths.X[:, k], paths.Yt[:, k]
        frac = max(frac, flow.outside_fraction(X, Yt))
        Xc, Yc = flow.clip(X, Yt)
        q = flow.evaluate(t, Xc, Yc, ("phi", "dx", "dy"))
        paths.Y[:, k] = q["phi"]
        if k < paths.times.size - 1 and not np.all(np.isnan(paths.Zt[:, k])):
            paths.Z[:, k] = q["dy"] * paths.Zt[:, k] + q["dx"] * spec.sigma(t, X)
    return frac


@dataclass
class MCConfig:
    n_paths: int = 100_000
    n_steps: int = 50
    seed: int = 12345
    degree: int = 4
    picard: int = 1


def solve_bsde_stitched(spec: ProblemSpec, driver, fd_grid: FDGrid | None = None, mc: MCConfig | None = None,
                        h: float | None = None, route: str = "bsde", x0: float | None = None):
    """Regression BSDE on windows of width ``h`` with restarted flows.

    On each window the transformed terminal value equals the untransformed
    ``Y`` at the window end (the restarted flow is the identity there); ``Y``
    at the window start feeds the next window.
    """
    fd_grid = fd_grid or FDGrid()
    mc = mc or MCConfig()
    rp = lift_smooth(driver) if isinstance(driver, PiecewiseLinearPath) else driver
    times = np.linspace(spec.t0, spec.T, mc.n_steps + 1)
    td, consts, Y, settled = global_constants(spec, rp, times, fd_grid, route=route, h_override=h)
    xf, yf = _flow_grids(spec, fd_grid, Y)
    paths = simulate_forward(spec, times, mc.n_paths, mc.seed, x0)
    terminal = spec.g(paths.X[:, -1])
    wins = window_bounds(times, consts.h)
    reports = []
    estimator = None
    for i0, i1 in wins:
        wt = times[i0 : i1 + 1]
        if i0 == 0 and i1 == times.size - 1:
            wtd = td
        else:
            flow = solve_flow_rough(spec.H, rp, (wt[0], wt[-1]), xf, yf, wt, max_increment=fd_grid.max_increment)
            wtd = build_transformed_driver(spec, flow)
        M_w = float(np.max(np.abs(terminal))) + (wt[-1] - wt[0]) * consts.C1f
        rep = solve_bsde_regression(wtd, terminal, paths, M=M_w, k0=i0, k1=i1, degree=mc.degree, picard=mc.picard)
        frac = untransform_solution(wtd.flow, paths, spec, i0, i1)
        seg = paths.Yt[:, i0 : i1 + 1]
        reports.append({"window": [float(wt[0]), float(wt[-1])], "M": M_w, "max_abs_Yt": float(np.max(np.abs(seg))),
                        "clip_x_fraction": rep["clip_x_fraction"], "clip_y_count": rep["clip_y_count"],
                        "untransform_clip_fraction": frac})
        terminal = paths.Y[:, i0].copy()
        if i0 == 0:
            estimator = rep["estimator"]
    y0 = float(np.mean(paths.Y[:, 0]))
    se = float(np.std(estimator, ddof=1) / math.sqrt(mc.n_paths)) if mc.n_paths > 1 else float("nan")
    paths.meta = {"windows": reports, "constants": consts, "y_radius": Y, "bound_settled": settled}
    return paths, {"Y0": y0, "std_error": se, "windows": reports, "constants": consts}


def feynman_kac_check(spec: ProblemSpec, driver, fd_grid: FDGrid | None = None, mc: MCConfig | None = None,
                      fd_tol: float = FD_TOL, n_se: float = 3.0) -> dict:
    """MC ``Y_{t0}`` against FD ``u(t0, x0)``, both on windows of the FD route's ``h``."""
    fd_grid = fd_grid or FDGrid()
    fd = solve_rpde(spec, driver, fd_grid)
    u0 = fd.value_at_start(spec.x0)
    _, res = solve_bsde_stitched(spec, driver, fd_grid, mc, h=fd.constants.h)
    gap = abs(res["Y0"] - u0)
    bound = n_se * res["std_error"] + fd_tol
    return {"u_fd": u0, "Y_mc": res["Y0"], "std_error": res["std_error"], "discrepancy": gap, "bound": bound,
            "pass": bool(gap < bound), "h": fd.constants.h, "mc_windows": res["windows"], "fd": fd,
            "constants": fd.constants}

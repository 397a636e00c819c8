"""Finite differences for the semilinear PDE, smooth and rough (windowed) drivers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .fields import VectorFieldFamily
from .flow import FlowEnsemble, solve_flow_rough
from .problem import ProblemSpec
from .rough_paths import (
    PiecewiseLinearPath,
    RoughPath2,
    lift_smooth,
    p_variation_distance,
    uniform_sequence,
    wong_zakai_sequence,
)
from .transform import (
    ComparisonConstants,
    TransformedDriver,
    build_transformed_driver,
    estimate_growth_constants,
    step_size,
)

log = logging.getLogger(__name__)

FD_TOL = 1e-2  # sup-norm tolerance of the default grids


class StabilityError(ValueError):
    pass


@dataclass
class FDGrid:
    nx: int = 161
    steps_per_unit: int = 200
    x_halfwidth: float | None = None
    flow_nx: int = 41
    flow_ny: int = 41
    z_radius: float = 10.0
    max_increment: float = 0.05
    pad: float = 0.5  # computational window = report window widened by this fraction per side

    def x_grid(self, spec: ProblemSpec) -> np.ndarray:
        """Report grid: ``nx`` points on the problem's x-window."""
        lo, hi = spec.x_window(self.x_halfwidth)
        return np.linspace(lo, hi, self.nx)

    def padded(self, spec: ProblemSpec) -> tuple[np.ndarray, slice]:
        """Computational grid (same spacing) and the slice recovering the report grid."""
        x = self.x_grid(spec)
        dx = x[1] - x[0]
        extra = int(math.ceil(self.pad * (x[-1] - x[0]) / 2 / dx - 1e-9))
        full = np.concatenate([x[0] - dx * np.arange(extra, 0, -1), x, x[-1] + dx * np.arange(1, extra + 1)])
        return full, slice(extra, extra + x.size)


@dataclass
class GridSolution:
    times: np.ndarray
    x: np.ndarray
    values: np.ndarray  # (Nt, Nx)
    representation: str = "u"
    windows: list = field(default_factory=list)
    M: float | None = None
    constants: ComparisonConstants | None = None
    transformed: np.ndarray | None = None  # v per node, when a flow transform was used
    diagnostics: dict = field(default_factory=dict)
    flows: list = field(default_factory=list, repr=False)  # one FlowEnsemble per window, earliest first

    def at(self, t: float, x) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9:
            raise ValueError(f"t={t} is not a grid time")
        return np.interp(x, self.x, self.values[k])

    def value_at_start(self, x0: float) -> float:
        return float(np.interp(x0, self.x, self.values[0]))

    def to_rows(self):
        for k, t in enumerate(self.times):
            for i, xv in enumerate(self.x):
                yield t, xv, self.values[k, i]


def time_grid(t0: float, T: float, steps_per_unit: int, extra=()) -> np.ndarray:
    n = max(1, int(math.ceil(steps_per_unit * (T - t0) - 1e-9)))
    t = np.linspace(t0, T, n + 1)
    extra = np.asarray([e for e in np.atleast_1d(extra) if t0 < e < T], dtype=float)
    t = np.unique(np.concatenate([t, extra]))
    # drop nodes closer than a tiny fraction of a step to a neighbour
    keep = np.concatenate([[True], np.diff(t) > 1e-9 * (T - t0)])
    keep[-1] = True
    t = t[keep]
    if t.size >= 2 and t[-1] - t[-2] <= 1e-9 * (T - t0):
        t = np.delete(t, -2)
    return t


def _gradient(u: np.ndarray, dx: float) -> np.ndarray:
    g = np.empty_like(u)
    g[1:-1] = (u[2:] - u[:-2]) / (2 * dx)
    g[0] = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * dx)
    g[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * dx)
    return g


def _implicit_solve(w: np.ndarray, a: np.ndarray, b: np.ndarray, dx: float, dt: float) -> np.ndarray:
    """Solve ``(I - dt L) u = w``, ``L = a d_xx + b d_x``, with linear extrapolation at both ends."""
    lo = dt * (a / dx ** 2 - b / (2 * dx))
    di = dt * (-2 * a / dx ** 2)
    up = dt * (a / dx ** 2 + b / (2 * dx))
    n = w.size - 2  # interior unknowns 1..N-2
    main = 1.0 - di[1:-1]
    upper = -up[1:-1].copy()
    lower = -lo[1:-1].copy()
    # u_0 = 2u_1 - u_2 folded into row 1, u_{N-1} = 2u_{N-2} - u_{N-3} into row N-2
    main[0] -= 2 * lo[1]
    upper[0] += lo[1]
    main[-1] -= 2 * up[-2]
    lower[-1] += up[-2]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = main
    ab[2, :-1] = lower[1:]
    u = np.empty_like(w)
    u[1:-1] = solve_banded((1, 1), ab, w[1:-1])
    u[0] = 2 * u[1] - u[2]
    u[-1] = 2 * u[-2] - u[-3]
    return u


def _transport(H: VectorFieldFamily, x: np.ndarray, u: np.ndarray, inc: np.ndarray, max_increment: float) -> np.ndarray:
    """Integrate ``dy/ds = sum_k inc^k H_k(x, y)`` over ``s in [0, 1]`` by RK4."""
    if H.identically_zero or not np.any(inc):
        return u
    m = max(1, int(math.ceil(max(H.C_H, 1e-12) * float(np.sum(np.abs(inc))) / max_increment)))
    ds = 1.0 / m

    def rhs(y):
        return sum(inc[k] * H.components[k](x, y) for k in range(H.d) if inc[k] != 0.0)

    for _ in range(m):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * ds * k1)
        k3 = rhs(u + 0.5 * ds * k2)
        k4 = rhs(u + ds * k3)
        u = u + ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


def _sample_lipschitz(fn, t, x, y_radius, z_radius, n=21):
    """Sup of ``|d_u fn|`` and ``|d_z fn|`` on a coarse sample, by central differences."""
    xs = np.linspace(x[0], x[-1], n)
    X, U, Z = np.meshgrid(xs, np.linspace(-y_radius, y_radius, n), np.linspace(-z_radius, z_radius, n), indexing="ij")
    h = 1e-5
    fu = (fn(t, X, U + h, Z) - fn(t, X, U - h, Z)) / (2 * h)
    fz = (fn(t, X, U, Z + h) - fn(t, X, U, Z - h)) / (2 * h)
    return float(np.max(np.abs(fu))), float(np.max(np.abs(fz)))


def stability_bound(Lu: float, Lz: float) -> float:
    """Largest step for the explicit reaction/gradient part.

    Explicit centred advection against implicit diffusion is stable when
    ``dt * a^2 <= sigma^2`` for advection speed ``a = d_z f * sigma``, so ``dt <= 1/Lz^2``.
    """
    bound = math.inf
    if Lu > 0:
        bound = min(bound, 1.0 / Lu)
    if Lz > 0:
        bound = min(bound, 1.0 / Lz ** 2)
    return bound


def _check_stability(times, Lu, Lz):
    dt = float(np.max(np.diff(times)))
    bound = stability_bound(Lu, Lz)
    if dt > bound * (1 + 1e-12):
        need = int(math.ceil((times[-1] - times[0]) / bound))
        raise StabilityError(f"time step {dt:.3g} exceeds the explicit stability bound {bound:.3g}; "
                             f"use at least {need} steps")


def solve_pde_smooth(spec: ProblemSpec, zeta: PiecewiseLinearPath, grid: FDGrid | None = None,
                     y_radius: float | None = None) -> GridSolution:
    """Backward IMEX scheme for ``-u_t = L u + f(t,x,u,sigma u_x) + H(x,u) zeta'``.

    Per step: exact-to-RK4 transport along ``H`` over the driver increment,
    explicit ``f``, then implicit ``L``. The time grid contains every driver knot.
    """
    grid = grid or FDGrid()
    if zeta.dim != spec.d:
        raise ValueError("driver dimension does not match H")
    x, core = grid.padded(spec)
    dx = x[1] - x[0]
    times = time_grid(spec.t0, spec.T, grid.steps_per_unit, zeta.times)
    y_radius = spec.g_sup(x[core]) + 1.0 if y_radius is None else y_radius
    _check_stability(times, *_sample_lipschitz(spec.f, spec.T, x, y_radius, grid.z_radius))
    Z = zeta(times)
    u = np.empty((times.size, x.size))
    u[-1] = spec.g(x)
    for k in range(times.size - 2, -1, -1):
        t1, t0 = times[k + 1], times[k]
        dt = t1 - t0
        w = _transport(spec.H, x, u[k + 1], Z[k + 1] - Z[k], grid.max_increment)
        s = spec.sigma(t1, x)
        w = w + dt * spec.f(t1, x, w, s * _gradient(w, dx))
        u[k] = _implicit_solve(w, 0.5 * s * s, spec.b(t1, x) + 0.0 * x, dx, dt)
        if not np.all(np.isfinite(u[k])):
            raise FloatingPointError(f"non-finite values at t={t0}")
    return GridSolution(times, x[core], u[:, core], "u", [(spec.t0, spec.T)])


def solve_transformed_window(td: TransformedDriver, x: np.ndarray, times: np.ndarray, v_end: np.ndarray,
                             M: float | None = None) -> np.ndarray:
    """``-v_t = L v + f~(t,x,v,sigma v_x)`` on ``times`` (ascending), terminal ``v_end``."""
    spec = td.spec
    dx = x[1] - x[0]
    v = np.empty((times.size, x.size))
    v[-1] = v_end
    lo, hi = td.flow.y_grid[0], td.flow.y_grid[-1]
    for k in range(times.size - 2, -1, -1):
        t1, t0 = times[k + 1], times[k]
        dt = t1 - t0
        s = spec.sigma(t1, x)
        vk = np.clip(v[k + 1], lo, hi)
        w = v[k + 1] + dt * td(t1, x, vk, s * _gradient(v[k + 1], dx))
        v[k] = _implicit_solve(w, 0.5 * s * s, spec.b(t1, x) + 0.0 * x, dx, dt)
        if M is not None:
            v[k] = np.clip(v[k], -M - 1.0, M + 1.0)
        if not np.all(np.isfinite(v[k])):
            raise FloatingPointError(f"non-finite values at t={t0}")
    return v


def _as_rough(driver) -> RoughPath2:
    return lift_smooth(driver) if isinstance(driver, PiecewiseLinearPath) else driver


def _flow_grids(spec: ProblemSpec, grid: FDGrid, y_radius: float):
    x, _ = grid.padded(spec)
    return np.linspace(x[0], x[-1], grid.flow_nx), np.linspace(-y_radius, y_radius, grid.flow_ny)


def global_constants(spec: ProblemSpec, rp: RoughPath2, times: np.ndarray, grid: FDGrid, route: str = "pde",
                     h_override: float | None = None, max_rounds: int = 4):
    """Flow from ``T`` over ``[t0, T]``, ``f~`` and its constants.

    The y-window ``[-Y, Y]`` is enlarged until ``M + 1 <= Y`` (at most
    ``max_rounds`` rounds; the report records whether this settled).
    """
    g_sup = spec.g_sup(grid.padded(spec)[0])
    Y = g_sup + 1.0
    for rnd in range(max_rounds):
        xf, yf = _flow_grids(spec, grid, Y)
        flow = solve_flow_rough(spec.H, rp, (spec.t0, spec.T), xf, yf, times, max_increment=grid.max_increment)
        td = build_transformed_driver(spec, flow)
        gc = estimate_growth_constants(td, radius=grid.z_radius)
        M = g_sup + spec.T * gc.C1f
        if M + 1.0 <= Y * (1 + 1e-9):
            settled = True
            break
        Y = 1.25 * (M + 1.0)
    else:
        settled = False
    consts = step_size(td, g_sup, route=route, h_override=h_override)
    return td, consts, Y, settled


def window_bounds(times: np.ndarray, h: float) -> list:
    """Node-aligned windows ``[(i0, i1), ...]`` from the end backwards, each at least one step."""
    out = []
    i1 = times.size - 1
    while i1 > 0:
        target = times[i1] - h
        i0 = int(np.argmin(np.abs(times[:i1] - target)))
        if times[i1] - h <= times[0] + 1e-12 * max(1.0, abs(times[-1])):
            i0 = 0
        out.append((i0, i1))
        i1 = i0
    return out


def solve_rpde(spec: ProblemSpec, driver, grid: FDGrid | None = None, h: float | None = None,
               route: str = "pde", extra_times=()) -> GridSolution:
    """Transformed scheme on stitched windows with restarted flows.

    Window ``[T_{k+1}, T_k]``: flow restarted at ``T_k``, ``f~`` built from it,
    the transformed PDE solved with terminal ``v = u(T_k)`` (the restarted flow
    is the identity there), and ``u = phi(t, x, v)`` on the window.
    """
    grid = grid or FDGrid()
    rp = _as_rough(driver)
    if rp.dim != spec.d:
        raise ValueError("driver dimension does not match H")
    x, core = grid.padded(spec)
    if rp.n_intervals <= grid.steps_per_unit * (spec.T - spec.t0):
        # coarse drivers: put their grid points on the time grid, as the smooth solver does
        extra_times = np.concatenate([np.atleast_1d(extra_times), rp.times])
    times = time_grid(spec.t0, spec.T, grid.steps_per_unit, extra_times)
    td, consts, Y, settled = global_constants(spec, rp, times, grid, route=route, h_override=h)
    xf, yf = _flow_grids(spec, grid, Y)
    M = consts.M
    gx = spec.g(x)
    u = np.empty((times.size, x.size))
    v = np.empty_like(u)
    u[-1] = gx
    wins = window_bounds(times, consts.h)
    Lu_max = Lz_max = 0.0
    max_kappa_excess = 0.0
    flows = []
    for i0, i1 in wins:
        wt = times[i0 : i1 + 1]
        if i0 == 0 and i1 == times.size - 1:
            wtd = td
        else:
            flow = solve_flow_rough(spec.H, rp, (wt[0], wt[-1]), xf, yf, wt, max_increment=grid.max_increment)
            wtd = build_transformed_driver(spec, flow)
        Lu, Lz = wtd.lipschitz(wt[-1], grid.z_radius)
        Lu_max, Lz_max = max(Lu_max, Lu), max(Lz_max, Lz)
        _check_stability(wt, Lu, Lz)
        vw = solve_transformed_window(wtd, x, wt, u[i1], M=max(M, Y))
        for j, t in enumerate(wt[:-1]):
            u[i0 + j] = wtd.flow.phi(t, x, np.clip(vw[j], yf[0], yf[-1]))
        v[i0 : i1 + 1] = vw
        flows.append(wtd.flow)
        if len(wins) > 1:
            max_kappa_excess = max(max_kappa_excess, wtd.kappa(wt[0]) - consts.eps)
    diag = {"y_radius": Y, "bound_settled": settled, "n_windows": len(wins), "Lu": Lu_max, "Lz": Lz_max,
            "kappa_excess": max(max_kappa_excess, 0.0)}
    return GridSolution(times, x[core], u[:, core], "u", [(float(times[a]), float(times[b])) for a, b in wins[::-1]],
                        M, consts, v[:, core], diag, flows[::-1])


def sup_distance(a: GridSolution, b: GridSolution, compact=None, t: float | None = None) -> float:
    """Sup over a common x-compact of ``|a - b|``; at time ``t`` or over all shared times."""
    lo, hi = compact if compact is not None else (max(a.x[0], b.x[0]), min(a.x[-1], b.x[-1]))
    xs = a.x[(a.x >= lo - 1e-12) & (a.x <= hi + 1e-12)]
    times = [t] if t is not None else [s for s in a.times if np.min(np.abs(b.times - s)) < 1e-9]
    return float(max(np.max(np.abs(a.at(s, xs) - b.at(s, xs))) for s in times))


@dataclass
class ConvergenceRow:
    index: int
    label: str
    sup_to_limit: float
    sup_to_next: float | None
    rp_distance: float


def convergence_study(spec: ProblemSpec, drivers: list, rp_limit: RoughPath2, grid: FDGrid | None = None,
                      labels=None, compact=None, route: str = "transformed", h: float | None = None,
                      t_eval: float | None = None, with_rp_distance: bool = True) -> dict:
    """Solve for each smooth driver and for the limit; tabulate sup-distances.

    ``route="transformed"`` lifts each driver and uses ``solve_rpde``;
    ``route="direct"`` uses ``solve_pde_smooth``.
    """
    grid = grid or FDGrid()
    labels = labels or [str(i) for i in range(len(drivers))]
    if compact is None:
        half = 0.5 * (spec.x_window(grid.x_halfwidth)[1] - spec.x_window(grid.x_halfwidth)[0]) / 2
        compact = (spec.x0 - half, spec.x0 + half)
    limit = solve_rpde(spec, rp_limit, grid, h=h)
    sols = []
    for zn in drivers:
        if route == "direct":
            sols.append(solve_pde_smooth(spec, zn, grid))
        else:
            sols.append(solve_rpde(spec, lift_smooth(zn), grid, h=h))
    rows = []
    for i, (zn, s) in enumerate(zip(drivers, sols)):
        nxt = sup_distance(s, sols[i + 1], compact, t_eval) if i + 1 < len(sols) else None
        rpd = p_variation_distance(lift_smooth(zn, times=rp_limit.times), rp_limit)["total"] \
            if with_rp_distance else float("nan")
        rows.append(ConvergenceRow(i, labels[i], sup_distance(s, limit, compact, t_eval), nxt, rpd))
    to_next = [r.sup_to_next for r in rows if r.sup_to_next is not None]
    monotone = all(b < a for a, b in zip(to_next, to_next[1:]))
    to_lim = [r.sup_to_limit for r in rows]
    return {"rows": rows, "monotone_successive": monotone,
            "monotone_to_limit": all(b < a for a, b in zip(to_lim, to_lim[1:])),
            "limit": limit, "solutions": sols, "compact": compact}


def _sequence_driver(bm: PiecewiseLinearPath, kind: str, level: int) -> PiecewiseLinearPath:
    if kind == "dyadic":
        return wong_zakai_sequence(bm, level)
    if kind == "triadic":
        return uniform_sequence(bm, 3 ** level)
    raise ValueError(f"unknown sequence {kind!r}")


def sequence_study(spec: ProblemSpec, bm: PiecewiseLinearPath, levels=(3, 4, 5, 6),
                   sequences=("dyadic", "triadic"), grid: FDGrid | None = None, compact=None,
                   h: float | None = None) -> dict:
    """Successive sup-distances along interpolation sequences of one sample path.

    For every sequence the solutions at consecutive levels are compared on
    ``[t0, T] x compact``; ``final_gap`` is the largest distance between the
    finest solutions of different sequences.
    """
    grid = grid or FDGrid()
    if compact is None:
        half = 0.25 * (spec.x_window(grid.x_halfwidth)[1] - spec.x_window(grid.x_halfwidth)[0])
        compact = (spec.x0 - half, spec.x0 + half)
    out = {"compact": tuple(compact), "levels": list(levels), "sequences": {}}
    finest = {}
    for kind in sequences:
        sols = [solve_rpde(spec, lift_smooth(_sequence_driver(bm, kind, k)), grid, h=h) for k in levels]
        dist = [sup_distance(a, b, compact) for a, b in zip(sols, sols[1:])]
        out["sequences"][kind] = {
            "segments": [2 ** k if kind == "dyadic" else 3 ** k for k in levels],
            "successive": dist,
            "monotone": all(b < a for a, b in zip(dist, dist[1:])),
            "at_start": [sup_distance(a, b, compact, spec.t0) for a, b in zip(sols, sols[1:])],
        }
        finest[kind] = sols[-1]
    kinds = list(finest)
    gaps = [sup_distance(finest[a], finest[b], compact) for i, a in enumerate(kinds) for b in kinds[i + 1:]]
    out["final_gap"] = max(gaps) if gaps else 0.0
    out["solutions"] = finest
    return out

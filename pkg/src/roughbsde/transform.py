"""Transformed driver ``f~`` and the comparison constants governing the window width."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .flow import DXY, DY, DYY, DXYY, DYYY, FlowDomainError, FlowEnsemble
from .problem import ProblemSpec

B_BASE = 6.0
JETS = ("phi", "dx", "dy", "dxx", "dxy", "dyy")  # what f~ itself needs
LOG_OVERFLOW = 700.0
DELTA_SENTINEL = float(np.nextafter(0.0, 1.0))


class WindowDegenerateError(RuntimeError):
    pass


def _f_z(spec: ProblemSpec, t, x, u, z, h=1e-6):
    return (spec.f(t, x, u, z + h) - spec.f(t, x, u, z - h)) / (2 * h)


@dataclass
class TransformedDriver:
    """``f~(t, x, y~, z~)`` built from a flow ensemble; scalar ``n = m = 1`` case."""

    spec: ProblemSpec
    flow: FlowEnsemble
    C1f: float | None = None
    C_unif: float | None = None
    C3f: float | None = None
    _kappa: dict = field(default_factory=dict, repr=False)

    def _check_window(self, t):
        if t < self.flow.t0 - 1e-12 or t > self.flow.T_e + 1e-12:
            raise FlowDomainError(f"t={t} outside the flow window [{self.flow.t0}, {self.flow.T_e}]")

    def from_jets(self, t: float, x, z, q: dict, with_dz: bool = False):
        s, b = self.spec.sigma(t, x), self.spec.b(t, x)
        py, px = q["dy"], q["dx"]
        zz = py * z + px * s
        inner = self.spec.f(t, x, q["phi"], zz) + px * b + 0.5 * q["dxx"] * s * s + z * q["dxy"] * s + 0.5 * q["dyy"] * z * z
        val = inner / py
        if not with_dz:
            return val
        dz = (py * _f_z(self.spec, t, x, q["phi"], zz) + q["dxy"] * s + q["dyy"] * z) / py
        return val, dz

    def __call__(self, t: float, x, yt, zt) -> np.ndarray:
        self._check_window(t)
        x, yt, zt = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, yt, zt)))
        q = self.flow.evaluate(t, x, yt, JETS)
        return self.from_jets(t, x, zt, q)

    def dz(self, t: float, x, yt, zt) -> np.ndarray:
        x, yt, zt = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, yt, zt)))
        return self.from_jets(t, x, zt, self.flow.evaluate(t, x, yt, JETS), with_dz=True)[1]

    def dy(self, t: float, x, yt, zt, h: float = 1e-4) -> np.ndarray:
        return (self(t, x, yt + h, zt) - self(t, x, yt - h, zt)) / (2 * h)

    def dx(self, t: float, x, yt, zt, h: float = 1e-4) -> np.ndarray:
        return (self(t, x + h, yt, zt) - self(t, x - h, yt, zt)) / (2 * h)

    def lipschitz(self, t: float, z_radius: float, n: int = 11, h: float = 1e-5) -> tuple[float, float]:
        """Sampled sups of ``|d_y f~|`` and ``|d_z f~|`` at time ``t``."""
        fl = self.flow
        X, Y, Z = np.meshgrid(np.linspace(fl.x_grid[0], fl.x_grid[-1], n),
                              np.linspace(fl.y_grid[0] + h, fl.y_grid[-1] - h, n),
                              np.linspace(-z_radius, z_radius, n), indexing="ij")
        X2, Y2 = X[..., 0], Y[..., 0]
        jets = [{k: v[..., None] for k, v in fl.evaluate(t, X2, Y2 + s, JETS).items()} for s in (0.0, h, -h)]
        _, fz = self.from_jets(t, X, Z, jets[0], with_dz=True)
        fy = (self.from_jets(t, X, Z, jets[1]) - self.from_jets(t, X, Z, jets[2])) / (2 * h)
        return float(np.max(np.abs(fy))), float(np.max(np.abs(fz)))

    def kappa(self, t: float) -> float:
        """Coefficient in front of ``|z~|^2`` in the one-sided y~-derivative bound.

        Sup over the flow's (x, y~) nodes, read from the table (linear in t).
        """
        key = round(float(t), 14)
        if key not in self._kappa:
            self._check_window(t)
            S = self.flow.slice(t)
            X = self.flow.x_grid[:, None] + 0.0 * self.flow.y_grid[None, :]
            s = np.abs(self.spec.sigma(t, X))
            py, pxy, pyy, pyyy, pxyy = S[DY], S[DXY], S[DYY], S[DYYY], S[DXYY]
            r = np.abs(pyy / py ** 2)
            k = (
                r * 2.0 * self.spec.C_2f * py ** 2
                + r * np.abs(pxy) * s
                + 0.5 * r * np.abs(pyy)
                + np.abs(pxyy) * s / py
                + 0.5 * pyyy / py
            )
            self._kappa[key] = max(float(np.max(k)), 0.0)
        return self._kappa[key]

    def kappa_profile(self) -> np.ndarray:
        return np.array([self.kappa(t) for t in self.flow.tab_times])


def build_transformed_driver(spec: ProblemSpec, flow: FlowEnsemble) -> TransformedDriver:
    lo, hi = spec.x_window()
    if flow.x_grid[0] > lo + 1e-9 or flow.x_grid[-1] < hi - 1e-9:
        raise FlowDomainError("flow x-window does not cover the problem's x-window")
    return TransformedDriver(spec, flow)


@dataclass
class GrowthConstants:
    C1f: float
    C_unif: float
    C3f: float


def _sample_times(flow: FlowEnsemble, window, n_t: int) -> np.ndarray:
    t0, t1 = window
    tt = flow.tab_times[(flow.tab_times >= t0 - 1e-12) & (flow.tab_times <= t1 + 1e-12)]
    if tt.size > n_t:
        tt = tt[np.unique(np.linspace(0, tt.size - 1, n_t).round().astype(int))]
    return tt


def estimate_growth_constants(td: TransformedDriver, window=None, radius: float = 10.0, n: int = 41,
                              n_t: int = 11, z_step: float = 0.5) -> GrowthConstants:
    """Grid sups giving ``C~1f``, ``C~unif`` and ``C~3f``; stored on ``td``.

    ``C~1f`` bounds ``|f~|/(1+|z|^2)`` and ``|d_z f~|/(1+|z|)``; ``C~unif`` is the
    sup of ``d_y f~ - kappa(t)|z|^2``; ``C~3f`` the sup of ``d_x f~/(1+|z|^2)``.
    The z-nodes are multiples of ``z_step`` so a larger radius samples a superset.
    """
    flow = td.flow
    window = (flow.t0, flow.T_e) if window is None else window
    xs = np.linspace(flow.x_grid[0], flow.x_grid[-1], n)
    ys = np.linspace(flow.y_grid[0], flow.y_grid[-1], n)
    k = int(math.floor(radius / z_step + 1e-9))
    zs = z_step * np.arange(-k, k + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    X2, Y2 = X[..., 0], Y[..., 0]
    c1 = cu = c3 = 0.0
    hy = hx = 1e-4
    for t in _sample_times(flow, window, n_t):
        q = flow.evaluate(t, X2, Y2)
        q3 = {k: v[..., None] for k, v in q.items()}
        val, dz = td.from_jets(t, X, Z, q3, with_dz=True)
        q2 = 1.0 + Z ** 2
        c1 = max(c1, float(np.max(np.abs(val) / q2)), float(np.max(np.abs(dz) / (1.0 + np.abs(Z)))))
        # y~ and x derivatives by central differences of the interpolated flow
        ys_in = np.clip(Y2, ys[0] + hy, ys[-1] - hy)
        up = {k: v[..., None] for k, v in flow.evaluate(t, X2, ys_in + hy).items()}
        dn = {k: v[..., None] for k, v in flow.evaluate(t, X2, ys_in - hy).items()}
        fy = (td.from_jets(t, X, Z, up) - td.from_jets(t, X, Z, dn)) / (2 * hy)
        cu = max(cu, float(np.max(fy - td.kappa(t) * Z ** 2)))
        xs_in = np.clip(X2, xs[0] + hx, xs[-1] - hx)
        Xp, Xm = xs_in[..., None] + hx + 0 * Z, xs_in[..., None] - hx + 0 * Z
        qp = {k: v[..., None] for k, v in flow.evaluate(t, xs_in + hx, Y2).items()}
        qm = {k: v[..., None] for k, v in flow.evaluate(t, xs_in - hx, Y2).items()}
        fx = (td.from_jets(t, Xp, Z, qp) - td.from_jets(t, Xm, Z, qm)) / (2 * hx)
        c3 = max(c3, float(np.max(fx / q2)))
    out = GrowthConstants(c1, max(cu, 0.0), max(c3, 0.0))
    td.C1f, td.C_unif, td.C3f = out.C1f, out.C_unif, out.C3f
    return out


def quadratic_y_coefficient(td: TransformedDriver, t: float) -> float:
    return td.kappa(t)


def comparison_lambda(C: float) -> float:
    """Sufficient root of ``-lambda^2/2 + 36 C lambda <= -1``."""
    return 36.0 * C + math.sqrt(1296.0 * C * C + 2.0)


def comparison_delta(C: float, M: float) -> float:
    """``delta(C, M) = exp(-2 lambda(C) M) / 72`` with transformation base ``B = 6``."""
    if C < 0 or M < 0:
        raise ValueError("C and M must be non-negative")
    return math.exp(-2.0 * comparison_lambda(C) * M) / 72.0


@dataclass
class PdeConstants:
    K0: float
    K: float
    lam: float
    log_A: float
    A: float
    delta: float
    degenerate: bool


def pde_comparison_constants(C: float, C_unif: float, M: float, T: float) -> PdeConstants:
    if min(C, C_unif, M) < 0 or T <= 0:
        raise ValueError("constants must be non-negative and T positive")
    K0 = C * C + C + 1.0
    K = max(K0, C_unif) + 1.0
    lam = 4.0 * C + 4.0
    expo = 2.0 * lam * M * math.exp(K * T) if K * T < LOG_OVERFLOW else math.inf
    if expo > LOG_OVERFLOW:
        return PdeConstants(K0, K, lam, expo, math.inf, DELTA_SENTINEL, True)
    A = math.exp(expo) + 1.0
    return PdeConstants(K0, K, lam, math.log(A), A, 1.0 / A, False)


@dataclass
class ComparisonConstants:
    M: float
    B: float
    lam: float
    delta: float
    log_delta: float
    K: float | None
    A: float | None
    log_A: float | None
    eps: float
    h: float
    route: str
    C1f: float
    C_unif: float
    h_kappa: float
    floored: bool
    degenerate: bool
    overridden: bool = False

    def to_json(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and not math.isfinite(v):
                out[k] = "inf" if v > 0 else "-inf"
        return out


def kappa_window(td: TransformedDriver, eps: float) -> tuple[float, bool]:
    """Largest tabulated ``h`` with ``kappa <= eps`` on ``[T_e - h, T_e]``; flag if kappa vanishes."""
    tt = td.flow.tab_times
    prof = td.kappa_profile()
    if np.all(prof == 0.0):
        return float(tt[-1] - tt[0]), True
    k = tt.size - 1
    while k > 0 and prof[k - 1] <= eps:
        k -= 1
    return float(tt[-1] - tt[k]), False


def step_size(td: TransformedDriver, g_sup: float, route: str = "pde", h_override: float | None = None) -> ComparisonConstants:
    """``M = sup|g| + T C~1f``, the route's ``delta``, ``eps = delta/2`` and the window ``h``.

    ``h`` is the largest tabulated width on which ``kappa <= eps``, floored at one
    tabulation step.
    """
    if td.C1f is None:
        estimate_growth_constants(td)
    flow = td.flow
    T = td.spec.T
    M = g_sup + T * td.C1f
    if route == "pde":
        pc = pde_comparison_constants(td.C1f, td.C_unif, M, T)
        lam, K, A, log_A, delta, degenerate = pc.lam, pc.K, pc.A, pc.log_A, pc.delta, pc.degenerate
        log_delta = -log_A if math.isfinite(log_A) else -math.inf
    elif route == "bsde":
        lam = comparison_lambda(td.C1f)
        log_delta = -2.0 * lam * M - math.log(72.0)
        degenerate = log_delta < -LOG_OVERFLOW
        delta = math.exp(log_delta) if not degenerate else DELTA_SENTINEL
        K = A = log_A = None
    else:
        raise ValueError("route must be 'pde' or 'bsde'")
    eps = delta / 2.0
    h_kappa, vanishes = kappa_window(td, eps)
    step = float(flow.tab_times[-1] - flow.tab_times[-2])
    if degenerate and not vanishes and h_kappa < step and h_override is None:
        raise WindowDegenerateError(
            f"comparison constant {'A' if route == 'pde' else 'delta'} degenerate (log-scale {log_delta:.3g}); "
            "shrink C~1f or M"
        )
    h = max(h_kappa, step)
    floored = h_kappa < step
    if h_override is not None:
        h = float(h_override)
    h = min(h, T)
    return ComparisonConstants(M, B_BASE, lam, delta, log_delta, K, A, log_A, eps, h, route, td.C1f, td.C_unif,
                               h_kappa, floored, degenerate, h_override is not None)

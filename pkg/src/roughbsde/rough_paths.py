"""Driving signals: piecewise-linear paths, their level-2 lifts and p-variation.

A ``RoughPath2`` stores, per grid interval, the level-1 increment and the Levy
area ``a^{ij} = 1/2 int (dz^i dz^j - dz^j dz^i)``. The symmetric part of level 2
is never stored; it is always ``1/2 inc (x) inc`` (geometric convention).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InvalidPathError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


def _as_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise InvalidPathError("need at least 2 knots")
    if not np.all(np.diff(t) > 0):
        raise InvalidPathError("times must be strictly increasing")
    return t


@dataclass(frozen=True, eq=False)
class PiecewiseLinearPath:
    """Affine interpolation of ``values`` (shape ``(K, d)``) between ``times``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _as_times(self.times)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != t.size:
            raise InvalidPathError("one value per knot required")
        if abs(t[0]) > 0:
            raise InvalidPathError("paths start at time 0")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.times, self.values[:, k]) for k in range(self.dim)], axis=-1)
        # np.interp returns stored values exactly at knots
        return out

    def scaled(self, c: float) -> "PiecewiseLinearPath":
        return PiecewiseLinearPath(self.times, c * self.values)

    def with_knots(self, extra) -> "PiecewiseLinearPath":
        """Same path with additional knots inserted (image unchanged)."""
        t = np.union1d(self.times, np.asarray(extra, dtype=float))
        t = t[(t >= 0) & (t <= self.T)]
        return PiecewiseLinearPath(t, self(t))

    def derivative(self) -> np.ndarray:
        """Per-segment velocity, shape ``(K-1, d)``."""
        return np.diff(self.values, axis=0) / np.diff(self.times)[:, None]

    def to_json(self) -> dict:
        return {"times": self.times.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "PiecewiseLinearPath":
        return cls(np.array(obj["times"]), np.array(obj["values"]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"zeta{k + 1}" for k in range(self.dim)])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in v])


def line_path(slope, T: float = 1.0, n_knots: int = 2) -> PiecewiseLinearPath:
    slope = np.atleast_1d(np.asarray(slope, dtype=float))
    t = np.linspace(0.0, T, n_knots)
    return PiecewiseLinearPath(t, t[:, None] * slope[None, :])


def zero_path(d: int = 1, T: float = 1.0) -> PiecewiseLinearPath:
    return PiecewiseLinearPath(np.array([0.0, T]), np.zeros((2, d)))


@dataclass(frozen=True, eq=False)
class RoughPath2:
    """Level-2 geometric rough path on a time grid.

    ``increments[i]`` and ``areas[i]`` describe the interval
    ``[times[i], times[i+1]]``.
    """

    times: np.ndarray
    increments: np.ndarray
    areas: np.ndarray
    p: float = 2.5
    _cum: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        t = _as_times(self.times)
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        n, d = inc.shape
        if n != t.size - 1:
            raise InvalidPathError("one increment per grid interval required")
        a = np.zeros((n, d, d)) if self.areas is None else np.asarray(self.areas, dtype=float)
        if a.shape != (n, d, d):
            raise InvalidPathError(f"areas must have shape {(n, d, d)}")
        # enforce exact antisymmetry
        a = 0.5 * (a - np.swapaxes(a, 1, 2))
        if not (1.0 <= self.p < 3.0):
            raise InvalidPathError("p must lie in [1, 3)")
        for arr in (t, inc, a):
            arr.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "areas", a)
        object.__setattr__(self, "_cum", _cumulative(inc, a))

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_intervals(self) -> int:
        return self.increments.shape[0]

    def signature(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(increment, area) over ``[times[i], times[j]]`` via Chen's relation."""
        P, C = self._cum
        x = P[j] - P[i]
        a = C[j] - C[i] - 0.5 * (np.outer(P[i], P[j]) - np.outer(P[j], P[i]))
        return x, a

    def path_values(self) -> np.ndarray:
        return self._cum[0].copy()

    def restrict(self, t0: float, t1: float) -> "RoughPath2":
        """Sub-path on ``[t0, t1]``; both ends must be grid points."""
        i, j = self.index_of(t0), self.index_of(t1)
        return RoughPath2(self.times[i:j + 1], self.increments[i:j], self.areas[i:j], self.p)

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol * max(1.0, abs(t)):
            raise ResolutionError(f"time {t} is not a grid point")
        return k

    def refine(self, extra) -> "RoughPath2":
        """Insert grid points by log-linear interpolation inside intervals.

        Inside ``[s, t]`` the sub-interval signature is ``exp(u * log S_{s,t})``;
        such pieces commute, so Chen's relation is preserved exactly.
        """
        extra = np.asarray(extra, dtype=float)
        tol = 1e-12 * max(1.0, abs(self.T))
        pos = np.clip(np.searchsorted(self.times, extra), 1, self.times.size - 1)
        gap = np.minimum(np.abs(extra - self.times[pos - 1]), np.abs(extra - self.times[pos]))
        extra = extra[(gap > tol) & (extra > self.times[0]) & (extra < self.times[-1])]
        new_t = np.union1d(self.times, extra)
        if new_t.size == self.times.size:
            return self
        owner = np.searchsorted(self.times, new_t[:-1], side="right") - 1
        frac = np.diff(new_t) / np.diff(self.times)[owner]
        inc = self.increments[owner] * frac[:, None]
        a = self.areas[owner] * frac[:, None, None]
        return RoughPath2(new_t, inc, a, self.p)

    def to_json(self) -> dict:
        return {
            "times": self.times.tolist(),
            "increments": self.increments.tolist(),
            "areas": self.areas.tolist(),
            "p": self.p,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RoughPath2":
        return cls(np.array(obj["times"]), np.array(obj["increments"]), np.array(obj["areas"]), float(obj["p"]))

    def to_csv(self, path) -> None:
        P = self.path_values()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"zeta{k + 1}" for k in range(self.dim)])
            for t, v in zip(self.times, P):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in v])


def _cumulative(inc: np.ndarray, areas: np.ndarray):
    n, d = inc.shape
    P = np.zeros((n + 1, d))
    np.cumsum(inc, axis=0, out=P[1:])
    # C_{k+1} = C_k + a_k + 1/2 (P_k (x) inc_k - inc_k (x) P_k)
    cross = np.einsum("ki,kj->kij", P[:-1], inc)
    step = areas + 0.5 * (cross - np.swapaxes(cross, 1, 2))
    C = np.zeros((n + 1, d, d))
    np.cumsum(step, axis=0, out=C[1:])
    return P, C


def lift_smooth(path: PiecewiseLinearPath, p: float = 2.5, times=None) -> RoughPath2:
    """Canonical level-2 lift of a piecewise-linear path.

    Straight segments enclose no area, so on the knot grid every area is zero;
    on a coarser ``times`` grid areas are assembled with Chen's relation.
    """
    if times is None:
        inc = np.diff(path.values, axis=0)
        d = path.dim
        return RoughPath2(path.times, inc, np.zeros((inc.shape[0], d, d)), p)
    times = _as_times(times)
    if times[0] != path.times[0] or abs(times[-1] - path.T) > 1e-12 * max(1.0, path.T):
        raise InvalidPathError("lift grid must span the path's time interval")
    fine = lift_smooth(path.with_knots(times), p)
    idx = np.array([fine.index_of(t) for t in times])
    return coarsen(fine, idx)


def coarsen(rp: RoughPath2, idx) -> RoughPath2:
    """Rough path on the grid points ``rp.times[idx]`` (Chen composition)."""
    idx = np.asarray(idx, dtype=int)
    P, C = rp._cum
    Pi, Pj = P[idx[:-1]], P[idx[1:]]
    inc = Pj - Pi
    outer = np.einsum("ki,kj->kij", Pi, Pj)
    a = C[idx[1:]] - C[idx[:-1]] - 0.5 * (outer - np.swapaxes(outer, 1, 2))
    return RoughPath2(rp.times[idx], inc, a, rp.p)


def homogeneous_norm(inc: np.ndarray, area: np.ndarray) -> np.ndarray:
    """``max(|inc|_2, sqrt(2 |area|_2))`` with the spectral norm on areas."""
    inc = np.asarray(inc, dtype=float)
    area = np.asarray(area, dtype=float)
    d = inc.shape[-1]
    n1 = np.linalg.norm(inc, axis=-1)
    if d == 1:
        n2 = np.zeros_like(n1)
    elif d == 2:
        n2 = np.abs(area[..., 0, 1])
    else:
        n2 = np.linalg.norm(area, ord=2, axis=(-2, -1))
    return np.maximum(n1, np.sqrt(2.0 * n2))


def _pvar_dp(dist_row, n_points: int, p: float) -> float:
    best = np.full(n_points, -np.inf)
    best[0] = 0.0
    for j in range(1, n_points):
        best[j] = np.max(best[:j] + dist_row(j) ** p)
    return float(best[-1]) ** (1.0 / p)


def p_variation_norm(rp: RoughPath2, p: float | None = None) -> float:
    """Homogeneous p-variation over partitions made of grid points.

    Dynamic programming, O(N^2) in the number of grid points.
    """
    p = rp.p if p is None else p
    P, C = rp._cum

    def row(j):
        Pi = P[:j]
        x = P[j] - Pi
        outer = np.einsum("ki,j->kij", Pi, P[j])
        a = C[j] - C[:j] - 0.5 * (outer - np.swapaxes(outer, 1, 2))
        return homogeneous_norm(x, a)

    return _pvar_dp(row, P.shape[0], p)


def p_variation_distance(x: RoughPath2, y: RoughPath2, p: float | None = None) -> dict:
    """Grid p-variation distances between two rough paths on the same grid.

    Returns the level-1 distance ``(sup sum |dx - dy|^p)^(1/p)`` and the
    level-2 distance ``(sup sum |Ax - Ay|^(p/2))^(2/p)``.
    """
    if x.times.shape != y.times.shape or not np.allclose(x.times, y.times, rtol=0, atol=1e-12):
        raise ResolutionError("rough paths must share the grid")
    p = x.p if p is None else p
    (Px, Cx), (Py, Cy) = x._cum, y._cum

    def level2(P, C, j):
        outer = np.einsum("ki,j->kij", P[:j], P[j])
        return C[j] - C[:j] - 0.5 * (outer - np.swapaxes(outer, 1, 2))

    def row1(j):
        return np.linalg.norm((Px[j] - Px[:j]) - (Py[j] - Py[:j]), axis=-1)

    def row2(j):
        diff = level2(Px, Cx, j) - level2(Py, Cy, j)
        return np.sqrt(np.linalg.norm(diff.reshape(j, -1), axis=-1))

    n = Px.shape[0]
    d1 = _pvar_dp(row1, n, p)
    d2 = _pvar_dp(row2, n, p) ** 2
    return {"level1": d1, "level2": d2, "total": d1 + d2}


# --- approximating sequences -------------------------------------------------

def sample_brownian(seed: int, times, d: int = 1) -> PiecewiseLinearPath:
    """Brownian path sampled exactly on ``times`` (independent Gaussian increments)."""
    times = _as_times(times)
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((times.size - 1, d)) * np.sqrt(np.diff(times))[:, None]
    vals = np.zeros((times.size, d))
    np.cumsum(dW, axis=0, out=vals[1:])
    return PiecewiseLinearPath(times, vals)


def brownian_lift_sample(seed: int, grid, d: int = 2, p: float = 2.5) -> RoughPath2:
    """Canonical lift of the piecewise-linear interpolation of a Brownian sample."""
    grid = _as_times(grid)
    steps = np.diff(grid)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise InvalidPathError("brownian_lift_sample needs a uniform grid")
    return lift_smooth(sample_brownian(seed, grid, d), p)


def dyadic_times(T: float, level: int) -> np.ndarray:
    return np.linspace(0.0, T, 2 ** level + 1)


def uniform_times(T: float, n_segments: int) -> np.ndarray:
    return np.linspace(0.0, T, n_segments + 1)


def multi_grid(T: float, dyadic_level: int = 0, triadic_level: int = 0, fine: int = 0) -> np.ndarray:
    """Union of dyadic, triadic (3^k) and a uniform fine grid, for exact joint sampling."""
    parts = [dyadic_times(T, dyadic_level), uniform_times(T, 3 ** triadic_level)]
    if fine:
        parts.append(uniform_times(T, fine))
    t = np.unique(np.concatenate(parts))
    # merge float duplicates such as 1/3 computed two ways
    keep = np.concatenate([[True], np.diff(t) > 1e-13 * max(1.0, T)])
    t = t[keep]
    t[-1] = T
    return t


def _interpolate_on(bm: PiecewiseLinearPath, knots: np.ndarray) -> PiecewiseLinearPath:
    tol = 1e-12 * max(1.0, bm.T)
    pos = np.searchsorted(bm.times, knots - tol)
    pos = np.clip(pos, 0, bm.times.size - 1)
    if np.any(np.abs(bm.times[pos] - knots) > tol):
        raise ResolutionError("source path is not sampled at the requested knots")
    return PiecewiseLinearPath(knots, bm.values[pos])


def wong_zakai_sequence(bm: PiecewiseLinearPath, level: int) -> PiecewiseLinearPath:
    """Dyadic piecewise-linear interpolation of ``bm`` with ``2**level`` segments."""
    if level < 0:
        raise ValueError("level must be non-negative")
    return _interpolate_on(bm, dyadic_times(bm.T, level))


def uniform_sequence(bm: PiecewiseLinearPath, n_segments: int) -> PiecewiseLinearPath:
    """Piecewise-linear interpolation of ``bm`` on a uniform grid (e.g. 3^k segments)."""
    return _interpolate_on(bm, uniform_times(bm.T, n_segments))


def pure_area_sequence(n: int, scale: float, T: float = 1.0, knots_per_loop: int = 32) -> PiecewiseLinearPath:
    """Polygonal loops ``sqrt(c) (cos(2 pi n^2 t) - 1, sin(2 pi n^2 t)) / n``.

    Level 1 tends to zero while the total Levy area tends to ``pi * c * T``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if knots_per_loop < 32:
        raise ValueError("need at least 32 knots per loop")
    n_loops = n * n * T
    n_seg = int(math.ceil(knots_per_loop * n_loops))
    t = np.linspace(0.0, T, n_seg + 1)
    theta = 2.0 * math.pi * n * n * t
    r = math.sqrt(scale) / n
    vals = np.stack([r * (np.cos(theta) - 1.0), r * np.sin(theta)], axis=1)
    return PiecewiseLinearPath(t, vals)


def pure_area_rough_path(rate: float, times, p: float = 2.5) -> RoughPath2:
    """Zero increments, area ``a^{12}`` growing at ``rate`` per unit time."""
    times = _as_times(times)
    n = times.size - 1
    a = np.zeros((n, 2, 2))
    a[:, 0, 1] = rate * np.diff(times)
    a[:, 1, 0] = -a[:, 0, 1]
    return RoughPath2(times, np.zeros((n, 2)), a, p)


def save_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj.to_json()))

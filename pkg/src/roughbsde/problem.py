"""Markovian problem data ``(sigma, b, f, g, H)`` for one space dimension."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import VectorFieldFamily


class AssumptionError(ValueError):
    pass


@dataclass
class ProblemSpec:
    """Coefficients are vectorized callables; ``n = m = 1``.

    ``sigma(t, x)``, ``b(t, x)``, ``f(t, x, u, z)``, ``g(x)``.
    """

    sigma: Callable
    b: Callable
    f: Callable
    g: Callable
    H: VectorFieldFamily
    T: float = 1.0
    t0: float = 0.0
    x0: float = 0.0
    C_sigma: float = 1.0
    C_b: float = 0.0
    C_1f: float = 0.0
    C_2f: float = 0.0
    C_3f: float = 0.0
    name: str = "custom"
    n: int = 1
    m: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.T > 0:
            raise AssumptionError("T must be positive")
        if not 0 <= self.t0 < self.T:
            raise AssumptionError("t0 must lie in [0, T)")
        if self.n != 1 or self.m != 1:
            raise NotImplementedError("only n = m = 1 is supported")

    @property
    def d(self) -> int:
        return self.H.d

    @property
    def C_H(self) -> float:
        return self.H.C_H

    def x_window(self, width: float | None = None) -> tuple[float, float]:
        half = 4.0 * self.C_sigma * np.sqrt(self.T) + self.C_b * self.T if width is None else width
        half = max(half, 1.0)
        return self.x0 - half, self.x0 + half

    def g_sup(self, x_grid) -> float:
        return float(np.max(np.abs(self.g(np.asarray(x_grid, dtype=float)))))


def _fd(fn, x, h):
    return (fn(x + h) - fn(x - h)) / (2 * h)


def check_assumptions(spec: ProblemSpec, n: int = 21, y_radius: float = 3.0, z_radius: float = 5.0,
                      rtol: float = 1e-6) -> dict:
    """Sample the growth/regularity bounds of the coefficients on a grid.

    Returns the worst ratio per bound; raises if any exceeds ``1 + rtol``.
    """
    lo, hi = spec.x_window()
    ts = np.linspace(0.0, spec.T, 5)
    X, U, Z = np.meshgrid(np.linspace(lo, hi, n), np.linspace(-y_radius, y_radius, n),
                          np.linspace(-z_radius, z_radius, n), indexing="ij")
    h = 1e-5
    worst = {"sigma": 0.0, "b": 0.0, "f": 0.0, "f_z": 0.0, "f_u": 0.0, "f_x": 0.0}
    tiny = 1e-300
    for t in ts:
        f = lambda x, u, z: spec.f(t, x, u, z)
        xs = X[:, 0, 0]
        worst["sigma"] = max(worst["sigma"], float(np.max(np.abs(spec.sigma(t, xs)))) / max(spec.C_sigma, tiny))
        worst["b"] = max(worst["b"], float(np.max(np.abs(spec.b(t, xs)))) / max(spec.C_b, tiny))
        q = 1.0 + Z ** 2
        worst["f"] = max(worst["f"], float(np.max(np.abs(f(X, U, Z)) / q)) / max(spec.C_1f, tiny))
        fz = _fd(lambda z: f(X, U, z), Z, h)
        worst["f_z"] = max(worst["f_z"], float(np.max(np.abs(fz) / (1.0 + np.abs(Z)))) / max(spec.C_1f, tiny))
        fu = _fd(lambda u: f(X, u, Z), U, h)
        worst["f_u"] = max(worst["f_u"], float(np.max(fu)) / max(spec.C_2f, tiny))
        fx = _fd(lambda x: f(x, U, Z), X, h)
        worst["f_x"] = max(worst["f_x"], float(np.max(fx / q)) / max(spec.C_3f, tiny))
    worst = {k: (0.0 if v <= 0 else v) for k, v in worst.items()}
    bad = [k for k, v in worst.items() if v > 1.0 + rtol]
    if bad:
        raise AssumptionError(f"declared constants violated on the sample grid: {', '.join(bad)}")
    if not np.all(np.isfinite(spec.g(np.linspace(lo, hi, n)))):
        raise AssumptionError("g is not finite on the x-window")
    return worst

"""Named problem presets with their default drivers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import VectorField, VectorFieldFamily, zero_family
from .problem import ProblemSpec
from .rough_paths import PiecewiseLinearPath, RoughPath2, pure_area_rough_path

_KEYS4 = ("x", "y", "xx", "xy", "yy", "yyy", "xyy", "xxy", "xxyy", "xyyy", "yyyy")


def _zeros(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _const(c):
    return lambda x, y: np.full(np.broadcast(x, y).shape, float(c))


def constant_field(c: float, name: str = "c") -> VectorField:
    return VectorField(_const(c), {k: _zeros for k in _KEYS4}, name=name)


def linear_y_field(a: float, name: str = "ay") -> VectorField:
    d = {k: _zeros for k in _KEYS4}
    d["y"] = _const(a)
    return VectorField(lambda x, y: a * y + 0.0 * x, d, name=name)


def modulated_y_field(a: float, name: str = "ay(1+sin x/2)") -> VectorField:
    """``a * y * (1 + sin(x)/2)``."""
    d = {k: _zeros for k in _KEYS4}
    d["x"] = lambda x, y: 0.5 * a * y * np.cos(x)
    d["y"] = lambda x, y: a * (1.0 + 0.5 * np.sin(x)) + 0.0 * y
    d["xx"] = lambda x, y: -0.5 * a * y * np.sin(x)
    d["xy"] = lambda x, y: 0.5 * a * np.cos(x) + 0.0 * y
    d["xxy"] = lambda x, y: -0.5 * a * np.sin(x) + 0.0 * y
    return VectorField(lambda x, y: a * y * (1.0 + 0.5 * np.sin(x)), d, name=name)


def xy_field(a: float, name: str = "axy") -> VectorField:
    d = {k: _zeros for k in _KEYS4}
    d["x"] = lambda x, y: a * y + 0.0 * x
    d["y"] = lambda x, y: a * x + 0.0 * y
    d["xy"] = _const(a)
    return VectorField(lambda x, y: a * x * y, d, name=name)


def sin_field(a: float, name: str = "a sin(x+y)") -> VectorField:
    """``a * sin(x + y)``; every derivative of order j is ``a sin(x + y + j pi/2)``."""
    def deriv(j):
        return lambda x, y: a * np.sin(x + y + 0.5 * np.pi * j)

    d = {k: deriv(len(k)) for k in _KEYS4}
    return VectorField(deriv(0), d, name=name)


def smooth_driver(d: int, amplitude: float = 0.5, T: float = 1.0, n_knots: int = 17) -> PiecewiseLinearPath:
    """Polygon through ``amplitude * (sin 2 pi t/T, 1 - cos 2 pi t/T, ...)``."""
    t = np.linspace(0.0, T, n_knots)
    cols = []
    for k in range(d):
        w = 2.0 * np.pi * (k + 1) * t / T
        cols.append(amplitude * (np.sin(w) if k % 2 == 0 else 1.0 - np.cos(w)))
    return PiecewiseLinearPath(t, np.stack(cols, axis=1))


@dataclass
class Preset:
    spec: ProblemSpec
    driver: PiecewiseLinearPath | RoughPath2
    note: str = ""
    exact: Callable | None = None  # u(t, x) for the default driver, when known


def _sig1(t, x):
    return np.ones_like(np.asarray(x, dtype=float))


def _zero_tx(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_f(t, x, u, z):
    return np.zeros(np.broadcast(x, u, z).shape)


def make_preset(name: str, T: float = 1.0, x0: float = 0.0, scale: float = 1.0) -> Preset:
    """Build a preset; ``scale`` multiplies the default driver."""
    if name == "heat":
        spec = ProblemSpec(_sig1, _zero_tx, _zero_f, lambda x: x ** 2, zero_family(1), T=T, x0=x0, name=name)
        return Preset(spec, smooth_driver(1, 0.0, T), "u = x^2 + (T - t)", lambda t, x: x ** 2 + (T - t))
    if name == "discount":
        spec = ProblemSpec(_sig1, _zero_tx, lambda t, x, u, z: -u + 0.0 * x * z, np.cos, zero_family(1),
                           T=T, x0=x0, C_1f=3.0, C_2f=0.0, name=name)
        return Preset(spec, smooth_driver(1, 0.0, T), "u = exp(-(T-t)) exp(-(T-t)/2) cos x",
                      lambda t, x: np.exp(-1.5 * (T - t)) * np.cos(x))
    if name == "linearH":
        H = VectorFieldFamily([modulated_y_field(0.5)], C_H=0.75)
        f = lambda t, x, u, z: 0.2 * np.sin(z) - 0.5 * np.tanh(u) + 0.0 * x
        spec = ProblemSpec(_sig1, _zero_tx, f, np.sin, H, T=T, x0=x0, C_1f=0.7, C_2f=0.0, name=name)
        return Preset(spec, smooth_driver(1, 0.5 * scale, T))
    if name == "xyH":
        H = VectorFieldFamily([xy_field(0.5)], C_H=2.0)
        spec = ProblemSpec(_sig1, _zero_tx, _zero_f, np.cos, H, T=T, x0=x0, name=name)
        return Preset(spec, smooth_driver(1, 0.25 * scale, T))
    if name == "sinH":
        H = VectorFieldFamily([sin_field(0.3)], C_H=0.3)
        f = lambda t, x, u, z: -0.25 * np.tanh(u) + 0.0 * x * z
        spec = ProblemSpec(_sig1, _zero_tx, f, lambda x: 0.5 * np.cos(x), H, T=T, x0=x0, C_1f=0.25, name=name)
        return Preset(spec, smooth_driver(1, 0.5 * scale, T))
    if name == "pure-area":
        H = VectorFieldFamily([constant_field(1.0, "1"), linear_y_field(1.0, "y")], C_H=1.0)
        spec = ProblemSpec(_sig1, _zero_tx, _zero_f, lambda x: x, H, T=T, x0=x0, name=name)
        rate = np.pi * 0.5 * scale
        return Preset(spec, pure_area_rough_path(rate, np.linspace(0.0, T, 2)), "u = x - rate (T - t)",
                      lambda t, x: x - rate * (T - t))
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("heat", "linearH", "xyH", "sinH", "pure-area", "discount")

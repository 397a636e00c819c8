"""Vector fields ``H_k(x, y)`` on the real line parameterized by a scalar ``x``.

Derivatives are addressed by multi-indices ``(a, b)`` meaning ``d^a/dx^a d^b/dy^b``.
Missing derivatives are obtained by central differences of the highest
supplied lower-order derivative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# jet used by the flow variational system, in this order
FLOW_JET = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (0, 3), (1, 2), (2, 1))

_NAMES = {"v": (0, 0)}


def key_to_index(key: str) -> tuple[int, int]:
    if key in _NAMES:
        return _NAMES[key]
    if set(key) - {"x", "y"}:
        raise KeyError(f"bad derivative key {key!r}")
    return key.count("x"), key.count("y")


def index_to_key(idx: tuple[int, int]) -> str:
    a, b = idx
    return "v" if a == b == 0 else "x" * a + "y" * b


_STENCILS = {
    0: (np.array([0]), np.array([1.0])),
    1: (np.array([-1, 1]), np.array([-0.5, 0.5])),
    2: (np.array([-1, 0, 1]), np.array([1.0, -2.0, 1.0])),
    3: (np.array([-2, -1, 1, 2]), np.array([-0.5, 1.0, -1.0, 0.5])),
    4: (np.array([-2, -1, 0, 1, 2]), np.array([1.0, -4.0, 6.0, -4.0, 1.0])),
}
_FD_STEP = {1: 1e-5, 2: 1e-4, 3: 1e-3, 4: 3e-3, 5: 5e-3, 6: 8e-3}


def central_difference(fn: Callable, x, y, a: int, b: int, h: float | None = None):
    """``d^a/dx^a d^b/dy^b fn`` by a tensor-product central stencil."""
    if a == b == 0:
        return fn(x, y)
    h = _FD_STEP[a + b] if h is None else h
    ox, wx = _STENCILS[a]
    oy, wy = _STENCILS[b]
    acc = 0.0
    for i, cx in zip(ox, wx):
        for j, cy in zip(oy, wy):
            acc = acc + cx * cy * fn(x + i * h, y + j * h)
    return acc / h ** (a + b)


class FieldValidationError(ValueError):
    pass


@dataclass
class VectorField:
    """One component ``H(x, y)``; ``derivs`` maps keys like ``"xy"`` to callables."""

    value: Callable
    derivs: dict = field(default_factory=dict)
    name: str = "H"

    def __post_init__(self):
        self._fns = {(0, 0): self.value}
        for key, fn in self.derivs.items():
            self._fns[key_to_index(key)] = fn

    def supplied(self) -> set:
        return set(self._fns)

    def derivative(self, idx, x, y):
        idx = tuple(idx)
        fn = self._fns.get(idx)
        if fn is not None:
            out = fn(x, y)
            return np.broadcast_to(out, np.broadcast(x, y).shape).astype(float) if np.ndim(out) == 0 else out
        # FD from the highest supplied derivative below idx
        base = max((k for k in self._fns if k[0] <= idx[0] and k[1] <= idx[1]), key=sum)
        return central_difference(self._fns[base], x, y, idx[0] - base[0], idx[1] - base[1])

    def jet(self, x, y, indices=FLOW_JET) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.stack([np.broadcast_to(self.derivative(i, x, y), x.shape) for i in indices])

    def __call__(self, x, y):
        return self.derivative((0, 0), x, y)

    def check_derivatives(self, xs=None, ys=None, rtol: float = 1e-4) -> dict:
        """Compare each supplied derivative with central differences of a lower one."""
        xs = np.linspace(-2.0, 2.0, 7) if xs is None else np.asarray(xs, dtype=float)
        ys = np.linspace(-2.0, 2.0, 7) if ys is None else np.asarray(ys, dtype=float)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        worst = {}
        for idx, fn in self._fns.items():
            if idx == (0, 0):
                continue
            lower = [(idx[0] - 1, idx[1]), (idx[0], idx[1] - 1)]
            src = next((k for k in lower if k in self._fns), None)
            if src is None:
                continue
            got = np.broadcast_to(fn(X, Y), X.shape)
            ref = central_difference(self._fns[src], X, Y, idx[0] - src[0], idx[1] - src[1], h=1e-5)
            err = float(np.max(np.abs(got - ref) / np.maximum(1.0, np.abs(ref))))
            worst[index_to_key(idx)] = err
            if err > rtol:
                raise FieldValidationError(
                    f"{self.name}: derivative {index_to_key(idx)!r} disagrees with finite differences (rel err {err:.2e})"
                )
        return worst


class BracketField(VectorField):
    """Lie bracket ``B = H_k d_y H_l - H_l d_y H_k`` of two scalar fields.

    Derivatives follow from the Leibniz rule whenever the parent fields provide
    (possibly finite-differenced) derivatives one order higher.
    """

    def __init__(self, hk: VectorField, hl: VectorField):
        self.hk, self.hl = hk, hl
        self.name = f"[{hk.name},{hl.name}]"
        self.derivs = {}
        self.value = self._value
        self._fns = {(0, 0): self._value}

    def _value(self, x, y):
        return self.derivative((0, 0), x, y)

    def derivative(self, idx, x, y):
        a, b = idx
        out = 0.0
        for i in range(a + 1):
            for j in range(b + 1):
                c = math.comb(a, i) * math.comb(b, j)
                lo = (i, j)
                hi = (a - i, b - j + 1)
                out = out + c * (
                    self.hk.derivative(lo, x, y) * self.hl.derivative(hi, x, y)
                    - self.hl.derivative(lo, x, y) * self.hk.derivative(hi, x, y)
                )
        return out


@dataclass
class VectorFieldFamily:
    """``d`` components ``H_1..H_d`` with a declared bound ``C_H``.

    ``gamma`` is carried as configuration only; Lip-norm membership is not checked.
    """

    components: list
    C_H: float = 1.0
    gamma: float = 3.0
    validate: bool = True
    identically_zero: bool = False
    _brackets: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.components = [c if isinstance(c, VectorField) else VectorField(c) for c in self.components]
        if self.validate:
            for c in self.components:
                c.check_derivatives()

    @property
    def d(self) -> int:
        return len(self.components)

    def bracket(self, k: int, l: int) -> BracketField:
        if (k, l) not in self._brackets:
            self._brackets[(k, l)] = BracketField(self.components[k], self.components[l])
        return self._brackets[(k, l)]


def zero_family(d: int = 1) -> VectorFieldFamily:
    zero = lambda x, y: np.zeros(np.broadcast(x, y).shape)
    comps = [VectorField(zero, {k: zero for k in ("x", "y", "xx", "xy", "yy", "yyy", "xyy", "xxy", "xxyy", "xyyy", "yyyy")}, name="0")
             for _ in range(d)]
    return VectorFieldFamily(comps, C_H=0.0, validate=False, identically_zero=True)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roughbsde.fields import FieldValidationError, VectorField, VectorFieldFamily, zero_family
from roughbsde.flow import (
    COMPONENTS,
    DY,
    PHI,
    FlowAccuracyError,
    FlowDomainError,
    derivative_identity_residuals,
    flow_smallness_window,
    invert_flow,
    solve_flow_rough,
    solve_flow_smooth,
)
from roughbsde.presets import constant_field, linear_y_field, modulated_y_field, sin_field, smooth_driver
from roughbsde.rough_paths import (
    PiecewiseLinearPath,
    RoughPath2,
    dyadic_times,
    lift_smooth,
    line_path,
    pure_area_rough_path,
    pure_area_sequence,
    sample_brownian,
    wong_zakai_sequence,
)

GRID = np.linspace(-2.0, 2.0, 21)
TAB = np.linspace(0.0, 1.0, 11)


def fam(*fields, C=1.0):
    return VectorFieldFamily(list(fields), C_H=C)


def xyy_field():
    z = lambda x, y: np.zeros(np.broadcast(x, y).shape)
    c = lambda v: (lambda x, y: np.full(np.broadcast(x, y).shape, float(v)))
    d = {k: z for k in ("xx", "yyy", "xxy", "xxyy", "xyyy", "yyyy")}
    d.update(x=lambda x, y: y * y + 0 * x, y=lambda x, y: 2 * x * y, xy=lambda x, y: 2 * y + 0 * x,
             yy=lambda x, y: 2 * x + 0 * y, xyy=c(2.0))
    return VectorField(lambda x, y: x * y * y, d, name="xy^2")


class TestClosedForms:
    def test_zero_field_is_identity(self):
        fl = solve_flow_smooth(zero_family(1), smooth_driver(1), (0, 1), GRID, GRID, TAB)
        X, Y = np.meshgrid(GRID, GRID, indexing="ij")
        q = fl.evaluate(0.3, X, Y)
        assert np.array_equal(q["phi"], Y)
        assert np.all(q["dy"] == 1.0)
        for name in COMPONENTS:
            if name not in ("phi", "dy"):
                assert not q[name].any()

    def test_zero_field_rough_identity(self):
        fl = solve_flow_rough(zero_family(2), pure_area_rough_path(3.0, TAB), (0, 1), GRID, GRID, TAB)
        assert np.array_equal(fl.phi(0.0, 0.5, GRID), GRID)

    def test_constant_field(self):
        fl = solve_flow_smooth(fam(constant_field(1.0)), line_path([1.0]), (0, 1), GRID, GRID, TAB)
        for t in (0.0, 0.35, 0.8):
            assert np.allclose(fl.phi(t, 0.1, GRID[5:-5]), GRID[5:-5] + 1 - t, atol=1e-12)
            assert np.allclose(fl.component("dy", t, 0.1, GRID), 1.0)

    def test_linear_field_gives_e(self):
        # oracle: phi = y exp(zeta(T) - zeta(t))
        fl = solve_flow_smooth(fam(linear_y_field(1.0)), line_path([1.0]), (0, 1), GRID, np.linspace(-3, 3, 31), TAB)
        assert abs(fl.phi(0.0, np.array([-1.0, 0.0, 1.0]), 1.0) - np.e).max() < 1e-6
        assert fl.component("dy", 0.4, 0.0, 0.5) == pytest.approx(np.exp(0.6), abs=1e-6)

    def test_variational_system_against_closed_form(self):
        # dphi = x phi^2 dt, so phi = y / (1 - x y s), s = T - t; derivatives by finite differences of that
        xs = np.linspace(-1, 1, 21)
        fl = solve_flow_smooth(fam(xyy_field(), C=2.0), line_path([1.0], T=0.5), (0, 0.5), xs, xs,
                               np.linspace(0, 0.5, 6), interp_order=5, max_increment=0.01)
        s, h = 0.5, 1e-3
        exact = lambda x, y: y / (1 - x * y * s)
        X, Y = np.meshgrid(np.array([-0.7, 0.0, 0.4]), np.array([-0.6, 0.2, 0.5]), indexing="ij")
        D = {}
        D["phi"] = exact(X, Y)
        D["dx"] = (exact(X + h, Y) - exact(X - h, Y)) / (2 * h)
        D["dy"] = (exact(X, Y + h) - exact(X, Y - h)) / (2 * h)
        D["dxx"] = (exact(X + h, Y) - 2 * exact(X, Y) + exact(X - h, Y)) / h ** 2
        D["dyy"] = (exact(X, Y + h) - 2 * exact(X, Y) + exact(X, Y - h)) / h ** 2
        D["dxy"] = (exact(X + h, Y + h) - exact(X + h, Y - h) - exact(X - h, Y + h) + exact(X - h, Y - h)) / (4 * h * h)
        yy = lambda x, y: (exact(x, y + h) - 2 * exact(x, y) + exact(x, y - h)) / h ** 2
        xx = lambda x, y: (exact(x + h, y) - 2 * exact(x, y) + exact(x - h, y)) / h ** 2
        D["dyyy"] = (yy(X, Y + h) - yy(X, Y - h)) / (2 * h)
        D["dxyy"] = (yy(X + h, Y) - yy(X - h, Y)) / (2 * h)
        D["dxxy"] = (xx(X, Y + h) - xx(X, Y - h)) / (2 * h)
        q = fl.evaluate(0.0, X, Y)
        for name in COMPONENTS:
            assert np.allclose(q[name], D[name], atol=2e-5, rtol=0), name

    def test_terminal_normalization_exact(self):
        fl = solve_flow_smooth(fam(sin_field(0.7)), smooth_driver(1), (0, 1), GRID, GRID, TAB)
        assert np.array_equal(fl.table[-1, PHI], np.broadcast_to(GRID, (21, 21)))
        assert np.all(fl.table[-1, DY] == 1.0)
        others = [i for i in range(9) if i not in (PHI, DY)]
        assert not fl.table[-1, others].any()
        assert fl.min_dy() > 0

    def test_window_must_be_positive(self):
        with pytest.raises(FlowDomainError):
            solve_flow_smooth(fam(sin_field(0.5)), smooth_driver(1), (0.5, 0.5), GRID, GRID)

    def test_dimension_mismatch(self):
        with pytest.raises(FlowDomainError):
            solve_flow_smooth(fam(sin_field(0.5)), smooth_driver(2), (0, 1), GRID, GRID)

    def test_accuracy_error_on_coarse_steps(self):
        big = line_path([40.0])
        with pytest.raises(FlowAccuracyError):
            solve_flow_smooth(fam(sin_field(1.0)), big, (0, 1), GRID, GRID, max_increment=50.0)

    def test_json_dump(self):
        fl = solve_flow_smooth(fam(sin_field(0.5)), smooth_driver(1), (0, 1), GRID[:5], GRID[:4], TAB)
        obj = fl.to_json()
        assert np.asarray(obj["table"]).shape == (11, 9, 5, 4)
        assert obj["components"][0] == "phi"


def test_field_derivative_validation():
    bad = VectorField(lambda x, y: x * y, {"y": lambda x, y: 2 * x + 0 * y})
    with pytest.raises(FieldValidationError):
        VectorFieldFamily([bad])


class TestRough:
    def setup_method(self):
        self.H = fam(sin_field(0.5), modulated_y_field(0.5))
        t = np.linspace(0, 1, 1025)
        self.z = PiecewiseLinearPath(t, 0.6 * np.stack([np.sin(2 * np.pi * t) + 0.3 * t, 1 - np.cos(2 * np.pi * t)], 1))
        self.g = np.linspace(-2, 2, 17)

    def test_lift_matches_smooth_solver(self):
        a = solve_flow_smooth(self.H, self.z, (0, 1), self.g, self.g, TAB)
        b = solve_flow_rough(self.H, lift_smooth(self.z), (0, 1), self.g, self.g, TAB)
        assert np.abs(a.table - b.table).max() < 1e-12

    def test_coarse_lift_converges(self):
        # oracle: smooth solver on the 1024-segment polygon with small substeps
        ref = solve_flow_smooth(self.H, self.z, (0, 1), self.g, self.g, [0, 1], max_increment=0.01)
        errs, errs_no_area = [], []
        for m in (8, 16, 32):
            rp = lift_smooth(self.z, times=np.linspace(0, 1, m + 1))
            f = solve_flow_rough(self.H, rp, (0, 1), self.g, self.g, [0, 1], max_increment=0.01)
            errs.append(np.abs(f.table[0] - ref.table[0]).max())
            flat = RoughPath2(rp.times, rp.increments, np.zeros_like(rp.areas))
            f0 = solve_flow_rough(self.H, flat, (0, 1), self.g, self.g, [0, 1], max_increment=0.01)
            errs_no_area.append(np.abs(f0.table[0] - ref.table[0]).max())
        assert errs[0] / errs[1] > 4 and errs[1] / errs[2] > 4  # at least O(mesh^2)
        assert all(e < 0.1 * e0 for e, e0 in zip(errs, errs_no_area))

    def test_pure_area_bracket_flow(self):
        # oracle: smooth flows along the pure-area sequence n = 8 (Wong-Zakai limit)
        H = fam(constant_field(1.0), linear_y_field(1.0))
        ys = np.linspace(-4, 4, 33)
        rough = solve_flow_rough(H, pure_area_rough_path(np.pi, [0.0, 1.0]), (0, 1), self.g, ys, [0, 1])
        smooth = solve_flow_smooth(H, pure_area_sequence(8, 1.0, knots_per_loop=128), (0, 1), self.g, ys, [0, 1])
        assert rough.phi(0.0, 0.0, 1.0) == pytest.approx(1 - np.pi, abs=1e-10)
        assert abs(rough.phi(0.0, 0.0, 1.0) - smooth.phi(0.0, 0.0, 1.0)) < 1e-2

    def test_zero_field_any_driver(self):
        rp = lift_smooth(sample_brownian(0, dyadic_times(1, 6), 2))
        fl = solve_flow_rough(zero_family(2), rp, (0, 1), self.g, self.g, TAB)
        assert np.array_equal(fl.phi(0.5, 0.0, self.g), self.g)


class TestInverse:
    def setup_method(self):
        self.ys = np.linspace(-3, 3, 31)
        self.lin = solve_flow_smooth(fam(linear_y_field(1.0)), line_path([1.0]), (0, 1), GRID, self.ys, TAB)

    def test_identity(self):
        fl = solve_flow_smooth(zero_family(1), smooth_driver(1), (0, 1), GRID, GRID, TAB)
        y = np.linspace(-1.5, 1.5, 7)
        assert np.array_equal(invert_flow(fl, 0.2, 0.0, y), y)

    def test_linear_closed_form(self):
        y = np.linspace(-2, 2, 9)
        for t in (0.0, 0.5, 0.9):
            assert np.allclose(invert_flow(self.lin, t, 0.3, y), y * np.exp(-(1 - t)), atol=1e-6)

    def test_round_trip_grid(self):
        fl = solve_flow_smooth(fam(sin_field(0.5)), smooth_driver(1), (0, 1), GRID, np.linspace(-4, 4, 41), TAB)
        T, X, Y = np.meshgrid(np.linspace(0, 1, 10), np.linspace(-1.5, 1.5, 10), np.linspace(-2, 2, 10), indexing="ij")
        worst = 0.0
        for k, t in enumerate(T[:, 0, 0]):
            back = invert_flow(fl, t, X[k], fl.phi(t, X[k], Y[k]))
            worst = max(worst, float(np.abs(back - Y[k]).max()))
        assert worst < 1e-8

    def test_out_of_range(self):
        with pytest.raises(FlowDomainError):
            invert_flow(self.lin, 0.0, 0.0, 100.0)


class TestIdentities:
    def test_zero_field(self):
        fl = solve_flow_smooth(zero_family(1), smooth_driver(1), (0, 1), GRID, GRID, TAB)
        res = derivative_identity_residuals(fl, [0.2, 0.6], GRID[5:-5:3], GRID[5:-5:3])
        assert max(res.values()) < 1e-6

    def test_linear_field(self):
        ys = np.linspace(-3, 3, 61)
        fl = solve_flow_smooth(fam(linear_y_field(1.0)), line_path([1.0]), (0, 1), GRID, ys, TAB, interp_order=5)
        res = derivative_identity_residuals(fl, [0.0, 0.3, 0.7], [-1, 0, 1], [-0.5, 0.0, 0.5])
        assert max(res.values()) < 1e-6

    def test_sin_field(self):
        g = np.linspace(-2, 2, 81)
        fl = solve_flow_smooth(fam(sin_field(1.0)), smooth_driver(1, 0.5), (0, 1), g, g, TAB, interp_order=5)
        res = derivative_identity_residuals(fl, [0.1, 0.3, 0.6, 0.8], np.linspace(-1, 1, 5), np.linspace(-1, 1, 5))
        assert max(res.values()) < 1e-4, res


class TestSmallnessWindow:
    def test_zero_field_full_window(self):
        fl = solve_flow_smooth(zero_family(1), smooth_driver(1), (0, 1), GRID, GRID, TAB)
        sw = flow_smallness_window(fl, 0.1)
        assert sw.h == pytest.approx(1.0) and not sw.warning

    def test_linear_field_log(self):
        # dy phi - 1 = e^{T-t} - 1 < eps  <=>  T - t < ln(1 + eps)
        tab = np.linspace(0, 1, 201)
        fl = solve_flow_smooth(fam(linear_y_field(1.0)), line_path([1.0]), (0, 1), GRID[:3], np.linspace(-0.01, 0.01, 5), tab)
        for eps in (0.05, 0.2, 0.5):
            # the other deviations vanish here; dy phi - 1 is the binding one
            sw = flow_smallness_window(fl, eps)
            assert abs(sw.h - np.log1p(eps)) <= tab[1] + 1e-12

    def test_tiny_eps_warns(self):
        fl = solve_flow_smooth(fam(sin_field(0.5)), smooth_driver(1), (0, 1), GRID, GRID, TAB)
        sw = flow_smallness_window(fl, 1e-12)
        assert sw.warning and sw.h == pytest.approx(0.1)

    @given(st.floats(1e-3, 2.0), st.floats(1e-3, 2.0))
    def test_monotone_in_eps(self, e1, e2):
        fl = _sin_flow()
        lo, hi = sorted((e1, e2))
        assert flow_smallness_window(fl, lo).h <= flow_smallness_window(fl, hi).h

    def test_bound_grows_with_driver(self):
        H = fam(sin_field(0.5), modulated_y_field(0.5))
        z = smooth_driver(2, 0.5)
        L = [solve_flow_smooth(H, z.scaled(c), (0, 1), GRID, GRID, TAB).uniform_bound() for c in (0.5, 1.0, 2.0)]
        assert L[0] <= L[1] <= L[2]


_CACHE = {}


def _sin_flow():
    if "sin" not in _CACHE:
        _CACHE["sin"] = solve_flow_smooth(fam(sin_field(0.5)), smooth_driver(1), (0, 1), GRID, GRID, TAB)
    return _CACHE["sin"]


def test_wong_zakai_flow_convergence():
    """Successive Wong-Zakai levels of one sample: distances decrease from level 5 on."""
    H = fam(sin_field(0.5), modulated_y_field(0.5))
    g = np.linspace(-2, 2, 17)
    bm = sample_brownian(1, dyadic_times(1.0, 12), 2)
    flows = [solve_flow_smooth(H, wong_zakai_sequence(bm, k), (0, 1), g, g, np.linspace(0, 1, 9), max_increment=0.02)
             for k in range(2, 11)]
    idx = [PHI, 1, DY, 3, 4, 5]
    dist = [max(np.abs(a.table[:, idx] - b.table[:, idx]).max(), np.abs(1 / a.table[:, DY] - 1 / b.table[:, DY]).max())
            for a, b in zip(flows, flows[1:])]
    tail = dist[3:]  # pairs (5, 6), (6, 7), ...
    assert all(b < a for a, b in zip(tail, tail[1:])), dist


def test_interp_order_is_validated():
    with pytest.raises(ValueError):
        solve_flow_smooth(fam(sin_field(0.5)), smooth_driver(1), (0, 1), GRID, GRID, TAB, interp_order=1)

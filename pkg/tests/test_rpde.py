import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roughbsde.fields import VectorFieldFamily, zero_family
from roughbsde.presets import linear_y_field, make_preset, smooth_driver
from roughbsde.problem import ProblemSpec
from roughbsde.rough_paths import lift_smooth, multi_grid, sample_brownian
from roughbsde.rpde import (
    FD_TOL,
    FDGrid,
    StabilityError,
    _implicit_solve,
    _transport,
    sequence_study,
    solve_pde_smooth,
    solve_rpde,
    sup_distance,
    time_grid,
    window_bounds,
)


def compact_of(sol, frac=0.25):
    half = frac * (sol.x[-1] - sol.x[0])
    mid = 0.5 * (sol.x[0] + sol.x[-1])
    return mid - half, mid + half


def exact_error(sol, exact):
    lo, hi = compact_of(sol)
    m = (sol.x >= lo) & (sol.x <= hi)
    return float(max(np.max(np.abs(sol.values[k, m] - exact(t, sol.x[m]))) for k, t in enumerate(sol.times)))


@pytest.mark.parametrize("name", ["heat", "discount", "pure-area"])
def test_closed_form_presets(name):
    p = make_preset(name)
    sol = solve_rpde(p.spec, p.driver)
    assert exact_error(sol, p.exact) < FD_TOL


def _linear_transport_spec():
    # -u_t = u_xx/2 + u zeta'  with g = cos: u = exp(zeta(T) - zeta(t) - (T - t)/2) cos x
    H = VectorFieldFamily([linear_y_field(1.0)], C_H=1.0)
    f = lambda t, x, u, z: np.zeros(np.broadcast(x, u, z).shape)
    one = lambda t, x: np.ones_like(np.asarray(x, float))
    return ProblemSpec(one, lambda t, x: 0 * one(t, x), f, np.cos, H)


def test_linear_transport_closed_form_both_routes():
    spec = _linear_transport_spec()
    z = smooth_driver(1, 0.5)
    exact = lambda t, x: np.exp(z(1.0)[0] - z(t)[0] - 0.5 * (1 - t)) * np.cos(x)
    assert exact_error(solve_pde_smooth(spec, z), exact) < FD_TOL
    assert exact_error(solve_rpde(spec, lift_smooth(z)), exact) < FD_TOL


def test_smooth_and_rough_routes_agree():
    p = make_preset("xyH")
    a = solve_pde_smooth(p.spec, p.driver)
    b = solve_rpde(p.spec, lift_smooth(p.driver))
    assert sup_distance(a, b) < FD_TOL


def test_window_halving_on_xy():
    p = make_preset("xyH")
    a = solve_rpde(p.spec, p.driver, h=0.25)
    b = solve_rpde(p.spec, p.driver, h=0.125)
    assert len(a.windows) == 4 and len(b.windows) == 8
    assert sup_distance(a, b) < 2 * FD_TOL


def test_solution_metadata():
    p = make_preset("linearH")
    sol = solve_rpde(p.spec, p.driver)
    assert sol.windows[0][0] == 0.0 and sol.windows[-1][1] == 1.0
    assert len(sol.flows) == len(sol.windows)
    assert np.max(np.abs(sol.transformed)) <= sol.M + 1e-6
    assert sol.x[0] == pytest.approx(-4.0) and sol.x[-1] == pytest.approx(4.0)
    with pytest.raises(ValueError):
        sol.at(0.123456789, 0.0)
    rows = list(sol.to_rows())
    assert len(rows) == sol.values.size


def test_dimension_mismatch():
    p = make_preset("linearH")
    with pytest.raises(ValueError):
        solve_rpde(p.spec, smooth_driver(2))


def test_stability_guard():
    one = lambda t, x: np.ones_like(np.asarray(x, float))
    spec = ProblemSpec(one, lambda t, x: 0 * one(t, x), lambda t, x, u, z: 30.0 * np.sin(z) + 0 * u, np.cos,
                       zero_family(1), C_1f=30.0)
    with pytest.raises(StabilityError, match="steps"):
        solve_pde_smooth(spec, smooth_driver(1, 0.0), FDGrid(steps_per_unit=50))


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 2), st.floats(-1, 1), st.floats(1e-3, 0.1))
def test_implicit_step_keeps_affine_functions(c0, c1, a, b, dt):
    x = np.linspace(-2, 2, 41)
    w = c0 + c1 * x
    u = _implicit_solve(w, np.full_like(x, a), np.full_like(x, b), x[1] - x[0], dt)
    # (I - dt L)(c0 + c1 x) = c0 + c1 x - dt b c1, so u = w + dt b c1
    assert np.allclose(u, w + dt * b * c1, atol=1e-10)


@given(st.floats(-2, 2))
def test_transport_linear_field(inc):
    x = np.linspace(-1, 1, 5)
    u = np.linspace(-2, 2, 5)
    H = VectorFieldFamily([linear_y_field(1.0)], C_H=1.0)
    assert np.allclose(_transport(H, x, u, np.array([inc]), 0.05), u * np.exp(inc), rtol=1e-7)


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8), st.floats(0.001, 2.0))
def test_window_bounds_tile_the_grid(steps, h):
    times = np.concatenate([[0.0], np.cumsum(steps)])
    w = window_bounds(times, h)
    assert w[0][1] == times.size - 1 and w[-1][0] == 0
    assert all(i0 < i1 for i0, i1 in w)
    assert all(a[0] == b[1] for a, b in zip(w, w[1:]))


def test_time_grid_contains_extras():
    t = time_grid(0.0, 1.0, 10, [0.123, 0.5, 1.7])
    assert 0.123 in t and t[0] == 0.0 and t[-1] == 1.0 and t.size == 12
    assert np.all(np.diff(t) > 0)


def test_sequence_study_structure():
    p = make_preset("linearH")
    bm = sample_brownian(4, multi_grid(1.0, 4, 2), 1).scaled(0.1)
    grid = FDGrid(nx=41, steps_per_unit=50)
    out = sequence_study(p.spec, bm, levels=(1, 2), grid=grid)
    for kind, n in (("dyadic", [2, 4]), ("triadic", [3, 9])):
        assert out["sequences"][kind]["segments"] == n
        assert len(out["sequences"][kind]["successive"]) == 1
    assert out["final_gap"] >= 0 and set(out["solutions"]) == {"dyadic", "triadic"}

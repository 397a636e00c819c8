#!/usr/bin/env python3
"""Growth constants, comparison constants and window width for every preset."""
import numpy as np

from roughbsde.presets import PRESETS, make_preset
from roughbsde.rough_paths import PiecewiseLinearPath, lift_smooth
from roughbsde.rpde import FDGrid, global_constants, time_grid

grid = FDGrid()
print(f"{'preset':>10} {'C1f':>8} {'Cunif':>8} {'M':>8} {'log delta':>10} {'h':>7} windows")
for name in PRESETS:
    p = make_preset(name)
    rp = lift_smooth(p.driver) if isinstance(p.driver, PiecewiseLinearPath) else p.driver
    times = time_grid(p.spec.t0, p.spec.T, grid.steps_per_unit)
    _, c, _, _ = global_constants(p.spec, rp, times, grid)
    n = int(np.ceil((p.spec.T - p.spec.t0) / c.h - 1e-9))
    print(f"{name:>10} {c.C1f:8.3f} {c.C_unif:8.3f} {c.M:8.3f} {c.log_delta:10.2f} {c.h:7.3f} {n}")

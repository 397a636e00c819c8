"""Command-line experiment runner.

Every subcommand reads a JSON config (``--config``), writes ``report.json``
and, where it applies, ``solution.csv`` / ``convergence.csv`` into ``--out``.
The exit status is 0 iff every check that ran passed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .bsde_mc import feynman_kac_check, solve_bsde_stitched
from .flow import derivative_identity_residuals, flow_smallness_window, invert_flow, solve_flow_rough
from .rough_paths import (
    PiecewiseLinearPath,
    lift_smooth,
    multi_grid,
    p_variation_norm,
    sample_brownian,
    wong_zakai_sequence,
)
from .rpde import convergence_study, global_constants, sequence_study, solve_rpde, time_grid

log = logging.getLogger("roughbsde")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if hasattr(obj, "to_json"):
        return _jsonable(obj.to_json())
    return obj


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


class _Run:
    """Collects results, checks and timings for one invocation."""

    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.results: dict = {}
        self.checks: dict = {}
        self.constants = None
        self.timings: dict = {}
        self._t = time.perf_counter()

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.timings[name] = round(now - self._t, 3)
        self._t = now

    def check(self, name: str, ok, **detail) -> None:
        self.checks[name] = {"pass": bool(ok), **detail}
        log.info("check %s: %s", name, "pass" if ok else "FAIL")

    @property
    def ok(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def write(self, command: str) -> None:
        report = {
            "command": command,
            "config": self.cfg,
            "seed": self.args.seed,
            "constants": self.constants,
            "results": self.results,
            "checks": self.checks,
            "all_checks_pass": self.ok,
            "timings": self.timings,
        }
        text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
        (self.out / "report.json").write_text(text + "\n")


def _setup(run: _Run):
    preset = cfgmod.build_preset(run.cfg)
    driver = cfgmod.build_driver(run.cfg, preset, run.args.seed)
    return preset, driver


def _default_driver(run: _Run) -> bool:
    d = run.cfg.get("driver", {"kind": "default"})
    return d["kind"] == "default" and d.get("scale", 1.0) == 1.0


# ---- lift -------------------------------------------------------------------

def cmd_lift(run: _Run) -> None:
    preset, driver = _setup(run)
    rp = cfgmod.as_rough(driver)
    inc, area = rp.signature(0, rp.n_intervals)
    run.results.update({
        "dim": rp.dim, "p": rp.p, "n_intervals": rp.n_intervals,
        "increment": inc, "area": area, "p_variation_norm": p_variation_norm(rp),
    })
    run.lap("lift")
    rp.to_csv(run.out / "solution.csv")
    if run.args.check:
        rng = np.random.default_rng(0)
        n = rp.n_intervals
        worst = 0.0
        for _ in range(200 if n >= 2 else 0):
            i, j, k = np.sort(rng.choice(n + 1, 3, replace=n + 1 < 3))
            x1, a1 = rp.signature(i, j)
            x2, a2 = rp.signature(j, k)
            x, a = rp.signature(i, k)
            comp = a1 + a2 + 0.5 * (np.outer(x1, x2) - np.outer(x2, x1))
            worst = max(worst, float(np.max(np.abs(x - x1 - x2))), float(np.max(np.abs(a - comp))))
        run.check("chen_identity", worst < 1e-10, residual=worst)
        run.check("areas_antisymmetric", np.allclose(rp.areas, -np.swapaxes(rp.areas, 1, 2), atol=0.0))
        if isinstance(driver, PiecewiseLinearPath):
            end = driver.values[-1] - driver.values[0]
            run.check("increment_matches_path", np.allclose(inc, end, atol=1e-12),
                      residual=float(np.max(np.abs(inc - end))))
        run.lap("checks")


# ---- flow -------------------------------------------------------------------

def _flow_for(run: _Run, preset, driver, interp_order: int = 3):
    spec = preset.spec
    fcfg = run.cfg.get("flow", {})
    grid = cfgmod.build_grid(run.cfg)
    rp = cfgmod.as_rough(driver)
    Y = fcfg.get("y_radius", spec.g_sup(grid.padded(spec)[0]) + 1.0)
    x, _ = grid.padded(spec)
    xf = np.linspace(x[0], x[-1], grid.flow_nx)
    yf = np.linspace(-Y, Y, fcfg.get("ny", grid.flow_ny))
    tab = time_grid(spec.t0, spec.T, fcfg.get("steps", grid.steps_per_unit))
    return solve_flow_rough(spec.H, rp, (spec.t0, spec.T), xf, yf, tab, max_increment=grid.max_increment,
                            interp_order=fcfg.get("interp_order", interp_order))


def cmd_flow_solve(run: _Run) -> None:
    preset, driver = _setup(run)
    spec = preset.spec
    flow = _flow_for(run, preset, driver)
    run.lap("flow")
    eps = run.cfg.get("flow", {}).get("eps", 0.1)
    sw = flow_smallness_window(flow, eps)
    run.results.update({"eps": eps, "smallness_h": sw.h, "uniform_bound": sw.L, "smallness_warning": sw.warning,
                        "min_dy": flow.min_dy(), "x_window": [flow.x_grid[0], flow.x_grid[-1]],
                        "y_window": [flow.y_grid[0], flow.y_grid[-1]]})
    if run.cfg.get("flow", {}).get("dump_table"):
        (run.out / "flow_table.json").write_text(json.dumps(_jsonable(flow.to_json())) + "\n")
    X, Y = np.meshgrid(flow.x_grid, flow.y_grid, indexing="ij")
    q = flow.evaluate(spec.t0, X, Y, ("phi", "dx", "dy"))
    rows = zip(X.ravel(), Y.ravel(), q["phi"].ravel(), q["dx"].ravel(), q["dy"].ravel())
    _write_csv(run.out / "solution.csv", ["x", "y", "phi", "dx_phi", "dy_phi"], rows)
    if run.args.check:
        end = flow.evaluate(spec.T, X, Y, ("phi", "dy"))
        run.check("identity_at_end", np.allclose(end["phi"], Y, atol=1e-12) and np.allclose(end["dy"], 1.0),
                  residual=float(np.max(np.abs(end["phi"] - Y))))
        run.check("monotone_in_y", flow.min_dy() > 0.0, min_dy=flow.min_dy())
        xs = flow.x_grid[flow.x_grid.size // 4: 3 * flow.x_grid.size // 4 + 1: 4]
        ys = np.linspace(0.5 * flow.y_grid[0], 0.5 * flow.y_grid[-1], 7)
        Xs, Ys = np.meshgrid(xs, ys, indexing="ij")
        yy = flow.phi(spec.t0, Xs, Ys)
        inside = (yy > flow.y_grid[0]) & (yy < flow.y_grid[-1])
        back = invert_flow(flow, spec.t0, Xs[inside], yy[inside])
        err = float(np.max(np.abs(back - Ys[inside]))) if inside.any() else 0.0
        run.check("inverse_round_trip", err < 1e-8, residual=err)
        run.lap("checks")


def cmd_flow_identities(run: _Run) -> None:
    preset, driver = _setup(run)
    spec = preset.spec
    tol = cfgmod.tolerances(run.cfg)["identity"]
    # second differences of the inverse see the interpolant's curvature error; quintic keeps it small
    flow = _flow_for(run, preset, driver, interp_order=5)
    run.lap("flow")
    times = np.linspace(spec.t0, spec.T, 6)[1:-1]
    xs = np.linspace(spec.x0 - 1.0, spec.x0 + 1.0, 5)
    yr = 0.5 * flow.y_grid[-1]
    ys = np.linspace(-yr, yr, 5)
    res = derivative_identity_residuals(flow, times, xs, ys)
    run.results["identity_residuals"] = res
    run.check("derivative_identities", max(res.values()) < tol, worst=max(res.values()), tol=tol)
    run.lap("identities")


# ---- transform ----------------------------------------------------------------

def cmd_transform_constants(run: _Run) -> None:
    preset, driver = _setup(run)
    spec = preset.spec
    grid = cfgmod.build_grid(run.cfg)
    route = run.cfg.get("route", "pde")
    times = time_grid(spec.t0, spec.T, grid.steps_per_unit)
    td, consts, Y, settled = global_constants(spec, cfgmod.as_rough(driver), times, grid, route=route,
                                              h_override=run.cfg.get("h"))
    run.lap("constants")
    run.constants = consts
    run.results.update({"y_radius": Y, "bound_settled": settled, "kappa_at_start": td.kappa(spec.t0),
                        "n_windows": math.ceil((spec.T - spec.t0) / consts.h - 1e-9)})
    print(json.dumps(_jsonable(consts.to_json()), indent=2, sort_keys=True))
    if run.args.check:
        run.check("M_finite", math.isfinite(consts.M), M=consts.M)
        run.check("h_in_range", 0.0 < consts.h <= spec.T - spec.t0 + 1e-12, h=consts.h)
        run.check("delta_positive", consts.delta > 0.0, delta=consts.delta)


# ---- rpde ---------------------------------------------------------------------

def cmd_rpde_solve(run: _Run) -> None:
    preset, driver = _setup(run)
    spec = preset.spec
    grid = cfgmod.build_grid(run.cfg)
    tol = cfgmod.tolerances(run.cfg)
    sol = solve_rpde(spec, driver, grid, h=run.cfg.get("h"), route=run.cfg.get("route", "pde"))
    run.lap("solve")
    run.constants = sol.constants
    run.results.update({"u_at_x0": sol.value_at_start(spec.x0), "M": sol.M, "windows": sol.windows,
                        "diagnostics": sol.diagnostics, "grid": {"nt": sol.times.size, "nx": sol.x.size}})
    _write_csv(run.out / "solution.csv", ["t", "x", "u"], sol.to_rows())
    if run.args.check:
        run.check("finite", np.all(np.isfinite(sol.values)))
        run.check("terminal_condition", np.array_equal(sol.values[-1], spec.g(sol.x)))
        vmax = float(np.max(np.abs(sol.transformed)))
        run.check("uniform_bound", vmax <= sol.M + 1e-6, max_abs_v=vmax, M=sol.M)
        if preset.exact is not None and _default_driver(run):
            # away from the lateral boundary, where the extrapolation condition is exact only for affine u
            half = 0.25 * (sol.x[-1] - sol.x[0])
            xs = sol.x[np.abs(sol.x - spec.x0) <= half + 1e-12]
            err = float(max(np.max(np.abs(sol.at(t, xs) - preset.exact(t, xs))) for t in sol.times))
            run.check("closed_form", err < tol["fd_tol"], error=err, tol=tol["fd_tol"], compact=[xs[0], xs[-1]])
        run.lap("checks")


def _brownian(run: _Run, spec, fine_level: int, triadic_level: int = 0) -> PiecewiseLinearPath:
    dcfg = run.cfg.get("driver", {})
    seed = run.args.seed if run.args.seed is not None else dcfg.get("seed", 0)
    bm = sample_brownian(seed, multi_grid(spec.T, fine_level, triadic_level), spec.d)
    return bm.scaled(dcfg.get("scale", 1.0))


def cmd_rpde_converge(run: _Run) -> None:
    """Wong-Zakai levels against the lift of the finest sample."""
    preset, _ = _setup(run)
    spec = preset.spec
    grid = cfgmod.build_grid(run.cfg)
    cc = run.cfg.get("convergence", {})
    levels = cc.get("levels", [2, 3, 4, 5])
    fine = cc.get("fine_level", max(levels) + 3)
    bm = _brownian(run, spec, fine)
    rp_limit = lift_smooth(bm)
    drivers = [wong_zakai_sequence(bm, k) for k in levels]
    study = convergence_study(spec, drivers, rp_limit, grid, labels=[f"dyadic-{k}" for k in levels],
                              compact=cc.get("compact"), route=cc.get("route", "transformed"), h=run.cfg.get("h"),
                              t_eval=cc.get("t_eval"), with_rp_distance=cc.get("rp_distance", True))
    run.lap("study")
    run.constants = study["limit"].constants
    rows = study["rows"]
    run.results.update({"compact": study["compact"], "monotone_successive": study["monotone_successive"],
                        "monotone_to_limit": study["monotone_to_limit"],
                        "rows": [r.__dict__ for r in rows]})
    _write_csv(run.out / "convergence.csv", ["level", "label", "sup_to_limit", "sup_to_next", "rp_distance"],
               [(levels[r.index], r.label, r.sup_to_limit,
                 "" if r.sup_to_next is None else r.sup_to_next, r.rp_distance) for r in rows])
    _write_csv(run.out / "solution.csv", ["t", "x", "u"], study["limit"].to_rows())
    if run.args.check:
        run.check("monotone_successive", study["monotone_successive"])
        rpd = [r.rp_distance for r in rows]
        if cc.get("rp_distance", True):
            run.check("drivers_converge", all(b < a for a, b in zip(rpd, rpd[1:])), rp_distance=rpd)


def cmd_converge(run: _Run) -> None:
    """Successive distances on dyadic and triadic sequences of one Brownian sample."""
    preset, _ = _setup(run)
    spec = preset.spec
    grid = cfgmod.build_grid(run.cfg)
    tol = cfgmod.tolerances(run.cfg)
    cc = run.cfg.get("convergence", {})
    levels = cc.get("levels", [3, 4, 5, 6])
    seqs = cc.get("sequences", ["dyadic", "triadic"])
    tri = max(levels) if "triadic" in seqs else 0
    bm = _brownian(run, spec, cc.get("fine_level", max(levels) + 4), tri)
    study = sequence_study(spec, bm, levels, seqs, grid, cc.get("compact"), run.cfg.get("h"))
    run.lap("study")
    run.constants = next(iter(study["solutions"].values())).constants
    run.results.update({k: v for k, v in study.items() if k != "solutions"})
    rows = []
    for kind, s in study["sequences"].items():
        for i, k in enumerate(levels[:-1]):
            rows.append((kind, k, s["segments"][i], s["successive"][i], s["at_start"][i]))
    _write_csv(run.out / "convergence.csv", ["sequence", "level", "segments", "sup_to_next", "sup_to_next_at_t0"],
               rows)
    first = next(iter(study["solutions"].values()))
    _write_csv(run.out / "solution.csv", ["t", "x", "u"], first.to_rows())
    bound = 2.0 * tol["fd_tol"]
    for kind, s in study["sequences"].items():
        run.check(f"monotone_{kind}", s["monotone"], successive=s["successive"])
    if len(seqs) > 1:
        run.check("sequence_independence", study["final_gap"] < bound, gap=study["final_gap"], bound=bound)


# ---- bsde ---------------------------------------------------------------------

def cmd_bsde_solve(run: _Run) -> None:
    preset, driver = _setup(run)
    spec = preset.spec
    grid = cfgmod.build_grid(run.cfg)
    mc = cfgmod.build_mc(run.cfg, run.args.seed)
    paths, res = solve_bsde_stitched(spec, driver, grid, mc, h=run.cfg.get("h"),
                                     route=run.cfg.get("route", "bsde"))
    run.lap("solve")
    run.constants = res["constants"]
    run.results.update({"Y0": res["Y0"], "std_error": res["std_error"], "windows": res["windows"],
                        "n_paths": mc.n_paths, "n_steps": mc.n_steps, "mc_seed": mc.seed})
    n_dump = run.cfg.get("mc", {}).get("dump_paths", 20)
    _write_csv(run.out / "solution.csv", ["path", "t", "X", "Y_transformed", "Y"], paths.to_csv_rows(n_dump))
    if run.args.check:
        worst = max(w["max_abs_Yt"] - w["M"] for w in res["windows"])
        run.check("uniform_bound", worst <= 1e-6, worst_excess=worst)
        run.check("finite", bool(np.all(np.isfinite(paths.Y[:, 0]))) and math.isfinite(res["std_error"]))
        run.lap("checks")


def cmd_bsde_fk(run: _Run) -> None:
    preset, driver = _setup(run)
    spec = preset.spec
    grid = cfgmod.build_grid(run.cfg)
    mc = cfgmod.build_mc(run.cfg, run.args.seed)
    tol = cfgmod.tolerances(run.cfg)
    rep = feynman_kac_check(spec, driver, grid, mc, fd_tol=tol["fd_tol"], n_se=tol["n_se"])
    run.lap("check")
    run.constants = rep["constants"]
    run.results.update({k: rep[k] for k in ("u_fd", "Y_mc", "std_error", "discrepancy", "bound", "h")})
    run.results["mc_windows"] = rep["mc_windows"]
    _write_csv(run.out / "solution.csv", ["t", "x", "u"], rep["fd"].to_rows())
    run.check("feynman_kac", rep["pass"], discrepancy=rep["discrepancy"], bound=rep["bound"])
    if run.args.check:
        worst = max(w["max_abs_Yt"] - w["M"] for w in rep["mc_windows"])
        run.check("uniform_bound", worst <= 1e-6, worst_excess=worst)


COMMANDS = {
    ("lift", None): cmd_lift,
    ("flow", "solve"): cmd_flow_solve,
    ("flow", "check-identities"): cmd_flow_identities,
    ("transform", "constants"): cmd_transform_constants,
    ("rpde", "solve"): cmd_rpde_solve,
    ("rpde", "converge"): cmd_rpde_converge,
    ("bsde", "solve"): cmd_bsde_solve,
    ("bsde", "check-fk"): cmd_bsde_fk,
    ("converge", None): cmd_converge,
}


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment config")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=_seed, default=None, help="overrides the config's driver and MC seeds")
    common.add_argument("--check", action="store_true", help="run the invariant suite")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="roughbsde", description="BSDEs and PDEs with rough drivers.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lift", parents=[common], help="lift a driver and report its rough path")
    sub.add_parser("converge", parents=[common], help="dyadic vs triadic Wong-Zakai study")
    for name, actions in (("flow", ("solve", "check-identities")), ("transform", ("constants",)),
                          ("rpde", ("solve", "converge")), ("bsde", ("solve", "check-fk"))):
        p = sub.add_parser(name)
        acts = p.add_subparsers(dest="action", required=True)
        for a in actions:
            acts.add_parser(a, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load(args.config)
    except (cfgmod.ConfigError, OSError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    action = getattr(args, "action", None)
    command = args.command if action is None else f"{args.command} {action}"
    run = _Run(args, cfg)
    try:
        COMMANDS[(args.command, action)](run)
    except cfgmod.ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    run.write(command)
    for name, c in run.checks.items():
        print(f"{'PASS' if c['pass'] else 'FAIL'} {name}", file=sys.stderr)
    return EXIT_OK if run.ok else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())

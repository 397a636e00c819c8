"""Experiment configuration: JSON schema, validation, and builders."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from .bsde_mc import MCConfig
from .presets import PRESETS, Preset, make_preset
from .rough_paths import (
    PiecewiseLinearPath,
    RoughPath2,
    brownian_lift_sample,
    dyadic_times,
    lift_smooth,
    multi_grid,
    pure_area_rough_path,
    pure_area_sequence,
    sample_brownian,
    uniform_sequence,
    wong_zakai_sequence,
)
from .rpde import FD_TOL, FDGrid


class ConfigError(ValueError):
    pass


_POS = {"type": "number", "exclusiveMinimum": 0}
_POSINT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "roughbsde experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["preset"],
    "properties": {
        "preset": {"enum": list(PRESETS)},
        "T": _POS,
        "x0": {"type": "number"},
        "h": _POS,
        "route": {"enum": ["pde", "bsde"]},
        "driver": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["default", "smooth", "wong-zakai", "uniform", "pure-area", "pure-area-limit",
                                  "brownian-lift"]},
                "times": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                "values": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "seed": _NONNEG_INT,
                "level": _NONNEG_INT,
                "segments": _POSINT,
                "fine_level": _POSINT,
                "triadic_level": _NONNEG_INT,
                "n": _POSINT,
                "scale": _POS,
                "knots_per_loop": {"type": "integer", "minimum": 32},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nx": {"type": "integer", "minimum": 5},
                "steps_per_unit": _POSINT,
                "x_halfwidth": _POS,
                "flow_nx": {"type": "integer", "minimum": 5},
                "flow_ny": {"type": "integer", "minimum": 5},
                "z_radius": _POS,
                "max_increment": _POS,
                "pad": {"type": "number", "minimum": 0},
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": _POSINT,
                "n_steps": _POSINT,
                "degree": _NONNEG_INT,
                "picard": _NONNEG_INT,
                "dump_paths": _NONNEG_INT,
            },
        },
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": _POS,
                "ny": {"type": "integer", "minimum": 5},
                "y_radius": _POS,
                "steps": _POSINT,
                "interp_order": {"enum": [3, 5]},
                "dump_table": {"type": "boolean"},
            },
        },
        "convergence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sequences": {"type": "array", "items": {"enum": ["dyadic", "triadic"]}, "minItems": 1},
                "levels": {"type": "array", "items": _NONNEG_INT, "minItems": 1},
                "fine_level": _POSINT,
                "route": {"enum": ["transformed", "direct"]},
                "compact": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "t_eval": {"type": "number", "minimum": 0},
                "rp_distance": {"type": "boolean"},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"fd_tol": _POS, "n_se": _POS, "identity": _POS},
        },
    },
}


def _field_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if not parts and err.validator == "additionalProperties":
        return "(top level)"
    return ".".join(parts) or "(top level)"


def validate(cfg: dict) -> dict:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"config error at {_field_path(e)}: {e.message}")
    return cfg


def load(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate(cfg)


def build_preset(cfg: dict) -> Preset:
    return make_preset(cfg["preset"], T=cfg.get("T", 1.0), x0=cfg.get("x0", 0.0))


def brownian_source(spec_d: int, T: float, seed: int, fine_level: int, triadic_level: int) -> PiecewiseLinearPath:
    return sample_brownian(seed, multi_grid(T, fine_level, triadic_level), spec_d)


def build_driver(cfg: dict, preset: Preset, seed: int | None = None):
    """Driver named by ``cfg["driver"]``: a PiecewiseLinearPath or a RoughPath2."""
    dcfg = cfg.get("driver", {"kind": "default"})
    kind = dcfg["kind"]
    spec = preset.spec
    T = spec.T
    d = spec.d
    seed = dcfg.get("seed", 0) if seed is None else seed
    scale = dcfg.get("scale", 1.0)
    if kind == "default":
        drv = preset.driver
        return drv.scaled(scale) if isinstance(drv, PiecewiseLinearPath) else drv
    if kind == "smooth":
        if "times" not in dcfg or "values" not in dcfg:
            raise ConfigError("config error at driver: smooth drivers need times and values")
        return PiecewiseLinearPath(np.asarray(dcfg["times"], float), np.asarray(dcfg["values"], float)).scaled(scale)
    if kind in ("wong-zakai", "uniform"):
        fine = dcfg.get("fine_level", 10)
        tri = dcfg.get("triadic_level", 0)
        bm = brownian_source(d, T, seed, fine, tri).scaled(scale)
        if kind == "wong-zakai":
            return wong_zakai_sequence(bm, dcfg.get("level", 4))
        return uniform_sequence(bm, dcfg.get("segments", 27))
    if kind == "pure-area":
        if d != 2:
            raise ConfigError("config error at driver.kind: pure-area drivers need d = 2")
        return pure_area_sequence(dcfg.get("n", 4), scale, T, dcfg.get("knots_per_loop", 32))
    if kind == "pure-area-limit":
        if d != 2:
            raise ConfigError("config error at driver.kind: pure-area drivers need d = 2")
        return pure_area_rough_path(np.pi * scale, np.linspace(0.0, T, 2))
    if kind == "brownian-lift":
        rp = brownian_lift_sample(seed, dyadic_times(T, dcfg.get("fine_level", 10)), d)
        if scale != 1.0:
            rp = lift_smooth(PiecewiseLinearPath(rp.times, rp.path_values() * scale))
        return rp
    raise ConfigError(f"config error at driver.kind: unknown kind {kind!r}")


def build_grid(cfg: dict) -> FDGrid:
    return FDGrid(**cfg.get("grid", {}))


def build_mc(cfg: dict, seed: int | None = None) -> MCConfig:
    m = {k: v for k, v in cfg.get("mc", {}).items() if k != "dump_paths"}
    out = MCConfig(**m)
    if seed is not None:
        out.seed = seed
    return out


def tolerances(cfg: dict) -> dict:
    tol = {"fd_tol": FD_TOL, "n_se": 3.0, "identity": 1e-4}
    tol.update(cfg.get("tolerances", {}))
    return tol


def as_rough(driver) -> RoughPath2:
    return lift_smooth(driver) if isinstance(driver, PiecewiseLinearPath) else driver

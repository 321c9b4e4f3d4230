"""Run configuration: JSON in, validated dataclasses out, and back again.

Field names carry explicit units (speed_mps, radius_m) so a config file
reads unambiguously.  Every emitted config re-reads to an identical run;
validation happens against a JSON schema before any computation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import jsonschema

from .scene import (TRAJECTORY_KINDS, MultipathRay, NoiseProfile, Scenario,
                    TagLayout)

MODES = ("waveform", "phases", "features")


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


_NOISE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "snr_db": {"type": ["number", "null"]},
        "phase_sigma_rad": {"type": "number", "minimum": 0},
        "bin_sigma_hz": {"type": "number", "minimum": 0},
        "accel_sigma_mps2": {"type": "number", "minimum": 0},
        "gyro_sigma_rps": {"type": "number", "minimum": 0},
        "baro_sigma_m": {"type": "number", "minimum": 0},
        "cfo_hz": {"type": "array", "items": {"type": "number"},
                   "minItems": 4, "maxItems": 4},
        "sigma_d_m": {"type": "number", "minimum": 0},
        "sigma_a_rad": {"type": "number", "minimum": 0},
        "sigma_psi_rad": {"type": "number", "minimum": 0},
        "multipath": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["excess_path_m"],
                "properties": {
                    "excess_path_m": {"type": "number",
                                      "exclusiveMinimum": 0},
                    "gain": {"type": "array", "items": {"type": "number"},
                             "minItems": 2, "maxItems": 2},
                    "tags": {"type": ["array", "null"],
                             "items": {"type": "integer",
                                       "minimum": 0, "maximum": 3}},
                },
            },
        },
    },
}

_SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(TRAJECTORY_KINDS)},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "speed_mps": {"type": "number", "minimum": 0},
        "rho_true_m": {"type": "array", "items": {"type": "number"},
                       "minItems": 3, "maxItems": 3},
        "seed": {"type": "integer", "minimum": 0},
        "noise": _NOISE_SCHEMA,
        "height_m": {"type": "number"},
        "start_xy_m": {"type": "array", "items": {"type": "number"},
                       "minItems": 2, "maxItems": 2},
        "center_xy_m": {"type": "array", "items": {"type": "number"},
                        "minItems": 2, "maxItems": 2},
        "radius_m": {"type": "number", "exclusiveMinimum": 0},
        "side_m": {"type": "number", "exclusiveMinimum": 0},
        "heading0_rad": {"type": "number"},
        "accel_mps2": {"type": "number", "exclusiveMinimum": 0},
        "turn_rate_rps": {"type": "number", "exclusiveMinimum": 0},
        "yaw_rate_floor_rps": {"type": "number", "minimum": 0},
        "yaw_rate_peak_rps": {"type": "number", "minimum": 0},
        "yaw_ramp_rate": {"type": "number", "minimum": 0},
        "imu_rate_hz": {"type": "number", "exclusiveMinimum": 0},
        "baro_rate_hz": {"type": "number", "exclusiveMinimum": 0},
        "gear_diameter_m": {"type": "number", "exclusiveMinimum": 0},
        "tag_shifts_hz": {"type": "array", "items": {"type": "number"},
                          "minItems": 4, "maxItems": 4},
        "dropout_epochs": {"type": "array",
                           "items": {"type": "integer", "minimum": 0}},
    },
}

RUN_CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": _SCENARIO_SCHEMA,
        "mode": {"enum": list(MODES)},
        "window_n": {"type": "integer", "minimum": 3},
        "solver_iters": {"type": "integer", "minimum": 1},
        "solver_tol": {"type": "number", "exclusiveMinimum": 0},
        "fix_yaw": {"type": ["boolean", "null"]},
        "cal_sweeps": {"type": "integer", "minimum": 1},
        "max_gap_epochs": {"type": "integer", "minimum": 1},
        "out_dir": {"type": "string", "minLength": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
}


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    mode: str = "features"
    window_n: int = 30
    solver_iters: int = 20
    solver_tol: float = 1e-6
    fix_yaw: bool | None = None
    cal_sweeps: int = 20
    max_gap_epochs: int = 25
    out_dir: str = "out"


def _noise_from_dict(d: dict) -> NoiseProfile:
    rays = tuple(
        MultipathRay(
            excess_path_m=m["excess_path_m"],
            gain=complex(*(m.get("gain", [0.5, 0.0]))),
            tags=None if m.get("tags") is None else tuple(m["tags"]))
        for m in d.get("multipath", ()))
    return NoiseProfile(
        snr_db=d.get("snr_db"),
        phase_sigma_rad=d.get("phase_sigma_rad", 0.0),
        bin_sigma_hz=d.get("bin_sigma_hz", 0.0),
        accel_sigma=d.get("accel_sigma_mps2", 0.0),
        gyro_sigma=d.get("gyro_sigma_rps", 0.0),
        baro_sigma_m=d.get("baro_sigma_m", 0.0),
        cfo_hz=tuple(d.get("cfo_hz", (0.0, 0.0, 0.0, 0.0))),
        sigma_d_m=d.get("sigma_d_m", 0.0),
        sigma_a_rad=d.get("sigma_a_rad", 0.0),
        sigma_psi_rad=d.get("sigma_psi_rad", 0.0),
        multipath=rays,
    )


def _noise_to_dict(n: NoiseProfile) -> dict:
    return {
        "snr_db": n.snr_db,
        "phase_sigma_rad": n.phase_sigma_rad,
        "bin_sigma_hz": n.bin_sigma_hz,
        "accel_sigma_mps2": n.accel_sigma,
        "gyro_sigma_rps": n.gyro_sigma,
        "baro_sigma_m": n.baro_sigma_m,
        "cfo_hz": list(n.cfo_hz),
        "sigma_d_m": n.sigma_d_m,
        "sigma_a_rad": n.sigma_a_rad,
        "sigma_psi_rad": n.sigma_psi_rad,
        "multipath": [
            {"excess_path_m": r.excess_path_m,
             "gain": [r.gain.real, r.gain.imag],
             "tags": None if r.tags is None else list(r.tags)}
            for r in n.multipath],
    }


def scenario_from_dict(d: dict) -> Scenario:
    tags = TagLayout(
        diameter=d.get("gear_diameter_m", TagLayout().diameter),
        shifts_hz=tuple(d.get("tag_shifts_hz", TagLayout().shifts_hz)))
    base = Scenario()
    return Scenario(
        kind=d["kind"],
        duration_s=d.get("duration_s", base.duration_s),
        speed_mps=d.get("speed_mps", base.speed_mps),
        rho_true=tuple(d.get("rho_true_m", base.rho_true)),
        seed=d.get("seed", base.seed),
        noise=_noise_from_dict(d.get("noise", {})),
        height_m=d.get("height_m", base.height_m),
        start_xy=tuple(d.get("start_xy_m", base.start_xy)),
        center_xy=tuple(d.get("center_xy_m", base.center_xy)),
        radius_m=d.get("radius_m", base.radius_m),
        side_m=d.get("side_m", base.side_m),
        heading0_rad=d.get("heading0_rad", base.heading0_rad),
        accel_mps2=d.get("accel_mps2", base.accel_mps2),
        turn_rate_rps=d.get("turn_rate_rps", base.turn_rate_rps),
        yaw_rate_floor_rps=d.get("yaw_rate_floor_rps",
                                 base.yaw_rate_floor_rps),
        yaw_rate_peak_rps=d.get("yaw_rate_peak_rps", base.yaw_rate_peak_rps),
        yaw_ramp_rate=d.get("yaw_ramp_rate", base.yaw_ramp_rate),
        imu_rate_hz=d.get("imu_rate_hz", base.imu_rate_hz),
        baro_rate_hz=d.get("baro_rate_hz", base.baro_rate_hz),
        tags=tags,
        dropout_epochs=tuple(d.get("dropout_epochs", ())),
    )


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "kind": sc.kind,
        "duration_s": sc.duration_s,
        "speed_mps": sc.speed_mps,
        "rho_true_m": list(sc.rho_true),
        "seed": sc.seed,
        "noise": _noise_to_dict(sc.noise),
        "height_m": sc.height_m,
        "start_xy_m": list(sc.start_xy),
        "center_xy_m": list(sc.center_xy),
        "radius_m": sc.radius_m,
        "side_m": sc.side_m,
        "heading0_rad": sc.heading0_rad,
        "accel_mps2": sc.accel_mps2,
        "turn_rate_rps": sc.turn_rate_rps,
        "yaw_rate_floor_rps": sc.yaw_rate_floor_rps,
        "yaw_rate_peak_rps": sc.yaw_rate_peak_rps,
        "yaw_ramp_rate": sc.yaw_ramp_rate,
        "imu_rate_hz": sc.imu_rate_hz,
        "baro_rate_hz": sc.baro_rate_hz,
        "gear_diameter_m": sc.tags.diameter,
        "tag_shifts_hz": list(sc.tags.shifts_hz),
        "dropout_epochs": list(sc.dropout_epochs),
    }


def validate_config_dict(doc: dict) -> None:
    try:
        jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {e.message}") from e


def config_from_dict(doc: dict) -> RunConfig:
    validate_config_dict(doc)
    sc_doc = dict(doc["scenario"])
    if "seed" in doc:
        sc_doc["seed"] = doc["seed"]
    try:
        scenario = scenario_from_dict(sc_doc)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return RunConfig(
        scenario=scenario,
        mode=doc.get("mode", "features"),
        window_n=doc.get("window_n", 30),
        solver_iters=doc.get("solver_iters", 20),
        solver_tol=doc.get("solver_tol", 1e-6),
        fix_yaw=doc.get("fix_yaw"),
        cal_sweeps=doc.get("cal_sweeps", 20),
        max_gap_epochs=doc.get("max_gap_epochs", 25),
        out_dir=doc.get("out_dir", "out"),
    )


def config_to_dict(cfg: RunConfig) -> dict:
    doc = {
        "scenario": scenario_to_dict(cfg.scenario),
        "mode": cfg.mode,
        "window_n": cfg.window_n,
        "solver_iters": cfg.solver_iters,
        "solver_tol": cfg.solver_tol,
        "cal_sweeps": cfg.cal_sweeps,
        "max_gap_epochs": cfg.max_gap_epochs,
        "out_dir": cfg.out_dir,
        "seed": cfg.scenario.seed,
    }
    if cfg.fix_yaw is not None:
        doc["fix_yaw"] = cfg.fix_yaw
    return doc


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(doc)

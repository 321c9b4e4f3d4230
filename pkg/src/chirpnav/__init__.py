"""Backscatter-chirp localization for micro aerial vehicles.

A charger-side radio sweeps long chirps across thirteen narrow channels;
four frequency-shifting tags on the landing gear answer; the package
turns the returns into range, bearing, and yaw features and fuses them
with IMU preintegration in a sliding-window solver.

Layers, bottom up: chirp (waveforms and decoding), scene (trajectories,
tags, IMU), channel (backscatter simulation), phase (per-chirp bin
bookkeeping, CFO calibration, channel stitching), sensing (range / angle
/ rotation estimators), fusion (preintegration + windowed MAP), pipeline
(closed loop over a scenario), metrics / config / runio / cli (artifact
plumbing).
"""

from .channel import ArrayGeometry, propagate
from .chirp import ChirpConfig, dechirp, fractional_peak, make_shifted_upchirp
from .config import ConfigError, RunConfig, load_config
from .fusion import (NavState, Preintegrated, SolveReport, Window,
                     dead_reckon, initialize, preintegrate, slide, solve)
from .metrics import MetricsReport, evaluate_run
from .phase import (BinReport, CfoCalibration, NoSignalError, PhaseSet,
                    calibrate_cfo, measure_frame, solve_channel_phases)
from .pipeline import RunResult, SignalLostError, run_scenario
from .scene import (ImuBatch, MultipathRay, NoiseProfile, RigidState,
                    Scenario, TagLayout, sample_state, synth_imu)
from .sensing import (PoseFeature, estimate_angle, estimate_range,
                      estimate_rotation)

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry", "BinReport", "CfoCalibration", "ChirpConfig",
    "ConfigError", "ImuBatch", "MetricsReport", "MultipathRay", "NavState",
    "NoSignalError", "NoiseProfile", "PhaseSet", "PoseFeature",
    "Preintegrated", "RigidState", "RunConfig", "RunResult", "Scenario",
    "SignalLostError", "SolveReport", "TagLayout", "Window", "calibrate_cfo",
    "dead_reckon", "dechirp", "estimate_angle", "estimate_range",
    "estimate_rotation", "evaluate_run", "fractional_peak", "initialize",
    "load_config", "make_shifted_upchirp", "measure_frame", "preintegrate",
    "propagate", "run_scenario", "sample_state", "slide", "solve",
    "solve_channel_phases", "synth_imu",
]

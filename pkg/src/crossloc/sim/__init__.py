"""Synthetic worlds, a perception surrogate and session runners."""

from .scenario import Scenario, load_scenario, save_scenario
from .presets import PRESETS, generate
from .sensing import Frame, Observation, SimFrontEnd, inject_odometry_noise, make_frames

__all__ = [
    "Scenario",
    "load_scenario",
    "save_scenario",
    "PRESETS",
    "generate",
    "Frame",
    "Observation",
    "SimFrontEnd",
    "inject_odometry_noise",
    "make_frames",
]

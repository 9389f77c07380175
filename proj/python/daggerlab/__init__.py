"""Python bindings for the daggerlab experiment library."""

from ._daggerlab import (
    ConfigError,
    Env,
    LivenessError,
    calibrate_threshold,
    config_text,
    expert_minutes,
    gate,
    lazy_thresholds,
    presets,
    run,
)

__all__ = [
    "ConfigError",
    "Env",
    "LivenessError",
    "calibrate_threshold",
    "config_text",
    "expert_minutes",
    "gate",
    "lazy_thresholds",
    "presets",
    "run",
]

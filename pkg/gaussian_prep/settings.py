import json
import os
from typing import Optional

from gaussian_prep.exceptions import ConfigParse
from gaussian_prep.types import Settings

DEFAULT_SETTINGS: Settings = {
    "log_type": "console",
    "log_level": "INFO",
    "log_file": "logs/gaussian_prep.log",
    "log_max_size": 5 * 1024 * 1024,
    "log_backup_count": 3,
    "tol_axis": 1e-8,
    "tol_rank": 1e-8,
    "cond_max": 1e10,
    "strict": False,
    "refine_iterations": 3,
    "ode_rtol": 1e-10,
    "ode_atol": 1e-12,
    "integrator": "adaptive",
    "block_size": 1000,
    "workers": 1,
    "memory_threshold_mb": 512,
    "record_trajectories": 8,
}


def load_settings(config_path: Optional[str] = None) -> Settings:
    """Load settings from a JSON file on top of the defaults"""
    settings: Settings = dict(DEFAULT_SETTINGS)  # type: ignore[assignment]
    if config_path is None or not os.path.exists(config_path):
        return settings

    try:
        with open(config_path, 'r') as f:
            loaded = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigParse(f"Invalid settings file {config_path}: {e}") from e

    if not isinstance(loaded, dict):
        raise ConfigParse(f"Settings file {config_path} must contain a JSON object")

    settings.update(loaded)  # type: ignore[typeddict-item]
    return settings

import os
import sys
import json

import yaml

PROJECT_NAME = "Private_EMD_Heatmaps"
VERSION = "0.1.0"


def _env_flag(name: str, default: bool = False) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return str(value).strip().lower() in {"1", "true", "yes", "on"}


def _env_int(name: str, default: int) -> int:
    try:
        value = int(os.getenv(name, str(default)))
    except Exception:
        return default
    return value if value > 0 else default


def _env_float(name: str, default: float) -> float:
    try:
        value = float(os.getenv(name, str(default)))
    except Exception:
        return default
    return value if value > 0 else default


DEBUG = _env_flag("EMD_HEATMAPS_DEBUG", default=False)
WORKERS = _env_int("EMD_HEATMAPS_WORKERS", 1)
ORACLE_MAX_SUPPORT = _env_int("EMD_HEATMAPS_ORACLE_MAX_SUPPORT", 2000)
NORM_MAX_SUPPORT = _env_int("EMD_HEATMAPS_NORM_MAX_SUPPORT", 500)
GRID_FLOW_MAX_CELLS = _env_int("EMD_HEATMAPS_GRID_FLOW_MAX_CELLS", 131072)
FLOW_QUANTUM = _env_float("EMD_HEATMAPS_FLOW_QUANTUM", 1e-9)
LP_MAX_ITER = _env_int("EMD_HEATMAPS_LP_MAX_ITER", 100000)


def log_debug(message: str):
    if DEBUG:
        print(f"[DEBUG] {message}")


def log_info(message: str):
    print(f"[{PROJECT_NAME}] {message}")


def log_warning(message: str):
    print(f"[WARNING] {message}", file=sys.stderr)


def load_config_file(path: str) -> dict:
    """
    Load an experiment configuration from a YAML or JSON file.
    Returns an empty dict for empty files; anything that is not a mapping is rejected.
    """
    if not path:
        return {}
    if not os.path.isfile(path):
        raise ValueError(f"Config file '{path}' does not exist")
    with open(path, "r", encoding="utf-8") as f:
        if path.lower().endswith(".json"):
            data = json.load(f)
        else:
            data = yaml.safe_load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"Config file '{path}' must contain a mapping at the top level")
    return data

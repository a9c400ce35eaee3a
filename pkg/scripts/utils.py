"""
Core utilities for the deformable alignment lab.

This module provides:
- Shared logging setup (every module imports ``logger`` from here)
- Configuration loading from config.json with built-in defaults
- Result saving (JSON and CSV reports)
- Project path helpers
"""

import json
import copy
import logging
import argparse
from pathlib import Path
from typing import Dict, List, Any, Optional, Union

import pandas as pd

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# CSV reports cap the significand so golden files stay diffable
CSV_FLOAT_FORMAT = "%.10g"


def set_log_level(level: Union[str, int]) -> None:
    """
    Set the level of the root logger.

    Args:
        level: Level name (DEBUG, INFO, ...) or numeric level
    """
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    logging.getLogger().setLevel(level)


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_sections(path: Path) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    return data.get("defaults", data)


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load lab configuration.

    The config.json shipped at the project root holds the built-in
    defaults. A file named by ``config_path`` is merged over them, so it
    only needs the keys it changes; a missing or unreadable file falls back
    to the shipped values.

    Args:
        config_path: Path to an override config file

    Returns:
        Dict of configuration sections
    """
    shipped = get_project_root() / "config.json"
    defaults = _read_sections(shipped)
    if not config_path:
        return defaults

    path = Path(config_path)
    if path.resolve() == shipped.resolve():
        return defaults
    if not path.exists():
        logger.warning(f"Config file not found: {path}, using built-in defaults")
        return defaults

    try:
        overrides = _read_sections(path)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Failed to load config from {path}: {str(e)}")
        return defaults

    return _merge(defaults, overrides)


def save_results(
    data: Any,
    output_path: Union[str, Path],
    format: str = "json"
) -> Path:
    """
    Save results to file.

    Args:
        data: Data to save (list of row dicts or a DataFrame for CSV)
        output_path: Output file path
        format: Output format (json, csv)

    Returns:
        Path of the written file

    Raises:
        ValueError: Unsupported format
        OSError: The file could not be written
    """
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    if format == "json":
        with open(output_path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False)
    elif format == "csv":
        frame = data if isinstance(data, pd.DataFrame) else pd.DataFrame(list(data))
        frame.to_csv(output_path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    else:
        raise ValueError(f"Unsupported format: {format}")

    logger.info(f"Results saved to {output_path}")
    return output_path


def parse_int_list(text: str) -> List[int]:
    """Parse a comma separated list of integers ("1,5,9")."""
    return [int(part) for part in text.split(",") if part.strip()]


def parse_occlusion(text: str) -> List[int]:
    """Parse "top,left,height,width"; "none" gives an empty list (no occluder)."""
    if text.strip().lower() == "none":
        return []
    try:
        values = parse_int_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid occlusion {text!r}")
    if len(values) != 4:
        raise argparse.ArgumentTypeError("occlusion must be top,left,height,width or none")
    return values


def get_project_root() -> Path:
    """Get project root directory."""
    return Path(__file__).parent.parent


def get_dataset_path(dataset_name: str) -> Path:
    """Get path to dataset directory."""
    return get_project_root() / "datasets" / dataset_name

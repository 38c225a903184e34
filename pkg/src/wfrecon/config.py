"""Default parameters and config-file loading.

Every tunable default lives here so that reports can echo them verbatim.
Config files are YAML (JSON is accepted too, being a YAML subset).
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any

import yaml

DEFAULTS: dict[str, Any] = {
    "l_max": 6,
    "max_children": 5,
    "beta": 0.5,
    "kappa": math.sqrt(2.0),
    "budget": 20,
    "rollout_minibatch": 1,
    "seed": 0,
    "terminator": False,
    "terminal_on_suffix_failure": False,
    "metric": {"n_max": 4, "ngram_weight": 0.5, "jaccard_weight": 0.5, "smoothing": "add-one"},
    "http": {"retries": 2, "timeout": 60.0, "temperature": 0.0},
    "bench_seeds": [0, 1, 2, 3, 4],
}

DEFAULT_PRIMITIVE_COST = 1


class ConfigError(ValueError):
    """A config file parsed but holds invalid or missing values."""


def read_config(path: str | Path) -> Any:
    """Parse a YAML/JSON file. OSError propagates for unreadable paths."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from exc
    return {} if data is None else data

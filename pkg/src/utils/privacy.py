"""Privacy scrubbing for logs and events.

Raw client data (rollouts, interaction samples) must never leave the client
process boundary, not even through telemetry. Anything logged under a raw-data
key is replaced by a size summary.
"""

from typing import Any

import numpy as np

_RAW_DATA_KEYS = {
    "dataset",
    "datasets",
    "samples",
    "sample",
    "rollouts",
    "rollout",
    "transitions",
    "states",
    "controls",
    "targets",
    "history",
    "batch",
}


def _summarise(value: Any) -> str:
    if isinstance(value, np.ndarray):
        return f"[REDACTED:array{tuple(value.shape)}]"
    try:
        size = len(value)
    except TypeError:
        return "[REDACTED]"
    return f"[REDACTED:{size} records]"


def is_raw_data_key(key: str) -> bool:
    return str(key).lower() in _RAW_DATA_KEYS


def scrub_value(key: str, value: Any) -> Any:
    """Return a privacy-safe replacement for ``value`` logged under ``key``."""
    if value is None:
        return None
    if is_raw_data_key(key):
        return _summarise(value)
    if isinstance(value, np.ndarray) and value.size > 64:
        # Large anonymous arrays are almost always data, not parameters
        return _summarise(value)
    return value


def scrub_dict(data: dict[str, Any]) -> dict[str, Any]:
    """Recursively scrub a dictionary before logging or emitting it."""
    if not isinstance(data, dict):
        return {}
    scrubbed: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict) and not is_raw_data_key(key):
            scrubbed[key] = scrub_dict(value)
        else:
            scrubbed[key] = scrub_value(key, value)
    return scrubbed

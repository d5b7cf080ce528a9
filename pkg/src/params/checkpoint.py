"""JSON checkpoints for parameter vectors and optimizer state.

Floats are written with Python's shortest round-trip ``repr`` (what ``json``
uses), so a save/load cycle reproduces every value bit-exactly.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.params.store import AdamState, ParamLayout, ParamVector
from src.utils.errors import ContractViolation

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


def checkpoint_document(
    params: ParamVector,
    adam: Optional[AdamState] = None,
    architecture: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    document: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "layout": [
            {
                "name": group.name,
                "start": group.start,
                "length": group.length,
                "shape": list(group.tensor_shape),
            }
            for group in params.layout.groups
        ],
        "values": [float(value) for value in params.values],
    }
    if adam is not None:
        document["adam"] = {
            "m": [float(value) for value in adam.m],
            "v": [float(value) for value in adam.v],
            "step": adam.step,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
        }
    if architecture is not None:
        document["architecture"] = dict(architecture)
    return document


def parse_checkpoint(
    document: Dict[str, Any]
) -> Tuple[ParamVector, Optional[AdamState], Optional[Dict[str, Any]]]:
    if document.get("format_version") != FORMAT_VERSION:
        raise ContractViolation(
            f"Unsupported checkpoint format_version {document.get('format_version')!r}."
        )
    try:
        layout = ParamLayout.model_validate(
            {
                "groups": [
                    {**group, "shape": tuple(group["shape"])} for group in document["layout"]
                ]
            }
        )
        params = ParamVector(layout, np.array(document["values"], dtype=np.float64))
    except (KeyError, ValueError) as exc:
        raise ContractViolation(f"Malformed checkpoint: {exc}") from exc

    adam = None
    if "adam" in document:
        raw = document["adam"]
        adam = AdamState(
            np.array(raw["m"], dtype=np.float64),
            np.array(raw["v"], dtype=np.float64),
            int(raw["step"]),
            float(raw["beta1"]),
            float(raw["beta2"]),
            float(raw["eps"]),
        )
        if adam.m.shape[0] != len(params) or adam.v.shape[0] != len(params):
            raise ContractViolation("Optimizer moments do not match the parameter length.")
    return params, adam, document.get("architecture")


def save_checkpoint(
    path: Path | str,
    params: ParamVector,
    adam: Optional[AdamState] = None,
    architecture: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(checkpoint_document(params, adam, architecture), handle)
    log.info("Saved checkpoint", extra={"path": str(path), "size": len(params)})
    return path


def load_checkpoint(
    path: Path | str,
) -> Tuple[ParamVector, Optional[AdamState], Optional[Dict[str, Any]]]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        document = json.load(handle)
    return parse_checkpoint(document)

"""The cloud aggregator.

``CloudServer.receive`` is the only way into the server and it accepts
``ParamUpload`` payloads only: client id, round, layout digest and parameter
values. Extra fields are rejected, so raw samples cannot ride along.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.params.store import (
    LrVector,
    ParamVector,
    SigmaVector,
    lrs_from_sigma,
    mean_params,
    sum_sq_dev,
)
from src.utils.errors import ContractViolation

log = logging.getLogger(__name__)


class ParamUpload(BaseModel):
    client_id: int = Field(..., ge=0)
    round_index: int = Field(..., ge=0)
    layout_digest: str = Field(..., min_length=1)
    values: List[float]

    model_config = ConfigDict(extra="forbid", frozen=True)

    @classmethod
    def from_params(cls, client_id: int, round_index: int, params: ParamVector) -> "ParamUpload":
        return cls(
            client_id=client_id,
            round_index=round_index,
            layout_digest=params.layout.digest(),
            values=params.values.tolist(),
        )


@dataclass(frozen=True)
class ServerState:
    theta_global: ParamVector
    sigma: SigmaVector
    lrs: LrVector
    base_lr: float
    round_index: int = 0


class CloudServer:
    def __init__(self, theta_global: ParamVector, base_lr: float):
        layout = theta_global.layout
        self.state = ServerState(
            theta_global=theta_global,
            sigma=SigmaVector.ones(layout.size),
            lrs=LrVector.uniform(layout, base_lr),
            base_lr=base_lr,
            round_index=0,
        )
        self._inbox: Dict[int, ParamVector] = {}
        # Field names of every accepted payload, kept for audits of the privacy boundary
        self.received_fields: List[set[str]] = []

    def broadcast(self) -> ParamVector:
        return self.state.theta_global

    def receive(self, payload: ParamUpload | Mapping[str, Any]) -> None:
        if not isinstance(payload, ParamUpload):
            try:
                payload = ParamUpload.model_validate(dict(payload))
            except ValidationError as exc:
                raise ContractViolation(f"Rejected upload: {exc}") from exc
        layout = self.state.theta_global.layout
        if payload.layout_digest != layout.digest():
            raise ContractViolation("Upload layout does not match the global model.")
        if payload.round_index != self.state.round_index:
            raise ContractViolation(
                f"Upload for round {payload.round_index}, server is at {self.state.round_index}."
            )
        if payload.client_id in self._inbox:
            raise ContractViolation(f"Duplicate upload from client {payload.client_id}.")
        self._inbox[payload.client_id] = ParamVector(layout, np.array(payload.values))
        self.received_fields.append(set(payload.model_dump().keys()))

    def aggregate(self) -> ServerState:
        """FedAvg over the inbox, then update sigma and the rate vector."""
        if not self._inbox:
            raise ContractViolation("No uploads to aggregate.")
        # Client-id order keeps the reduction bit-deterministic
        contributed = [self._inbox[client_id] for client_id in sorted(self._inbox)]
        theta_global = mean_params(contributed)
        sigma, lrs = self.state.sigma, self.state.lrs
        if len(contributed) >= 2:
            sigma = sum_sq_dev(contributed)
            lrs = lrs_from_sigma(sigma, self.state.base_lr, theta_global)
        self.state = ServerState(
            theta_global=theta_global,
            sigma=sigma,
            lrs=lrs,
            base_lr=self.state.base_lr,
            round_index=self.state.round_index + 1,
        )
        self._inbox = {}
        log.debug(
            "Aggregated round",
            extra={"round": self.state.round_index, "clients": len(contributed)},
        )
        return self.state

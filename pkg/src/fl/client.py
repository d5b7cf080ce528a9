"""Client-side training passes.

A client owns its local train/test data. The two passes of a round both start
from the broadcast global parameters with a fresh optimizer state:
personalization (per-group rates) produces the client's deliverable model,
contribution (uniform rate L) produces what is uploaded.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.config.experiment import FlConfig
from src.fl.task import FederatedTask
from src.params.store import AdamState, LrVector, ParamVector, adam_step
from src.utils.errors import ContractViolation, NumericError
from src.utils.seeding import derive_rng

log = logging.getLogger(__name__)


class ClientState:
    """One simulated robot: id, private data, current and personalized models."""

    def __init__(self, client_id: int, train_data: Any, test_data: Any):
        self.client_id = client_id
        self._train = train_data
        self._test = test_data
        self.theta: Optional[ParamVector] = None
        self.personalized: Optional[ParamVector] = None
        self.optimizer: Optional[AdamState] = None

    @property
    def train_data(self) -> Any:
        return self._train

    @property
    def test_data(self) -> Any:
        return self._test

    def __repr__(self) -> str:
        # Never include the datasets themselves
        return f"ClientState(client_id={self.client_id})"


def train_pass(
    task: FederatedTask,
    params: ParamVector,
    dataset: Any,
    rates: LrVector,
    epochs: int,
    fl: FlConfig,
    rng: np.random.Generator,
    context: Optional[Dict[str, Any]] = None,
) -> Tuple[ParamVector, AdamState, float]:
    """Train ``epochs`` epochs of minibatch Adam from a fresh optimizer state."""
    if epochs < 1:
        raise ContractViolation("A training pass needs at least one epoch.")
    context = dict(context or {})
    state = AdamState.fresh(len(params), fl.beta1, fl.beta2, fl.eps)
    epoch_loss = float("nan")
    for epoch in range(epochs):
        total, batches = 0.0, 0
        for batch in task.iter_batches(dataset, fl.batch_size, rng):
            loss, grad = task.loss_and_grad(params, batch, rng)
            if not np.isfinite(loss):
                raise NumericError(
                    "Non-finite training loss.", {**context, "epoch": epoch}
                )
            try:
                params, state = adam_step(params, grad, state, rates)
            except NumericError as exc:
                raise NumericError(str(exc), {**context, "epoch": epoch}) from exc
            total += loss
            batches += 1
        epoch_loss = total / max(batches, 1)
    return params, state, epoch_loss


def _pass_rng(master_seed: int, client_id: Any, round_index: int, name: str):
    return derive_rng(master_seed, "client", client_id, round_index, name)


def personalize(
    client: ClientState,
    theta_global: ParamVector,
    lrs: LrVector,
    epochs: int,
    task: FederatedTask,
    fl: FlConfig,
    master_seed: int,
    round_index: int,
) -> ParamVector:
    """Reset to the global model, then train with per-group rates into θ̂_k."""
    if epochs < 1:
        raise ContractViolation("personalize needs epochs >= 1.")
    rng = _pass_rng(master_seed, client.client_id, round_index, "personalize")
    params, state, _ = train_pass(
        task,
        theta_global,
        client.train_data,
        lrs,
        epochs,
        fl,
        rng,
        {"client": client.client_id, "round": round_index, "pass": "personalize"},
    )
    client.personalized = params
    client.optimizer = state
    return params


def contribute(
    client: ClientState,
    theta_global: ParamVector,
    L: float,
    epochs: int,
    task: FederatedTask,
    fl: FlConfig,
    master_seed: int,
    round_index: int,
) -> ParamVector:
    """Reset to the global model, then train with uniform rate L into θ_k."""
    if epochs < 1:
        raise ContractViolation("contribute needs epochs >= 1.")
    rng = _pass_rng(master_seed, client.client_id, round_index, "contribute")
    params, state, _ = train_pass(
        task,
        theta_global,
        client.train_data,
        LrVector.uniform(theta_global.layout, L),
        epochs,
        fl,
        rng,
        {"client": client.client_id, "round": round_index, "pass": "contribute"},
    )
    client.theta = params
    client.optimizer = state
    return params

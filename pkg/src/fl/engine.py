"""Round and scheme orchestration.

One round of the federated schemes:

1. the server broadcasts θ_global;
2. each client personalizes (SPFL/APFL) and contributes, concurrently;
3. uploads are delivered to the server in client-id order;
4. the server averages, updates σ and the rate vector.

Local and Cloud share the same per-round schedule, without a server.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.config.experiment import FlConfig
from src.config.settings import get_settings
from src.fl.client import ClientState, contribute, personalize, train_pass
from src.fl.schemes import TrainingScheme
from src.fl.server import CloudServer, ParamUpload
from src.fl.task import FederatedTask
from src.params.store import LrVector, ParamVector
from src.utils.errors import ConfigurationError, NumericError
from src.utils.events import emit
from src.utils.seeding import derive_rng, derive_seed

log = logging.getLogger(__name__)

T = TypeVar("T")


class RoundReport(BaseModel):
    scheme: str
    round_index: int = Field(..., ge=0)
    client_ids: List[int]
    train_loss: List[float]
    test_loss: List[float]
    sigma: Dict[str, float] = Field(
        default_factory=dict, description="Per-group mean of the server's sigma vector."
    )
    lrs: Dict[str, float] = Field(default_factory=dict)
    max_rel_change: Optional[float] = None

    model_config = ConfigDict(frozen=True)

    @field_validator("train_loss", "test_loss")
    @classmethod
    def _finite(cls, values: List[float]) -> List[float]:
        if not all(math.isfinite(value) for value in values):
            raise ValueError("Round losses must be finite.")
        return values


class SchemeResult(BaseModel):
    scheme: str
    personalized: Dict[int, ParamVector]
    history: List[RoundReport]
    converged: bool
    rounds_run: int

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


def _map_ordered(fn: Callable[[ClientState], T], clients: Sequence[ClientState], workers: int) -> List[T]:
    if workers <= 1 or len(clients) <= 1:
        return [fn(client) for client in clients]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        # map() yields in submission order, so results stay in client order
        return list(executor.map(fn, clients))


def _resolve_workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = get_settings().engine.FEDFLEET_WORKERS
    return max(1, int(workers))


def _check_clients(clients: Sequence[ClientState], scheme: TrainingScheme) -> None:
    if not clients:
        raise ConfigurationError("At least one client is required.")
    ids = [client.client_id for client in clients]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("Client ids must be unique.")
    if scheme is TrainingScheme.APFL and len(clients) < 2:
        raise ConfigurationError("APFL needs at least two clients to estimate variance.")


def _personalization_rates(
    server: CloudServer, scheme: TrainingScheme, fl: FlConfig
) -> LrVector:
    layout = server.state.theta_global.layout
    if scheme is TrainingScheme.SPFL:
        return LrVector.uniform(layout, fl.base_lr)
    if fl.personalization == "masked":
        return LrVector.masked(layout, fl.base_lr, fl.masked_groups)
    return server.state.lrs


def _losses(
    task: FederatedTask, clients: Sequence[ClientState], models: Dict[int, ParamVector]
) -> tuple[List[float], List[float]]:
    train, test = [], []
    for client in clients:
        params = models[client.client_id]
        train.append(float(task.evaluate(params, client.train_data)["loss"]))
        test.append(float(task.evaluate(params, client.test_data)["loss"]))
    return train, test


def _max_rel_change(
    previous: Optional[Dict[int, ParamVector]], current: Dict[int, ParamVector]
) -> Optional[float]:
    if previous is None:
        return None
    changes = []
    for client_id, params in current.items():
        before = previous[client_id].values
        scale = max(float(np.linalg.norm(before)), 1e-12)
        changes.append(float(np.linalg.norm(params.values - before)) / scale)
    return max(changes)


def _report(
    scheme: TrainingScheme,
    round_index: int,
    task: FederatedTask,
    clients: Sequence[ClientState],
    models: Dict[int, ParamVector],
    server: Optional[CloudServer],
    max_rel_change: Optional[float],
) -> RoundReport:
    train, test = _losses(task, clients, models)
    sigma: Dict[str, float] = {}
    lrs: Dict[str, float] = {}
    if server is not None:
        layout = server.state.theta_global.layout
        per_group = layout.reduce_mean(server.state.sigma.values)
        sigma = {name: float(value) for name, value in zip(layout.names, per_group)}
        lrs = server.state.lrs.as_dict(layout)
    try:
        report = RoundReport(
            scheme=scheme.value,
            round_index=round_index,
            client_ids=[client.client_id for client in clients],
            train_loss=train,
            test_loss=test,
            sigma=sigma,
            lrs=lrs,
            max_rel_change=max_rel_change,
        )
    except ValueError as exc:
        raise NumericError(
            "Non-finite loss in round report.",
            {"scheme": scheme.value, "round": round_index},
        ) from exc
    emit({"type": "round_report", **report.model_dump(mode="json")})
    return report


def run_round(
    server: CloudServer,
    clients: Sequence[ClientState],
    scheme: TrainingScheme | str,
    epochs: int,
    task: FederatedTask,
    fl: FlConfig,
    master_seed: int,
    workers: Optional[int] = None,
) -> Dict[int, ParamVector]:
    """Run one federated round and return the new θ̂_k per client id."""
    scheme = TrainingScheme.parse(scheme)
    if not scheme.federated:
        raise ConfigurationError(f"Scheme {scheme.value} does not run federated rounds.")
    _check_clients(clients, scheme)
    round_index = server.state.round_index
    theta_global = server.broadcast()
    rates = _personalization_rates(server, scheme, fl) if scheme.personalized else None

    def client_round(client: ClientState) -> ParamVector:
        if rates is not None:
            personalize(
                client, theta_global, rates, epochs, task, fl, master_seed, round_index
            )
        return contribute(
            client, theta_global, fl.base_lr, epochs, task, fl, master_seed, round_index
        )

    contributed = _map_ordered(client_round, clients, _resolve_workers(workers))
    for client, theta_k in zip(clients, contributed):
        server.receive(ParamUpload.from_params(client.client_id, round_index, theta_k))
    state = server.aggregate()

    models: Dict[int, ParamVector] = {}
    for client in clients:
        if scheme.personalized:
            models[client.client_id] = client.personalized
        else:
            client.personalized = state.theta_global
            models[client.client_id] = state.theta_global
    return models


def _run_federated(
    scheme: TrainingScheme,
    task: FederatedTask,
    clients: Sequence[ClientState],
    fl: FlConfig,
    master_seed: int,
    theta0: ParamVector,
    workers: int,
) -> SchemeResult:
    server = CloudServer(theta0, fl.base_lr)
    history: List[RoundReport] = []
    previous: Optional[Dict[int, ParamVector]] = None
    converged = False
    for round_index in range(fl.rounds):
        models = run_round(
            server, clients, scheme, fl.epochs, task, fl, master_seed, workers
        )
        change = _max_rel_change(previous, models)
        history.append(
            _report(scheme, round_index, task, clients, models, server, change)
        )
        previous = models
        if change is not None and change < fl.convergence_threshold:
            converged = True
            break
    return _result(scheme, previous, history, converged)


def _run_local(
    scheme: TrainingScheme,
    task: FederatedTask,
    clients: Sequence[ClientState],
    fl: FlConfig,
    master_seed: int,
    theta0: ParamVector,
    workers: int,
) -> SchemeResult:
    if scheme is TrainingScheme.CLOUD:
        # The cloud model uses client 0's seed schedule on the pooled data
        trainees = [
            ClientState(0, task.pool([c.train_data for c in clients]), None)
        ]
    else:
        trainees = list(clients)
    for trainee in trainees:
        trainee.theta = theta0
    rates = LrVector.uniform(theta0.layout, fl.base_lr)

    history: List[RoundReport] = []
    previous: Optional[Dict[int, ParamVector]] = None
    converged = False
    for round_index in range(fl.rounds):

        def local_pass(trainee: ClientState) -> ParamVector:
            rng = derive_rng(master_seed, "client", trainee.client_id, round_index, "local")
            params, state, _ = train_pass(
                task,
                trainee.theta,
                trainee.train_data,
                rates,
                fl.epochs,
                fl,
                rng,
                {"client": trainee.client_id, "round": round_index, "pass": "local"},
            )
            trainee.theta = params
            trainee.optimizer = state
            return params

        trained = _map_ordered(local_pass, trainees, workers)
        if scheme is TrainingScheme.CLOUD:
            models = {client.client_id: trained[0] for client in clients}
        else:
            models = {
                trainee.client_id: params for trainee, params in zip(trainees, trained)
            }
        for client in clients:
            client.personalized = models[client.client_id]
        change = _max_rel_change(previous, models)
        history.append(_report(scheme, round_index, task, clients, models, None, change))
        previous = models
        if change is not None and change < fl.convergence_threshold:
            converged = True
            break
    return _result(scheme, previous, history, converged)


def _result(
    scheme: TrainingScheme,
    models: Dict[int, ParamVector],
    history: List[RoundReport],
    converged: bool,
) -> SchemeResult:
    return SchemeResult(
        scheme=scheme.value,
        personalized=dict(models),
        history=history,
        converged=converged,
        rounds_run=len(history),
    )


def run_scheme(
    scheme: TrainingScheme | str,
    task: FederatedTask,
    clients: Sequence[ClientState],
    fl: FlConfig,
    master_seed: int,
    workers: Optional[int] = None,
) -> SchemeResult:
    """Train ``clients`` under ``scheme`` until convergence or ``fl.rounds``."""
    scheme = TrainingScheme.parse(scheme)
    _check_clients(clients, scheme)
    workers = _resolve_workers(workers)
    theta0 = task.init_params(derive_seed(master_seed, "init"))
    log.info(
        "Running scheme",
        extra={"scheme": scheme.value, "task": task.name, "clients": len(clients)},
    )
    runner = _run_federated if scheme.federated else _run_local
    result = runner(scheme, task, clients, fl, master_seed, theta0, workers)
    log.info(
        "Scheme finished",
        extra={
            "scheme": scheme.value,
            "rounds": result.rounds_run,
            "converged": result.converged,
        },
    )
    return result

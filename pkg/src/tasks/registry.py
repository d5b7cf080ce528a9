"""Registry of the federated tasks an experiment can run.

Each entry pairs a task name with the config section it reads and a builder
that turns an experiment config and a seed into a task plus its clients.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List

from pydantic import BaseModel

from src.config.experiment import CvaeConfig, ExperimentConfig, LqrTaskConfig
from src.fl.client import ClientState
from src.fl.task import FederatedTask
from src.forecast.features import ForecastBatch
from src.forecast.task import ForecastTask
from src.params.store import ParamVector
from src.sim.dataset import collect_driving_data
from src.sim.mpc import Forecaster
from src.tasks.lqr import build_lqr_clients
from src.utils.errors import ConfigurationError

log = logging.getLogger(__name__)


@dataclass
class TaskSetup:
    task: FederatedTask
    clients: List[ClientState]
    truths: Dict[int, ParamVector] = field(default_factory=dict)
    extras: Dict[str, Any] = field(default_factory=dict)


Builder = Callable[[ExperimentConfig, int], TaskSetup]


@dataclass(frozen=True)
class TaskDefinition:
    name: str
    description: str
    config_section: str
    config_schema: Dict[str, Any]


class TaskRegistry:
    def __init__(self) -> None:
        self._tasks: Dict[str, Dict[str, Any]] = {}

    def register(
        self,
        name: str,
        description: str,
        config_section: str,
        config_model: type[BaseModel],
        builder: Builder,
    ) -> None:
        if not name or name != name.lower() or " " in name:
            raise ValueError(f"Task name '{name}' must be lower-case without spaces.")
        if name in self._tasks:
            raise ValueError(f"Task '{name}' is already registered.")
        self._tasks[name] = {
            "definition": TaskDefinition(
                name=name,
                description=description,
                config_section=config_section,
                config_schema=config_model.model_json_schema(),
            ),
            "config_model": config_model,
            "builder": builder,
        }
        log.debug("Registered task", extra={"task": name})

    def names(self) -> List[str]:
        return sorted(self._tasks)

    def get_definition(self, name: str) -> TaskDefinition:
        return self._entry(name)["definition"]

    def _entry(self, name: str) -> Dict[str, Any]:
        entry = self._tasks.get(name)
        if entry is None:
            raise ConfigurationError(
                f"Unknown task '{name}'; registered: {', '.join(self.names())}."
            )
        return entry

    def build(self, config: ExperimentConfig, master_seed: int) -> TaskSetup:
        entry = self._entry(config.task)
        section = getattr(config, entry["definition"].config_section)
        if not isinstance(section, entry["config_model"]):
            raise ConfigurationError(
                f"Config section '{entry['definition'].config_section}' has the wrong type."
            )
        log.info("Building task", extra={"task": config.task, "master_seed": master_seed})
        return entry["builder"](config, master_seed)


def _build_lqr(config: ExperimentConfig, master_seed: int) -> TaskSetup:
    task, clients, truths = build_lqr_clients(config.lqr, config.fl.init_scale, master_seed)
    return TaskSetup(task=task, clients=clients, truths=truths)


def _build_driving(config: ExperimentConfig, master_seed: int) -> TaskSetup:
    inits, drivers = collect_driving_data(config, master_seed)
    clients = [
        ClientState(index, data.train, data.test) for index, data in enumerate(drivers)
    ]
    return TaskSetup(
        task=ForecastTask(config.cvae),
        clients=clients,
        extras={
            "inits": inits,
            "gammas": [data.gamma for data in drivers],
            "test_sessions": {index: data.test_sessions for index, data in enumerate(drivers)},
        },
    )


def recollect_driving(
    config: ExperimentConfig,
    setup: TaskSetup,
    master_seed: int,
    forecasters: Dict[int, Forecaster],
    collection: int,
) -> TaskSetup:
    """Collect again with trained forecasters and pool the sessions per client."""
    _, drivers = collect_driving_data(config, master_seed, forecasters, collection)
    clients = [
        ClientState(
            client.client_id,
            ForecastBatch.concat([client.train_data, drivers[client.client_id].train]),
            ForecastBatch.concat([client.test_data, drivers[client.client_id].test]),
        )
        for client in setup.clients
    ]
    log.info(
        "Pooled re-collected driving data",
        extra={"collection": collection, "clients": len(clients)},
    )
    return TaskSetup(task=setup.task, clients=clients, truths=setup.truths, extras=setup.extras)


task_registry = TaskRegistry()
task_registry.register(
    "lqr",
    "Point-mass LQR imitation: learn (A, B, K) per robot from expert rollouts.",
    "lqr",
    LqrTaskConfig,
    _build_lqr,
)
task_registry.register(
    "lane-swap",
    "Human-control forecasting for the two-car lane-swap scenario.",
    "cvae",
    CvaeConfig,
    _build_driving,
)
task_registry.register(
    "lane-change",
    "Human-control forecasting for the lane-change scenario with a gray car.",
    "cvae",
    CvaeConfig,
    _build_driving,
)

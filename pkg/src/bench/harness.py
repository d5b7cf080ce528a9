"""Experiment orchestration: schemes × trials, held-out metrics, tables."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.bench.stats import WilcoxonResult, wilcoxon_signed_rank
from src.config.experiment import ExperimentConfig
from src.config.settings import get_settings
from src.fl.engine import RoundReport, SchemeResult, run_scheme
from src.forecast.cvae import CvaeForecaster
from src.params.store import ParamVector
from src.sim.driver import SyntheticDriverParams
from src.sim.episode import Episode, run_episode
from src.sim.mpc import Forecaster, NaiveForecaster
from src.tasks.lqr import param_distance
from src.tasks.registry import TaskSetup, recollect_driving, task_registry
from src.utils.errors import FedFleetError, UndefinedTestError
from src.utils.events import emit
from src.utils.seeding import derive_seed

log = logging.getLogger(__name__)

BASELINE_SCHEME = "Naive"
RecordKind = Literal["model", "controller"]


class MetricsRecord(BaseModel):
    task: str
    scheme: str
    trial: int = Field(..., ge=0)
    robot: int = Field(..., ge=0)
    kind: RecordKind = "model"
    session: Optional[int] = None
    metrics: Dict[str, float]

    model_config = ConfigDict(frozen=True)

    @field_validator("metrics")
    @classmethod
    def _finite(cls, metrics: Dict[str, float]) -> Dict[str, float]:
        for name, value in metrics.items():
            if not math.isfinite(value):
                raise ValueError(f"Metric {name} is not finite.")
        return metrics

    def sort_key(self) -> Tuple:
        return (self.scheme, self.trial, self.kind, self.robot, -1 if self.session is None else self.session)


@dataclass
class ExperimentResult:
    records: List[MetricsRecord] = field(default_factory=list)
    histories: Dict[Tuple[str, int], List[RoundReport]] = field(default_factory=dict)

    def table(self, kind: RecordKind = "model") -> Dict[str, Dict[str, float]]:
        return aggregate_table(self.records, kind)


def trial_seed(master_seed: int, trial: int) -> int:
    return derive_seed(master_seed, "trial", trial)


def model_metrics(setup: TaskSetup, client_id: int, params: ParamVector) -> Dict[str, float]:
    client = next(c for c in setup.clients if c.client_id == client_id)
    metrics = dict(setup.task.evaluate(params, client.test_data))
    if client_id in setup.truths:
        dyn, ctrl = param_distance(params, setup.truths[client_id])
        metrics.update(dyn_dist=dyn, ctrl_dist=ctrl)
    return metrics


def episode_metrics(episode: Episode) -> Dict[str, float]:
    metrics = {
        "mean_cost": episode.mean_cost,
        "collided": float(episode.collided),
        "completed": float(episode.completed),
    }
    # A lane change that never started has no time or distance
    if episode.commence_time is not None:
        metrics["commence_time"] = episode.commence_time
        metrics["commence_distance"] = float(episode.commence_distance)
    return {name: value for name, value in metrics.items() if math.isfinite(value)}


def evaluate_controller(
    config: ExperimentConfig,
    setup: TaskSetup,
    scheme: str,
    forecasters: Dict[int, Forecaster],
    seed: int,
    trial: int,
) -> List[MetricsRecord]:
    """One closed-loop episode per driver and held-out session."""
    records = []
    inits = setup.extras["inits"]
    for client in setup.clients:
        driver = SyntheticDriverParams.from_config(
            config.driver, setup.extras["gammas"][client.client_id]
        )
        sessions = setup.extras["test_sessions"][client.client_id]
        if config.evaluation.max_sessions is not None:
            sessions = sessions[: config.evaluation.max_sessions]
        for session in sessions:
            episode = run_episode(
                config.task,
                forecasters[client.client_id],
                driver,
                inits[session],
                config.sim,
                config.mpc,
                derive_seed(seed, "eval", client.client_id, session),
                window=config.cvae.window,
            )
            records.append(
                MetricsRecord(
                    task=config.task,
                    scheme=scheme,
                    trial=trial,
                    robot=client.client_id,
                    kind="controller",
                    session=session,
                    metrics=episode_metrics(episode),
                )
            )
    return records


def cvae_forecasters(config: ExperimentConfig, result: SchemeResult) -> Dict[int, Forecaster]:
    return {
        client_id: CvaeForecaster(params, config.cvae)
        for client_id, params in result.personalized.items()
    }


def train_scheme(
    config: ExperimentConfig,
    setup: TaskSetup,
    scheme: str,
    seed: int,
    workers: Optional[int] = None,
) -> Tuple[SchemeResult, TaskSetup]:
    """Train one scheme, alternating data collection and training on driving tasks.

    The first pass trains on the naive-predictor sessions in ``setup``. Each
    further collection round plays the sessions again with the forecasters
    just trained, pools them with the earlier data and retrains from the same
    initial parameters. Returns the last result and the setup it trained on.
    """
    result = run_scheme(scheme, setup.task, setup.clients, config.fl, seed, workers)
    rounds = config.driving.collection_rounds if config.task != "lqr" else 1
    for collection in range(1, rounds):
        setup = recollect_driving(
            config, setup, seed, cvae_forecasters(config, result), collection
        )
        result = run_scheme(scheme, setup.task, setup.clients, config.fl, seed, workers)
        emit(
            {
                "type": "collection_complete",
                "task": config.task,
                "scheme": scheme,
                "collection": collection,
            }
        )
    return result, setup


def _run_trial(
    config: ExperimentConfig, trial: int, workers: int
) -> Tuple[List[MetricsRecord], Dict[Tuple[str, int], List[RoundReport]]]:
    seed = trial_seed(config.master_seed, trial)
    setup = task_registry.build(config, seed)
    records: List[MetricsRecord] = []
    histories: Dict[Tuple[str, int], List[RoundReport]] = {}
    driving = config.task != "lqr" and config.evaluation.controller_eval

    for scheme in config.schemes:
        try:
            result, trained_on = train_scheme(config, setup, scheme, seed, workers)
            histories[(scheme, trial)] = result.history
            for client_id, params in sorted(result.personalized.items()):
                records.append(
                    MetricsRecord(
                        task=config.task,
                        scheme=scheme,
                        trial=trial,
                        robot=client_id,
                        metrics=model_metrics(trained_on, client_id, params),
                    )
                )
            if driving:
                forecasters = cvae_forecasters(config, result)
                records += evaluate_controller(config, trained_on, scheme, forecasters, seed, trial)
        except FedFleetError as exc:
            exc.context.setdefault("scheme", scheme)
            exc.context.setdefault("trial", trial)
            exc.partial_records = records  # type: ignore[attr-defined]
            raise
        emit({"type": "scheme_complete", "task": config.task, "scheme": scheme, "trial": trial})

    if driving and config.evaluation.baseline:
        naive = NaiveForecaster()
        baseline = {client.client_id: naive for client in setup.clients}
        records += evaluate_controller(config, setup, BASELINE_SCHEME, baseline, seed, trial)
    return records, histories


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """Run every scheme for every trial and collect held-out metrics."""
    if workers is None:
        workers = get_settings().engine.FEDFLEET_WORKERS
    workers = max(1, int(workers))
    trials = range(config.trials)
    log.info(
        "Running experiment",
        extra={"task": config.task, "schemes": list(config.schemes), "trials": config.trials},
    )

    partial: List[MetricsRecord] = []
    outcomes = []
    try:
        if workers > 1 and config.trials > 1:
            # Trials fan out; clients inside a trial then train sequentially
            with ThreadPoolExecutor(max_workers=workers) as executor:
                outcomes = list(executor.map(lambda t: _run_trial(config, t, 1), trials))
        else:
            for trial in trials:
                outcomes.append(_run_trial(config, trial, workers))
                partial += outcomes[-1][0]
    except FedFleetError as exc:
        exc.partial_records = partial + getattr(exc, "partial_records", [])  # type: ignore[attr-defined]
        raise

    result = ExperimentResult()
    for records, histories in outcomes:
        result.records.extend(records)
        result.histories.update(histories)
    result.records.sort(key=MetricsRecord.sort_key)
    return result


def aggregate_table(
    records: Iterable[MetricsRecord], kind: RecordKind = "model"
) -> Dict[str, Dict[str, float]]:
    """metric -> scheme -> mean over trials and robots."""
    values: Dict[str, Dict[str, List[float]]] = defaultdict(lambda: defaultdict(list))
    for record in records:
        if record.kind != kind:
            continue
        for metric, value in record.metrics.items():
            values[metric][record.scheme].append(value)
    return {
        metric: {scheme: float(np.mean(items)) for scheme, items in sorted(per_scheme.items())}
        for metric, per_scheme in sorted(values.items())
    }


def paired_values(
    records: Iterable[MetricsRecord], scheme: str, metric: str, kind: RecordKind
) -> Dict[Tuple[int, int, Optional[int]], float]:
    return {
        (r.trial, r.robot, r.session): r.metrics[metric]
        for r in records
        if r.scheme == scheme and r.kind == kind and metric in r.metrics
    }


def compare_schemes(
    records: Sequence[MetricsRecord],
    reference: str,
    metric: str = "mean_cost",
    kind: RecordKind = "controller",
) -> Dict[str, WilcoxonResult]:
    """Wilcoxon test of ``reference`` against every other scheme, paired by run."""
    ref = paired_values(records, reference, metric, kind)
    schemes = sorted({r.scheme for r in records if r.kind == kind} - {reference})
    results: Dict[str, WilcoxonResult] = {}
    for scheme in schemes:
        other = paired_values(records, scheme, metric, kind)
        keys = sorted(set(ref) & set(other), key=lambda k: (k[0], k[1], -1 if k[2] is None else k[2]))
        if not keys:
            continue
        try:
            results[scheme] = wilcoxon_signed_rank(
                [ref[key] for key in keys], [other[key] for key in keys]
            )
        except UndefinedTestError:
            log.warning(
                "Wilcoxon undefined: identical results",
                extra={"reference": reference, "scheme": scheme, "metric": metric},
            )
    return results

import numpy as np
import pytest
from pydantic import ValidationError

from src.bench import harness
from src.bench.harness import (
    BASELINE_SCHEME,
    MetricsRecord,
    aggregate_table,
    compare_schemes,
    run_experiment,
    train_scheme,
    trial_seed,
)
from src.config.experiment import (
    CvaeConfig,
    DriverConfig,
    DrivingDataConfig,
    EvalConfig,
    ExperimentConfig,
    FlConfig,
    LqrTaskConfig,
    MpcConfig,
    SimConfig,
)
from src.forecast.cvae import CvaeForecaster
from src.tasks import registry
from src.utils import events
from src.utils.errors import NumericError

SCHEMES = ["Local", "Cloud", "SFL", "SPFL", "APFL"]


def _record(scheme, session, cost, trial=0, robot=0):
    return MetricsRecord(
        task="lane-swap",
        scheme=scheme,
        trial=trial,
        robot=robot,
        kind="controller",
        session=session,
        metrics={"mean_cost": cost},
    )


def test_trial_seeds_differ_per_trial():
    assert trial_seed(0, 0) != trial_seed(0, 1)
    assert trial_seed(5, 2) == trial_seed(5, 2)


def test_records_reject_non_finite_metrics():
    with pytest.raises(ValidationError):
        MetricsRecord(task="lqr", scheme="APFL", trial=0, robot=0, metrics={"loss": float("nan")})


def test_lqr_experiment_shape(lqr_config):
    result = run_experiment(lqr_config, workers=1)
    assert len(result.records) == 5 * 2 * 3
    assert {r.kind for r in result.records} == {"model"}
    assert set(result.histories) == {(s, t) for s in SCHEMES for t in range(2)}
    table = result.table()
    losses = {m: table[m] for m in ("state_loss", "control_loss", "loss")}
    assert sum(len(per_scheme) for per_scheme in losses.values()) == 15
    assert "total_loss" not in table
    assert "dyn_dist" in table and "ctrl_dist" in table


def test_records_are_sorted_by_scheme_and_trial(lqr_config):
    records = run_experiment(lqr_config, workers=1).records
    keys = [r.sort_key() for r in records]
    assert keys == sorted(keys)


def test_same_seed_gives_identical_records(lqr_config):
    first = run_experiment(lqr_config.model_copy(update={"trials": 1}), workers=1)
    second = run_experiment(lqr_config.model_copy(update={"trials": 1}), workers=1)
    assert first.records == second.records


def test_parallel_trials_match_sequential(lqr_config):
    assert run_experiment(lqr_config, workers=2).records == run_experiment(
        lqr_config, workers=1
    ).records


def test_table_is_the_mean_of_its_records(lqr_config):
    result = run_experiment(lqr_config, workers=1)
    table = result.table()
    for scheme in SCHEMES:
        values = [r.metrics["loss"] for r in result.records if r.scheme == scheme]
        assert table["loss"][scheme] == pytest.approx(np.mean(values))


def test_scheme_completion_is_announced(lqr_config):
    seen = []
    events.register_sink(seen.append)
    run_experiment(lqr_config.model_copy(update={"trials": 1}), workers=1)
    done = [e["scheme"] for e in seen if e.get("type") == "scheme_complete"]
    assert done == SCHEMES


def test_failures_carry_context_and_partial_records(lqr_config, monkeypatch):
    real = harness.run_scheme

    def failing(scheme, *args, **kwargs):
        if scheme == "SPFL":
            raise NumericError("Gradient contains non-finite values.")
        return real(scheme, *args, **kwargs)

    monkeypatch.setattr(harness, "run_scheme", failing)
    with pytest.raises(NumericError) as info:
        run_experiment(lqr_config.model_copy(update={"trials": 1}), workers=1)
    assert info.value.context["scheme"] == "SPFL"
    assert info.value.context["trial"] == 0
    schemes = {r.scheme for r in info.value.partial_records}
    assert schemes == {"Local", "Cloud", "SFL"}


def test_aggregate_table_filters_by_kind():
    records = [
        _record("APFL", 0, 1.0),
        _record("APFL", 1, 3.0),
        MetricsRecord(task="lane-swap", scheme="APFL", trial=0, robot=0, metrics={"loss": 0.5}),
    ]
    assert aggregate_table(records, "controller") == {"mean_cost": {"APFL": 2.0}}
    assert aggregate_table(records, "model") == {"loss": {"APFL": 0.5}}


def test_compare_schemes_pairs_by_session():
    records = []
    for session in range(5):
        records.append(_record("APFL", session, 1.0 + session))
        records.append(_record("SFL", session, 2.0 + 2 * session))
        records.append(_record("Cloud", session, 1.0 + session))
    results = compare_schemes(records, "APFL")
    # Identical results make the test undefined, so Cloud is skipped
    assert set(results) == {"SFL"}
    assert results["SFL"].n == 5
    assert results["SFL"].p_value == pytest.approx(0.0625)


@pytest.fixture
def driving_config(tmp_path):
    return ExperimentConfig(
        task="lane-swap",
        schemes=["APFL"],
        master_seed=1,
        output_dir=str(tmp_path / "runs"),
        fl=FlConfig(rounds=1, epochs=1, batch_size=8),
        cvae=CvaeConfig(hidden=3, latent=2, window=2, future_len=2),
        sim=SimConfig(max_steps=8),
        mpc=MpcConfig(tau=1, horizon=2, n_samples=1),
        driver=DriverConfig(gammas=[-1.0, 1.0]),
        driving=DrivingDataConfig(n_inits=3, n_test_sessions=1),
        evaluation=EvalConfig(max_sessions=1),
    )


def test_driving_experiment_runs_the_controller_and_baseline(driving_config):
    result = run_experiment(driving_config, workers=1)
    model = [r for r in result.records if r.kind == "model"]
    controller = [r for r in result.records if r.kind == "controller"]
    assert {r.robot for r in model} == {0, 1}
    assert {"loss", "recon", "kl", "prior_mse"} <= set(model[0].metrics)
    assert sorted((r.scheme, r.robot) for r in controller) == [
        ("APFL", 0),
        ("APFL", 1),
        (BASELINE_SCHEME, 0),
        (BASELINE_SCHEME, 1),
    ]
    assert all("mean_cost" in r.metrics for r in controller)


def test_baseline_can_be_switched_off(driving_config):
    config = driving_config.model_copy(update={"evaluation": EvalConfig(max_sessions=1, baseline=False)})
    schemes = {r.scheme for r in run_experiment(config, workers=1).records}
    assert schemes == {"APFL"}


def test_second_collection_uses_the_trained_forecasters(monkeypatch, driving_config):
    collections = []
    collect = registry.collect_driving_data

    def recording_collect(config, master_seed, forecasters=None, collection=0):
        collections.append((collection, forecasters))
        return collect(config, master_seed, forecasters, collection)

    results = []
    train = harness.run_scheme

    def recording_train(*args, **kwargs):
        results.append(train(*args, **kwargs))
        return results[-1]

    monkeypatch.setattr(registry, "collect_driving_data", recording_collect)
    monkeypatch.setattr(harness, "run_scheme", recording_train)
    config = driving_config.model_copy(
        update={"driving": DrivingDataConfig(n_inits=3, n_test_sessions=1, collection_rounds=2)}
    )
    setup = registry.task_registry.build(config, 5)
    result, trained_on = train_scheme(config, setup, "APFL", 5, workers=1)

    assert [collection for collection, _ in collections] == [0, 1]
    assert collections[0][1] is None
    forecasters = collections[1][1]
    assert set(forecasters) == {0, 1}
    for client_id, forecaster in forecasters.items():
        assert isinstance(forecaster, CvaeForecaster)
        assert forecaster.params is results[0].personalized[client_id]
    assert len(results) == 2 and result is results[1]
    for before, after in zip(setup.clients, trained_on.clients):
        assert len(after.train_data) > len(before.train_data)
        assert len(after.test_data) > len(before.test_data)
    assert trained_on.extras is setup.extras


def test_lqr_ignores_collection_rounds(monkeypatch):
    calls = []
    train = harness.run_scheme

    def counting_train(*args, **kwargs):
        calls.append(args[0])
        return train(*args, **kwargs)

    monkeypatch.setattr(harness, "run_scheme", counting_train)
    config = ExperimentConfig(
        task="lqr",
        schemes=["SFL"],
        fl=FlConfig(rounds=1, epochs=1),
        lqr=LqrTaskConfig(n_init=10, horizon=5),
        driving=DrivingDataConfig(collection_rounds=3),
    )
    setup = registry.task_registry.build(config, 0)
    train_scheme(config, setup, "SFL", 0, workers=1)
    assert calls == ["SFL"]

"""Desk-scale reproduction runs over the shipped experiment configs."""

from pathlib import Path

import numpy as np
import pytest

from src.bench.harness import BASELINE_SCHEME, aggregate_table, run_experiment
from src.config.experiment import load_experiment_config

CONFIG_DIR = Path(__file__).resolve().parents[2] / "config"


@pytest.mark.parametrize(
    "name",
    [
        "lqr.json",
        "lqr_masked.json",
        "lane_swap.json",
        "lane_change.json",
        "lane_swap_quick.json",
        "lane_change_quick.json",
    ],
)
def test_shipped_configs_validate(name):
    config = load_experiment_config(CONFIG_DIR / name)
    assert config.reference_scheme in config.schemes


@pytest.fixture(scope="module")
def lqr_result():
    return run_experiment(load_experiment_config(CONFIG_DIR / "lqr.json"))


@pytest.mark.slow
def test_lqr_loss_table(lqr_result):
    table = lqr_result.table()
    for scheme in ("Cloud", "SFL", "SPFL", "APFL"):
        assert 0.008 <= table["state_loss"][scheme] <= 0.014
    for scheme in ("Cloud", "SFL"):
        assert table["control_loss"][scheme] >= 0.05
    for scheme in ("Local", "SPFL", "APFL"):
        assert table["control_loss"][scheme] <= 0.02
    total = table["loss"]
    assert total["APFL"] <= total["SPFL"] + 1e-3 <= total["Local"] + 1e-3


@pytest.mark.slow
def test_lqr_parameter_distances(lqr_result):
    table = lqr_result.table()
    assert table["dyn_dist"]["APFL"] <= table["dyn_dist"]["Local"]
    assert table["ctrl_dist"]["APFL"] <= 0.25 * table["ctrl_dist"]["SFL"]


@pytest.mark.slow
def test_lane_change_forecast_and_controller_trend():
    config = load_experiment_config(CONFIG_DIR / "lane_change_quick.json")
    losses = {scheme: [] for scheme in config.schemes}
    records = []
    for seed in range(5):
        result = run_experiment(config.with_overrides(master_seed=seed))
        records += result.records
        table = result.table()
        for scheme in config.schemes:
            losses[scheme].append(table["loss"][scheme])
    apfl = np.mean(losses["APFL"])
    for other in ("SFL", "Cloud"):
        margin = np.mean(losses[other]) - apfl
        assert margin > np.std(losses["APFL"])

    controller = [r for r in records if r.kind == "controller"]
    costs = {
        scheme: np.median([r.metrics["mean_cost"] for r in controller if r.scheme == scheme])
        for scheme in ("APFL", BASELINE_SCHEME)
    }
    assert costs["APFL"] <= costs[BASELINE_SCHEME]
    assert aggregate_table(controller, "controller")["collided"]["APFL"] == 0.0


@pytest.mark.parametrize("name", ["lane_swap.json", "lane_change.json"])
def test_driving_configs_keep_the_published_training_schedule(name):
    config = load_experiment_config(CONFIG_DIR / name)
    assert config.fl.base_lr == 0.001
    assert config.fl.epochs == 30
    assert config.fl.rounds == 50
    assert config.fl.convergence_threshold == 1e-5
    assert config.driving.collection_rounds >= 2


@pytest.mark.parametrize("name", ["lqr.json", "lqr_masked.json"])
def test_lqr_configs_keep_the_published_training_schedule(name):
    config = load_experiment_config(CONFIG_DIR / name)
    assert config.fl.base_lr == 0.01
    assert config.fl.epochs == 30

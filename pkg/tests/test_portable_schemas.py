import json
from pathlib import Path

import jsonschema
import pytest

from src.bench.export import export_records, make_provenance
from src.bench.harness import MetricsRecord
from src.config.experiment import ExperimentConfig, FlConfig, LqrTaskConfig, config_hash
from src.fl.engine import run_scheme
from src.params.checkpoint import checkpoint_document
from src.params.store import AdamState
from src.tasks.lqr import (
    LinSystem,
    LqrCost,
    build_lqr_clients,
    generate_rollouts,
    solve_dare,
    true_model,
    write_transitions,
)
from src.utils import events

ROOT = Path(__file__).resolve().parents[1]
SCHEMA_NAMES = [
    "fedfleetCheckpoint",
    "fedfleetMetricsRecord",
    "fedfleetRoundReport",
    "fedfleetTransition",
]


def _load_json(path: Path) -> dict:
    with path.open("r", encoding="utf-8") as handle:
        return json.load(handle)


def _schema(name: str) -> dict:
    return _load_json(ROOT / "schemas" / f"{name}.v1.json")


@pytest.mark.parametrize("name", SCHEMA_NAMES)
def test_schema_examples_validate(name):
    schema = _schema(name)
    jsonschema.Draft202012Validator.check_schema(schema)
    example = _load_json(ROOT / "schemas" / "examples" / f"{name}.v1.example.json")
    jsonschema.validate(example, schema)
    assert schema["$id"].endswith(f"{name}.v1.json")


def test_checkpoint_documents_validate():
    sys_ = LinSystem.point_mass()
    params = true_model(sys_, solve_dare(sys_, LqrCost.diagonal([1.0, 1.0], 1.0))[1])
    document = checkpoint_document(
        params, AdamState.fresh(len(params)), architecture={"model": "lqr"}
    )
    jsonschema.validate(json.loads(json.dumps(document)), _schema("fedfleetCheckpoint"))


def test_round_reports_validate():
    task, clients, _ = build_lqr_clients(LqrTaskConfig(n_init=5, horizon=5, test_fraction=0.2), 0.1, 0)
    seen = []
    events.clear_sinks()
    events.register_sink(seen.append)
    try:
        run_scheme("APFL", task, clients, FlConfig(rounds=2, epochs=1, batch_size=8), 0, 1)
    finally:
        events.clear_sinks()
    reports = [event for event in seen if event.get("type") == "round_report"]
    assert reports
    for report in reports:
        jsonschema.validate(json.loads(json.dumps(report)), _schema("fedfleetRoundReport"))


def test_exported_metrics_lines_validate(tmp_path):
    records = [
        MetricsRecord(task="lqr", scheme="SFL", trial=1, robot=0, metrics={"loss": 0.02}),
        MetricsRecord(
            task="lane-swap",
            scheme="Naive",
            trial=0,
            robot=3,
            kind="controller",
            session=2,
            metrics={"mean_cost": 120.0, "collided": 0.0},
        ),
    ]
    path = tmp_path / "records.jsonl"
    export_records(records, path, make_provenance(4, config_hash(ExperimentConfig())))
    schema = _schema("fedfleetMetricsRecord")
    for line in path.read_text().splitlines():
        jsonschema.validate(json.loads(line), schema)


def test_transition_lines_validate(tmp_path):
    sys_ = LinSystem.point_mass()
    _, K = solve_dare(sys_, LqrCost.diagonal([1.0, 1.0], 50.0))
    rollouts = generate_rollouts(sys_, K, 2, 3, 0.01, 0, -5.0, 5.0, robot_id=2)
    path = tmp_path / "transitions.jsonl"
    assert write_transitions(path, rollouts) == 6
    schema = _schema("fedfleetTransition")
    for line in path.read_text().splitlines():
        jsonschema.validate(json.loads(line), schema)
        assert set(json.loads(line)) == set(schema["required"])


def test_transition_fields_are_documented():
    properties = _schema("fedfleetTransition")["properties"]
    assert all(field.get("description") for field in properties.values())
    assert "x_{t+1}" in properties["x_next"]["description"]

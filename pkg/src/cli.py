"""Command-line entry point: ``fedfleet <command> --config <path>``."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from src.bench.export import (
    export_records,
    export_table,
    format_table,
    make_provenance,
    read_jsonl,
)
from src.bench.harness import (
    aggregate_table,
    compare_schemes,
    run_experiment,
    train_scheme,
    trial_seed,
)
from src.config.experiment import (
    ExperimentConfig,
    config_hash,
    load_experiment_config,
    parse_experiment_config,
)
from src.config.settings import get_settings
from src.forecast.cvae import CvaeForecaster, architecture
from src.params.checkpoint import load_checkpoint, save_checkpoint
from src.sim.dataset import collect_driving_data, driving_inits
from src.sim.driver import SyntheticDriverParams
from src.sim.episode import run_episode, write_episode_log
from src.sim.mpc import NaiveForecaster
from src.tasks.lqr import (
    LinSystem,
    LqrCost,
    generate_rollouts,
    solve_dare,
    write_transitions,
)
from src.tasks.registry import task_registry
from src.utils.errors import ConfigurationError, FedFleetError
from src.utils.events import JsonLinesSink, register_sink, unregister_sink
from src.utils.logging import setup_logging
from src.utils.seeding import derive_seed

log = logging.getLogger(__name__)


def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers, got {text!r}") from exc


def _load_config(args: argparse.Namespace, **updates: Any) -> ExperimentConfig:
    if args.config:
        config = load_experiment_config(args.config)
    else:
        engine = get_settings().engine
        config = ExperimentConfig(
            master_seed=engine.FEDFLEET_MASTER_SEED, output_dir=engine.FEDFLEET_OUTPUT_DIR
        )
    config = config.with_overrides(master_seed=args.seed, output_dir=args.output)
    updates = {key: value for key, value in updates.items() if value is not None}
    if not updates:
        return config
    # Re-validate so overrides obey the same rules as the file
    document = config.model_dump(mode="json")
    for dotted, value in updates.items():
        target = document
        *parents, leaf = dotted.split(".")
        for parent in parents:
            target = target[parent]
        target[leaf] = value
    return parse_experiment_config(document)


def _print(document: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(document, sort_keys=True, default=str) + "\n")


def _output_dir(config: ExperimentConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_gen_lqr(args: argparse.Namespace) -> int:
    config = _load_config(
        args,
        **{
            "lqr.n_init": args.inits,
            "lqr.horizon": args.horizon,
            "lqr.noise_var": args.noise,
        },
    )
    r_values = list(config.lqr.r_values)
    if args.robots is not None:
        if args.robots > len(r_values):
            raise ConfigurationError(
                f"--robots {args.robots} exceeds the {len(r_values)} configured control costs."
            )
        r_values = r_values[: args.robots]

    sys_ = LinSystem.point_mass()
    rollouts = []
    for robot_id, r_value in enumerate(r_values):
        _, K = solve_dare(sys_, LqrCost.diagonal(config.lqr.q_diag, r_value))
        rollouts += generate_rollouts(
            sys_,
            K,
            config.lqr.n_init,
            config.lqr.horizon,
            config.lqr.noise_var,
            derive_seed(config.master_seed, "data", robot_id),
            config.lqr.init_low,
            config.lqr.init_high,
            robot_id=robot_id,
        )
    path = _output_dir(config) / "lqr_transitions.jsonl"
    count = write_transitions(path, rollouts)
    _print({"path": str(path), "robots": len(r_values), "transitions": count})
    return 0


def _forecaster(path: Optional[str], config: ExperimentConfig):
    if not path:
        return None
    params, _, _ = load_checkpoint(path)
    return CvaeForecaster(params, config.cvae)


def cmd_gen_driving(args: argparse.Namespace) -> int:
    config = _load_config(args, **{"task": args.scenario, "driver.gammas": args.gamma})
    if config.task == "lqr":
        raise ConfigurationError("gen-driving needs a driving scenario.")
    forecaster = _forecaster(args.forecaster, config)
    forecasters = (
        {index: forecaster for index in range(len(config.driver.gammas))} if forecaster else None
    )
    _, drivers = collect_driving_data(config, config.master_seed, forecasters)
    out = _output_dir(config) / "driving"
    summary = []
    for index, data in enumerate(drivers):
        data.train.save(out / f"driver_{index}_train.npz")
        data.test.save(out / f"driver_{index}_test.npz")
        summary.append(
            {"driver": index, "gamma": data.gamma, "train": len(data.train), "test": len(data.test)}
        )
    _print({"path": str(out), "drivers": summary})
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    schemes = [args.scheme] if args.scheme else list(config.schemes)
    out = _output_dir(config)
    seed = trial_seed(config.master_seed, 0)
    setup = task_registry.build(config, seed)
    arch = architecture(config.cvae) if config.task != "lqr" else {"model": "lqr"}

    sink = JsonLinesSink(out / "rounds.jsonl", types={"round_report"})
    register_sink(sink)
    try:
        summary = {}
        for scheme in schemes:
            result, _ = train_scheme(config, setup, scheme, seed)
            for client_id, params in sorted(result.personalized.items()):
                save_checkpoint(
                    out / "checkpoints" / scheme / f"client_{client_id}.json",
                    params,
                    architecture=arch,
                )
            summary[scheme] = {"rounds": result.rounds_run, "converged": result.converged}
    finally:
        unregister_sink(sink)
    _print({"path": str(out), "schemes": summary})
    return 0


def cmd_sim(args: argparse.Namespace) -> int:
    config = _load_config(args, **{"task": args.scenario, "driver.gammas": args.gamma})
    if config.task == "lqr":
        raise ConfigurationError("sim needs a driving scenario.")
    forecaster = _forecaster(args.forecaster, config) or NaiveForecaster()
    inits = driving_inits(config, config.master_seed)[: args.sessions]
    out = _output_dir(config) / "episodes"
    results = []
    for driver_index, gamma in enumerate(config.driver.gammas):
        driver = SyntheticDriverParams.from_config(config.driver, gamma)
        for session, init in enumerate(inits):
            episode = run_episode(
                config.task,
                forecaster,
                driver,
                init,
                config.sim,
                config.mpc,
                derive_seed(config.master_seed, "episode", driver_index, session),
                window=config.cvae.window,
            )
            write_episode_log(out / f"{config.task}_driver{driver_index}_s{session}.jsonl", episode)
            results.append({"driver": driver_index, "gamma": gamma, "session": session, **episode.metrics()})
    _print({"path": str(out), "episodes": results})
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _output_dir(config)
    provenance = make_provenance(config.master_seed, config_hash(config))
    sink = JsonLinesSink(out / "rounds.jsonl", types={"round_report"})
    register_sink(sink)
    try:
        result = run_experiment(config, args.workers)
    except FedFleetError as exc:
        partial = getattr(exc, "partial_records", [])
        if partial:
            export_records(partial, out / "records.partial.jsonl", provenance)
        raise
    finally:
        unregister_sink(sink)

    export_records(result.records, out / "records.jsonl", provenance)
    export_records(result.records, out / "records.csv", provenance)
    table = result.table("model")
    export_table(table, out / "table.csv", provenance)
    if any(record.kind == "controller" for record in result.records):
        export_table(result.table("controller"), out / "controller_table.csv", provenance)
    sys.stdout.write(format_table(table) + "\n")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    records = read_jsonl(args.records)
    results = compare_schemes(records, args.reference, args.metric, args.kind)
    _print(
        {
            "reference": args.reference,
            "metric": args.metric,
            "comparisons": {scheme: result.model_dump() for scheme, result in results.items()},
        }
    )
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    config = _load_config(args)
    records = read_jsonl(args.records)
    provenance = make_provenance(config.master_seed, config_hash(config))
    if args.table:
        count = export_table(aggregate_table(records, args.kind), args.to, provenance)
    else:
        count = export_records(records, args.to, provenance, args.format)
    _print({"path": args.to, "rows": count})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedfleet", description="Personalized federated fleet learning.")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL.")
    commands = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Experiment config (JSON).")
    common.add_argument("--seed", type=int, default=None, help="Overrides master_seed.")
    common.add_argument("--output", default=None, help="Overrides output_dir.")

    gen_lqr = commands.add_parser("gen-lqr", parents=[common], help="Generate LQR expert rollouts.")
    gen_lqr.add_argument("--robots", type=int, default=None)
    gen_lqr.add_argument("--inits", type=int, default=None)
    gen_lqr.add_argument("--horizon", type=int, default=None)
    gen_lqr.add_argument("--noise", type=float, default=None)
    gen_lqr.set_defaults(handler=cmd_gen_lqr)

    for name, handler, help_text in (
        ("gen-driving", cmd_gen_driving, "Collect driving sessions per synthetic driver."),
        ("sim", cmd_sim, "Play driving episodes and write step logs."),
    ):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument("--scenario", choices=["lane-swap", "lane-change"], default=None)
        sub.add_argument("--gamma", type=_floats, default=None, help="Comma-separated γ list.")
        sub.add_argument("--forecaster", default=None, help="CVAE checkpoint for the MPC.")
        if name == "sim":
            sub.add_argument("--sessions", type=int, default=1)
        sub.set_defaults(handler=handler)

    train = commands.add_parser("train", parents=[common], help="Train schemes and save checkpoints.")
    train.add_argument("--scheme", choices=["Local", "Cloud", "SFL", "SPFL", "APFL"], default=None)
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", parents=[common], help="Run schemes × trials and export metrics.")
    evaluate.add_argument("--workers", type=int, default=None)
    evaluate.set_defaults(handler=cmd_eval)

    stats = commands.add_parser("stats", parents=[common], help="Wilcoxon tests between schemes.")
    stats.add_argument("--records", required=True, help="records.jsonl from eval.")
    stats.add_argument("--reference", default="APFL")
    stats.add_argument("--metric", default="mean_cost")
    stats.add_argument("--kind", choices=["model", "controller"], default="controller")
    stats.set_defaults(handler=cmd_stats)

    export = commands.add_parser("export", parents=[common], help="Convert records to CSV, JSON Lines or a table.")
    export.add_argument("--records", required=True)
    export.add_argument("--to", required=True, help="Destination path.")
    export.add_argument("--format", choices=["csv", "json"], default=None)
    export.add_argument("--table", action="store_true", help="Write the metric × scheme table.")
    export.add_argument("--kind", choices=["model", "controller"], default="model")
    export.set_defaults(handler=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except FedFleetError as exc:
        sys.stderr.write(json.dumps(exc.to_record(), sort_keys=True, default=str) + "\n")
        return 2 if isinstance(exc, ConfigurationError) else 1


if __name__ == "__main__":
    sys.exit(main())

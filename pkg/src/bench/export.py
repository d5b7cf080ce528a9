"""Result files: long-format CSV, JSON Lines and aggregated tables.

Every row carries the provenance triple (software version, master seed,
config hash) so a file can be traced back to the run that produced it.
"""

import csv
import json
import logging
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from pydantic import BaseModel, ConfigDict

from src.bench.harness import MetricsRecord
from src.config.settings import get_settings
from src.utils.errors import ContractViolation, FedFleetError

log = logging.getLogger(__name__)

PACKAGE_NAME = "fedfleet"
FALLBACK_VERSION = "0.0.0+unknown"

RECORD_COLUMNS = [
    "version",
    "master_seed",
    "config_hash",
    "task",
    "scheme",
    "trial",
    "robot",
    "kind",
    "session",
    "metric",
    "value",
]
TABLE_COLUMNS = ["version", "master_seed", "config_hash", "metric", "scheme", "value"]


class Provenance(BaseModel):
    version: str
    master_seed: int
    config_hash: str

    model_config = ConfigDict(frozen=True)


def software_version() -> str:
    override = get_settings().engine.FEDFLEET_VERSION_OVERRIDE
    if override and override.strip():
        return override.strip()
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return FALLBACK_VERSION


def make_provenance(master_seed: int, config_hash: str) -> Provenance:
    return Provenance(version=software_version(), master_seed=master_seed, config_hash=config_hash)


def _open_for_write(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", encoding="utf-8", newline="")
    except OSError as exc:
        raise FedFleetError(f"Cannot write {path}: {exc}", {"path": str(path)}) from exc


def record_rows(records: Iterable[MetricsRecord], provenance: Provenance) -> List[Dict[str, Any]]:
    """One row per (record, metric), metrics in name order."""
    rows = []
    for record in records:
        for metric in sorted(record.metrics):
            rows.append(
                {
                    **provenance.model_dump(),
                    "task": record.task,
                    "scheme": record.scheme,
                    "trial": record.trial,
                    "robot": record.robot,
                    "kind": record.kind,
                    "session": "" if record.session is None else record.session,
                    "metric": metric,
                    "value": record.metrics[metric],
                }
            )
    return rows


def export_csv(records: Iterable[MetricsRecord], path: Path | str, provenance: Provenance) -> int:
    path = Path(path)
    rows = record_rows(records, provenance)
    with _open_for_write(path) as handle:
        writer = csv.DictWriter(handle, fieldnames=RECORD_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    log.info("Wrote metrics CSV", extra={"path": str(path), "rows": len(rows)})
    return len(rows)


def export_jsonl(records: Iterable[MetricsRecord], path: Path | str, provenance: Provenance) -> int:
    path = Path(path)
    count = 0
    with _open_for_write(path) as handle:
        for record in records:
            document = {"provenance": provenance.model_dump(), **record.model_dump()}
            handle.write(json.dumps(document, sort_keys=True) + "\n")
            count += 1
    log.info("Wrote metrics JSONL", extra={"path": str(path), "records": count})
    return count


def read_jsonl(path: Path | str) -> List[MetricsRecord]:
    path = Path(path)
    records = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FedFleetError(f"Cannot read {path}: {exc}", {"path": str(path)}) from exc
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            document = json.loads(line)
            document.pop("provenance", None)
            records.append(MetricsRecord.model_validate(document))
        except ValueError as exc:
            raise ContractViolation(
                f"Malformed metrics record at {path}:{number}", {"path": str(path), "line": number}
            ) from exc
    return records


def export_records(
    records: Iterable[MetricsRecord],
    path: Path | str,
    provenance: Provenance,
    fmt: Optional[str] = None,
) -> int:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        return export_csv(records, path, provenance)
    if fmt in ("json", "jsonl"):
        return export_jsonl(records, path, provenance)
    raise ContractViolation(f"Unsupported export format {fmt!r}.", {"path": str(path)})


def export_table(
    table: Dict[str, Dict[str, float]], path: Path | str, provenance: Provenance
) -> int:
    """Write a metric × scheme table in long format."""
    path = Path(path)
    rows = [
        {**provenance.model_dump(), "metric": metric, "scheme": scheme, "value": value}
        for metric, per_scheme in table.items()
        for scheme, value in per_scheme.items()
    ]
    with _open_for_write(path) as handle:
        writer = csv.DictWriter(handle, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return len(rows)


def format_table(table: Dict[str, Dict[str, float]], precision: int = 4) -> str:
    """Plain-text rendering for the terminal."""
    schemes = sorted({scheme for per_scheme in table.values() for scheme in per_scheme})
    width = max([len("metric")] + [len(metric) for metric in table]) + 2
    lines = ["metric".ljust(width) + "".join(s.rjust(12) for s in schemes)]
    for metric, per_scheme in table.items():
        cells = [
            f"{per_scheme[s]:.{precision}g}".rjust(12) if s in per_scheme else "-".rjust(12)
            for s in schemes
        ]
        lines.append(metric.ljust(width) + "".join(cells))
    return "\n".join(lines)

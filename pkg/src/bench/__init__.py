from .export import export_records, export_table, make_provenance, read_jsonl
from .harness import (
    ExperimentResult,
    MetricsRecord,
    aggregate_table,
    compare_schemes,
    run_experiment,
)
from .stats import WilcoxonResult, wilcoxon_signed_rank

__all__ = [
    "ExperimentResult",
    "MetricsRecord",
    "WilcoxonResult",
    "aggregate_table",
    "compare_schemes",
    "export_records",
    "export_table",
    "make_provenance",
    "read_jsonl",
    "run_experiment",
    "wilcoxon_signed_rank",
]

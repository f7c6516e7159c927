"""Experiment orchestration, CSV ingestion, report writers and the command line."""

from .experiment import (
    ConsistencyCurve,
    CurveRow,
    ExperimentConfig,
    meets_rate,
    run_consistency_experiment,
)
from .ingest import IngestError, ingest_csv, write_edges_csv, write_matrix_csv

__all__ = [
    "ConsistencyCurve", "CurveRow", "ExperimentConfig", "IngestError", "ingest_csv", "meets_rate",
    "run_consistency_experiment", "write_edges_csv", "write_matrix_csv",
]

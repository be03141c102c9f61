"""Machine-readable reports: JSON summaries, CSV tables and gnuplot data files."""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel, Field

from store.timeseries import TimeSeriesStore
from twin.metrics import MetricResult
from twin.validator import ThresholdTable, Verdict

logger = logging.getLogger(__name__)

SCHEMA_FILE = Path(__file__).resolve().parent.parent / "schemas" / "report.schema.json"

ROW_COLUMNS = (
    "condition",
    "fault_kind",
    "delta",
    "metric",
    "quantity",
    "value",
    "std",
    "breaches",
    "runs",
    "threshold",
    "error_fraction",
    "run_ids",
)


class StudyRow(BaseModel):
    """One (condition, metric, quantity) cell of a study."""

    condition: str
    fault_kind: str
    delta: float
    metric: str
    quantity: str
    value: Optional[float] = None
    std: Optional[float] = None
    breaches: Optional[int] = None
    runs: int
    threshold: Optional[float] = None
    error_fraction: Optional[float] = None
    run_ids: List[int] = Field(default_factory=list)


class Figure(BaseModel):
    """Whitespace-separated columns for one plot."""

    name: str
    columns: List[str]
    rows: List[List[float]]


class StudyReport(BaseModel):
    study: str
    seed: int
    rows: List[StudyRow]
    summary: Dict[str, Any] = Field(default_factory=dict)
    figures: List[Figure] = Field(default_factory=list)


class MetricEntry(BaseModel):
    quantity: str
    metric: str
    value: float
    included: int
    excluded: int
    threshold: Optional[float] = None
    breached: Optional[bool] = None


class RunReport(BaseModel):
    run_id: int
    fault_kind: str
    fault_delta: float
    status: str
    verdict: Optional[str] = None
    breaches: int = 0
    evaluated: int = 0
    twin_params: Dict[str, float] = Field(default_factory=dict)
    estimate: Optional[Dict[str, Any]] = None
    error: Optional[Dict[str, Any]] = None
    metrics: List[MetricEntry] = Field(default_factory=list)


class ScenarioReport(BaseModel):
    seed: int
    policy: str
    exit_code: int
    thresholds: Dict[str, float] = Field(default_factory=dict)
    final_params: Dict[str, float] = Field(default_factory=dict)
    runs: List[RunReport]


def metric_entries(results: Sequence[MetricResult], table: Optional[ThresholdTable]) -> List[MetricEntry]:
    entries = []
    for r in results:
        threshold = table.entries.get((r.metric, r.quantity)) if table is not None else None
        entries.append(
            MetricEntry(
                quantity=r.quantity.value,
                metric=r.metric.value,
                value=r.value,
                included=r.included,
                excluded=r.excluded,
                threshold=threshold,
                breached=(r.value > threshold) if threshold is not None else None,
            )
        )
    return entries


def threshold_map(table: Optional[ThresholdTable]) -> Dict[str, float]:
    if table is None:
        return {}
    return {f"{m.value}:{q.value}": v for (m, q), v in sorted(table.entries.items(), key=lambda kv: (kv[0][1].value, kv[0][0].value))}


def run_report(store: TimeSeriesStore, run_id: int) -> RunReport:
    """Report one stored run: metrics next to the thresholds, plus its verdict.

    Raises:
        NotFoundError: Unknown run
    """
    run = store.get_run(run_id)
    verdict: Optional[Verdict] = store.query_verdict(run_id)
    return RunReport(
        run_id=run_id,
        fault_kind=run.fault.kind.value,
        fault_delta=run.fault.delta_fraction,
        status=run.status.value,
        verdict=verdict.status.value if verdict else None,
        breaches=len(verdict.breaches) if verdict else 0,
        evaluated=verdict.evaluated if verdict else 0,
        metrics=metric_entries(store.query_metrics(run_id), store.load_thresholds()),
    )


def _write_json(model: BaseModel, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(model.model_dump_json(indent=2))
        f.write("\n")
    return path


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return " ".join(str(v) for v in value)
    return str(value)


def write_rows_csv(rows: Sequence[StudyRow], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ROW_COLUMNS)
        for row in rows:
            data = row.model_dump()
            writer.writerow([_cell(data[c]) for c in ROW_COLUMNS])
    return path


def write_figure(figure: Figure, directory: Path) -> List[Path]:
    """Write a gnuplot-compatible `.dat` file (header as a comment line) and the same table as CSV."""
    directory.mkdir(parents=True, exist_ok=True)
    dat = directory / f"{figure.name}.dat"
    with open(dat, "w", encoding="utf-8") as f:
        f.write("# " + " ".join(figure.columns) + "\n")
        for row in figure.rows:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")
    table = directory / f"{figure.name}.csv"
    with open(table, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(figure.columns)
        writer.writerows([repr(float(v)) for v in row] for row in figure.rows)
    return [dat, table]


def write_study_report(report: StudyReport, directory: Path) -> List[Path]:
    """Write `<study>.json`, `<study>.csv` and one `.dat` per figure into `directory`."""
    written = [
        _write_json(report, directory / f"{report.study}.json"),
        write_rows_csv(report.rows, directory / f"{report.study}.csv"),
    ]
    for fig in report.figures:
        written += write_figure(fig, directory)
    logger.info(f"Study '{report.study}': {len(report.rows)} rows written to {directory}")
    return written


def write_run_reports(reports: Sequence[RunReport], directory: Path, name: str = "runs") -> List[Path]:
    """JSON list of run reports plus a flat CSV of their metric entries."""
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / f"{name}.json"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump([r.model_dump() for r in reports], f, indent=2)
        f.write("\n")
    csv_path = directory / f"{name}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("run_id", "status", "verdict", "quantity", "metric", "value", "threshold", "breached"))
        for r in reports:
            for m in r.metrics:
                writer.writerow((r.run_id, r.status, r.verdict or "", m.quantity, m.metric, repr(m.value), _cell(m.threshold), _cell(m.breached)))
    return [json_path, csv_path]


def write_scenario_report(report: ScenarioReport, directory: Path) -> List[Path]:
    written = [_write_json(report, directory / "scenario.json")]
    written += write_run_reports(report.runs, directory)
    return written


def report_schema() -> Dict[str, Any]:
    """JSON schema of StudyReport (what schemas/report.schema.json ships)."""
    return StudyReport.model_json_schema()


def write_schema(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_schema(), f, indent=2)
        f.write("\n")
    return path


def load_study_report(path: Path) -> StudyReport:
    with open(path, encoding="utf-8") as f:
        return StudyReport.model_validate_json(f.read())


def report_runs(store: TimeSeriesStore, run_ids: Sequence[int], directory: Path) -> List[Path]:
    """Reports for the given runs (every run when empty).

    Raises:
        NotFoundError: An unknown run id
    """
    ids = list(run_ids) or [r.run_id for r in store.list_runs()]
    reports = [run_report(store, run_id) for run_id in ids]
    return write_run_reports(reports, directory, name="report" if len(ids) != 1 else f"run_{ids[0]}")

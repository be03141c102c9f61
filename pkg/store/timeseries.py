"""CSV-backed narrow time-series store.

Data rows are (keys..., t_s, value) with run-relative timestamps. Floats are written in
their shortest round-trip decimal form, so values read back are bit-identical.

Writers serialize through an advisory lock file holding the writer's pid; a lock whose
pid is no longer running is reclaimed. Every append batch is written to a temporary copy
of its table and renamed into place, so a reader sees a batch completely or not at all.
The run table, the only table with mutable rows (status), is rewritten the same way.
"""

import csv
import io
import json
import logging
import os
import shutil
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from testbed.errors import PreconditionError
from testbed.trajectory import Trajectory
from twin.metrics import MetricName, MetricResult
from twin.replication import ReplicationOutcome, summarize
from twin.traces import STATE_QUANTITIES, Quantity, ReplicationSummary, Trace, TraceKind
from twin.validator import ThresholdTable, Verdict

from .errors import ForeignKeyError, IntegrityError, NotFoundError, StoreLockedError
from .records import RunRecord, RunStatus

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LOCK_TIMEOUT_S = 10.0

SERIES_COLUMNS = ("run_id", "machine_id", "quantity_id", "t_s", "value")
METRIC_COLUMNS = ("run_id", "machine_id", "quantity_id", "value", "included", "excluded")

TABLE_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "machine": ("machine_id", "name", "description"),
    "quantity": ("quantity_id", "name", "unit", "symbol"),
    "run": (
        "run_id",
        "machine_id",
        "start_time",
        "fault_kind",
        "fault_delta",
        "status",
        "v_max_used_mps",
        "sample_period_s",
    ),
    "trajectory": SERIES_COLUMNS,
    "measurement": SERIES_COLUMNS,
    "simulation": ("run_id", "machine_id", "replications"),
    "simulationdatapoint": ("run_id", "machine_id", "quantity_id", "replication", "t_s", "value"),
    "metric_rmse": METRIC_COLUMNS,
    "metric_ned_local": METRIC_COLUMNS,
    "metric_ned_global": METRIC_COLUMNS,
    "metric_avg_rel_err": METRIC_COLUMNS,
    "metric_max_rel_err": METRIC_COLUMNS,
    # Created for schema completeness; no metric writes here.
    "metric_reliability": METRIC_COLUMNS,
}

METRIC_TABLES: Dict[MetricName, str] = {
    MetricName.RMSE: "metric_rmse",
    MetricName.MEAN_NED: "metric_ned_local",
    MetricName.TOTAL_NED: "metric_ned_global",
    MetricName.AVG_REL_ERR: "metric_avg_rel_err",
    MetricName.MAX_REL_ERR: "metric_max_rel_err",
}


class SeriesTable(str, Enum):
    TRAJECTORY = "trajectory"
    MEASUREMENT = "measurement"
    SIMULATIONDATAPOINT = "simulationdatapoint"


KIND_TABLES: Dict[TraceKind, SeriesTable] = {
    TraceKind.REFERENCE: SeriesTable.TRAJECTORY,
    TraceKind.MEASURED: SeriesTable.MEASUREMENT,
    TraceKind.SIMULATED: SeriesTable.SIMULATIONDATAPOINT,
}

SeriesKey = Tuple[int, ...]
Samples = Union[Trace, Sequence[Tuple[float, float]]]


@dataclass
class _SeriesCache:
    """Incrementally parsed contents of one append-only series table."""

    offset: int = 0
    chunks: Dict[SeriesKey, List[Tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)
    machines: Dict[SeriesKey, int] = field(default_factory=dict)

    def series(self, key: SeriesKey) -> Tuple[np.ndarray, np.ndarray]:
        parts = self.chunks.get(key)
        if not parts:
            return np.empty(0), np.empty(0)
        if len(parts) > 1:
            t = np.concatenate([p[0] for p in parts])
            v = np.concatenate([p[1] for p in parts])
            order = np.argsort(t, kind="stable")
            parts[:] = [(t[order], v[order])]
        return parts[0]


def _float_text(value: float) -> str:
    return repr(float(value))


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _reclaim_stale_lock(path: Path) -> bool:
    """Remove a lock left behind by a writer that no longer runs.

    An empty or unreadable lock file may belong to a writer that has not written its
    pid yet and is left alone.
    """
    try:
        pid = int(path.read_text().strip())
    except (OSError, ValueError):
        return False
    if pid <= 0 or _pid_alive(pid):
        return False
    logger.warning(f"Removing stale store lock {path} held by dead process {pid}")
    try:
        os.unlink(path)
    except FileNotFoundError:
        pass
    return True


def _complete_lines(chunk: bytes) -> Tuple[str, int]:
    end = chunk.rfind(b"\n") + 1
    return chunk[:end].decode("utf-8"), end


class TimeSeriesStore:
    """One store directory holding every table of the narrow schema."""

    def __init__(self, root: Union[str, Path], create: bool = True):
        self.root = Path(root)
        if not (self.root / "index.json").exists():
            if not create:
                raise NotFoundError("store", str(self.root))
            self._initialize()
        self._check_headers()
        self._series: Dict[SeriesTable, _SeriesCache] = {t: _SeriesCache() for t in SeriesTable}
        self._runs: Dict[int, RunRecord] = {}
        self._runs_signature: Optional[Tuple[int, int]] = None

    @classmethod
    def open(cls, root: Union[str, Path]) -> "TimeSeriesStore":
        """Open an existing store; raises NotFoundError when `root` holds none."""
        return cls(root, create=False)

    # ------------------------------------------------------------------ files

    def _path(self, table: str) -> Path:
        return self.root / f"{table}.csv"

    def _initialize(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        for table, columns in TABLE_COLUMNS.items():
            path = self._path(table)
            if not path.exists():
                with open(path, "w", newline="", encoding="utf-8") as f:
                    f.write(",".join(columns) + "\n")
        self._write_index({"schema_version": SCHEMA_VERSION, "next_run_id": 1, "next_machine_id": 1})
        logger.info(f"Created store at {self.root}")

    def _check_headers(self) -> None:
        for table, columns in TABLE_COLUMNS.items():
            path = self._path(table)
            if not path.exists():
                raise NotFoundError("table", table)
            with open(path, encoding="utf-8") as f:
                header = f.readline().rstrip("\n")
            if header != ",".join(columns):
                raise IntegrityError(table, header, f"Table '{table}' has header '{header}'")

    def _read_index(self) -> Dict:
        with open(self.root / "index.json", encoding="utf-8") as f:
            return json.load(f)

    def _write_index(self, index: Dict) -> None:
        tmp = self.root / "index.json.tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(index, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, self.root / "index.json")

    @contextmanager
    def _lock(self, timeout_s: float = LOCK_TIMEOUT_S) -> Iterator[None]:
        path = self.root / ".lock"
        deadline = time.monotonic() + timeout_s
        while True:
            try:
                fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                break
            except FileExistsError:
                if _reclaim_stale_lock(path):
                    continue
                if time.monotonic() > deadline:
                    raise StoreLockedError(str(path), timeout_s) from None
                time.sleep(0.01)
        try:
            os.write(fd, str(os.getpid()).encode())
            yield
        finally:
            os.close(fd)
            os.unlink(path)

    def _append(self, table: str, lines: Sequence[str]) -> None:
        """Append one batch: copy, extend and rename, so readers see all of it or none."""
        if not lines:
            return
        payload = "".join(line + "\n" for line in lines)
        path = self._path(table)
        tmp = self.root / f"{table}.csv.tmp"
        shutil.copyfile(path, tmp)
        with open(tmp, "a", newline="", encoding="utf-8") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)

    def _read_rows(self, table: str) -> List[Dict[str, str]]:
        with open(self._path(table), "rb") as f:
            text, _ = _complete_lines(f.read())
        return list(csv.DictReader(io.StringIO(text)))

    def _rewrite(self, table: str, rows: Iterable[Dict[str, str]]) -> None:
        tmp = self.root / f"{table}.csv.tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=TABLE_COLUMNS[table], lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self._path(table))

    # ------------------------------------------------------- machine, quantity

    def machines(self) -> Dict[int, Dict[str, str]]:
        return {int(r["machine_id"]): r for r in self._read_rows("machine")}

    def insert_machine(self, name: str, description: str = "", machine_id: Optional[int] = None) -> int:
        with self._lock():
            existing = self.machines()
            index = self._read_index()
            if machine_id is None:
                machine_id = max([index.get("next_machine_id", 1), *[m + 1 for m in existing]])
            if machine_id in existing:
                raise IntegrityError("machine", machine_id)
            writer_buf = io.StringIO()
            csv.writer(writer_buf, lineterminator="").writerow([machine_id, name, description])
            self._append("machine", [writer_buf.getvalue()])
            index["next_machine_id"] = max(index.get("next_machine_id", 1), machine_id + 1)
            self._write_index(index)
        logger.debug(f"Registered machine {machine_id} ({name})")
        return machine_id

    def ensure_machine(self, machine_id: int, name: str, description: str = "") -> int:
        if machine_id not in self.machines():
            self.insert_machine(name, description, machine_id)
        return machine_id

    def quantity_ids(self) -> Dict[Quantity, int]:
        return {Quantity(r["name"]): int(r["quantity_id"]) for r in self._read_rows("quantity")}

    def ensure_quantities(self) -> Dict[Quantity, int]:
        """Register every quantity (with unit and symbol) that is not registered yet."""
        with self._lock():
            ids = self.quantity_ids()
            next_id = max(ids.values(), default=0) + 1
            lines = []
            for q in Quantity:
                if q not in ids:
                    ids[q] = next_id
                    lines.append(f"{next_id},{q.value},{q.unit},{q.symbol}")
                    next_id += 1
            self._append("quantity", lines)
        return ids

    def _quantity_id(self, quantity: Quantity) -> int:
        ids = self.quantity_ids()
        q = Quantity(quantity)
        if q not in ids:
            raise ForeignKeyError("quantity", "name", q.value)
        return ids[q]

    # -------------------------------------------------------------------- runs

    def _load_runs(self) -> Dict[int, RunRecord]:
        stat = self._path("run").stat()
        signature = (stat.st_mtime_ns, stat.st_size)
        if signature != self._runs_signature:
            self._runs = {int(r["run_id"]): RunRecord.from_row(r) for r in self._read_rows("run")}
            self._runs_signature = signature
        return self._runs

    def insert_run(self, record: RunRecord) -> int:
        """Append a run row and return its id (the next counter value when unset).

        Raises:
            ForeignKeyError: The machine does not exist
            IntegrityError: The run id exists already
        """
        with self._lock():
            if record.machine_id not in self.machines():
                raise ForeignKeyError("run", "machine_id", record.machine_id)
            runs = self._load_runs()
            index = self._read_index()
            run_id = record.run_id if record.run_id is not None else index["next_run_id"]
            if run_id in runs:
                raise IntegrityError("run", run_id)
            row = record.with_run_id(run_id).to_row()
            self._append("run", [",".join(row[c] for c in TABLE_COLUMNS["run"])])
            index["next_run_id"] = max(index["next_run_id"], run_id + 1)
            self._write_index(index)
        return run_id

    def get_run(self, run_id: int) -> RunRecord:
        runs = self._load_runs()
        if run_id not in runs:
            raise NotFoundError("run", run_id)
        return runs[run_id]

    def list_runs(self) -> List[RunRecord]:
        return [self._load_runs()[k] for k in sorted(self._load_runs())]

    def update_run_status(self, run_id: int, status: RunStatus) -> RunRecord:
        with self._lock():
            runs = dict(self._load_runs())
            if run_id not in runs:
                raise NotFoundError("run", run_id)
            runs[run_id] = runs[run_id].with_status(status)
            self._rewrite("run", (runs[k].to_row() for k in sorted(runs)))
            stat = self._path("run").stat()
            self._runs, self._runs_signature = runs, (stat.st_mtime_ns, stat.st_size)
        return runs[run_id]

    # ------------------------------------------------------------------ series

    def _refresh(self, table: SeriesTable) -> _SeriesCache:
        cache = self._series[table]
        path = self._path(table.value)
        if path.stat().st_size < cache.offset:
            cache = self._series[table] = _SeriesCache()
        with open(path, "rb") as f:
            f.seek(cache.offset)
            text, consumed = _complete_lines(f.read())
        if not consumed:
            return cache
        first_read = cache.offset == 0
        cache.offset += consumed
        lines = text.split("\n")[:-1]
        if first_read:
            lines = lines[1:]
        has_replication = table is SeriesTable.SIMULATIONDATAPOINT
        grouped: Dict[SeriesKey, Tuple[List[float], List[float]]] = {}
        for line in lines:
            cols = line.split(",")
            if has_replication:
                key: SeriesKey = (int(cols[0]), int(cols[2]), int(cols[3]))
            else:
                key = (int(cols[0]), int(cols[2]))
            if key not in grouped:
                grouped[key] = ([], [])
                cache.machines.setdefault(key, int(cols[1]))
            ts, vs = grouped[key]
            ts.append(float(cols[-2]))
            vs.append(float(cols[-1]))
        for key, (ts, vs) in grouped.items():
            cache.chunks.setdefault(key, []).append((np.array(ts), np.array(vs)))
        return cache

    @staticmethod
    def _as_arrays(samples: Samples) -> Tuple[np.ndarray, np.ndarray]:
        if isinstance(samples, Trace):
            return samples.t_s, samples.values
        pairs = np.asarray(list(samples), dtype=float).reshape(-1, 2)
        return pairs[:, 0], pairs[:, 1]

    def _series_lines(
        self,
        table: SeriesTable,
        run: RunRecord,
        quantity_id: int,
        t: np.ndarray,
        values: np.ndarray,
        replication: Optional[int],
        cache: _SeriesCache,
    ) -> List[str]:
        if t.shape != values.shape:
            raise PreconditionError("insert_series", "timestamps and values differ in length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(values))):
            raise PreconditionError("insert_series", "samples must be finite")
        key: SeriesKey = (run.run_id, quantity_id) if replication is None else (run.run_id, quantity_id, replication)
        if np.unique(t).size != t.size:
            raise IntegrityError(table.value, key, f"Duplicate timestamps within one batch for {key}")
        existing_t, _ = cache.series(key)
        if existing_t.size and np.isin(t, existing_t).any():
            raise IntegrityError(table.value, key, f"Samples for {key} already exist at some timestamps")
        if table is SeriesTable.TRAJECTORY and not existing_t.size and t.size and float(np.min(t)) != 0.0:
            raise IntegrityError(table.value, key, "Trajectory samples must be run-relative (start at t = 0)")
        prefix = f"{run.run_id},{run.machine_id},{quantity_id}," + ("" if replication is None else f"{replication},")
        return [f"{prefix}{ti!r},{vi!r}" for ti, vi in zip(t.tolist(), values.tolist())]

    def insert_series(
        self,
        table: Union[SeriesTable, str],
        run_id: int,
        quantity: Quantity,
        samples: Samples,
        replication: Optional[int] = None,
    ) -> int:
        """Append one series batch and return the number of rows written.

        Raises:
            PreconditionError: simulationdatapoint without a replication index
            ForeignKeyError: Unknown run or quantity
            IntegrityError: A (keys, t) pair already exists
        """
        table = SeriesTable(table)
        if table is SeriesTable.SIMULATIONDATAPOINT and replication is None:
            raise PreconditionError("insert_series", "simulationdatapoint rows need a replication index")
        if table is not SeriesTable.SIMULATIONDATAPOINT:
            replication = None
        t, values = self._as_arrays(samples)
        with self._lock():
            runs = self._load_runs()
            if run_id not in runs:
                raise ForeignKeyError(table.value, "run_id", run_id)
            quantity_id = self._quantity_id(quantity)
            cache = self._refresh(table)
            lines = self._series_lines(table, runs[run_id], quantity_id, t, values, replication, cache)
            self._append(table.value, lines)
        return len(lines)

    def insert_trace(self, trace: Trace) -> int:
        if trace.kind not in KIND_TABLES:
            raise PreconditionError("insert_trace", f"{trace.kind.value} traces are derived, not stored")
        return self.insert_series(KIND_TABLES[trace.kind], trace.run_id, trace.quantity, trace, trace.replication)

    def insert_replications(self, outcome: ReplicationOutcome) -> int:
        """Store every replication of every state quantity as one batch."""
        with self._lock():
            runs = self._load_runs()
            if outcome.run_id not in runs:
                raise ForeignKeyError("simulationdatapoint", "run_id", outcome.run_id)
            cache = self._refresh(SeriesTable.SIMULATIONDATAPOINT)
            t = np.arange(outcome.states.shape[2]) * outcome.sample_period_s
            lines: List[str] = []
            for i, q in enumerate(STATE_QUANTITIES):
                quantity_id = self._quantity_id(q)
                for r in range(outcome.replications):
                    lines += self._series_lines(
                        SeriesTable.SIMULATIONDATAPOINT,
                        runs[outcome.run_id],
                        quantity_id,
                        t,
                        outcome.states[r, i],
                        r,
                        cache,
                    )
            self._append(SeriesTable.SIMULATIONDATAPOINT.value, lines)
        return len(lines)

    def insert_trajectory(self, trajectory: Trajectory) -> int:
        return sum(self.insert_trace(trace) for trace in trajectory.to_traces().values())

    def query_traces(
        self,
        run_id: int,
        quantity: Quantity,
        kind: TraceKind = TraceKind.MEASURED,
        replication: Optional[int] = None,
    ) -> Trace:
        """Read one series ordered by time; an empty trace when nothing was stored.

        Summary kinds are recomputed from the stored replications.

        Raises:
            NotFoundError: Unknown run
            PreconditionError: Simulated samples requested without a replication index
        """
        self.get_run(run_id)
        quantity, kind = Quantity(quantity), TraceKind(kind)
        if kind in (TraceKind.SIMULATED_MEAN, TraceKind.SIMULATED_STD):
            summary = self.query_summary(run_id, quantity)
            trace = summary.mean_trace() if kind is TraceKind.SIMULATED_MEAN else summary.std_trace()
            return trace if trace is not None else Trace(run_id, quantity, kind, [], [])
        table = KIND_TABLES[kind]
        if table is SeriesTable.SIMULATIONDATAPOINT and replication is None:
            raise PreconditionError("query_traces", "simulated samples need a replication index")
        ids = self.quantity_ids()
        if quantity not in ids:
            return Trace(run_id, quantity, kind, [], [])
        key: SeriesKey = (run_id, ids[quantity]) if replication is None else (run_id, ids[quantity], replication)
        t, values = self._refresh(table).series(key)
        return Trace(run_id, quantity, kind, t.copy(), values.copy(), replication)

    def query_replications(self, run_id: int, quantity: Quantity) -> List[Trace]:
        self.get_run(run_id)
        ids = self.quantity_ids()
        quantity = Quantity(quantity)
        if quantity not in ids:
            return []
        cache = self._refresh(SeriesTable.SIMULATIONDATAPOINT)
        reps = sorted(k[2] for k in cache.chunks if k[0] == run_id and k[1] == ids[quantity])
        return [self.query_traces(run_id, quantity, TraceKind.SIMULATED, r) for r in reps]

    def query_summary(self, run_id: int, quantity: Quantity) -> ReplicationSummary:
        traces = self.query_replications(run_id, quantity)
        if not traces:
            raise NotFoundError("replications", (run_id, Quantity(quantity).value))
        return summarize(traces)

    def query_trajectory(self, run_id: int) -> Trajectory:
        run = self.get_run(run_id)
        x = self.query_traces(run_id, Quantity.POSITION, TraceKind.REFERENCE)
        v = self.query_traces(run_id, Quantity.VELOCITY, TraceKind.REFERENCE)
        if len(x) == 0 or not np.array_equal(x.t_s, v.t_s):
            raise NotFoundError("trajectory", run_id)
        return Trajectory(run_id, x.t_s, x.values, v.values, run.v_max_used_mps, run.sample_period_s)

    def derive_trajectory(self, run_id: int) -> Trajectory:
        """Rebuild the experiment input from the logged commanded velocity and position."""
        run = self.get_run(run_id)
        v_cmd = self.query_traces(run_id, Quantity.COMMANDED_VELOCITY, TraceKind.MEASURED)
        x = self.query_traces(run_id, Quantity.POSITION, TraceKind.MEASURED)
        if len(v_cmd) == 0 or len(x) == 0:
            raise NotFoundError("commanded velocity log", run_id)
        bound = run.v_max_used_mps
        if not np.isfinite(bound):
            bound = float(np.max(np.abs(v_cmd.values)))
        return Trajectory.from_commanded_velocity(run_id, v_cmd.values, float(x.values[0]), bound, run.sample_period_s)

    # -------------------------------------------------------------- simulation

    def insert_simulation(self, run_id: int, replications: int) -> None:
        with self._lock():
            runs = self._load_runs()
            if run_id not in runs:
                raise ForeignKeyError("simulation", "run_id", run_id)
            if any(int(r["run_id"]) == run_id for r in self._read_rows("simulation")):
                raise IntegrityError("simulation", run_id)
            self._append("simulation", [f"{run_id},{runs[run_id].machine_id},{replications}"])

    def query_simulation(self, run_id: int) -> Optional[int]:
        for row in self._read_rows("simulation"):
            if int(row["run_id"]) == run_id:
                return int(row["replications"])
        return None

    # ----------------------------------------------------------------- metrics

    def insert_metrics(self, results: Sequence[MetricResult]) -> int:
        """Store metric results; absent (degenerate) metrics are simply not passed in.

        Raises:
            ForeignKeyError: Unknown run
            IntegrityError: A (run, quantity, metric) key exists already
        """
        with self._lock():
            runs = self._load_runs()
            ids = self.quantity_ids()
            by_table: Dict[str, List[str]] = {}
            existing: Dict[str, set] = {}
            seen = set()
            for result in results:
                table = METRIC_TABLES[result.metric]
                if result.run_id not in runs:
                    raise ForeignKeyError(table, "run_id", result.run_id)
                if result.quantity not in ids:
                    raise ForeignKeyError(table, "quantity_id", result.quantity.value)
                key = (table, result.run_id, ids[result.quantity])
                if table not in existing:
                    existing[table] = {(int(r["run_id"]), int(r["quantity_id"])) for r in self._read_rows(table)}
                if key in seen or key[1:] in existing[table]:
                    raise IntegrityError(table, key[1:], f"Metric {result.metric.value} already stored for {key[1:]}")
                seen.add(key)
                by_table.setdefault(table, []).append(
                    f"{result.run_id},{runs[result.run_id].machine_id},{ids[result.quantity]},"
                    f"{_float_text(result.value)},{result.included},{result.excluded}"
                )
            for table, lines in by_table.items():
                self._append(table, lines)
        return len(seen)

    def insert_metric(self, result: MetricResult) -> None:
        self.insert_metrics([result])

    def query_metrics(self, run_id: int) -> List[MetricResult]:
        self.get_run(run_id)
        names = {v: k for k, v in self.quantity_ids().items()}
        results = []
        for metric, table in METRIC_TABLES.items():
            for row in self._read_rows(table):
                if int(row["run_id"]) == run_id:
                    results.append(
                        MetricResult(
                            run_id,
                            names[int(row["quantity_id"])],
                            metric,
                            float(row["value"]),
                            int(row["included"]),
                            int(row["excluded"]),
                        )
                    )
        order = {q: i for i, q in enumerate(Quantity)}
        metric_order = {m: i for i, m in enumerate(MetricName)}
        return sorted(results, key=lambda r: (order[r.quantity], metric_order[r.metric]))

    # ---------------------------------------------------- verdicts, thresholds

    def insert_verdict(self, verdict: Verdict) -> None:
        with self._lock():
            if verdict.run_id not in self._load_runs():
                raise ForeignKeyError("verdict", "run_id", verdict.run_id)
            if any(v.run_id == verdict.run_id for v in self.query_verdicts()):
                raise IntegrityError("verdict", verdict.run_id)
            with open(self.root / "verdicts.jsonl", "a", encoding="utf-8") as f:
                f.write(json.dumps(verdict.to_payload(), sort_keys=True) + "\n")

    def query_verdicts(self) -> List[Verdict]:
        path = self.root / "verdicts.jsonl"
        if not path.exists():
            return []
        with open(path, "rb") as f:
            text, _ = _complete_lines(f.read())
        return [Verdict.from_payload(json.loads(line)) for line in text.splitlines() if line]

    def query_verdict(self, run_id: int) -> Optional[Verdict]:
        for verdict in self.query_verdicts():
            if verdict.run_id == run_id:
                return verdict
        return None

    def save_thresholds(self, table: ThresholdTable) -> None:
        with self._lock():
            table.save(self.root / "thresholds.json")

    def load_thresholds(self) -> Optional[ThresholdTable]:
        path = self.root / "thresholds.json"
        return ThresholdTable.load(path) if path.exists() else None

    # --------------------------------------------------------------- integrity

    def row_counts(self) -> Dict[str, int]:
        counts = {}
        for table in TABLE_COLUMNS:
            with open(self._path(table), "rb") as f:
                counts[table] = max(f.read().count(b"\n") - 1, 0)
        return counts

    def check_integrity(self) -> List[str]:
        """Return every referential or uniqueness violation found (empty when sound)."""
        problems: List[str] = []
        machines = set(self.machines())
        quantities = set(self.quantity_ids().values())
        runs = self._load_runs()
        for run in runs.values():
            if run.machine_id not in machines:
                problems.append(f"run {run.run_id}: unknown machine {run.machine_id}")
        for table in SeriesTable:
            self._series[table] = _SeriesCache()
            cache = self._refresh(table)
            for key, parts in cache.chunks.items():
                run_id, quantity_id = key[0], key[1]
                if run_id not in runs:
                    problems.append(f"{table.value} {key}: unknown run {run_id}")
                elif cache.machines[key] != runs[run_id].machine_id:
                    problems.append(f"{table.value} {key}: machine differs from the run's")
                if quantity_id not in quantities:
                    problems.append(f"{table.value} {key}: unknown quantity {quantity_id}")
                t, _ = cache.series(key)
                if np.unique(t).size != t.size:
                    problems.append(f"{table.value} {key}: duplicate timestamps")
                if table is SeriesTable.TRAJECTORY and t.size and t[0] != 0.0:
                    problems.append(f"{table.value} {key}: first sample at t = {t[0]!r}, not 0")
        for table in ("simulation", *METRIC_TABLES.values(), "metric_reliability"):
            keys = []
            for row in self._read_rows(table):
                run_id = int(row["run_id"])
                if run_id not in runs:
                    problems.append(f"{table}: unknown run {run_id}")
                if "quantity_id" in row and int(row["quantity_id"]) not in quantities:
                    problems.append(f"{table}: unknown quantity {row['quantity_id']}")
                keys.append((run_id, row.get("quantity_id")))
            if len(set(keys)) != len(keys):
                problems.append(f"{table}: duplicate keys")
        for verdict in self.query_verdicts():
            if verdict.run_id not in runs:
                problems.append(f"verdict: unknown run {verdict.run_id}")
        return problems

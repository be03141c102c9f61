"""Read-only REST API over a validation store."""

import logging
import math
from datetime import datetime, timezone
from typing import List, Optional

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel

from store.errors import NotFoundError
from store.timeseries import TimeSeriesStore
from testbed.errors import PreconditionError
from twin.errors import ValidationError
from twin.traces import Quantity, TraceKind

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api", tags=["api"])

# Set by main.py during initialization
_store: Optional[TimeSeriesStore] = None


def init_api(store: Optional[TimeSeriesStore]) -> None:
    """Initialize API with the store it serves."""
    global _store
    _store = store


def _require_store() -> TimeSeriesStore:
    if _store is None:
        raise HTTPException(status_code=503, detail="Store not initialized")
    return _store


# Response models
class HealthResponse(BaseModel):
    status: str
    timestamp: str
    store: Optional[str]
    runs: int


class RunSummary(BaseModel):
    run_id: int
    machine_id: int
    start_time: str
    fault_kind: str
    fault_delta: float
    status: str
    verdict: Optional[str] = None


class BreachModel(BaseModel):
    metric: str
    quantity: str
    value: float
    threshold: float


class RunDetail(RunSummary):
    v_max_used_mps: Optional[float] = None
    sample_period_s: float
    replications: Optional[int] = None
    breaches: List[BreachModel] = []


class MetricRow(BaseModel):
    quantity: str
    metric: str
    value: float
    included: int
    excluded: int
    threshold: Optional[float] = None
    breached: Optional[bool] = None


class TraceResponse(BaseModel):
    run_id: int
    quantity: str
    kind: str
    replication: Optional[int] = None
    t_s: List[float]
    values: List[float]


def _summary(store: TimeSeriesStore, run_id: int) -> RunSummary:
    run = store.get_run(run_id)
    verdict = store.query_verdict(run_id)
    return RunSummary(
        run_id=run_id,
        machine_id=run.machine_id,
        start_time=run.start_time,
        fault_kind=run.fault.kind.value,
        fault_delta=run.fault.delta_fraction,
        status=run.status.value,
        verdict=verdict.status.value if verdict else None,
    )


# Endpoints
@router.get("/health", response_model=HealthResponse)
async def health_check():
    """Health check endpoint."""
    return HealthResponse(
        status="ok" if _store is not None else "no_store",
        timestamp=datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
        store=str(_store.root) if _store is not None else None,
        runs=len(_store.list_runs()) if _store is not None else 0,
    )


@router.get("/runs", response_model=List[RunSummary])
async def list_runs():
    """List every run in the store."""
    store = _require_store()
    return [_summary(store, run.run_id) for run in store.list_runs()]


@router.get("/runs/{run_id}", response_model=RunDetail)
async def get_run(run_id: int):
    """Run metadata with its verdict."""
    store = _require_store()
    try:
        summary = _summary(store, run_id)
    except NotFoundError:
        raise HTTPException(status_code=404, detail=f"Run not found: {run_id}")
    run = store.get_run(run_id)
    verdict = store.query_verdict(run_id)
    return RunDetail(
        **summary.model_dump(),
        v_max_used_mps=run.v_max_used_mps if math.isfinite(run.v_max_used_mps) else None,
        sample_period_s=run.sample_period_s,
        replications=store.query_simulation(run_id),
        breaches=[BreachModel(**b.to_dict()) for b in verdict.breaches] if verdict else [],
    )


@router.get("/runs/{run_id}/metrics", response_model=List[MetricRow])
async def get_metrics(run_id: int):
    """Stored metric values next to the calibrated thresholds."""
    store = _require_store()
    try:
        results = store.query_metrics(run_id)
    except NotFoundError:
        raise HTTPException(status_code=404, detail=f"Run not found: {run_id}")
    table = store.load_thresholds()
    rows = []
    for r in results:
        threshold = table.entries.get((r.metric, r.quantity)) if table else None
        rows.append(
            MetricRow(
                quantity=r.quantity.value,
                metric=r.metric.value,
                value=r.value,
                included=r.included,
                excluded=r.excluded,
                threshold=threshold,
                breached=(r.value > threshold) if threshold is not None else None,
            )
        )
    return rows


@router.get("/runs/{run_id}/traces/{quantity}", response_model=TraceResponse)
async def get_trace(run_id: int, quantity: str, kind: str = "measured", replication: Optional[int] = None):
    """One stored trace; summary kinds are recomputed from the replications."""
    store = _require_store()
    try:
        q, k = Quantity(quantity), TraceKind(kind)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    try:
        trace = store.query_traces(run_id, q, k, replication)
    except NotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except (PreconditionError, ValidationError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    return TraceResponse(
        run_id=run_id,
        quantity=q.value,
        kind=k.value,
        replication=replication,
        t_s=trace.t_s.tolist(),
        values=trace.values.tolist(),
    )

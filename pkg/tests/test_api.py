"""Tests for REST API endpoints."""

import pytest
from fastapi.testclient import TestClient

from server.api import init_api
from server.main import app
from store.records import RunRecord, RunStatus
from testbed.params import FaultKind, FaultSpec
from testbed.trajectory import generate_trajectory
from twin.metrics import MetricName, MetricResult
from twin.replication import ReplicationPlan, run_replications
from twin.traces import Quantity, Trace, TraceKind
from twin.validator import Breach, ThresholdTable, Verdict, VerdictStatus


@pytest.fixture
def populated(store, params):
    """A store with one validated run and one aborted run."""
    run_id = store.insert_run(
        RunRecord(fault=FaultSpec(FaultKind.VELOCITY_DEFICIT, 0.1), v_max_used_mps=0.281, status=RunStatus.VALIDATED)
    )
    store.insert_run(RunRecord(status=RunStatus.ABORTED))
    store.insert_trace(Trace(run_id, Quantity.POSITION, TraceKind.MEASURED, [0.0, 0.01], [0.1, 0.1005]))
    store.insert_metrics(
        [
            MetricResult(run_id, Quantity.POSITION, MetricName.RMSE, 0.02, 2),
            MetricResult(run_id, Quantity.POSITION, MetricName.MAX_REL_ERR, 0.001, 2),
        ]
    )
    store.save_thresholds(
        ThresholdTable({(MetricName.RMSE, Quantity.POSITION): 0.01, (MetricName.MAX_REL_ERR, Quantity.POSITION): 0.1})
    )
    breach = Breach(MetricName.RMSE, Quantity.POSITION, 0.02, 0.01)
    store.insert_verdict(Verdict(run_id, VerdictStatus.INVALID, (breach,), evaluated=2))

    trajectory = generate_trajectory(0.1, 0.6, params, run_id=run_id)
    outcome = run_replications(trajectory, params, ReplicationPlan(run_id, replications=3), n_samples=5)
    store.insert_replications(outcome)
    store.insert_simulation(run_id, 3)
    return store


@pytest.fixture
def client(populated):
    """Create test client."""
    init_api(populated)
    yield TestClient(app)
    init_api(None)


class TestHealthEndpoint:
    """Tests for /api/health endpoint."""

    def test_health_returns_ok(self, client, populated):
        """Health endpoint reports the store and its run count."""
        response = client.get("/api/health")
        assert response.status_code == 200
        data = response.json()
        assert data["status"] == "ok"
        assert data["runs"] == 2
        assert data["store"] == str(populated.root)
        assert data["timestamp"].endswith("Z")

    def test_health_without_store(self):
        """Without a store the API is up but empty."""
        init_api(None)
        data = TestClient(app).get("/api/health").json()
        assert data["status"] == "no_store"
        assert data["runs"] == 0

    def test_runs_need_store(self):
        """Data endpoints answer 503 until a store is attached."""
        init_api(None)
        assert TestClient(app).get("/api/runs").status_code == 503


class TestRunsEndpoint:
    """Tests for /api/runs endpoints."""

    def test_list_runs(self, client):
        """Every run is listed with its status and verdict."""
        runs = client.get("/api/runs").json()
        assert [r["run_id"] for r in runs] == [1, 2]
        assert runs[0]["verdict"] == "invalid"
        assert runs[0]["fault_kind"] == "velocity_deficit"
        assert runs[1]["status"] == "aborted"
        assert runs[1]["verdict"] is None

    def test_run_detail(self, client):
        """Run detail carries breaches and the replication count."""
        data = client.get("/api/runs/1").json()
        assert data["replications"] == 3
        assert data["v_max_used_mps"] == 0.281
        assert data["breaches"] == [{"metric": "rmse", "quantity": "position", "value": 0.02, "threshold": 0.01}]

    def test_run_detail_unknown_bound(self, client):
        """A run without a recorded bound reports null."""
        assert client.get("/api/runs/2").json()["v_max_used_mps"] is None

    def test_run_not_found(self, client):
        """Unknown runs answer 404."""
        response = client.get("/api/runs/99")
        assert response.status_code == 404
        assert "not found" in response.json()["detail"].lower()


class TestMetricsEndpoint:
    """Tests for /api/runs/{id}/metrics."""

    def test_metrics_with_thresholds(self, client):
        """Metric rows are flagged against their thresholds."""
        rows = {r["metric"]: r for r in client.get("/api/runs/1/metrics").json()}
        assert rows["rmse"]["breached"] is True
        assert rows["rmse"]["threshold"] == 0.01
        assert rows["max_rel_err"]["breached"] is False

    def test_metrics_unknown_run(self, client):
        """Unknown runs answer 404."""
        assert client.get("/api/runs/99/metrics").status_code == 404


class TestTracesEndpoint:
    """Tests for /api/runs/{id}/traces/{quantity}."""

    def test_measured_trace(self, client):
        """Measured samples are returned as stored."""
        data = client.get("/api/runs/1/traces/position").json()
        assert data["t_s"] == [0.0, 0.01]
        assert data["values"] == [0.1, 0.1005]

    def test_replication_trace(self, client):
        """One replication is addressed by its index."""
        data = client.get("/api/runs/1/traces/velocity", params={"kind": "simulated", "replication": 2}).json()
        assert data["replication"] == 2
        assert len(data["values"]) == 5

    def test_summary_trace(self, client):
        """Mean traces are recomputed from the replications."""
        data = client.get("/api/runs/1/traces/position", params={"kind": "simulated_mean"}).json()
        assert len(data["t_s"]) == 5

    def test_simulated_needs_replication(self, client):
        """Raw simulated samples need a replication index."""
        assert client.get("/api/runs/1/traces/position", params={"kind": "simulated"}).status_code == 400

    def test_bad_quantity(self, client):
        """Unknown quantities answer 400."""
        assert client.get("/api/runs/1/traces/torque").status_code == 400

    def test_trace_unknown_run(self, client):
        """Unknown runs answer 404."""
        assert client.get("/api/runs/99/traces/position").status_code == 404

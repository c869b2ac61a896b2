"""Live vetting service: one HTTP session per human-driven test run.

A session wraps the active-testing loop around an external oracle: the
strategy proposes a pending batch, a human answers item by item, and when
the batch completes the estimator refits and a new estimate snapshot is
versioned onto the history. Every state change is appended to a per-session
JSONL event log; restarting the service replays the logs and reconstructs
identical sessions.

Endpoints (JSON bodies, RFC 3339 timestamps):

    POST /sessions                  create a session
    GET  /sessions/{id}/batch       current or next pending batch
    POST /sessions/{id}/vets        submit one answer
    GET  /sessions/{id}/estimate    current estimate snapshot
    GET  /sessions/{id}/history     vet events and estimate trajectory
    GET  /health

Errors are JSON ``{code, message, field?}`` with 400/404/409 statuses.
"""

from __future__ import annotations

import json
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .engine import ActiveRun, PoolTask, RunConfig, _make_driver
from .errors import ActiveTestError, ConfigError
from .io import load_tag_dataset
from .metrics import AveragePrecision, PrecAtK
from .pool import EvaluationPool


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None,
                 extra: dict | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field
        self.extra = extra

    def payload(self) -> dict:
        body = {"code": self.code, "message": self.message}
        if self.field:
            body["field"] = self.field
        if self.extra:
            body.update(self.extra)
        return body


def _now() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_session_config(body: dict) -> RunConfig:
    """Validate the client's config block into a RunConfig."""
    metric_obj = body.get("metric") or {}
    kind = metric_obj.get("kind")
    if kind == "prec_at_k":
        k = metric_obj.get("k")
        if not isinstance(k, int) or k < 1:
            raise ApiError(400, "validation", "metric.k must be a positive integer", "metric.k")
        metric = PrecAtK(k)
    elif kind == "average_precision":
        metric = AveragePrecision()
    else:
        raise ApiError(
            400, "validation",
            "metric.kind must be 'prec_at_k' or 'average_precision'", "metric.kind",
        )
    estimator = body.get("estimator", "naive")
    strategy = body.get("strategy", "random")
    batch_size = body.get("batch_size", 10)
    if not isinstance(batch_size, int) or batch_size < 1:
        raise ApiError(400, "validation", "batch_size must be a positive integer", "batch_size")
    seed = body.get("seed", 0)
    if not isinstance(seed, int):
        raise ApiError(400, "validation", "seed must be an integer", "seed")
    try:
        # placeholder budget; sessions re-bind it to the pool size on load
        return RunConfig(
            metric=metric,
            estimator=estimator,
            strategy=strategy,
            budget=batch_size,
            batch_size=batch_size,
            seed=seed,
        )
    except ConfigError as exc:
        raise ApiError(400, "validation", str(exc))


class Session:
    """Serialized-writer session state; reads return immutable snapshots."""

    def __init__(self, session_id: str, dataset: str, pool: EvaluationPool, config: RunConfig, log_path: Path):
        self.id = session_id
        self.dataset = dataset
        self.pool = pool
        self.config = config
        self.log_path = log_path
        self.lock = threading.Lock()
        self.pending: list[str] = []
        self.answered: dict[str, int] = {}
        self.vet_events: list[dict] = []
        self.step = 0
        driver = _make_driver(config.estimator, pool, None, 0.0)
        self.run = ActiveRun(
            [PoolTask(pool, driver)],
            _relaxed_config(config, pool),
        )
        self.estimate_history: list[dict] = []
        self._snapshot: dict = {}
        self._record_estimate()

    # -- snapshots ----------------------------------------------------

    def _record_estimate(self):
        step = self.run.snapshot_step()
        snap = {
            "session_id": self.id,
            "step": self.step,
            "vetted_fraction": step.vetted_fraction,
            "n_vetted": step.n_vetted,
            "per_category": step.estimate_per_category,
            "overall": step.overall,
            "exact": self.pool.n_unvetted == 0,
        }
        self.estimate_history.append(snap)
        self._snapshot = snap
        self.step += 1

    def estimate_snapshot(self) -> dict:
        return self._snapshot

    # -- event log ----------------------------------------------------

    def _append_event(self, event: dict):
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")

    def log_created(self, config_body: dict):
        self._append_event(
            {"type": "created", "ts": _now(), "session_id": self.id,
             "dataset": self.dataset, "config": config_body}
        )

    # -- operations ---------------------------------------------------

    def next_batch(self, record: bool = True) -> dict:
        with self.lock:
            if self.pending:
                return self._batch_payload()
            if self.pool.n_unvetted == 0:
                return {"status": "exhausted", "items": [],
                        "estimate": self._snapshot}
            batch = self.run.select_next_batch(self.config.batch_size)
            if not batch:
                return {"status": "exhausted", "items": [], "estimate": self._snapshot}
            self.pending = list(batch)
            if record:
                self._append_event(
                    {"type": "batch", "ts": _now(), "items": list(batch)}
                )
            return self._batch_payload()

    def _batch_payload(self) -> dict:
        items = []
        for item_id in self.pending:
            it = self.pool.item(item_id)
            items.append(
                {
                    "id": it.item_id,
                    "category": it.category,
                    "score": it.score,
                    "noisy_label": it.label.noisy,
                    "display": it.display,
                }
            )
        return {"status": "pending", "items": items}

    def submit_vet(self, item_id: str, truth: int, record: bool = True, ts: str | None = None) -> dict:
        with self.lock:
            if item_id in self.answered:
                if self.answered[item_id] == truth:
                    return {"status": "replay", "estimate": self._snapshot,
                            "pending_left": len(self.pending)}
                raise ApiError(
                    409, "conflict",
                    f"item {item_id!r} already vetted with truth {self.answered[item_id]}",
                    extra={"recorded_truth": self.answered[item_id]},
                )
            if item_id not in self.pending:
                raise ApiError(
                    409, "conflict", f"item {item_id!r} is not in the pending batch"
                )
            self.pool.vet(item_id, truth)
            self.answered[item_id] = truth
            self.pending.remove(item_id)
            event = {"type": "vet", "ts": ts or _now(), "item": item_id, "truth": truth}
            self.vet_events.append(event)
            if record:
                self._append_event(event)
            refit = not self.pending
            if refit:
                self.run.refit()
                self._record_estimate()
            return {
                "status": "refit" if refit else "recorded",
                "pending_left": len(self.pending),
                "estimate": self._snapshot,
            }

    def history_payload(self) -> dict:
        with self.lock:
            return {
                "session_id": self.id,
                "vets": list(self.vet_events),
                "estimates": list(self.estimate_history),
            }


def _relaxed_config(config: RunConfig, pool: EvaluationPool) -> RunConfig:
    # live sessions run until the pool is exhausted
    from dataclasses import replace

    budget = max(pool.n_unvetted, 0)
    if budget == 0:
        return replace(config, budget=0)
    return replace(config, budget=budget, batch_size=min(config.batch_size, budget))


class ServiceState:
    """Datasets on disk plus all live sessions, with event-log replay."""

    def __init__(self, datasets: dict[str, Path], data_dir: Path):
        self.datasets = datasets
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()
        self._replay_logs()

    def _load_pool(self, dataset: str) -> EvaluationPool:
        if dataset not in self.datasets:
            raise ApiError(404, "not_found", f"unknown dataset {dataset!r}", "dataset")
        pool = load_tag_dataset(self.datasets[dataset])
        # the human is the oracle; hidden simulation labels must not leak
        pool.strip_sim_truth()
        return pool

    def create_session(self, body: dict) -> Session:
        dataset = body.get("dataset")
        if not isinstance(dataset, str) or not dataset:
            raise ApiError(400, "validation", "dataset is required", "dataset")
        config = parse_session_config(body.get("config") or {})
        pool = self._load_pool(dataset)
        session_id = uuid.uuid4().hex[:12]
        log_path = self.data_dir / f"session-{session_id}.jsonl"
        try:
            session = Session(session_id, dataset, pool, config, log_path)
        except ConfigError as exc:
            raise ApiError(400, "validation", str(exc))
        session.log_created(body.get("config") or {})
        with self.lock:
            self.sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self.lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")
        return session

    def _replay_logs(self):
        for log_path in sorted(self.data_dir.glob("session-*.jsonl")):
            events = []
            with log_path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        events.append(json.loads(line))
            if not events or events[0].get("type") != "created":
                continue
            head = events[0]
            try:
                config = parse_session_config(head["config"])
                pool = self._load_pool(head["dataset"])
            except ApiError:
                continue  # dataset gone; leave the log untouched
            session = Session(head["session_id"], head["dataset"], pool, config, log_path)
            for event in events[1:]:
                if event["type"] == "batch":
                    with session.lock:
                        session.pending = [
                            i for i in event["items"] if i not in session.answered
                        ]
                elif event["type"] == "vet":
                    session.submit_vet(
                        event["item"], event["truth"], record=False, ts=event["ts"]
                    )
            self.sessions[session.id] = session


def create_app(datasets: dict[str, Path], data_dir: Path) -> FastAPI:
    state = ServiceState(datasets, data_dir)
    app = FastAPI(title="activetest vetting service")
    app.state.service = state

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.payload())

    @app.exception_handler(ActiveTestError)
    async def _domain_error(request: Request, exc: ActiveTestError):
        return JSONResponse(
            status_code=400, content={"code": "invalid", "message": str(exc)}
        )

    @app.get("/health")
    async def health():
        return {"status": "ok", "datasets": sorted(state.datasets), "sessions": len(state.sessions)}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await request.json()
        session = state.create_session(body)
        return {
            "session_id": session.id,
            "dataset": session.dataset,
            "estimate": session.estimate_snapshot(),
        }

    @app.get("/sessions/{session_id}/batch")
    async def get_batch(session_id: str):
        return state.get(session_id).next_batch()

    @app.post("/sessions/{session_id}/vets")
    async def submit_vet(session_id: str, request: Request):
        body = await request.json()
        item_id = body.get("item_id")
        truth = body.get("truth")
        if not isinstance(item_id, str) or not item_id:
            raise ApiError(400, "validation", "item_id is required", "item_id")
        if truth not in (0, 1):
            raise ApiError(400, "validation", "truth must be 0 or 1", "truth")
        return state.get(session_id).submit_vet(item_id, truth)

    @app.get("/sessions/{session_id}/estimate")
    async def get_estimate(session_id: str):
        return state.get(session_id).estimate_snapshot()

    @app.get("/sessions/{session_id}/history")
    async def get_history(session_id: str):
        return state.get(session_id).history_payload()

    return app

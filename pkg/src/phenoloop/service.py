"""HTTP/JSON service exposing run management, labeling queues, feature
review, iteration control, metrics, and explanations, backed by the loop
event log. One logical writer per run; training runs in a per-run background
worker whose status is polled via GET /runs/{id}."""

from __future__ import annotations

import json
import threading
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .corpus import load_corpus_file
from .loop import (
    AWAITING_LABELS,
    TERMINAL,
    ConflictError,
    LoopConfig,
    LoopError,
    LoopRun,
    LoopRunner,
)
from .automl import SearchSpace, load_model
from .shapley import export_waterfall
from .synth import GroundTruth, oracle_diagnosis

SCHEMA_VERSION = 1


class ServiceError(Exception):
    def __init__(self, status_code: int, code: str, message: str, required_state: str | None = None):
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message
        self.required_state = required_state

    def body(self) -> dict:
        payload = {"code": self.code, "message": self.message}
        if self.required_state:
            payload["required_state"] = self.required_state
        return payload


class CreateRunRequest(BaseModel):
    disease: str
    corpus: str
    config: dict = Field(default_factory=dict)
    idempotency_key: str | None = None


class LabelRequest(BaseModel):
    admission_id: str
    annotator: str
    label: bool


class VerdictsRequest(BaseModel):
    verdicts: dict[str, str]
    reviewer: str = "reviewer"


def _loop_config(disease: str, raw: dict) -> LoopConfig:
    search_raw = raw.pop("search", {})
    search = SearchSpace(
        families=tuple(search_raw.get("families", SearchSpace().families)),
        feature_counts=tuple(
            None if v is None else int(v)
            for v in search_raw.get("feature_counts", SearchSpace().feature_counts)
        ),
        max_resource=int(search_raw.get("max_resource", 9)),
        eta=int(search_raw.get("eta", 3)),
        budget_seconds=float(search_raw.get("budget_seconds", 120.0)),
        seed=int(search_raw.get("seed", raw.get("seed", 0))),
        cv_folds=int(search_raw.get("cv_folds", 5)),
        selection_method=search_raw.get("selection_method", "mutual_information"),
        n_jobs=int(search_raw.get("n_jobs", 1)),
    )
    allowed = {
        "seed",
        "train_fraction",
        "quota",
        "sample_n",
        "required_annotators",
        "max_iterations",
        "epsilon",
        "m_top",
        "threshold",
        "feature_scope",
        "background_rows",
        "explain_rows",
        "explain_coalitions",
    }
    unknown = set(raw) - allowed
    if unknown:
        raise ServiceError(422, "invalid", f"unknown config fields: {sorted(unknown)}")
    return LoopConfig(disease=disease, search=search, **raw)


class ManagedRun:
    """One run: its runner, its serialized-writer lock, and its single-worker
    training executor."""

    def __init__(self, run_id: str, runner: LoopRunner, corpus_path: str):
        self.run_id = run_id
        self.runner = runner
        self.corpus_path = corpus_path
        self.lock = threading.RLock()
        self.executor = ThreadPoolExecutor(max_workers=1)
        self.job_status = "idle"
        self.job_error: str | None = None
        self.ground_truth: GroundTruth | None = None
        gt_path = Path(corpus_path).parent / "ground_truth.json"
        if gt_path.exists():
            with open(gt_path, encoding="utf-8") as fh:
                self.ground_truth = GroundTruth.from_dict(json.load(fh))

    def submit(self, name: str, fn) -> None:
        self.job_status = name

        def wrapped():
            try:
                with self.lock:
                    fn()
                self.job_status = "idle"
                self.job_error = None
            except Exception as exc:  # surfaced via GET /runs/{id}
                self.job_status = "failed"
                self.job_error = f"{exc.__class__.__name__}: {exc}"
                traceback.print_exc()

        self.executor.submit(wrapped)

    def descriptor(self) -> dict:
        state = self.runner.state
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "disease": self.runner.config.disease,
            "corpus": self.corpus_path,
            "status": state.status if state.run_id else "Initializing",
            "job": self.job_status,
            "job_error": self.job_error,
            "iteration": len(state.iterations),
            "queue_size": len(state.queue_order),
            "pending_review": list(state.pending_review),
            "verdicts_received": state.verdicts_received,
            "config": self.runner.config.to_dict(),
            "has_oracle": self.ground_truth is not None,
        }


class RunManager:
    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.runs_dir = self.data_dir / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self.runs: dict[str, ManagedRun] = {}
        self.by_idempotency: dict[str, str] = {}
        self.response_cache: dict[tuple[str, str, str], dict] = {}
        self._lock = threading.Lock()
        self._reload()

    def _reload(self) -> None:
        for run_dir in sorted(self.runs_dir.glob("run-*")):
            desc_path = run_dir / "descriptor.json"
            events_path = run_dir / "events.jsonl"
            if not desc_path.exists():
                continue
            with open(desc_path, encoding="utf-8") as fh:
                desc = json.load(fh)
            corpus = load_corpus_file(desc["corpus"])
            config = LoopConfig.from_dict(desc["config"])
            runner = LoopRunner(
                corpus,
                config,
                run_id=desc["run_id"],
                log_path=None,
                model_dir=run_dir / "models",
            )
            if events_path.exists():
                runner.run = LoopRun.load(events_path)
                for record in runner.run.state.iterations:
                    if record.model_file and Path(record.model_file).exists():
                        runner.models[record.iteration] = load_model(record.model_file)
            managed = ManagedRun(desc["run_id"], runner, desc["corpus"])
            self.runs[desc["run_id"]] = managed
            if desc.get("idempotency_key"):
                self.by_idempotency[desc["idempotency_key"]] = desc["run_id"]

    def create(self, request: CreateRunRequest) -> dict:
        with self._lock:
            if request.idempotency_key and request.idempotency_key in self.by_idempotency:
                run_id = self.by_idempotency[request.idempotency_key]
                return self.runs[run_id].descriptor()
            corpus_path = Path(request.corpus)
            if not corpus_path.exists():
                raise ServiceError(422, "invalid", f"corpus file not readable: {request.corpus}")
            try:
                corpus = load_corpus_file(corpus_path)
            except Exception as exc:
                raise ServiceError(422, "invalid", f"corpus unparsable: {exc}") from exc
            config = _loop_config(request.disease, dict(request.config))
            run_id = f"run-{len(list(self.runs_dir.glob('run-*'))) + 1:04d}"
            run_dir = self.runs_dir / run_id
            run_dir.mkdir(parents=True, exist_ok=True)
            try:
                runner = LoopRunner(
                    corpus,
                    config,
                    run_id=run_id,
                    log_path=run_dir / "events.jsonl",
                    model_dir=run_dir / "models",
                )
            except LoopError as exc:
                raise ServiceError(422, "invalid", str(exc)) from exc
            with open(run_dir / "descriptor.json", "w", encoding="utf-8") as fh:
                json.dump(
                    {
                        "run_id": run_id,
                        "disease": request.disease,
                        "corpus": str(corpus_path),
                        "config": config.to_dict(),
                        "idempotency_key": request.idempotency_key,
                    },
                    fh,
                )
            managed = ManagedRun(run_id, runner, str(corpus_path))
            self.runs[run_id] = managed
            if request.idempotency_key:
                self.by_idempotency[request.idempotency_key] = run_id
            managed.submit("initializing", runner.setup)
            return managed.descriptor()

    def get(self, run_id: str) -> ManagedRun:
        managed = self.runs.get(run_id)
        if managed is None:
            raise ServiceError(404, "not_found", f"no run {run_id!r}")
        return managed


def _queue_item(managed: ManagedRun, annotator: str, skip: set[str] | None = None) -> dict | None:
    runner = managed.runner
    state = runner.state
    skip = skip or set()
    labeled_by_me = 0
    item_id = None
    first_skipped = None
    for admission_id in state.queue_order:
        gold = state.labels.get(admission_id)
        if gold and annotator in gold.labels:
            labeled_by_me += 1
            continue
        if gold and gold.consensus is not None:
            continue  # consensused admissions leave every queue
        if admission_id in skip:
            if first_skipped is None:
                first_skipped = admission_id
            continue
        if item_id is None:
            item_id = admission_id
    if item_id is None:
        item_id = first_skipped  # skipped items come back at the queue tail
    progress = {"labeled": labeled_by_me, "total": len(state.queue_order)}
    if item_id is None:
        return {"item": None, "progress": progress}
    admission = next(a for a in runner.cohort if a.admission_id == item_id)
    extraction = runner.matcher.extract(admission.note_text)
    from .corpus import Rejected, aggregate_admission, normalize_observation

    retained = []
    for obs in admission.observations:
        out = normalize_observation(obs, runner.catalog)
        if not isinstance(out, Rejected):
            retained.append(out)
    structured = aggregate_admission(retained)
    gold = state.labels.get(item_id)
    return {
        "item": {
            "admission_id": item_id,
            "note_text": admission.note_text,
            "mentions": [
                {
                    "hpo_id": m.hpo_id,
                    "start": m.start,
                    "end": m.end,
                    "text": m.matched_text,
                    "negated": m.negated,
                }
                for m in extraction.mentions
            ],
            "structured": {k: structured[k] for k in sorted(structured)},
            "labels": dict(gold.labels) if gold else {},
        },
        "progress": progress,
    }


def create_app(data_dir: str | Path, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="phenoloop service")
    manager = RunManager(Path(data_dir))
    app.state.manager = manager

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content=exc.body())

    def translate(exc: Exception) -> ServiceError:
        if isinstance(exc, ConflictError):
            return ServiceError(409, "conflict", str(exc), required_state=exc.required_state)
        if isinstance(exc, LoopError):
            return ServiceError(422, "invalid", str(exc))
        return ServiceError(500, "internal", f"{exc.__class__.__name__}: {exc}")

    def cached_mutation(run_id: str, endpoint: str, request: Request, compute):
        key = request.headers.get("Idempotency-Key")
        cache_key = (run_id, endpoint, key) if key else None
        if cache_key and cache_key in manager.response_cache:
            return manager.response_cache[cache_key]
        result = compute()
        if cache_key:
            manager.response_cache[cache_key] = result
        return result

    @app.post("/runs")
    async def create_run(request: CreateRunRequest):
        return manager.create(request)

    @app.get("/runs/{run_id}")
    async def get_run(run_id: str):
        return manager.get(run_id).descriptor()

    @app.get("/runs/{run_id}/queue/next")
    async def next_queue_item(run_id: str, annotator: str = Query(...), skip: str = Query("")):
        managed = manager.get(run_id)
        skipped = {s for s in skip.split(",") if s}
        with managed.lock:
            if managed.runner.state.run_id is None:
                raise ServiceError(409, "conflict", "run still initializing", AWAITING_LABELS)
            return _queue_item(managed, annotator, skipped)

    @app.post("/runs/{run_id}/labels")
    async def post_label(run_id: str, body: LabelRequest, request: Request):
        managed = manager.get(run_id)

        def compute():
            with managed.lock:
                try:
                    managed.runner.record_label(body.admission_id, body.annotator, body.label)
                except Exception as exc:
                    raise translate(exc) from exc
                gold = managed.runner.state.labels[body.admission_id]
                return {
                    "admission_id": body.admission_id,
                    "labels": dict(gold.labels),
                    "consensus": gold.consensus,
                }

        return cached_mutation(run_id, "labels", request, compute)

    @app.get("/runs/{run_id}/features/top")
    async def get_top_features(run_id: str, m: int = Query(20, ge=1)):
        managed = manager.get(run_id)
        with managed.lock:
            state = managed.runner.state
            if not state.iterations:
                raise ServiceError(
                    409, "conflict", "no completed iteration yet", AWAITING_LABELS
                )
            record = state.iterations[-1]
            shown = record.top_features[:m]
            return {
                "iteration": record.iteration,
                "features": [
                    {"feature": f, "mean_abs_phi": phi, "direction": d}
                    for f, phi, d in shown
                ],
                "beeswarm": {f: record.beeswarm.get(f, []) for f, _, _ in shown},
                "pending_review": list(state.pending_review),
                "verdicts_received": state.verdicts_received,
            }

    @app.post("/runs/{run_id}/features/verdicts")
    async def post_verdicts(run_id: str, body: VerdictsRequest, request: Request):
        managed = manager.get(run_id)

        def compute():
            with managed.lock:
                try:
                    managed.runner.record_verdicts(body.verdicts, body.reviewer)
                except Exception as exc:
                    raise translate(exc) from exc
                state = managed.runner.state
                return {
                    "accepted": len(body.verdicts),
                    "mask_size": len(state.mask),
                    "removed": sorted(state.removed_features),
                }

        return cached_mutation(run_id, "verdicts", request, compute)

    @app.post("/runs/{run_id}/iterate")
    async def trigger_iterate(run_id: str, request: Request):
        managed = manager.get(run_id)

        def compute():
            with managed.lock:
                if managed.job_status not in ("idle", "failed"):
                    raise ServiceError(
                        409, "conflict", f"a {managed.job_status} job is already running",
                        required_state=managed.runner.state.status,
                    )
                try:
                    managed.runner.run.require_iteration_allowed()
                except Exception as exc:
                    raise translate(exc) from exc
                managed.submit("training", managed.runner.run_iteration)
                return {"accepted": True, "job": "training"}

        return cached_mutation(run_id, "iterate", request, compute)

    @app.get("/runs/{run_id}/metrics")
    async def get_metrics(run_id: str):
        managed = manager.get(run_id)
        with managed.lock:
            runner = managed.runner
            state = runner.state
            payload = {
                "status": state.status,
                "iterations": [
                    {"iteration": r.iteration, "score": r.score, "config": r.config}
                    for r in state.iterations
                ],
                "report": state.report,
                "estimate": state.estimate,
            }
            if state.status in TERMINAL and state.report is None:
                try:
                    report = runner.gold_test_report()
                    payload["report"] = report.to_dict()
                    if managed.ground_truth is not None:
                        gt = managed.ground_truth
                        estimate = runner.entire_set_estimate(
                            lambda a: oracle_diagnosis(gt, a)
                        )
                        payload["estimate"] = state.estimate
                except Exception as exc:
                    raise translate(exc) from exc
            return payload

    @app.get("/runs/{run_id}/explanations/{admission_id}")
    async def get_explanation(run_id: str, admission_id: str):
        managed = manager.get(run_id)
        with managed.lock:
            runner = managed.runner
            if not runner.models:
                raise ServiceError(409, "conflict", "no trained model yet", AWAITING_LABELS)
            if admission_id not in set(runner.matrix.admission_ids):
                raise ServiceError(404, "not_found", f"no admission {admission_id!r}")
            try:
                explanation = runner.explain_admission(admission_id)
            except Exception as exc:
                raise translate(exc) from exc
            return {
                "admission_id": admission_id,
                "base_value": explanation.base_value,
                "model_output": explanation.model_output,
                "waterfall": export_waterfall(explanation),
            }

    if static_dir is not None and Path(static_dir).exists():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def serve(addr: str, data_dir: str, static_dir: str | None = None) -> None:
    import uvicorn

    host, _, port = addr.rpartition(":")
    app = create_app(data_dir, static_dir=static_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))

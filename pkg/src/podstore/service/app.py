"""HTTP service exposing checkpoint sessions and the benchmark harness.

Sessions are long-lived server-side objects: create one, feed it script
statements, checkpoint, and load saved states back. The bench endpoints
replay whole scripts server-side and return metrics. Statement execution
is serialized per session; the podding worker is the only other thread
that touches a session's store.
"""

from __future__ import annotations

import base64
import hashlib
import threading
import uuid
from typing import Dict, Optional

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..bench import (
    WorkloadSession,
    compare_optimizers,
    gen_mutation_sweep,
    gen_scale_sweep,
    run_script,
)
from ..errors import ParseError, PodStoreError, TooLarge
from ..graph import canonical_serialize
from ..storage import DirectoryBackend, MemoryBackend
from ..store import StoreConfig
from ..verification import run_quick_suite
from ..workload import Checkpoint, parse_script
from .models import (
    CheckpointRow,
    CompareRequest,
    CompareResponse,
    CompareRow,
    CreateSessionRequest,
    LoadRequest,
    LoadResponse,
    MetricsSummary,
    RunRequest,
    RunResponse,
    SessionInfo,
    StatementRequest,
    StatementResponse,
    StoreSettings,
    SweepMutationRequest,
    SweepPoint,
    SweepResponse,
    VerifyCheck,
    VerifyRequest,
    VerifyResponse,
)


def _config_from(settings: StoreSettings) -> StoreConfig:
    return StoreConfig(
        page_size=settings.page_size,
        c_pod=settings.c_pod,
        max_pod_depth=settings.max_pod_depth,
        thesaurus_bytes=settings.thesaurus_bytes,
        digest=settings.digest,
        optimizer=settings.optimizer,
        volatility=settings.volatility,
        seed=settings.seed,
    )


def _backend_for(kind: str, store_dir: Optional[str]):
    if kind == "mem":
        return MemoryBackend()
    if kind == "dir":
        if not store_dir:
            raise HTTPException(status_code=422, detail="dir backend needs store_dir")
        return DirectoryBackend(store_dir)
    raise HTTPException(status_code=422, detail=f"unknown backend {kind!r}")


class _SessionBox:
    def __init__(self, session: WorkloadSession, backend_kind: str, use_async: bool):
        self.session = session
        self.backend_kind = backend_kind
        self.use_async = use_async
        self.lock = threading.Lock()


def create_app() -> FastAPI:
    app = FastAPI(title="podstore", version=__version__)
    sessions: Dict[str, _SessionBox] = {}
    registry_lock = threading.Lock()

    def box_of(session_id: str) -> _SessionBox:
        box = sessions.get(session_id)
        if box is None:
            raise HTTPException(status_code=404, detail="no such session")
        return box

    @app.get("/healthz")
    def healthz() -> dict:
        return {"ok": True, "version": __version__}

    @app.post("/sessions", response_model=SessionInfo)
    def create_session(req: CreateSessionRequest) -> SessionInfo:
        backend = _backend_for(req.backend, req.store_dir)
        session = WorkloadSession(
            config=_config_from(req.settings),
            backend=backend,
            use_async=req.use_async,
            seed=req.settings.seed,
        )
        session_id = uuid.uuid4().hex[:12]
        with registry_lock:
            sessions[session_id] = _SessionBox(session, req.backend, req.use_async)
        return SessionInfo(
            session_id=session_id, backend=req.backend, use_async=req.use_async,
            variables=[], time_ids=[],
        )

    @app.get("/sessions/{session_id}", response_model=SessionInfo)
    def session_info(session_id: str) -> SessionInfo:
        box = box_of(session_id)
        return SessionInfo(
            session_id=session_id,
            backend=box.backend_kind,
            use_async=box.use_async,
            variables=sorted(box.session.graph.variables),
            time_ids=box.session.store.list_time_ids(),
        )

    @app.delete("/sessions/{session_id}")
    def close_session(session_id: str) -> dict:
        box = box_of(session_id)
        with box.lock:
            box.session.join()
        with registry_lock:
            sessions.pop(session_id, None)
        return {"closed": session_id}

    @app.post("/sessions/{session_id}/statements", response_model=StatementResponse)
    def run_statement(session_id: str, req: StatementRequest) -> StatementResponse:
        box = box_of(session_id)
        try:
            script = parse_script(req.statement)
        except ParseError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if len(script) != 1:
            raise HTTPException(status_code=422, detail="exactly one statement per call")
        stmt = script.statements[0]
        with box.lock:
            try:
                outcome = box.session.execute(stmt)
            except PodStoreError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
        if isinstance(stmt, Checkpoint):
            box.session.join()
            time_id = box.session.metrics.checkpoints[-1].time_id
            return StatementResponse(accessed=[], mutated_objects=0, time_id=time_id)
        if hasattr(outcome, "accessed"):
            value = outcome.value if isinstance(outcome.value, int) else None
            return StatementResponse(
                accessed=sorted(outcome.accessed),
                mutated_objects=len(outcome.mutated_objects),
                value=value,
            )
        return StatementResponse(accessed=[], mutated_objects=0)

    @app.post("/sessions/{session_id}/load", response_model=LoadResponse)
    def load(session_id: str, req: LoadRequest) -> LoadResponse:
        box = box_of(session_id)
        with box.lock:
            try:
                fragment = box.session.load(set(req.names), req.time_id)
            except PodStoreError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
        blob = canonical_serialize(fragment, set(req.names))
        return LoadResponse(
            names=sorted(req.names),
            time_id=req.time_id,
            objects=len(fragment.nodes) - 1,  # minus the fragment's root
            canonical_sha256=hashlib.sha256(blob).hexdigest(),
            canonical_b64=base64.b64encode(blob).decode() if req.include_bytes else None,
        )

    @app.get("/sessions/{session_id}/metrics", response_model=MetricsSummary)
    def session_metrics(session_id: str) -> MetricsSummary:
        box = box_of(session_id)
        with box.lock:
            box.session.join()
            return MetricsSummary(**box.session.metrics.summary())

    @app.post("/bench/run", response_model=RunResponse)
    def bench_run(req: RunRequest) -> RunResponse:
        try:
            script = parse_script(req.script)
        except ParseError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        backend = _backend_for(req.backend, req.store_dir)
        try:
            metrics, session = run_script(
                script,
                config=_config_from(req.settings),
                backend=backend,
                use_async=req.use_async,
                seed=req.seed,
            )
        except TooLarge as exc:
            raise HTTPException(status_code=422, detail=f"TooLarge: {exc}")
        return RunResponse(
            summary=MetricsSummary(**metrics.summary()),
            checkpoints=[CheckpointRow(**cp.__dict__) for cp in metrics.checkpoints],
            csv=metrics.to_csv(),
            audit_ok=metrics.audit_matches(session.backend),
        )

    @app.post("/bench/sweep-mutation", response_model=SweepResponse)
    def bench_sweep_mutation(req: SweepMutationRequest) -> SweepResponse:
        points = []
        for fraction, script in sorted(gen_mutation_sweep(req.scale).items()):
            metrics, _ = run_script(script, config=_config_from(req.settings))
            points.append(
                SweepPoint(label=f"fraction={fraction:g}", summary=MetricsSummary(**metrics.summary()))
            )
        return SweepResponse(points=points)

    @app.post("/bench/sweep-scale", response_model=SweepResponse)
    def bench_sweep_scale(req: SweepMutationRequest) -> SweepResponse:
        points = []
        for label, script in sorted(gen_scale_sweep().items()):
            metrics, _ = run_script(script, config=_config_from(req.settings))
            points.append(SweepPoint(label=label, summary=MetricsSummary(**metrics.summary())))
        return SweepResponse(points=points)

    @app.post("/bench/compare", response_model=CompareResponse)
    def bench_compare(req: CompareRequest) -> CompareResponse:
        scripts = gen_mutation_sweep(req.scale)
        eligible = {f"mutation_{fraction:g}": s for fraction, s in scripts.items()}
        try:
            rows = compare_optimizers(eligible, req.strategies, _config_from(req.settings))
        except TooLarge as exc:
            raise HTTPException(status_code=422, detail=f"TooLarge: {exc}")
        return CompareResponse(rows=[CompareRow(**row) for row in rows])

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest) -> VerifyResponse:
        results = run_quick_suite(seed=req.seed)
        return VerifyResponse(
            ok=all(r.ok for r in results),
            checks=[VerifyCheck(name=r.name, ok=r.ok, detail=r.detail) for r in results],
        )

    return app


app = create_app()

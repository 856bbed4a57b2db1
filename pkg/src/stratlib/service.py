"""Deployment service: retrieval-augmented agent sessions, library admin, jobs."""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, Header, HTTPException, Query
from pydantic import BaseModel

from .domain import (
    BasePrompt,
    BulletKind,
    Library,
    Scenario,
    Speaker,
    StrategyBullet,
    Utterance,
)
from .evaluation import ExemplarSet, report_to_dict
from .gateway import Backends, GatewayError, chat, embed
from .library import (
    LibraryStore,
    entry_to_dict,
    load_library_file,
)
from .prompts import (
    DEFAULT_OPENING_LINE,
    default_base_prompt,
    render_agent_messages,
    render_strategy_text,
    render_transcript_text,
)
from .retrieval import EmptyIndexError, VectorIndex, aggregate_strategies, build_index, nearest
from .teaching import student_respond
from .trainer import EvalRunConfig, train, transfer_run

log = logging.getLogger(__name__)


@dataclass
class DeployConfig:
    backends: Backends
    library_path: Optional[str] = None
    k: int = 1
    token_budget: int = 512
    fallback_on_empty: bool = True
    state_dir: Optional[str] = None
    context: str = "ticket-cancellation"
    opening_line: str = DEFAULT_OPENING_LINE
    admin_token: Optional[str] = None
    base: BasePrompt = field(default_factory=default_base_prompt)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class SessionState:
    session_id: str
    transcript: list[Utterance]
    library_snapshot_version: int
    created_at: str
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class RespondRequest(BaseModel):
    customer_text: str


class BulletIn(BaseModel):
    bullet_id: int = 0
    kind: str
    text: str


class EditRequest(BaseModel):
    bullets: list[BulletIn]
    editor: str
    base_revision: Optional[int] = None


class ApproveRequest(BaseModel):
    editor: str = ""


class PreviewRequest(BaseModel):
    scenario_override: Optional[str] = None


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ServiceState:
    """Shared mutable state behind the endpoints."""

    def __init__(self, cfg: DeployConfig, library: Optional[Library] = None):
        self.cfg = cfg
        if library is None:
            if cfg.library_path is None:
                raise ValueError("DeployConfig needs library_path or an explicit library")
            library = load_library_file(cfg.library_path)
        self.store = LibraryStore(library)
        self.sessions: dict[str, SessionState] = {}
        self.sessions_lock = threading.Lock()
        self.jobs: dict[str, dict] = {}
        self.jobs_lock = threading.Lock()
        self.snapshot_version = 0
        self.index: Optional[VectorIndex] = None
        self.index_lock = threading.Lock()
        self.state_dir = Path(cfg.state_dir) if cfg.state_dir else None
        if self.state_dir is not None:
            (self.state_dir / "sessions").mkdir(parents=True, exist_ok=True)
        self.reindex()
        self._load_sessions()

    def reindex(self) -> int:
        with self.index_lock:
            self.snapshot_version += 1
            lib = self.store.library
            if lib.n > 0:
                self.index = build_index(
                    lib, self.snapshot_version,
                    expected_model_id=self.cfg.backends.embedder.model_id,
                )
            else:
                self.index = None
            return self.snapshot_version

    # -- session persistence ------------------------------------------------

    def _session_path(self, session_id: str) -> Optional[Path]:
        if self.state_dir is None:
            return None
        return self.state_dir / "sessions" / f"{session_id}.json"

    def persist_session(self, session: SessionState) -> None:
        path = self._session_path(session.session_id)
        if path is None:
            return
        doc = {
            "session_id": session.session_id,
            "library_snapshot_version": session.library_snapshot_version,
            "created_at": session.created_at,
            "transcript": [
                {"speaker": u.speaker.value, "text": u.text, "turn_index": u.turn_index}
                for u in session.transcript
            ],
        }
        path.write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")

    def _load_sessions(self) -> None:
        if self.state_dir is None:
            return
        for path in sorted((self.state_dir / "sessions").glob("*.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            transcript = [
                Utterance(Speaker(u["speaker"]), u["text"], u["turn_index"])
                for u in doc["transcript"]
            ]
            session = SessionState(doc["session_id"], transcript,
                                   doc["library_snapshot_version"], doc["created_at"])
            self.sessions[session.session_id] = session

    def log_turn(self, record: dict) -> None:
        if self.state_dir is None:
            return
        with open(self.state_dir / "deploy_log.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _entry_summary(entry) -> dict:
    last_customer = next(
        (u.text for u in reversed(entry.scenario.utterances)
         if u.speaker is Speaker.CUSTOMER), "",
    )
    return {
        "entry_id": entry.entry_id,
        "status": entry.status.value,
        "revision": entry.strategy.revision,
        "bullet_count": len(entry.strategy.bullets),
        "created_iteration": entry.created_iteration,
        "scenario_id": entry.scenario.id,
        "last_customer_text": last_customer[:160],
    }


def create_app(cfg: DeployConfig, library: Optional[Library] = None) -> FastAPI:
    state = ServiceState(cfg, library)
    app = FastAPI(title="strategy library service")
    app.state.service = state

    def check_admin(token: Optional[str]) -> None:
        if cfg.admin_token is not None and token != cfg.admin_token:
            raise HTTPException(status_code=401, detail="missing or invalid admin token")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "library_n": state.store.library.n,
                "snapshot_version": state.snapshot_version,
                "context_tag": state.store.library.context_tag}

    @app.post("/v1/sessions")
    def create_session():
        session_id = uuid.uuid4().hex
        session = SessionState(
            session_id=session_id,
            transcript=[Utterance(Speaker.AGENT, cfg.opening_line, 1)],
            library_snapshot_version=state.snapshot_version,
            created_at=_utc_now(),
        )
        with state.sessions_lock:
            state.sessions[session_id] = session
        state.persist_session(session)
        return {"session_id": session_id, "agent_text": cfg.opening_line}

    @app.post("/v1/sessions/{session_id}/respond")
    def respond(session_id: str, req: RespondRequest):
        if not req.customer_text.strip():
            raise HTTPException(status_code=400, detail="customer_text must be non-empty")
        with state.sessions_lock:
            session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        with session.lock:
            turn = session.transcript[-1].turn_index
            session.transcript.append(Utterance(Speaker.CUSTOMER, req.customer_text, turn))
            index = state.index
            query_id = uuid.uuid4().hex
            trace: list[dict] = []
            fallback = False
            strategy_text = None
            if index is None or len(index) == 0:
                if not cfg.fallback_on_empty:
                    session.transcript.pop()
                    raise HTTPException(status_code=409, detail="library is empty")
                fallback = True
            else:
                try:
                    query = embed(cfg.backends.embedder,
                                  render_transcript_text(session.transcript),
                                  role="embedder")
                    result = nearest(index, query.values, cfg.k, query_id=query_id)
                except (EmptyIndexError, GatewayError) as exc:
                    session.transcript.pop()
                    raise HTTPException(status_code=502, detail=str(exc))
                lib = state.store.library
                entries = [lib.get(eid) for eid, _ in result.hits]
                strategy_text = aggregate_strategies(
                    entries, cfg.token_budget, cfg.backends.teacher) or None
                trace = [{"entry_id": eid, "distance": dist} for eid, dist in result.hits]
            try:
                agent_text = chat(
                    cfg.backends.student,
                    render_agent_messages(cfg.base, strategy_text, session.transcript),
                    role="student",
                )
            except GatewayError as exc:
                session.transcript.pop()
                raise HTTPException(status_code=502, detail=str(exc))
            session.transcript.append(Utterance(Speaker.AGENT, agent_text, turn + 1))
            state.persist_session(session)
            state.log_turn({
                "ts": _utc_now(),
                "session_id": session_id,
                "turn": turn,
                "query_id": query_id,
                "snapshot_version": index.snapshot_version if index else None,
                "trace": trace,
                "fallback": fallback,
            })
            return {"agent_text": agent_text, "trace": trace, "fallback": fallback}

    @app.get("/v1/library/entries")
    def list_entries(query: Optional[str] = Query(default=None),
                     k: int = Query(default=5, ge=1),
                     status: Optional[str] = Query(default=None),
                     offset: int = Query(default=0, ge=0),
                     limit: int = Query(default=50, ge=1, le=500)):
        lib = state.store.library
        if query:
            index = state.index
            if index is None or len(index) == 0:
                return {"hits": []}
            vec = embed(cfg.backends.embedder, query, role="embedder")
            result = nearest(index, vec.values, k)
            hits = []
            for eid, dist in result.hits:
                summary = _entry_summary(lib.get(eid))
                summary["distance"] = dist
                hits.append(summary)
            return {"hits": hits}
        entries = list(lib.entries)
        if status:
            entries = [e for e in entries if e.status.value == status]
        entries.sort(key=lambda e: (e.entry_id or 0), reverse=True)  # recency
        page = entries[offset:offset + limit]
        return {
            "entries": [_entry_summary(e) for e in page],
            "total": len(entries),
            "offset": offset,
        }

    @app.get("/v1/library/entries/{entry_id}")
    def get_entry(entry_id: int):
        try:
            entry = state.store.library.get(entry_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no entry {entry_id}")
        return entry_to_dict(entry)

    @app.put("/v1/library/entries/{entry_id}")
    def put_entry(entry_id: int, req: EditRequest,
                  x_admin_token: Optional[str] = Header(default=None)):
        check_admin(x_admin_token)
        try:
            entry = state.store.library.get(entry_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no entry {entry_id}")
        if req.base_revision is not None and req.base_revision != entry.strategy.revision:
            raise HTTPException(
                status_code=409,
                detail={
                    "error": "revision_conflict",
                    "base_revision": req.base_revision,
                    "current_revision": entry.strategy.revision,
                },
            )
        try:
            bullets = [StrategyBullet(b.bullet_id, BulletKind(b.kind), b.text)
                       for b in req.bullets]
            revision = state.store.edit(entry_id, bullets, req.editor)
        except (ValueError, KeyError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"revision": revision}

    @app.post("/v1/library/entries/{entry_id}/approve")
    def approve(entry_id: int, req: ApproveRequest,
                x_admin_token: Optional[str] = Header(default=None)):
        check_admin(x_admin_token)
        try:
            state.store.approve(entry_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no entry {entry_id}")
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        entry = state.store.library.get(entry_id)
        return {"status": entry.status.value, "revision": entry.strategy.revision}

    @app.post("/v1/library/entries/{entry_id}/preview")
    def preview(entry_id: int, req: PreviewRequest):
        lib = state.store.library
        try:
            entry = lib.get(entry_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no entry {entry_id}")
        scenario = entry.scenario
        if req.scenario_override:
            scenario = Scenario(
                id=f"preview-{entry_id}",
                source_conversation="preview",
                k=1,
                utterances=[
                    Utterance(Speaker.AGENT, cfg.opening_line, 1),
                    Utterance(Speaker.CUSTOMER, req.scenario_override, 1),
                ],
            )
        try:
            text = student_respond(scenario, entry.strategy,
                                   backend=cfg.backends.student, base=cfg.base)
        except GatewayError as exc:
            raise HTTPException(status_code=502, detail=str(exc))
        return {
            "response": text,
            "strategy_revision": entry.strategy.revision,
            "strategy_text": render_strategy_text(entry.strategy),
            "generated_at": _utc_now(),
        }

    @app.post("/v1/admin/reindex")
    def reindex(x_admin_token: Optional[str] = Header(default=None)):
        check_admin(x_admin_token)
        return {"snapshot_version": state.reindex()}

    @app.post("/v1/jobs/train")
    def submit_train(config: dict = Body(default_factory=dict),
                     x_admin_token: Optional[str] = Header(default=None)):
        check_admin(x_admin_token)
        from .config import trainer_config_from_dict  # deferred: config imports trainer

        job_id = uuid.uuid4().hex
        tcfg = trainer_config_from_dict(config)
        job_dir = (state.state_dir / "jobs" / job_id) if state.state_dir else None
        with state.jobs_lock:
            state.jobs[job_id] = {"job_id": job_id, "status": "running", "detail": None}

        def work():
            try:
                result = train(tcfg, cfg.backends, cfg.base, run_dir=job_dir)
                with state.jobs_lock:
                    state.jobs[job_id] = {
                        "job_id": job_id,
                        "status": "done",
                        "detail": {
                            "library_n": result.library.n,
                            "iterations": len(result.reports),
                            "termination_reason": result.termination_reason,
                            "run_dir": str(job_dir) if job_dir else None,
                        },
                    }
            except Exception as exc:  # job boundary: report, don't crash the service
                log.exception("train job %s failed", job_id)
                with state.jobs_lock:
                    state.jobs[job_id] = {"job_id": job_id, "status": "error",
                                          "detail": str(exc)}

        threading.Thread(target=work, daemon=True).start()
        return {"job_id": job_id, "status": "running"}

    @app.get("/v1/jobs/{job_id}")
    def job_status(job_id: str):
        with state.jobs_lock:
            job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail="unknown job")
        return job

    @app.post("/v1/jobs/eval")
    def run_eval(config: dict = Body(default_factory=dict),
                 x_admin_token: Optional[str] = Header(default=None)):
        check_admin(x_admin_token)
        ecfg = EvalRunConfig(
            n_conversations=int(config.get("n_conversations", 8)),
            k=int(config.get("k", cfg.k)),
            token_budget=int(config.get("token_budget", cfg.token_budget)),
            exemplar_set=ExemplarSet(config.get("exemplar_set", "demanding")),
            seed=int(config.get("seed", 0)),
            method_label=config.get("method_label", "strategy-imitation"),
        )
        context = config.get("context", state.store.library.context_tag)
        try:
            report = transfer_run(state.store.library, context, ecfg, cfg.backends, cfg.base)
        except (ValueError, GatewayError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return report_to_dict(report)

    return app

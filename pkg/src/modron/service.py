"""HTTP session service: run combats over JSON + server-sent events.

Endpoints::

    POST /v1/sessions                    {party | party_ref, seed} -> {session_id}
    GET  /v1/sessions/{id}               roster, turn banner, full state
    POST /v1/sessions/{id}/commands      {text, as?, author?} -> execution report
    POST /v1/sessions/{id}/messages      {author, content} -> chat event
    GET  /v1/sessions/{id}/events        SSE stream of log events (?since=seq)
    POST /v1/suggest                     {session_id, roleplay_text} -> {command}

Commands against one session are serialized through its lock; the event
stream any client sees is a prefix of that session's log. Suggested commands
are returned to the caller, never executed.
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse

from . import engine
from .content import ContentError, ContentIndex, load_content_file, load_starter_pack
from .dice import DiceError, ForcedSource
from .engine import turn_banner
from .evalkit import GoldPredictor, GatewayPredictor, PredictorUnavailable, bundled_scenarios
from .eventlog import Event
from .prompts import render_utt2cmd
from .session import CombatSession
from .state import SchemaError

COMMAND_FAILURES = (engine.EngineError, ContentError, DiceError, SchemaError)


@dataclass
class AppConfig:
    data_dir: Optional[Path] = None
    content_pack: Optional[Path] = None
    seed: int = 0
    port: int = 8434
    predictor: str = "gold"  # or "external"
    predictor_timeout: float = 30.0
    console_dir: Optional[Path] = None  # built web console to serve at /

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port {self.port} out of range")
        if self.data_dir is not None:
            self.data_dir = Path(self.data_dir)
            self.data_dir.mkdir(parents=True, exist_ok=True)
        if self.content_pack is not None and not Path(self.content_pack).exists():
            raise ValueError(f"content pack {self.content_pack} does not exist")
        if self.console_dir is not None:
            self.console_dir = Path(self.console_dir)
            if not self.console_dir.exists():
                raise ValueError(f"console dir {self.console_dir} does not exist")


@dataclass
class SessionHandle:
    session: CombatSession
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    subscribers: list[asyncio.Queue] = field(default_factory=list)

    def publish(self, events: list[Event]) -> None:
        for queue in list(self.subscribers):
            for event in events:
                queue.put_nowait(event)


def load_bundled_party(name: str) -> dict:
    try:
        data = resources.files("modron.data").joinpath(f"parties/{name}.json").read_text("utf-8")
    except FileNotFoundError:
        raise KeyError(name)
    return json.loads(data)


def _sse(event: Event) -> str:
    payload = json.dumps(event.to_dict(), ensure_ascii=False)
    return f"id: {event.seq}\nevent: {event.event_type}\ndata: {payload}\n\n"


def create_app(config: Optional[AppConfig] = None, index: Optional[ContentIndex] = None) -> FastAPI:
    config = config or AppConfig()
    if index is None:
        index = load_content_file(config.content_pack) if config.content_pack else load_starter_pack()
    app = FastAPI(title="modron", version="0.1.0")
    # the console may be served from another origin during development
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    sessions: dict[str, SessionHandle] = {}
    app.state.sessions = sessions
    app.state.config = config
    app.state.index = index
    predictor_box: dict[str, object] = {}

    def get_predictor():
        if "p" not in predictor_box:
            if config.predictor == "external":
                predictor_box["p"] = GatewayPredictor(timeout=config.predictor_timeout)
            else:
                predictor_box["p"] = GoldPredictor.for_scenarios(bundled_scenarios(), index)
        return predictor_box["p"]

    def handle_of(session_id: str) -> SessionHandle:
        handle = sessions.get(session_id)
        if handle is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return handle

    @app.post("/v1/sessions")
    async def create_session(body: dict):
        party = body.get("party")
        if party is None and body.get("party_ref"):
            try:
                party = load_bundled_party(body["party_ref"])
            except KeyError:
                raise HTTPException(status_code=404, detail=f"no bundled party {body['party_ref']!r}")
        if not isinstance(party, dict):
            raise HTTPException(status_code=422, detail="body needs 'party' or 'party_ref'")
        try:
            session = CombatSession.create(
                party,
                index,
                seed=int(body.get("seed", config.seed)),
                data_dir=config.data_dir,
                dm=body.get("dm", "dm"),
            )
        except (SchemaError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        faces = body.get("forced_faces")
        if faces:
            # fixture sessions replay recorded dice instead of rolling
            session.state.rng = ForcedSource(faces)
        sessions[session.combat_id] = SessionHandle(session=session)
        return {"session_id": session.combat_id}

    @app.get("/v1/sessions/{session_id}")
    async def get_session(session_id: str):
        handle = handle_of(session_id)
        session = handle.session
        state = session.state
        return {
            "session_id": session_id,
            "actor_lines": state.actor_lines(),
            "turn_banner": turn_banner(state) if state.combatants else None,
            "round": state.round,
            "turn_index": state.turn_index,
            "ended": state.ended,
            "last_seq": session.log.last_seq,
            "state": state.to_dict(),
        }

    @app.post("/v1/sessions/{session_id}/commands")
    async def post_command(session_id: str, body: dict):
        handle = handle_of(session_id)
        text = body.get("text", "")
        if not isinstance(text, str) or not text:
            raise HTTPException(status_code=422, detail="body needs 'text'")
        async with handle.lock:
            try:
                report, events = handle.session.command(
                    text,
                    author_id=body.get("author", "player"),
                    as_id=body.get("as"),
                )
            except COMMAND_FAILURES as exc:
                raise HTTPException(
                    status_code=422,
                    detail={"type": type(exc).__name__, "message": str(exc)},
                )
            handle.publish(events)
        state = handle.session.state
        return {
            "report": report.to_dict(),
            "mechanical_lines": report.mechanical_lines,
            "actor_lines": state.actor_lines(),
            "turn_banner": turn_banner(state) if state.combatants else None,
            "ended": state.ended,
            "last_seq": handle.session.log.last_seq,
        }

    @app.post("/v1/sessions/{session_id}/messages")
    async def post_message(session_id: str, body: dict):
        handle = handle_of(session_id)
        content = body.get("content", "")
        if not content:
            raise HTTPException(status_code=422, detail="body needs 'content'")
        async with handle.lock:
            event = handle.session.message(body.get("author", "player"), content)
            handle.publish([event])
        return {"seq": event.seq}

    @app.get("/v1/sessions/{session_id}/events")
    async def event_stream(session_id: str, request: Request, since: int = 0):
        handle = handle_of(session_id)
        last_id = request.headers.get("last-event-id")
        start_after = int(last_id) if last_id and last_id.isdigit() else since

        async def generate():
            queue: asyncio.Queue = asyncio.Queue()
            handle.subscribers.append(queue)
            try:
                backlog = [e for e in handle.session.log.events if e.seq > start_after]
                seen = backlog[-1].seq if backlog else start_after
                for event in backlog:
                    yield _sse(event)
                while True:
                    try:
                        event = await asyncio.wait_for(queue.get(), timeout=15.0)
                    except asyncio.TimeoutError:
                        yield ": keepalive\n\n"  # lets proxies and shutdown see us
                        continue
                    if event.seq <= seen:
                        continue
                    seen = event.seq
                    yield _sse(event)
            finally:
                if queue in handle.subscribers:
                    handle.subscribers.remove(queue)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.post("/v1/suggest")
    async def suggest(body: dict):
        session_id = body.get("session_id", "")
        handle = handle_of(session_id)
        roleplay = body.get("roleplay_text", "")
        if not roleplay:
            raise HTTPException(status_code=422, detail="body needs 'roleplay_text'")
        state = handle.session.state
        caster_id = body.get("caster") or state.current().id
        caster = state.find(caster_id)
        if caster is None:
            raise HTTPException(status_code=422, detail=f"no combatant {caster_id!r}")
        prompt = render_utt2cmd(state, caster, [roleplay])
        try:
            predictor = get_predictor()
            command = predictor.predict(prompt)
        except PredictorUnavailable as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        return {"command": command, "caster": caster_id}

    if config.console_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.console_dir, html=True), name="console")

    return app

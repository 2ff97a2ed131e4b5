"""HTTP/WebSocket front door for live sessions.

Hosts sessions, drives the scheduler on the authoritative server clock,
streams prompt events to connected observers, accepts submissions, and
serializes every journal write. All mutations of one session funnel
through a single asyncio lock, so journal sequence numbers stay contiguous
no matter how many observers submit concurrently; reads work on immutable
state snapshots. Client clocks are never trusted: the server receive time
is the logged timestamp and every deadline decision uses the server clock.
"""

from __future__ import annotations

import asyncio
import json
import logging
import secrets
import time
from pathlib import Path
from typing import Any, Mapping

from aiohttp import web

from dlot import export, scheduler
from dlot.core import (
    ConfigError,
    DlotError,
    Observation,
    ObservationError,
    ObservationStatus,
    Phase,
    SchedulingMode,
    SessionConfig,
    SessionState,
    apply_observation,
    config_to_json,
    end_session,
    format_ts,
    new_session,
    observation_to_json,
    record_prompt_opened,
    start_session,
    validate_config,
)
from dlot.journal import (
    JOURNAL_SUFFIX,
    EntryKind,
    JournalCorruptError,
    JournalWriter,
    config_snapshot_entry,
    make_entry,
    scan,
)
from dlot.scheduler import PROMPT_EXPIRED, PROMPT_OPENED, PromptSpec, SchedulerState

log = logging.getLogger(__name__)

HEARTBEAT_MS = 5000
TOKEN_BYTES = 16  # 128 bits of entropy
_CLOSE = object()  # sentinel pushed to subscriber queues on session end

DEFAULT_ADDR = "127.0.0.1:8737"


class SystemClock:
    """Wall clock in epoch milliseconds."""

    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000


class SubmissionResult(dict):
    """JSON-shaped acknowledgment; ``accepted`` is always present."""


def _reject(reason: str) -> SubmissionResult:
    return SubmissionResult(accepted=False, reason=reason)


class SessionHost:
    """One live session: state, scheduler, journal, and event fan-out."""

    def __init__(self, config: SessionConfig, journal: JournalWriter, clock):
        self.config = config
        self.journal = journal
        self.clock = clock
        self.state: SessionState = new_session(config)
        self.sched: SchedulerState | None = None
        self.lock = asyncio.Lock()
        self.tokens: dict[str, str] = {}  # token -> observer_id
        # (observer, prompt, subject) -> (payload signature, acknowledgment)
        self.acks: dict[tuple[str, int, str], tuple[str, SubmissionResult]] = {}
        self.responded: set[str] = set()  # observers done with the open prompt
        self.subscribers: list[asyncio.Queue] = []
        self.last_broadcast_ms: int | None = None
        self.write_failed = False

    # -- credentials ------------------------------------------------------

    def issue_token(self, observer_id: str) -> str:
        if observer_id not in self.config.observer_ids:
            raise ObservationError(f"unknown observer {observer_id!r}")
        token = secrets.token_urlsafe(TOKEN_BYTES)
        self.tokens[token] = observer_id
        return token

    def observer_for(self, token: str | None) -> str | None:
        if not token:
            return None
        return self.tokens.get(token)

    # -- journaling -------------------------------------------------------

    def _append(self, kind: EntryKind, ts: int, payload: Mapping[str, Any] | None = None) -> int:
        entry = make_entry(self.journal.next_seq, kind, ts, payload)
        try:
            return self.journal.append(entry)
        except OSError:
            # Stable storage failed: the session becomes read-only.
            self.write_failed = True
            raise

    # -- event fan-out ----------------------------------------------------

    def _broadcast(self, event: Mapping[str, Any] | object) -> None:
        for queue in list(self.subscribers):
            try:
                queue.put_nowait(event)
            except asyncio.QueueFull:
                # Slow consumer: evict rather than grow without bound.
                self.subscribers.remove(queue)
                try:
                    queue.put_nowait(_CLOSE)
                except asyncio.QueueFull:
                    pass
        if isinstance(event, Mapping):
            self.last_broadcast_ms = self.clock.now_ms()

    async def subscribe(self) -> asyncio.Queue:
        """Register a consumer; the queue is pre-seeded with the replay
        message so a reconnecting observer never misses the open prompt."""
        async with self.lock:
            queue: asyncio.Queue = asyncio.Queue(maxsize=1024)
            if self.sched is not None and self.sched.open_prompt is not None:
                queue.put_nowait(_prompt_event(PROMPT_OPENED, self.sched.open_prompt))
            else:
                queue.put_nowait({
                    "type": "hello",
                    "phase": self.state.phase.value,
                    "next_prompt_index": self.sched.next_index if self.sched else 0,
                })
            if self.state.phase is Phase.ENDED:
                queue.put_nowait(_CLOSE)
            self.subscribers.append(queue)
            return queue

    def unsubscribe(self, queue: asyncio.Queue) -> None:
        if queue in self.subscribers:
            self.subscribers.remove(queue)

    # -- scheduler driving --------------------------------------------------

    def _advance_locked(self, now: int) -> None:
        assert self.sched is not None
        events, self.sched = scheduler.advance(self.sched, self.config, now)
        for event in events:
            prompt = event.prompt
            if event.kind == PROMPT_OPENED:
                self._append(EntryKind.PROMPT_OPENED, prompt.due_at,
                             scheduler.prompt_to_json(prompt))
                self.state = record_prompt_opened(self.state)
                self.responded = set()
            else:
                self._expire_prompt(prompt, prompt.deadline)
            self._broadcast(_prompt_event(event.kind, prompt))

    def _expire_prompt(self, prompt: PromptSpec, ts: int) -> None:
        self._append(EntryKind.PROMPT_EXPIRED, ts, scheduler.prompt_to_json(prompt))
        if prompt.subject_id is not None:
            for observer_id in self.config.observer_ids:
                if observer_id in self.responded:
                    continue
                missed = Observation(
                    observer_id=observer_id,
                    subject_id=prompt.subject_id,
                    prompt_index=prompt.prompt_index,
                    logged_at=ts,
                    selections={},
                    status=ObservationStatus.MISSED,
                )
                self.state = apply_observation(self.state, missed)
                self._append(EntryKind.OBSERVATION_LOGGED, ts,
                             _observation_payload(missed))
        self.responded = set()

    # -- lifecycle ----------------------------------------------------------

    async def start(self, now: int) -> int:
        async with self.lock:
            self._check_writable()
            self.state = start_session(self.state, now)
            self._append(EntryKind.SESSION_STARTED, now)
            self.sched = SchedulerState(session_start=now)
            self._advance_locked(now)
            return now

    async def end(self, now: int) -> int:
        async with self.lock:
            self._check_writable()
            if self.state.phase is not Phase.RUNNING:
                raise ObservationError(f"session {self.state.phase.value}")
            self._advance_locked(now)
            if self.sched is not None and self.sched.open_prompt is not None:
                # The window is cut short by the end of the session.
                prompt = self.sched.open_prompt
                self.sched = scheduler.resolve_prompt(
                    self.sched, prompt.prompt_index, scheduler.PromptOutcome.LOGGED)
                self._expire_prompt(prompt, now)
                self._broadcast(_prompt_event(PROMPT_EXPIRED, prompt))
            self.state = end_session(self.state, now)
            self._append(EntryKind.SESSION_ENDED, now)
            self._broadcast({"type": "session_ended", "ts": format_ts(now)})
            self._broadcast(_CLOSE)
            self.journal.close()
            return now

    async def tick(self, now: int) -> None:
        """Advance the authoritative clock; called by the run loop."""
        async with self.lock:
            if self.state.phase is not Phase.RUNNING or self.write_failed:
                return
            self._advance_locked(now)
            if self.subscribers and (
                self.last_broadcast_ms is None
                or now - self.last_broadcast_ms >= HEARTBEAT_MS
            ):
                self._broadcast({"type": "heartbeat", "ts": format_ts(now)})

    def _check_writable(self) -> None:
        if self.write_failed:
            raise ObservationError("journal write failed; session is read-only")

    # -- submissions ----------------------------------------------------------

    async def submit(
        self,
        observer_id: str,
        prompt_index: int,
        subject_id: str,
        selections: Mapping[str, Any],
        status: str = "logged",
    ) -> SubmissionResult:
        """Accept or reject one observation submission.

        The first valid submission for a key is journaled and acknowledged;
        any retry with the same key and payload returns the original
        acknowledgment without a second journal entry.
        """
        async with self.lock:
            if self.write_failed:
                return _reject("read_only")
            now = self.clock.now_ms()
            if self.state.phase is Phase.CREATED:
                return _reject("not_started")
            if self.state.phase is Phase.ENDED:
                return _reject("ended")
            self._advance_locked(now)

            try:
                label_sets = _as_label_sets(selections)
            except ValueError as exc:
                return _reject(f"invalid_selection: {exc}")
            key = (observer_id, prompt_index, subject_id)
            signature = json.dumps(
                {"selections": {k: sorted(v) for k, v in sorted(label_sets.items())},
                 "status": status},
                sort_keys=True,
            )
            if key in self.acks:
                prev_signature, prev_ack = self.acks[key]
                if signature == prev_signature:
                    return prev_ack
                return _reject("conflict")

            assert self.sched is not None
            open_prompt = self.sched.open_prompt
            if open_prompt is None or open_prompt.prompt_index != prompt_index:
                if prompt_index < self.sched.next_index:
                    return _reject("late")
                return _reject("unknown_prompt")
            if now >= open_prompt.deadline:
                return _reject("late")
            if open_prompt.subject_id is not None and subject_id != open_prompt.subject_id:
                return _reject("subject_mismatch")
            if status not in (ObservationStatus.LOGGED.value, ObservationStatus.SKIPPED.value):
                return _reject("invalid_status")

            obs = Observation(
                observer_id=observer_id,
                subject_id=subject_id,
                prompt_index=prompt_index,
                logged_at=now,
                selections=label_sets,
                status=ObservationStatus(status),
            )
            try:
                new_state = apply_observation(self.state, obs)
            except ObservationError as exc:
                return _reject(f"invalid_selection: {exc}")

            seq = self._append(EntryKind.OBSERVATION_LOGGED, now,
                               _observation_payload(obs))
            self.state = new_state
            self.responded.add(observer_id)
            ack = SubmissionResult(
                accepted=True, seq=seq, observer_id=observer_id,
                prompt_index=prompt_index, subject_id=subject_id,
                logged_at=format_ts(now),
            )
            self.acks[key] = (signature, ack)
            if (
                self.config.scheduling_mode is not SchedulingMode.FREE_SELECT
                and self.config.observer_ids
                and set(self.config.observer_ids) <= self.responded
            ):
                self.sched = scheduler.resolve_prompt(
                    self.sched, prompt_index, scheduler.PromptOutcome.LOGGED)
                self.responded = set()
            return ack

    def snapshot(self) -> SessionState:
        return self.state


def _as_label_sets(selections: Mapping[str, Any]) -> dict[str, frozenset[str]]:
    out: dict[str, frozenset[str]] = {}
    for name, labels in dict(selections).items():
        if isinstance(labels, str):
            labels = [labels]
        if not isinstance(labels, (list, tuple, set, frozenset)) or not all(
            isinstance(x, str) for x in labels
        ):
            raise ValueError(f"selection for group {name!r} must be a list of strings")
        out[str(name)] = frozenset(labels)
    return out


def _observation_payload(obs: Observation) -> dict[str, Any]:
    return observation_to_json(obs)


def _prompt_event(kind: str, prompt: PromptSpec) -> dict[str, Any]:
    return {"type": kind, "prompt": scheduler.prompt_to_json(prompt)}


# ---------------------------------------------------------------------------
# application wiring

SESSIONS_KEY = web.AppKey("dlot_sessions", dict)
CLOCK_KEY = web.AppKey("dlot_clock", object)
JOURNAL_DIR_KEY = web.AppKey("dlot_journal_dir", Path)
ASSETS_KEY = web.AppKey("dlot_assets", Path)


def _json_error(status: int, message: str, **extra: Any) -> web.Response:
    return web.json_response({"error": message, **extra}, status=status)


def _violations_response(exc: ConfigError) -> web.Response:
    return web.json_response(
        {"violations": [{"path": v.path, "message": v.message} for v in exc.violations]},
        status=400,
    )


def _host(request: web.Request) -> SessionHost:
    session_id = request.match_info["session_id"]
    host = request.app[SESSIONS_KEY].get(session_id)
    if host is None:
        raise web.HTTPNotFound(
            text=json.dumps({"error": f"unknown session {session_id!r}"}),
            content_type="application/json",
        )
    return host


async def handle_create_session(request: web.Request) -> web.Response:
    try:
        doc = await request.json()
    except (json.JSONDecodeError, UnicodeDecodeError):
        return web.json_response(
            {"violations": [{"path": "", "message": "request body is not valid JSON"}]},
            status=400,
        )
    try:
        config = validate_config(doc)
    except ConfigError as exc:
        return _violations_response(exc)

    sessions = request.app[SESSIONS_KEY]
    journal_dir = request.app[JOURNAL_DIR_KEY]
    path = journal_dir / f"{config.session_id}{JOURNAL_SUFFIX}"
    if config.session_id in sessions or path.exists():
        return _json_error(409, f"session {config.session_id!r} already exists")

    clock = request.app[CLOCK_KEY]
    writer = JournalWriter(path)
    host = SessionHost(config, writer, clock)
    now = clock.now_ms()
    writer.append(config_snapshot_entry(0, now, config_to_json(config)))
    sessions[config.session_id] = host
    return web.json_response({"session_id": config.session_id}, status=201)


async def handle_get_session(request: web.Request) -> web.Response:
    host = _host(request)
    state = host.snapshot()
    return web.json_response({
        "session_id": state.config.session_id,
        "phase": state.phase.value,
        "prompts_issued": state.prompts_issued,
        "observations": len(state.observations),
        "config": config_to_json(state.config),
    })


async def handle_add_observer(request: web.Request) -> web.Response:
    host = _host(request)
    try:
        doc = await request.json()
    except (json.JSONDecodeError, UnicodeDecodeError):
        return _json_error(400, "request body is not valid JSON")
    observer_id = doc.get("observer_id") if isinstance(doc, dict) else None
    if not isinstance(observer_id, str) or not observer_id:
        return _json_error(400, "observer_id required")
    try:
        token = host.issue_token(observer_id)
    except ObservationError as exc:
        return _json_error(400, str(exc))
    return web.json_response({"observer_id": observer_id, "token": token}, status=201)


async def handle_start(request: web.Request) -> web.Response:
    host = _host(request)
    clock = request.app[CLOCK_KEY]
    try:
        started = await host.start(clock.now_ms())
    except DlotError as exc:
        return _json_error(409, str(exc))
    return web.json_response({"started_at": format_ts(started)})


async def handle_end(request: web.Request) -> web.Response:
    host = _host(request)
    clock = request.app[CLOCK_KEY]
    try:
        ended = await host.end(clock.now_ms())
    except DlotError as exc:
        return _json_error(409, str(exc))
    return web.json_response({"ended_at": format_ts(ended)})


_REASON_STATUS = {
    "late": 409,
    "conflict": 409,
    "unknown_prompt": 409,
    "not_started": 409,
    "ended": 409,
    "read_only": 503,
    "subject_mismatch": 422,
    "invalid_status": 422,
}


def _bearer_token(request: web.Request, doc: Mapping[str, Any] | None) -> str | None:
    auth = request.headers.get("Authorization", "")
    if auth.startswith("Bearer "):
        return auth[len("Bearer "):]
    if isinstance(doc, Mapping):
        token = doc.get("token")
        if isinstance(token, str):
            return token
    return None


async def handle_submit(request: web.Request) -> web.Response:
    host = _host(request)
    try:
        doc = await request.json()
    except (json.JSONDecodeError, UnicodeDecodeError):
        return _json_error(400, "request body is not valid JSON")
    if not isinstance(doc, dict):
        return _json_error(400, "request body must be a JSON object")

    observer_id = host.observer_for(_bearer_token(request, doc))
    if observer_id is None:
        return _json_error(401, "missing or invalid token")
    if "observer_id" in doc and doc["observer_id"] != observer_id:
        return _json_error(400, "observer_id does not match the token")

    prompt_index = doc.get("prompt_index")
    subject_id = doc.get("subject_id")
    selections = doc.get("selections", {})
    status = doc.get("status", "logged")
    if not isinstance(prompt_index, int) or isinstance(prompt_index, bool):
        return _json_error(400, "prompt_index must be an integer")
    if not isinstance(subject_id, str) or not subject_id:
        return _json_error(400, "subject_id required")
    if not isinstance(selections, dict):
        return _json_error(400, "selections must be an object")
    if not isinstance(status, str):
        return _json_error(400, "status must be a string")

    result = await host.submit(observer_id, prompt_index, subject_id, selections, status)
    if result.get("accepted"):
        return web.json_response(result)
    status_code = _REASON_STATUS.get(str(result.get("reason", "")).split(":")[0], 422)
    return web.json_response(result, status=status_code)


async def handle_export(request: web.Request) -> web.Response:
    host = _host(request)
    fmt = request.query.get("format", "csv")
    state = host.snapshot()
    if fmt == "csv":
        body = export.export_csv(state)
        content_type = "text/csv"
    elif fmt == "xlsx":
        body = export.export_xlsx(state)
        content_type = "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"
    else:
        return _json_error(400, "format must be csv or xlsx")
    filename = f"{state.config.session_id}.{fmt}"
    return web.Response(
        body=body,
        content_type=content_type,
        headers={"Content-Disposition": f'attachment; filename="{filename}"'},
    )


async def handle_stream(request: web.Request) -> web.WebSocketResponse:
    ws = web.WebSocketResponse()
    await ws.prepare(request)
    session_id = request.match_info["session_id"]
    host = request.app[SESSIONS_KEY].get(session_id)
    if host is None:
        await ws.close(code=4404, message=b"unknown session")
        return ws
    observer_id = host.observer_for(request.query.get("token"))
    if observer_id is None:
        await ws.close(code=4401, message=b"missing or invalid token")
        return ws

    queue = await host.subscribe()

    async def pump() -> None:
        while True:
            event = await queue.get()
            if event is _CLOSE:
                await ws.close(code=1000, message=b"session_ended")
                return
            await ws.send_json(event)

    sender = asyncio.create_task(pump())
    try:
        async for _message in ws:
            pass  # clients only listen; drain until they disconnect
    finally:
        sender.cancel()
        try:
            await sender
        except asyncio.CancelledError:
            pass
        except Exception:
            log.debug("stream sender for %s ended with error", session_id, exc_info=True)
        host.unsubscribe(queue)
    return ws


async def handle_asset(request: web.Request) -> web.Response:
    root = request.app[ASSETS_KEY]
    tail = request.match_info.get("tail", "")
    name = tail or "index.html"
    candidate = (root / name).resolve()
    if not candidate.is_relative_to(root.resolve()) or not candidate.is_file():
        raise web.HTTPNotFound()
    content_type = {
        ".html": "text/html",
        ".js": "application/javascript",
        ".css": "text/css",
        ".map": "application/json",
        ".svg": "image/svg+xml",
    }.get(candidate.suffix, "application/octet-stream")
    return web.Response(body=candidate.read_bytes(), content_type=content_type)


# ---------------------------------------------------------------------------
# session recovery

def rebuild_host(path: Path, clock) -> SessionHost:
    """Reload one session from its journal after a restart.

    Replays the journal through the core reducer, then reconstructs the
    scheduler and the idempotency table so accepted submissions keep
    returning their original acknowledgments.
    """
    data = path.read_bytes()
    entries, report = scan(data)
    if report.first_bad_line is not None:
        raise JournalCorruptError(report.first_bad_line,
                                  report.first_bad_reason or "corrupt record")
    writer = JournalWriter(path)  # truncates any torn tail
    from dlot.journal import fold

    state = fold(entries)
    if state is None:
        raise JournalCorruptError(1, f"{path}: journal has no config snapshot")
    host = SessionHost(state.config, writer, clock)
    host.state = state

    started_at: int | None = None
    open_prompt: PromptSpec | None = None
    opened = 0
    last_ts = 0
    for entry in entries:
        last_ts = max(last_ts, entry.ts)
        if entry.kind is EntryKind.SESSION_STARTED:
            started_at = entry.ts
        elif entry.kind is EntryKind.PROMPT_OPENED:
            open_prompt = scheduler.prompt_from_json(entry.payload)
            opened += 1
        elif entry.kind is EntryKind.PROMPT_EXPIRED:
            open_prompt = None

    for entry in entries:
        if entry.kind is not EntryKind.OBSERVATION_LOGGED:
            continue
        payload = entry.payload
        if payload.get("status") == ObservationStatus.MISSED.value:
            continue  # server-synthesized; was never an acknowledgment
        key = (payload["observer_id"], payload["prompt_index"], payload["subject_id"])
        signature = json.dumps(
            {"selections": {k: sorted(v) for k, v in sorted(payload.get("selections", {}).items())},
             "status": payload["status"]},
            sort_keys=True,
        )
        host.acks[key] = (signature, SubmissionResult(
            accepted=True, seq=entry.seq, observer_id=key[0],
            prompt_index=key[1], subject_id=key[2], logged_at=payload["logged_at"],
        ))

    if state.phase is Phase.RUNNING and started_at is not None:
        responded = set()
        if open_prompt is not None:
            for obs in state.observations:
                if obs.prompt_index == open_prompt.prompt_index:
                    responded.add(obs.observer_id)
            if (
                state.config.scheduling_mode is not SchedulingMode.FREE_SELECT
                and state.config.observer_ids
                and set(state.config.observer_ids) <= responded
            ):
                open_prompt = None  # had been resolved before the crash
                responded = set()
        host.sched = SchedulerState(
            session_start=started_at,
            next_index=opened,
            open_prompt=open_prompt,
            last_now=last_ts,
        )
        host.responded = responded
    return host


def load_sessions(journal_dir: Path, clock) -> dict[str, SessionHost]:
    sessions: dict[str, SessionHost] = {}
    for path in sorted(journal_dir.glob(f"*{JOURNAL_SUFFIX}")):
        try:
            host = rebuild_host(path, clock)
        except Exception:
            log.exception("skipping unrecoverable journal %s", path)
            continue
        sessions[host.config.session_id] = host
    return sessions


# ---------------------------------------------------------------------------
# app factory

def make_app(
    journal_dir: str | Path,
    *,
    clock=None,
    assets_dir: str | Path | None = None,
    drive_interval: float = 0.2,
    run_driver: bool = True,
) -> web.Application:
    """Build the service application.

    ``run_driver=False`` disables the background tick loop so tests can
    drive session clocks explicitly.
    """
    journal_dir = Path(journal_dir)
    journal_dir.mkdir(parents=True, exist_ok=True)
    if assets_dir is None:
        assets_dir = Path(__file__).parent / "static"
    clock = clock or SystemClock()

    app = web.Application()
    app[CLOCK_KEY] = clock
    app[JOURNAL_DIR_KEY] = journal_dir
    app[ASSETS_KEY] = Path(assets_dir)
    app[SESSIONS_KEY] = load_sessions(journal_dir, clock)

    app.router.add_post("/sessions", handle_create_session)
    app.router.add_get("/sessions/{session_id}", handle_get_session)
    app.router.add_post("/sessions/{session_id}/observers", handle_add_observer)
    app.router.add_post("/sessions/{session_id}/start", handle_start)
    app.router.add_post("/sessions/{session_id}/observations", handle_submit)
    app.router.add_post("/sessions/{session_id}/end", handle_end)
    app.router.add_get("/sessions/{session_id}/export", handle_export)
    app.router.add_get("/sessions/{session_id}/stream", handle_stream)
    app.router.add_get("/", handle_asset)
    app.router.add_get("/{tail:[^/]+}", handle_asset)

    if run_driver:
        async def driver_ctx(app: web.Application):
            task = asyncio.create_task(_drive(app, drive_interval))
            yield
            task.cancel()
            try:
                await task
            except asyncio.CancelledError:
                pass

        app.cleanup_ctx.append(driver_ctx)
    return app


async def _drive(app: web.Application, interval: float) -> None:
    clock = app[CLOCK_KEY]
    while True:
        now = clock.now_ms()
        for host in list(app[SESSIONS_KEY].values()):
            try:
                await host.tick(now)
            except Exception:
                log.exception("tick failed for session %s", host.config.session_id)
        await asyncio.sleep(interval)


def run(addr: str = DEFAULT_ADDR, journal_dir: str | Path = "journals",
        assets_dir: str | Path | None = None) -> None:
    host_part, _, port_part = addr.rpartition(":")
    app = make_app(journal_dir, assets_dir=assets_dir)
    web.run_app(app, host=host_part or "127.0.0.1", port=int(port_part))

"""Append-only, checksummed, crash-recoverable session log.

One record per line, UTF-8, LF-terminated:

    <crc32-hex8> <json>\\n

The checksum covers exactly the JSON bytes between the separating space
and the newline. The JSON object carries ``seq``, ``kind``, ``ts`` and
``payload``, in that order. A record is durable only once its bytes,
newline included, are flushed; replay drops a torn final record and
recovers everything before it.
"""

from __future__ import annotations

import fcntl
import json
import os
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, BinaryIO, Iterable, Mapping, Union

from dlot.core import (
    DlotError,
    SessionState,
    apply_observation,
    end_session,
    format_ts,
    new_session,
    observation_from_json,
    parse_ts,
    record_prompt_opened,
    start_session,
    validate_config,
)

FORMAT_VERSION = 1
JOURNAL_SUFFIX = ".dlotj"


class EntryKind(str, Enum):
    CONFIG_SNAPSHOT = "config_snapshot"
    SESSION_STARTED = "session_started"
    PROMPT_OPENED = "prompt_opened"
    PROMPT_EXPIRED = "prompt_expired"
    OBSERVATION_LOGGED = "observation_logged"
    SESSION_ENDED = "session_ended"


@dataclass(frozen=True)
class JournalEntry:
    seq: int
    kind: EntryKind
    ts: int  # epoch ms UTC
    payload: Mapping[str, Any]


class JournalCorruptError(DlotError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"journal corrupt at line {line_no}: {reason}")


class JournalWriteError(DlotError):
    pass


class JournalLockedError(DlotError):
    pass


@dataclass
class ReplayReport:
    entries_read: int = 0
    truncated_tail: bool = False
    first_bad_line: int | None = None
    first_bad_reason: str | None = None


# ---------------------------------------------------------------------------
# record codec

def encode_entry(entry: JournalEntry) -> bytes:
    doc = {
        "seq": entry.seq,
        "kind": entry.kind.value,
        "ts": format_ts(entry.ts),
        "payload": entry.payload,
    }
    body = json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return b"%08x " % zlib.crc32(body) + body + b"\n"


def encode_journal(entries: Iterable[JournalEntry]) -> bytes:
    return b"".join(encode_entry(e) for e in entries)


def decode_line(line: bytes, line_no: int) -> JournalEntry:
    """Decode one LF-stripped record line; raises JournalCorruptError."""

    def corrupt(reason: str) -> JournalCorruptError:
        return JournalCorruptError(line_no, reason)

    if len(line) < 10 or line[8:9] != b" ":
        raise corrupt("malformed record framing")
    crc_hex, body = line[:8], line[9:]
    try:
        expected = int(crc_hex, 16)
    except ValueError:
        raise corrupt("malformed checksum") from None
    if zlib.crc32(body) != expected:
        raise corrupt("checksum mismatch")
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise corrupt("invalid JSON body") from None
    if not isinstance(doc, dict) or list(doc) != ["seq", "kind", "ts", "payload"]:
        raise corrupt("record keys must be seq, kind, ts, payload in order")
    seq = doc["seq"]
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise corrupt("seq must be a non-negative integer")
    try:
        kind = EntryKind(doc["kind"])
    except ValueError:
        raise corrupt(f"unknown entry kind {doc['kind']!r}") from None
    try:
        ts = parse_ts(doc["ts"])
    except ValueError as exc:
        raise corrupt(str(exc)) from None
    payload = doc["payload"]
    if not isinstance(payload, dict):
        raise corrupt("payload must be an object")
    return JournalEntry(seq=seq, kind=kind, ts=ts, payload=payload)


# ---------------------------------------------------------------------------
# entry constructors

def config_snapshot_entry(seq: int, ts: int, config_doc: Mapping[str, Any]) -> JournalEntry:
    payload = {"format_version": FORMAT_VERSION, "config": dict(config_doc)}
    return JournalEntry(seq=seq, kind=EntryKind.CONFIG_SNAPSHOT, ts=ts, payload=payload)


def make_entry(seq: int, kind: EntryKind, ts: int,
               payload: Mapping[str, Any] | None = None) -> JournalEntry:
    return JournalEntry(seq=seq, kind=kind, ts=ts, payload=dict(payload or {}))


# ---------------------------------------------------------------------------
# scanning and replay

def _structural_problem(entries: list[JournalEntry], entry: JournalEntry) -> str | None:
    if entry.seq != len(entries):
        return f"expected seq {len(entries)}, found {entry.seq}"
    if not entries and entry.kind is not EntryKind.CONFIG_SNAPSHOT:
        return "first entry must be config_snapshot"
    if entries and entry.kind is EntryKind.CONFIG_SNAPSHOT:
        return "config_snapshot only allowed at seq 0"
    if entries and entries[-1].kind is EntryKind.SESSION_ENDED:
        return "entry after session_ended"
    return None


def scan(data: bytes) -> tuple[list[JournalEntry], ReplayReport]:
    """Read records until EOF, a torn tail, or the first bad line.

    Never raises: problems land in the report. A torn tail is any trailing
    bytes not terminated by LF; those bytes were never acknowledged.
    """
    report = ReplayReport()
    entries: list[JournalEntry] = []
    *lines, tail = data.split(b"\n")
    for i, line in enumerate(lines):
        line_no = i + 1
        try:
            entry = decode_line(line, line_no)
        except JournalCorruptError as exc:
            report.first_bad_line = line_no
            report.first_bad_reason = exc.reason
            break
        problem = _structural_problem(entries, entry)
        if problem is not None:
            report.first_bad_line = line_no
            report.first_bad_reason = problem
            break
        entries.append(entry)
    else:
        if tail:
            report.truncated_tail = True
    report.entries_read = len(entries)
    return entries, report


Source = Union[bytes, bytearray, BinaryIO]


def _as_bytes(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    return source.read()


def verify(source: Source) -> ReplayReport:
    """Report on a journal without building state; never raises."""
    _, report = scan(_as_bytes(source))
    return report


def fold(entries: Iterable[JournalEntry]) -> SessionState | None:
    """Fold journal entries through the core reducer.

    Returns None for an empty journal. Entries whose payloads violate
    domain invariants raise ``JournalCorruptError`` naming the line.
    """
    state: SessionState | None = None
    for entry in entries:
        try:
            state = _fold_one(state, entry)
        except (DlotError, ValueError) as exc:
            raise JournalCorruptError(entry.seq + 1, str(exc)) from None
    return state


def _fold_one(state: SessionState | None, entry: JournalEntry) -> SessionState:
    if entry.kind is EntryKind.CONFIG_SNAPSHOT:
        if state is not None:
            raise ValueError("duplicate config_snapshot")
        version = entry.payload.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {version!r}")
        config = validate_config(entry.payload.get("config"))
        return new_session(config)
    if state is None:
        raise ValueError("entry before config_snapshot")
    if entry.kind is EntryKind.SESSION_STARTED:
        return start_session(state, entry.ts)
    if entry.kind is EntryKind.PROMPT_OPENED:
        return record_prompt_opened(state)
    if entry.kind is EntryKind.PROMPT_EXPIRED:
        return state
    if entry.kind is EntryKind.OBSERVATION_LOGGED:
        return apply_observation(state, observation_from_json(entry.payload))
    if entry.kind is EntryKind.SESSION_ENDED:
        return end_session(state, entry.ts)
    raise ValueError(f"unhandled entry kind {entry.kind}")


def replay(source: Source) -> tuple[SessionState | None, ReplayReport]:
    """Reconstruct session state from a journal byte stream.

    A torn final record is dropped (reported via ``truncated_tail``);
    corruption anywhere before the tail is a hard error naming the line.
    """
    entries, report = scan(_as_bytes(source))
    if report.first_bad_line is not None:
        raise JournalCorruptError(report.first_bad_line,
                                  report.first_bad_reason or "corrupt record")
    return fold(entries), report


def replay_path(path: str | Path) -> tuple[SessionState | None, ReplayReport]:
    return replay(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# writer

class JournalWriter:
    """Single appender for one session journal.

    Holds an exclusive advisory lock for the lifetime of the writer. Each
    append is flushed to stable storage before it is acknowledged. Opening
    an existing journal resumes after its last complete record; a torn tail
    left by a crash is truncated away (it was never acknowledged).
    """

    def __init__(self, path: str | Path, *, fsync: bool = True):
        self.path = Path(path)
        self._fsync = fsync
        existing = self.path.read_bytes() if self.path.exists() else b""
        entries, report = scan(existing)
        if report.first_bad_line is not None:
            raise JournalCorruptError(report.first_bad_line,
                                      report.first_bad_reason or "corrupt record")
        self._file = open(self.path, "ab")
        try:
            fcntl.flock(self._file.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self._file.close()
            raise JournalLockedError(
                f"{self.path} is already locked by another writer") from None
        if report.truncated_tail:
            keep = existing.rfind(b"\n") + 1
            self._file.truncate(keep)
            os.fsync(self._file.fileno())
        self._next_seq = len(entries)
        self._sealed = bool(entries) and entries[-1].kind is EntryKind.SESSION_ENDED

    @property
    def next_seq(self) -> int:
        return self._next_seq

    @property
    def sealed(self) -> bool:
        return self._sealed

    def append(self, entry: JournalEntry) -> int:
        """Durably append one entry; returns the acknowledged seq."""
        if self._file.closed:
            raise JournalWriteError("journal writer is closed")
        if self._sealed:
            raise JournalWriteError("journal sealed by session_ended")
        if entry.seq != self._next_seq:
            raise JournalWriteError(
                f"sequence gap: expected {self._next_seq}, got {entry.seq}")
        self._file.write(encode_entry(entry))
        self._file.flush()
        if self._fsync:
            os.fsync(self._file.fileno())
        self._next_seq += 1
        if entry.kind is EntryKind.SESSION_ENDED:
            self._sealed = True
        return entry.seq

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "JournalWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

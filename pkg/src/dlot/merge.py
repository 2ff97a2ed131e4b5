"""Merging of journals recorded for the same session on separate servers.

The merged dataset is the union of observations keyed by
(observer_id, prompt_index, subject_id). Identical duplicate records are
deduplicated silently; a key whose records differ in any field is a
conflict: excluded from the dataset and reported. Output is a canonical
observations-only journal (no prompt events), ordered by the export sort
key so merging is commutative and associative up to that ordering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from dlot.core import (
    DlotError,
    Observation,
    SessionConfig,
    observation_from_json,
    observation_to_json,
    validate_config,
)
from dlot.journal import (
    FORMAT_VERSION,
    EntryKind,
    JournalCorruptError,
    JournalEntry,
    config_snapshot_entry,
    make_entry,
    scan,
)

SubmissionKey = tuple[str, int, str]  # (observer_id, prompt_index, subject_id)


class MergeError(DlotError):
    pass


@dataclass(frozen=True)
class MergeConflict:
    key: SubmissionKey
    sources: tuple[str, str]  # first two sources whose payloads differ


@dataclass(frozen=True)
class MergeReport:
    sources: tuple[str, ...]
    rows_merged: int
    conflicts: tuple[MergeConflict, ...]


def _canonical(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _load(path: Path) -> tuple[list[JournalEntry], SessionConfig]:
    entries, report = scan(path.read_bytes())
    if report.first_bad_line is not None:
        raise JournalCorruptError(report.first_bad_line,
                                  f"{path}: {report.first_bad_reason}")
    if not entries:
        raise MergeError(f"{path}: journal has no config snapshot")
    snapshot = entries[0]
    if snapshot.payload.get("format_version") != FORMAT_VERSION:
        raise MergeError(f"{path}: unsupported format_version")
    config = validate_config(snapshot.payload.get("config"))
    return entries, config


def merge_journals(paths: Sequence[str | Path]) -> tuple[list[JournalEntry], MergeReport]:
    """Merge journals sharing one session definition.

    Returns renumbered entries forming a valid journal plus the report.
    """
    if not paths:
        raise MergeError("at least one journal path required")
    sources = [Path(p) for p in paths]

    loaded = [_load(path) for path in sources]
    config = loaded[0][1]
    snapshot_canon = _canonical(dict(loaded[0][0][0].payload))
    snapshot_doc = dict(loaded[0][0][0].payload)["config"]
    snapshot_ts = loaded[0][0][0].ts

    # key -> list of (canonical payload, Observation, source name)
    by_key: dict[SubmissionKey, list[tuple[str, Observation, str]]] = {}
    started: list[int] = []
    ended: list[int] = []
    source_ended = 0

    for path, (entries, _) in zip(sources, loaded):
        if _canonical(dict(entries[0].payload)) != snapshot_canon:
            raise MergeError(f"{path}: config snapshot differs from {sources[0]}")
        snapshot_ts = min(snapshot_ts, entries[0].ts)
        has_end = False
        for entry in entries:
            if entry.kind is EntryKind.SESSION_STARTED:
                started.append(entry.ts)
            elif entry.kind is EntryKind.SESSION_ENDED:
                ended.append(entry.ts)
                has_end = True
            elif entry.kind is EntryKind.OBSERVATION_LOGGED:
                obs = observation_from_json(entry.payload)
                key = (obs.observer_id, obs.prompt_index, obs.subject_id)
                canon = _canonical(observation_to_json(obs))
                records = by_key.setdefault(key, [])
                if not any(c == canon for c, _, _ in records):
                    records.append((canon, obs, str(path)))
        if has_end:
            source_ended += 1

    conflicts: list[MergeConflict] = []
    merged: list[Observation] = []
    for key in by_key:
        records = by_key[key]
        if len(records) > 1:
            conflicts.append(MergeConflict(key=key,
                                           sources=(records[0][2], records[1][2])))
        else:
            merged.append(records[0][1])

    roster = config.roster
    merged.sort(key=lambda o: (roster.index_of(o.subject_id), o.logged_at, o.observer_id))
    conflicts.sort(key=lambda c: (c.key[1], c.key[2], c.key[0]))

    entries_out: list[JournalEntry] = [
        config_snapshot_entry(0, snapshot_ts, snapshot_doc),
    ]
    if started:
        entries_out.append(make_entry(len(entries_out), EntryKind.SESSION_STARTED,
                                      min(started)))
    for obs in merged:
        entries_out.append(make_entry(len(entries_out), EntryKind.OBSERVATION_LOGGED,
                                      obs.logged_at, observation_to_json(obs)))
    if ended and source_ended == len(sources):
        entries_out.append(make_entry(len(entries_out), EntryKind.SESSION_ENDED,
                                      max(ended)))

    report = MergeReport(sources=tuple(str(p) for p in sources),
                         rows_merged=len(merged),
                         conflicts=tuple(conflicts))
    return entries_out, report

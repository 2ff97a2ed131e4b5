"""Domain types, configuration validation, and the session state machine.

Everything in this module is an immutable value. Operations are pure
transitions that return new states, so the live submission path and
journal replay run through the same reducer and cannot drift apart.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from functools import lru_cache
from typing import Any, Iterable, Mapping

MIN_INTERVAL_MS = 500
DEFAULT_INTERVAL_MS = 10_000

# Joiner for multiple-selection cells in exports. Labels may not contain it
# (enforced by validate_config) so joined cells are unambiguous.
MULTI_LABEL_JOINER = ";"

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_ONE_MS = timedelta(milliseconds=1)
_SESSION_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,127}$")


class DlotError(Exception):
    """Base class for every domain error raised by this package."""


@dataclass(frozen=True)
class Violation:
    """One validation failure, addressed by a dotted field path."""

    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}" if self.path else self.message


class ConfigError(DlotError):
    """Carries the complete list of violations, never just the first."""

    def __init__(self, violations: Iterable[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class SessionPhaseError(DlotError):
    pass


class ObservationError(DlotError):
    pass


# ---------------------------------------------------------------------------
# timestamps

def format_ts(ms: int) -> str:
    """Render epoch milliseconds as ISO 8601 UTC with millisecond precision."""
    sec, msec = divmod(int(ms), 1000)
    stamp = (_EPOCH + timedelta(seconds=sec)).strftime("%Y-%m-%dT%H:%M:%S")
    return f"{stamp}.{msec:03d}Z"


def parse_ts(value: str) -> int:
    """Parse an ISO 8601 timestamp into epoch milliseconds.

    Accepts a trailing ``Z`` or an explicit UTC offset; naive timestamps are
    rejected. Precision beyond milliseconds is truncated.
    """
    if not isinstance(value, str):
        raise ValueError("timestamp must be a string")
    return _parse_ts_cached(value)


# Journal replay parses the same few stamps thousands of times; memoizing the
# pure string-to-ms mapping keeps crash-recovery sweeps cheap.
@lru_cache(maxsize=8192)
def _parse_ts_cached(value: str) -> int:
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        raise ValueError(f"invalid timestamp {value!r}") from None
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {value!r} must carry a timezone")
    return (dt - _EPOCH) // _ONE_MS


# ---------------------------------------------------------------------------
# domain types

class Selection(str, Enum):
    SINGLE = "single"        # rendered as radio buttons: exactly one label
    MULTIPLE = "multiple"    # rendered as a checklist: zero or more labels


class SchedulingMode(str, Enum):
    SINGLE_SUBJECT = "single_subject"
    ROUND_ROBIN = "round_robin"
    FREE_SELECT = "free_select"


class ObservationStatus(str, Enum):
    LOGGED = "logged"
    MISSED = "missed"
    SKIPPED = "skipped"


class Phase(str, Enum):
    CREATED = "created"
    RUNNING = "running"
    ENDED = "ended"


@dataclass(frozen=True)
class CategoryGroup:
    name: str
    labels: tuple[str, ...]
    selection: Selection = Selection.SINGLE

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class LabelScheme:
    groups: tuple[CategoryGroup, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(self.groups))

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def group(self, name: str) -> CategoryGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)


@dataclass(frozen=True)
class Subject:
    id: str
    display_name: str = ""
    group_tag: str | None = None


@dataclass(frozen=True)
class Roster:
    subjects: tuple[Subject, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "subjects", tuple(self.subjects))

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.subjects)

    def index_of(self, subject_id: str) -> int:
        for i, s in enumerate(self.subjects):
            if s.id == subject_id:
                return i
        raise KeyError(subject_id)

    def subject(self, subject_id: str) -> Subject:
        return self.subjects[self.index_of(subject_id)]


@dataclass(frozen=True)
class TimerPolicy:
    interval_ms: int = DEFAULT_INTERVAL_MS


@dataclass(frozen=True)
class SessionConfig:
    """Frozen description of one study; immutable once the session starts."""

    session_id: str
    title: str
    scheme: LabelScheme
    roster: Roster
    timer: TimerPolicy
    scheduling_mode: SchedulingMode
    observer_ids: tuple[str, ...]
    created_at: int  # epoch ms UTC

    def __post_init__(self) -> None:
        object.__setattr__(self, "observer_ids", tuple(self.observer_ids))


@dataclass(frozen=True)
class Observation:
    """One observer's record of one subject at one prompt.

    ``selections`` maps group name to the chosen labels; empty label sets are
    normalized away so that "no selection" has a single representation.
    """

    observer_id: str
    subject_id: str
    prompt_index: int
    logged_at: int  # epoch ms UTC
    selections: Mapping[str, frozenset[str]] = field(default_factory=dict)
    status: ObservationStatus = ObservationStatus.LOGGED

    def __post_init__(self) -> None:
        norm = {
            name: frozenset(labels)
            for name, labels in dict(self.selections).items()
            if labels
        }
        object.__setattr__(self, "selections", norm)


@dataclass(frozen=True)
class SessionState:
    config: SessionConfig
    phase: Phase = Phase.CREATED
    prompts_issued: int = 0
    observations: tuple[Observation, ...] = ()
    started_at: int | None = None


# ---------------------------------------------------------------------------
# config validation

_CONFIG_KEYS = {
    "session_id", "title", "scheme", "roster", "timer",
    "scheduling_mode", "observer_ids", "created_at",
}

_BAD_CONTROL = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f]")


def _clean_str(value: Any, path: str, bad, *, allow_empty: bool = False) -> str | None:
    if not isinstance(value, str):
        bad(path, "must be a string")
        return None
    if not allow_empty and not value:
        bad(path, "must not be empty")
        return None
    if _BAD_CONTROL.search(value):
        bad(path, "contains control characters")
        return None
    return value


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _parse_group(raw: Any, path: str, bad) -> CategoryGroup | None:
    if not isinstance(raw, Mapping):
        bad(path, "must be an object")
        return None
    for key in raw:
        if key not in ("name", "labels", "selection"):
            bad(f"{path}.{key}", "unknown field")
    name = _clean_str(raw.get("name"), f"{path}.name", bad)
    labels_raw = raw.get("labels")
    labels: list[str] = []
    if not isinstance(labels_raw, list) or not labels_raw:
        bad(f"{path}.labels", "group must contain at least one label")
    else:
        seen: set[str] = set()
        for j, label in enumerate(labels_raw):
            lpath = f"{path}.labels[{j}]"
            text = _clean_str(label, lpath, bad)
            if text is None:
                continue
            if MULTI_LABEL_JOINER in text:
                bad(lpath, f"label must not contain {MULTI_LABEL_JOINER!r}")
                continue
            if text in seen:
                bad(lpath, f"duplicate label {text!r}")
                continue
            seen.add(text)
            labels.append(text)
    selection_raw = raw.get("selection", Selection.SINGLE.value)
    try:
        selection = Selection(selection_raw)
    except ValueError:
        bad(f"{path}.selection", "must be 'single' or 'multiple'")
        selection = Selection.SINGLE
    if name is None or not labels:
        return None
    return CategoryGroup(name=name, labels=tuple(labels), selection=selection)


def _parse_scheme(raw: Any, bad) -> LabelScheme | None:
    if raw is None:
        bad("scheme", "required field")
        return None
    if not isinstance(raw, Mapping):
        bad("scheme", "must be an object")
        return None
    for key in raw:
        if key != "groups":
            bad(f"scheme.{key}", "unknown field")
    groups_raw = raw.get("groups")
    if not isinstance(groups_raw, list) or not groups_raw:
        bad("scheme.groups", "scheme must contain at least one group")
        return None
    groups: list[CategoryGroup] = []
    names: set[str] = set()
    ok = True
    for i, graw in enumerate(groups_raw):
        group = _parse_group(graw, f"scheme.groups[{i}]", bad)
        if group is None:
            ok = False
            continue
        if group.name in names:
            bad(f"scheme.groups[{i}].name", f"duplicate group name {group.name!r}")
            ok = False
            continue
        names.add(group.name)
        groups.append(group)
    return LabelScheme(groups=tuple(groups)) if ok and groups else None


def _parse_roster(raw: Any, bad) -> Roster | None:
    if raw is None:
        bad("roster", "required field")
        return None
    if not isinstance(raw, Mapping):
        bad("roster", "must be an object")
        return None
    for key in raw:
        if key != "subjects":
            bad(f"roster.{key}", "unknown field")
    subjects_raw = raw.get("subjects")
    if not isinstance(subjects_raw, list) or not subjects_raw:
        bad("roster.subjects", "roster must contain at least one subject")
        return None
    subjects: list[Subject] = []
    ids: set[str] = set()
    ok = True
    for i, sraw in enumerate(subjects_raw):
        path = f"roster.subjects[{i}]"
        if not isinstance(sraw, Mapping):
            bad(path, "must be an object")
            ok = False
            continue
        for key in sraw:
            if key not in ("id", "display_name", "group_tag"):
                bad(f"{path}.{key}", "unknown field")
        sid = _clean_str(sraw.get("id"), f"{path}.id", bad)
        if sid is None:
            ok = False
            continue
        if sid in ids:
            bad(f"{path}.id", f"duplicate subject id {sid!r}")
            ok = False
            continue
        ids.add(sid)
        display = sraw.get("display_name", sid)
        display = _clean_str(display, f"{path}.display_name", bad, allow_empty=True)
        tag = sraw.get("group_tag")
        if tag is not None:
            tag = _clean_str(tag, f"{path}.group_tag", bad)
        subjects.append(Subject(id=sid, display_name=display if display is not None else sid, group_tag=tag))
    return Roster(subjects=tuple(subjects)) if ok else None


def validate_config(raw: Any) -> SessionConfig:
    """Validate a JSON-shaped config document into a ``SessionConfig``.

    Collects every violation before failing: a rejected document raises a
    single ``ConfigError`` whose ``violations`` list each carry a field path
    and a message, so callers can report the full picture at once.
    """
    problems: list[Violation] = []

    def bad(path: str, message: str) -> None:
        problems.append(Violation(path, message))

    if not isinstance(raw, Mapping):
        raise ConfigError([Violation("", "config must be a JSON object")])

    for key in raw:
        if key not in _CONFIG_KEYS:
            bad(str(key), "unknown field")

    session_id = _clean_str(raw.get("session_id"), "session_id", bad)
    if session_id is not None and not _SESSION_ID_RE.match(session_id):
        bad("session_id", "must contain only letters, digits, '.', '_' or '-' "
                          "(max 128 chars, leading alphanumeric)")

    title = raw.get("title", "")
    title = _clean_str(title, "title", bad, allow_empty=True)

    scheme = _parse_scheme(raw.get("scheme"), bad)
    roster = _parse_roster(raw.get("roster"), bad)

    timer_raw = raw.get("timer")
    timer = TimerPolicy()
    if timer_raw is not None:
        if not isinstance(timer_raw, Mapping):
            bad("timer", "must be an object")
        else:
            for key in timer_raw:
                if key != "interval_ms":
                    bad(f"timer.{key}", "unknown field")
            interval = timer_raw.get("interval_ms", DEFAULT_INTERVAL_MS)
            if not _is_int(interval) or interval <= 0:
                bad("timer.interval_ms", "must be a positive integer (milliseconds)")
            elif interval < MIN_INTERVAL_MS:
                bad("timer.interval_ms", f"must be at least {MIN_INTERVAL_MS} ms")
            else:
                timer = TimerPolicy(interval_ms=interval)

    mode_raw = raw.get("scheduling_mode")
    mode: SchedulingMode | None = None
    if mode_raw is None:
        bad("scheduling_mode", "required field")
    else:
        try:
            mode = SchedulingMode(mode_raw)
        except ValueError:
            bad("scheduling_mode",
                "must be 'single_subject', 'round_robin' or 'free_select'")
    if mode is SchedulingMode.SINGLE_SUBJECT and roster is not None and len(roster) != 1:
        bad("scheduling_mode", "single_subject mode requires a roster of exactly one subject")

    observers_raw = raw.get("observer_ids")
    observer_ids: list[str] = []
    if not isinstance(observers_raw, list):
        bad("observer_ids", "required field (list of observer ids)")
    else:
        seen: set[str] = set()
        for i, oid in enumerate(observers_raw):
            text = _clean_str(oid, f"observer_ids[{i}]", bad)
            if text is None:
                continue
            if text in seen:
                bad(f"observer_ids[{i}]", f"duplicate observer id {text!r}")
                continue
            seen.add(text)
            observer_ids.append(text)

    created_raw = raw.get("created_at")
    created_at = 0
    if created_raw is None:
        bad("created_at", "required field")
    else:
        try:
            created_at = parse_ts(created_raw)
        except ValueError as exc:
            bad("created_at", str(exc))

    if problems:
        raise ConfigError(problems)

    assert session_id is not None and scheme is not None and roster is not None
    assert mode is not None and title is not None
    return SessionConfig(
        session_id=session_id,
        title=title,
        scheme=scheme,
        roster=roster,
        timer=timer,
        scheduling_mode=mode,
        observer_ids=tuple(observer_ids),
        created_at=created_at,
    )


def config_to_json(config: SessionConfig) -> dict[str, Any]:
    """Canonical JSON form of a config; round-trips through validate_config."""
    subjects = []
    for s in config.roster.subjects:
        doc: dict[str, Any] = {"id": s.id, "display_name": s.display_name}
        if s.group_tag is not None:
            doc["group_tag"] = s.group_tag
        subjects.append(doc)
    return {
        "session_id": config.session_id,
        "title": config.title,
        "scheme": {
            "groups": [
                {"name": g.name, "labels": list(g.labels), "selection": g.selection.value}
                for g in config.scheme.groups
            ]
        },
        "roster": {"subjects": subjects},
        "timer": {"interval_ms": config.timer.interval_ms},
        "scheduling_mode": config.scheduling_mode.value,
        "observer_ids": list(config.observer_ids),
        "created_at": format_ts(config.created_at),
    }


# ---------------------------------------------------------------------------
# observation serialization

def observation_to_json(obs: Observation) -> dict[str, Any]:
    return {
        "observer_id": obs.observer_id,
        "subject_id": obs.subject_id,
        "prompt_index": obs.prompt_index,
        "logged_at": format_ts(obs.logged_at),
        "status": obs.status.value,
        "selections": {
            name: sorted(obs.selections[name]) for name in sorted(obs.selections)
        },
    }


def observation_from_json(doc: Mapping[str, Any]) -> Observation:
    if not isinstance(doc, Mapping):
        raise ValueError("observation must be an object")
    try:
        observer_id = doc["observer_id"]
        subject_id = doc["subject_id"]
        prompt_index = doc["prompt_index"]
        logged_at = parse_ts(doc["logged_at"])
        status = ObservationStatus(doc["status"])
        selections_raw = doc.get("selections", {})
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed observation: {exc}") from None
    if not isinstance(observer_id, str) or not isinstance(subject_id, str):
        raise ValueError("observation ids must be strings")
    if not _is_int(prompt_index):
        raise ValueError("prompt_index must be an integer")
    if not isinstance(selections_raw, Mapping):
        raise ValueError("selections must be an object")
    selections: dict[str, frozenset[str]] = {}
    for name, labels in selections_raw.items():
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise ValueError(f"selection for group {name!r} must be a list of strings")
        selections[name] = frozenset(labels)
    return Observation(
        observer_id=observer_id,
        subject_id=subject_id,
        prompt_index=prompt_index,
        logged_at=logged_at,
        selections=selections,
        status=status,
    )


# ---------------------------------------------------------------------------
# session state machine

def new_session(config: SessionConfig) -> SessionState:
    return SessionState(config=config)


def start_session(state: SessionState, start_time: int) -> SessionState:
    """Move a created session into the running phase.

    The caller owns journaling and scheduling anchored at ``start_time``.
    """
    if state.phase is Phase.RUNNING:
        raise SessionPhaseError("already running")
    if state.phase is Phase.ENDED:
        raise SessionPhaseError("session ended")
    return replace(state, phase=Phase.RUNNING, started_at=int(start_time))


def end_session(state: SessionState, end_time: int) -> SessionState:
    if state.phase is Phase.CREATED:
        raise SessionPhaseError("session not started")
    if state.phase is Phase.ENDED:
        raise SessionPhaseError("session ended")
    return replace(state, phase=Phase.ENDED)


def record_prompt_opened(state: SessionState) -> SessionState:
    if state.phase is not Phase.RUNNING:
        raise SessionPhaseError("session not running")
    return replace(state, prompts_issued=state.prompts_issued + 1)


def apply_observation(state: SessionState, obs: Observation) -> SessionState:
    """Append an observation iff it satisfies every invariant, else raise.

    Pure: equal inputs produce equal outputs, and the input state is never
    modified, so live submission and journal replay share this reducer.
    """
    if state.phase is not Phase.RUNNING:
        raise SessionPhaseError("session not running")
    config = state.config
    if obs.observer_id not in config.observer_ids:
        raise ObservationError(f"unknown observer {obs.observer_id!r}")
    if obs.subject_id not in config.roster.ids:
        raise ObservationError(f"unknown subject {obs.subject_id!r}")
    if obs.prompt_index < 0:
        raise ObservationError("prompt_index must be non-negative")

    if obs.status is not ObservationStatus.LOGGED:
        if obs.selections:
            raise ObservationError(
                f"{obs.status.value} observation must carry no selections")
    else:
        group_names = set(config.scheme.group_names)
        for name, labels in obs.selections.items():
            if name not in group_names:
                raise ObservationError(f"unknown group {name!r}")
            group = config.scheme.group(name)
            for label in labels:
                if label not in group.labels:
                    raise ObservationError(f"label {label!r} not in group {name!r}")
        for group in config.scheme.groups:
            if group.selection is Selection.SINGLE:
                count = len(obs.selections.get(group.name, frozenset()))
                if count != 1:
                    raise ObservationError(
                        f"group {group.name!r} requires exactly one label")

    return replace(state, observations=state.observations + (obs,))

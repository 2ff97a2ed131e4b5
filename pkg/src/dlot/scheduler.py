"""Deterministic prompt scheduling against an injected clock.

The scheduler never reads wall-clock time itself. Callers pass ``now``
explicitly, so the full event sequence is a pure function of the config,
the session start, and the sequence of clock readings and resolutions.
Tests run entirely on virtual time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Mapping

from dlot.core import DlotError, SchedulingMode, SessionConfig, format_ts, parse_ts

PROMPT_OPENED = "prompt_opened"
PROMPT_EXPIRED = "prompt_expired"


class SchedulerError(DlotError):
    pass


class PromptOutcome(str, Enum):
    LOGGED = "logged"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class PromptSpec:
    """One scheduled observation opportunity.

    ``deadline`` equals the next prompt's due time: the observer has one
    full interval to respond.
    """

    prompt_index: int
    due_at: int      # epoch ms UTC
    deadline: int    # epoch ms UTC
    subject_id: str | None = None  # None in free_select mode


@dataclass(frozen=True)
class PromptEvent:
    kind: str  # PROMPT_OPENED or PROMPT_EXPIRED
    prompt: PromptSpec


@dataclass(frozen=True)
class SchedulerState:
    session_start: int
    next_index: int = 0
    open_prompt: PromptSpec | None = None
    last_now: int | None = None


def prompt_at(config: SessionConfig, session_start: int, index: int) -> PromptSpec:
    """Prompt ``index`` of a session: pure and total for valid input.

    round_robin targets ``roster[index mod len(roster)]``, single_subject the
    sole subject, free_select leaves the target unset.
    """
    if index < 0:
        raise ValueError("prompt index must be non-negative")
    interval = config.timer.interval_ms
    due = session_start + index * interval
    if config.scheduling_mode is SchedulingMode.ROUND_ROBIN:
        subject = config.roster.subjects[index % len(config.roster)].id
    elif config.scheduling_mode is SchedulingMode.SINGLE_SUBJECT:
        subject = config.roster.subjects[0].id
    else:
        subject = None
    return PromptSpec(prompt_index=index, due_at=due, deadline=due + interval,
                      subject_id=subject)


def advance(
    state: SchedulerState, config: SessionConfig, now: int
) -> tuple[tuple[PromptEvent, ...], SchedulerState]:
    """Emit every transition due by ``now`` and return the new state.

    Events interleave in timeline order: the open prompt expires once its
    deadline passes, then the next prompt opens at its due time. After a
    stall of k intervals this yields exactly k expirations and the catch-up
    openings, never a duplicate and never a skipped index.
    """
    if state.last_now is not None and now < state.last_now:
        raise SchedulerError(
            f"clock moved backwards: {now} < {state.last_now}")
    events: list[PromptEvent] = []
    open_prompt = state.open_prompt
    index = state.next_index
    while True:
        if open_prompt is not None and now >= open_prompt.deadline:
            events.append(PromptEvent(PROMPT_EXPIRED, open_prompt))
            open_prompt = None
            continue
        if open_prompt is None:
            nxt = prompt_at(config, state.session_start, index)
            if nxt.due_at <= now:
                events.append(PromptEvent(PROMPT_OPENED, nxt))
                open_prompt = nxt
                index += 1
                continue
        break
    new_state = replace(state, next_index=index, open_prompt=open_prompt,
                        last_now=now)
    return tuple(events), new_state


def resolve_prompt(
    state: SchedulerState, prompt_index: int, outcome: PromptOutcome | str
) -> SchedulerState:
    """Close the open prompt so no expiration is emitted for it."""
    outcome = PromptOutcome(outcome)
    if state.open_prompt is None or state.open_prompt.prompt_index != prompt_index:
        raise SchedulerError(f"prompt {prompt_index} is not open")
    return replace(state, open_prompt=None)


def prompt_to_json(prompt: PromptSpec) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "prompt_index": prompt.prompt_index,
        "due_at": format_ts(prompt.due_at),
        "deadline": format_ts(prompt.deadline),
    }
    if prompt.subject_id is not None:
        doc["subject_id"] = prompt.subject_id
    return doc


def prompt_from_json(doc: Mapping[str, Any]) -> PromptSpec:
    try:
        index = doc["prompt_index"]
        due = parse_ts(doc["due_at"])
        deadline = parse_ts(doc["deadline"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed prompt: {exc}") from None
    if not isinstance(index, int) or isinstance(index, bool) or index < 0:
        raise ValueError("prompt_index must be a non-negative integer")
    subject = doc.get("subject_id")
    if subject is not None and not isinstance(subject, str):
        raise ValueError("subject_id must be a string")
    return PromptSpec(prompt_index=index, due_at=due, deadline=deadline,
                      subject_id=subject)

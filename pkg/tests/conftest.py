from __future__ import annotations

import random

import pytest

from dlot.core import (
    Observation,
    ObservationStatus,
    SessionConfig,
    validate_config,
)
from dlot.journal import (
    EntryKind,
    JournalEntry,
    config_snapshot_entry,
    make_entry,
)
from dlot import scheduler
from dlot.core import apply_observation, config_to_json, new_session, record_prompt_opened, start_session

AFFECT_LABELS = ["engaged", "boredom", "confusion", "frustration", "neutral"]

T0 = 1_760_000_000_000  # fixed session epoch for deterministic fixtures


class ManualClock:
    """Virtual clock: tests advance it explicitly."""

    def __init__(self, now_ms: int = T0):
        self.t = now_ms

    def now_ms(self) -> int:
        return self.t

    def advance(self, delta_ms: int) -> int:
        self.t += delta_ms
        return self.t


def config_doc(
    *,
    session_id="study",
    n_subjects=3,
    interval_ms=5000,
    observers=("r1", "r2"),
    mode="round_robin",
    groups=None,
):
    if groups is None:
        groups = [{"name": "affect", "labels": list(AFFECT_LABELS), "selection": "single"}]
    return {
        "session_id": session_id,
        "title": "fixture session",
        "scheme": {"groups": groups},
        "roster": {
            "subjects": [
                {"id": f"s{i + 1:02d}", "display_name": f"Subject {i + 1}"}
                for i in range(n_subjects)
            ]
        },
        "timer": {"interval_ms": interval_ms},
        "scheduling_mode": mode,
        "observer_ids": list(observers),
        "created_at": "2026-02-14T08:00:00.000Z",
    }


def make_config(**kwargs) -> SessionConfig:
    return validate_config(config_doc(**kwargs))


@pytest.fixture
def affect_config() -> SessionConfig:
    return make_config()


# ---------------------------------------------------------------------------
# random session generation (shared by crash-safety, export and merge tests)

def random_config(rng: random.Random, *, session_id="rand") -> SessionConfig:
    n_groups = rng.randint(1, 3)
    groups = []
    for g in range(n_groups):
        n_labels = rng.randint(1, 5) if g else rng.randint(2, 5)
        groups.append({
            "name": f"group{g}",
            "labels": [f"g{g}l{i}" for i in range(n_labels)],
            "selection": rng.choice(["single", "multiple"]) if g else "single",
        })
    mode = rng.choice(["round_robin", "round_robin", "single_subject", "free_select"])
    n_subjects = 1 if mode == "single_subject" else rng.randint(1, 6)
    observers = [f"obs{i}" for i in range(rng.randint(1, 4))]
    return make_config(
        session_id=session_id,
        n_subjects=n_subjects,
        interval_ms=rng.choice([500, 1000, 5000, 10000]),
        observers=observers,
        mode=mode,
        groups=groups,
    )


def random_selections(rng: random.Random, config: SessionConfig) -> dict[str, frozenset[str]]:
    selections: dict[str, frozenset[str]] = {}
    for group in config.scheme.groups:
        if group.selection.value == "single":
            selections[group.name] = frozenset([rng.choice(group.labels)])
        else:
            chosen = [l for l in group.labels if rng.random() < 0.4]
            if chosen:
                selections[group.name] = frozenset(chosen)
    return selections


def simulate_entries(
    rng: random.Random,
    config: SessionConfig,
    *,
    n_prompts: int | None = None,
    end: bool = True,
) -> list[JournalEntry]:
    """Deterministically simulate a session, producing a valid journal.

    Drives the real scheduler and reducer with randomized observer behavior
    (log, skip, or miss), mirroring the service's journaling order.
    """
    if n_prompts is None:
        n_prompts = rng.randint(1, 6)
    interval = config.timer.interval_ms
    entries: list[JournalEntry] = [
        config_snapshot_entry(0, T0 - 60_000, config_to_json(config))
    ]
    state = new_session(config)
    state = start_session(state, T0)
    entries.append(make_entry(1, EntryKind.SESSION_STARTED, T0))
    sched = scheduler.SchedulerState(session_start=T0)
    responded: set[str] = set()

    def append(kind: EntryKind, ts: int, payload=None) -> None:
        entries.append(make_entry(len(entries), kind, ts, payload))

    for tick in range(n_prompts + 1):
        now = T0 + tick * interval
        events, sched = scheduler.advance(sched, config, now)
        for event in events:
            prompt = event.prompt
            if event.kind == scheduler.PROMPT_OPENED:
                if prompt.prompt_index >= n_prompts:
                    break
                append(EntryKind.PROMPT_OPENED, prompt.due_at,
                       scheduler.prompt_to_json(prompt))
                state = record_prompt_opened(state)
                responded = set()
                # observers act within the window, in time order
                actions = []
                for observer in config.observer_ids:
                    roll = rng.random()
                    if roll < 0.6:
                        actions.append((rng.randrange(1, interval), observer, "logged"))
                    elif roll < 0.75:
                        actions.append((rng.randrange(1, interval), observer, "skipped"))
                for offset, observer, status in sorted(actions):
                    subject = prompt.subject_id or rng.choice(config.roster.ids)
                    obs = Observation(
                        observer_id=observer,
                        subject_id=subject,
                        prompt_index=prompt.prompt_index,
                        logged_at=prompt.due_at + offset,
                        selections=random_selections(rng, config) if status == "logged" else {},
                        status=ObservationStatus(status),
                    )
                    state = apply_observation(state, obs)
                    append(EntryKind.OBSERVATION_LOGGED, obs.logged_at,
                           _obs_payload(obs))
                    responded.add(observer)
                if (
                    config.scheduling_mode.value != "free_select"
                    and config.observer_ids
                    and set(config.observer_ids) <= responded
                ):
                    sched = scheduler.resolve_prompt(
                        sched, prompt.prompt_index, scheduler.PromptOutcome.LOGGED)
            else:
                append(EntryKind.PROMPT_EXPIRED, prompt.deadline,
                       scheduler.prompt_to_json(prompt))
                if prompt.subject_id is not None:
                    for observer in config.observer_ids:
                        if observer in responded:
                            continue
                        missed = Observation(
                            observer_id=observer,
                            subject_id=prompt.subject_id,
                            prompt_index=prompt.prompt_index,
                            logged_at=prompt.deadline,
                            selections={},
                            status=ObservationStatus.MISSED,
                        )
                        state = apply_observation(state, missed)
                        append(EntryKind.OBSERVATION_LOGGED, missed.logged_at,
                               _obs_payload(missed))
                responded = set()
    if end:
        append(EntryKind.SESSION_ENDED, T0 + (n_prompts + 1) * interval)
    return entries


def _obs_payload(obs: Observation):
    from dlot.core import observation_to_json

    return observation_to_json(obs)

from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, strategies as st

from dlot.core import (
    ConfigError,
    Observation,
    ObservationError,
    ObservationStatus,
    Phase,
    Selection,
    SessionPhaseError,
    apply_observation,
    config_to_json,
    end_session,
    format_ts,
    new_session,
    observation_from_json,
    observation_to_json,
    parse_ts,
    record_prompt_opened,
    start_session,
    validate_config,
)

from conftest import AFFECT_LABELS, config_doc, make_config


# ---------------------------------------------------------------------------
# timestamps

def test_format_ts_millisecond_z() -> None:
    assert format_ts(0) == "1970-01-01T00:00:00.000Z"
    assert format_ts(1_760_000_000_123) == "2025-10-09T08:53:20.123Z"


def test_parse_ts_accepts_z_and_offset() -> None:
    assert parse_ts("1970-01-01T00:00:00.000Z") == 0
    assert parse_ts("1970-01-01T01:00:00.000+01:00") == 0


def test_parse_ts_rejects_naive_and_garbage() -> None:
    with pytest.raises(ValueError):
        parse_ts("2026-01-01T00:00:00.000")
    with pytest.raises(ValueError):
        parse_ts("not a time")
    with pytest.raises(ValueError):
        parse_ts(12345)  # type: ignore[arg-type]


@given(st.integers(min_value=0, max_value=4_102_444_800_000))
def test_ts_round_trip(ms: int) -> None:
    assert parse_ts(format_ts(ms)) == ms


# ---------------------------------------------------------------------------
# config validation

def test_study_scale_config_is_valid() -> None:
    # 30 subjects, one 5-state affect group, 5 s interval, rotating prompts.
    config = validate_config(config_doc(
        n_subjects=30, interval_ms=5000, observers=("r1", "r2", "r3")))
    assert len(config.roster) == 30
    assert config.timer.interval_ms == 5000
    assert config.scheme.groups[0].labels == tuple(AFFECT_LABELS)


def test_duplicate_label_is_rejected() -> None:
    doc = config_doc(groups=[
        {"name": "task", "labels": ["on-task", "on-task"], "selection": "single"}])
    with pytest.raises(ConfigError) as err:
        validate_config(doc)
    assert any("duplicate label" in v.message for v in err.value.violations)


def test_empty_roster_is_rejected() -> None:
    doc = config_doc()
    doc["roster"]["subjects"] = []
    with pytest.raises(ConfigError) as err:
        validate_config(doc)
    assert any("at least one subject" in v.message for v in err.value.violations)


def test_all_violations_are_collected_with_paths() -> None:
    doc = config_doc()
    doc["roster"]["subjects"] = []
    doc["timer"]["interval_ms"] = 100
    doc["scheme"]["groups"][0]["labels"] = ["x", "x"]
    doc["observer_ids"] = ["r1", "r1"]
    with pytest.raises(ConfigError) as err:
        validate_config(doc)
    paths = {v.path for v in err.value.violations}
    assert "roster.subjects" in paths
    assert "timer.interval_ms" in paths
    assert "scheme.groups[0].labels[1]" in paths
    assert "observer_ids[1]" in paths


@pytest.mark.parametrize("interval,ok", [(499, False), (500, True), (0, False), (-5, False)])
def test_interval_floor(interval: int, ok: bool) -> None:
    doc = config_doc(interval_ms=interval)
    if ok:
        assert validate_config(doc).timer.interval_ms == interval
    else:
        with pytest.raises(ConfigError):
            validate_config(doc)


def test_timer_defaults_to_ten_seconds() -> None:
    doc = config_doc()
    del doc["timer"]
    assert validate_config(doc).timer.interval_ms == 10_000


def test_label_with_joiner_is_rejected() -> None:
    doc = config_doc(groups=[
        {"name": "g", "labels": ["a;b"], "selection": "single"}])
    with pytest.raises(ConfigError) as err:
        validate_config(doc)
    assert any("';'" in v.message for v in err.value.violations)


def test_single_subject_mode_requires_one_subject() -> None:
    with pytest.raises(ConfigError) as err:
        validate_config(config_doc(mode="single_subject", n_subjects=2))
    assert any(v.path == "scheduling_mode" for v in err.value.violations)
    assert validate_config(config_doc(mode="single_subject", n_subjects=1))


def test_duplicate_group_names_and_subject_ids() -> None:
    doc = config_doc(groups=[
        {"name": "g", "labels": ["a"], "selection": "single"},
        {"name": "g", "labels": ["b"], "selection": "multiple"},
    ])
    doc["roster"]["subjects"].append({"id": "s01"})
    with pytest.raises(ConfigError) as err:
        validate_config(doc)
    messages = [v.message for v in err.value.violations]
    assert any("duplicate group name" in m for m in messages)
    assert any("duplicate subject id" in m for m in messages)


def test_unknown_fields_and_bad_mode() -> None:
    doc = config_doc()
    doc["surprise"] = 1
    doc["scheduling_mode"] = "sometimes"
    with pytest.raises(ConfigError) as err:
        validate_config(doc)
    paths = {v.path for v in err.value.violations}
    assert "surprise" in paths
    assert "scheduling_mode" in paths


def test_session_id_charset() -> None:
    for bad in ("", "a/b", "../x", ".hidden", "a" * 200):
        doc = config_doc()
        doc["session_id"] = bad
        with pytest.raises(ConfigError):
            validate_config(doc)


def test_selection_defaults_to_single() -> None:
    doc = config_doc(groups=[{"name": "g", "labels": ["a", "b"]}])
    config = validate_config(doc)
    assert config.scheme.groups[0].selection is Selection.SINGLE


def test_display_name_defaults_to_id() -> None:
    doc = config_doc()
    doc["roster"]["subjects"] = [{"id": "solo"}]
    doc["scheduling_mode"] = "round_robin"
    config = validate_config(doc)
    assert config.roster.subjects[0].display_name == "solo"


def test_config_json_round_trip() -> None:
    config = make_config(n_subjects=4, observers=("a", "b", "c"))
    assert validate_config(config_to_json(config)) == config


def test_created_at_required_and_parsed() -> None:
    doc = config_doc()
    del doc["created_at"]
    with pytest.raises(ConfigError) as err:
        validate_config(doc)
    assert any(v.path == "created_at" for v in err.value.violations)


def test_non_object_config() -> None:
    with pytest.raises(ConfigError):
        validate_config([1, 2, 3])


# ---------------------------------------------------------------------------
# session state machine

def obs(config, observer="r1", subject="s01", index=0, at=1_000,
        selections=None, status=ObservationStatus.LOGGED) -> Observation:
    if selections is None and status is ObservationStatus.LOGGED:
        selections = {"affect": frozenset(["engaged"])}
    return Observation(
        observer_id=observer, subject_id=subject, prompt_index=index,
        logged_at=at, selections=selections or {}, status=status)


def test_start_produces_running_empty_state(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    assert state.phase is Phase.RUNNING
    assert state.observations == ()
    assert state.prompts_issued == 0


def test_double_start_rejected(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    with pytest.raises(SessionPhaseError, match="already running"):
        start_session(state, 2_000)


def test_start_after_end_rejected(affect_config) -> None:
    state = end_session(start_session(new_session(affect_config), 1_000), 2_000)
    with pytest.raises(SessionPhaseError, match="session ended"):
        start_session(state, 3_000)


def test_end_requires_running(affect_config) -> None:
    with pytest.raises(SessionPhaseError, match="not started"):
        end_session(new_session(affect_config), 1_000)


def test_config_is_immutable(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    with pytest.raises(dataclasses.FrozenInstanceError):
        state.config.title = "changed"  # type: ignore[misc]
    with pytest.raises(dataclasses.FrozenInstanceError):
        state.phase = Phase.ENDED  # type: ignore[misc]
    assert state.config == affect_config


def test_logged_observation_accepted(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    state = apply_observation(state, obs(affect_config))
    assert len(state.observations) == 1
    assert state.observations[0].selections == {"affect": frozenset(["engaged"])}


def test_two_labels_on_single_group_rejected(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    with pytest.raises(ObservationError, match="exactly one label"):
        apply_observation(state, obs(
            affect_config, selections={"affect": frozenset(["engaged", "boredom"])}))


def test_zero_labels_on_single_group_rejected(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    with pytest.raises(ObservationError, match="exactly one label"):
        apply_observation(state, obs(affect_config, selections={}))


def test_missed_observation_recorded(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    state = apply_observation(
        state, obs(affect_config, selections={}, status=ObservationStatus.MISSED))
    assert state.observations[0].status is ObservationStatus.MISSED


def test_missed_with_selections_rejected(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    with pytest.raises(ObservationError, match="no selections"):
        apply_observation(state, obs(
            affect_config, selections={"affect": frozenset(["engaged"])},
            status=ObservationStatus.SKIPPED))


def test_unknown_subject_observer_group_label(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    with pytest.raises(ObservationError, match="unknown subject"):
        apply_observation(state, obs(affect_config, subject="ghost"))
    with pytest.raises(ObservationError, match="unknown observer"):
        apply_observation(state, obs(affect_config, observer="ghost"))
    with pytest.raises(ObservationError, match="unknown group"):
        apply_observation(state, obs(
            affect_config,
            selections={"affect": frozenset(["engaged"]), "nope": frozenset(["x"])}))
    with pytest.raises(ObservationError, match="not in group"):
        apply_observation(state, obs(
            affect_config, selections={"affect": frozenset(["excited"])}))


def test_multiple_selection_group_may_be_empty() -> None:
    config = make_config(groups=[
        {"name": "affect", "labels": list(AFFECT_LABELS), "selection": "single"},
        {"name": "context", "labels": ["alone", "peer"], "selection": "multiple"},
    ])
    state = start_session(new_session(config), 1_000)
    state = apply_observation(state, obs(config))
    state = apply_observation(state, obs(
        config, observer="r2",
        selections={"affect": frozenset(["neutral"]), "context": frozenset(["alone", "peer"])}))
    assert len(state.observations) == 2


def test_rejected_observation_leaves_state_unchanged(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    before = state
    with pytest.raises(ObservationError):
        apply_observation(state, obs(affect_config, subject="ghost"))
    assert state == before


def test_observation_requires_running_phase(affect_config) -> None:
    created = new_session(affect_config)
    with pytest.raises(SessionPhaseError):
        apply_observation(created, obs(affect_config))
    ended = end_session(start_session(created, 1_000), 2_000)
    with pytest.raises(SessionPhaseError):
        apply_observation(ended, obs(affect_config))


def test_negative_prompt_index_rejected(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    with pytest.raises(ObservationError, match="non-negative"):
        apply_observation(state, obs(affect_config, index=-1))


def test_reducer_is_pure(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    first = apply_observation(state, obs(affect_config))
    second = apply_observation(state, obs(affect_config))
    assert first == second
    assert state.observations == ()


def test_order_preserved(affect_config) -> None:
    state = start_session(new_session(affect_config), 1_000)
    for i, subject in enumerate(("s03", "s01", "s02")):
        state = apply_observation(state, obs(affect_config, subject=subject, index=i))
    assert [o.subject_id for o in state.observations] == ["s03", "s01", "s02"]


def test_every_stored_observation_satisfies_invariants(affect_config) -> None:
    # conformance closure: re-applying each stored observation must succeed
    state = start_session(new_session(affect_config), 1_000)
    for i in range(5):
        state = apply_observation(state, obs(affect_config, index=i, at=1_000 + i))
    fresh = start_session(new_session(affect_config), 1_000)
    for stored in state.observations:
        apply_observation(fresh, stored)


def test_empty_selection_sets_are_normalized_away() -> None:
    observation = Observation(
        observer_id="r1", subject_id="s01", prompt_index=0, logged_at=0,
        selections={"affect": frozenset(), "context": frozenset(["alone"])})
    assert "affect" not in observation.selections
    assert observation.selections == {"context": frozenset(["alone"])}


def test_observation_json_round_trip(affect_config) -> None:
    original = obs(affect_config, at=123_456)
    assert observation_from_json(observation_to_json(original)) == original
    missed = obs(affect_config, selections={}, status=ObservationStatus.MISSED)
    assert observation_from_json(observation_to_json(missed)) == missed


def test_prompt_counter_requires_running(affect_config) -> None:
    with pytest.raises(SessionPhaseError):
        record_prompt_opened(new_session(affect_config))
    state = start_session(new_session(affect_config), 1_000)
    assert record_prompt_opened(state).prompts_issued == 1

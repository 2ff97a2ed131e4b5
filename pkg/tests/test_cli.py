from __future__ import annotations

import json
import random

import pytest

from dlot.cli import main
from dlot.core import validate_config
from dlot.export import export_csv, export_xlsx
from dlot.journal import encode_journal, replay

from conftest import config_doc, make_config, random_config, simulate_entries


def write_journal(tmp_path, name, entries):
    path = tmp_path / f"{name}.dlotj"
    path.write_bytes(encode_journal(entries))
    return path


@pytest.fixture
def session_journal(tmp_path):
    rng = random.Random(17)
    config = random_config(rng, session_id="clitest")
    entries = simulate_entries(rng, config, n_prompts=4)
    return write_journal(tmp_path, "clitest", entries), entries


# ---------------------------------------------------------------------------
# validate / init

def test_validate_ok(tmp_path, capsys) -> None:
    path = tmp_path / "good.json"
    path.write_text(json.dumps(config_doc()))
    assert main(["validate", str(path)]) == 0
    assert "ok:" in capsys.readouterr().err


def test_validate_prints_every_violation(tmp_path, capsys) -> None:
    doc = config_doc()
    doc["scheme"]["groups"][0]["labels"] = ["on-task", "on-task"]
    doc["roster"]["subjects"] = []
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert main(["validate", str(path)]) == 1
    err = capsys.readouterr().err
    assert "duplicate label" in err
    assert "at least one subject" in err


def test_validate_unreadable_file(tmp_path, capsys) -> None:
    assert main(["validate", str(tmp_path / "missing.json")]) == 1


def test_init_emits_validatable_config(tmp_path, capsys) -> None:
    out = tmp_path / "seed.json"
    assert main(["init", "-o", str(out)]) == 0
    validate_config(json.loads(out.read_text()))
    assert "config fields" in capsys.readouterr().err


def test_init_to_stdout(capsys) -> None:
    assert main(["init"]) == 0
    captured = capsys.readouterr()
    validate_config(json.loads(captured.out))


# ---------------------------------------------------------------------------
# verify / replay / export

def test_verify_clean_journal(session_journal, capsys) -> None:
    path, entries = session_journal
    assert main(["verify", str(path)]) == 0
    err = capsys.readouterr().err
    assert f"entries_read = {len(entries)}" in err
    assert "truncated_tail = false" in err


def test_verify_corrupt_journal_exits_one(session_journal, capsys) -> None:
    path, _ = session_journal
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x01
    path.write_bytes(bytes(data))
    assert main(["verify", str(path)]) == 1
    assert "first_bad_line" in capsys.readouterr().err


def test_replay_summarizes_state(session_journal, capsys) -> None:
    path, entries = session_journal
    assert main(["replay", str(path)]) == 0
    err = capsys.readouterr().err
    assert "session = clitest" in err
    assert "phase = ended" in err


def test_export_csv_matches_module_composition(session_journal, tmp_path, capsys) -> None:
    path, entries = session_journal
    out = tmp_path / "out.csv"
    assert main(["export", str(path), "--format", "csv", "-o", str(out)]) == 0
    state, _ = replay(path.read_bytes())
    assert out.read_bytes() == export_csv(state)


def test_export_xlsx_matches_module_composition(session_journal, tmp_path) -> None:
    path, _ = session_journal
    out = tmp_path / "out.xlsx"
    assert main(["export", str(path), "--format", "xlsx", "-o", str(out)]) == 0
    state, _ = replay(path.read_bytes())
    assert out.read_bytes() == export_xlsx(state)


def test_export_csv_to_stdout(session_journal, capsysbinary) -> None:
    path, _ = session_journal
    assert main(["export", str(path)]) == 0
    state, _ = replay(path.read_bytes())
    assert capsysbinary.readouterr().out == export_csv(state)


def test_export_corrupt_journal_is_domain_error(session_journal, capsys) -> None:
    path, _ = session_journal
    data = bytearray(path.read_bytes())
    data[10] ^= 0x01
    path.write_bytes(bytes(data))
    assert main(["export", str(path)]) == 1
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# merge

def test_merge_writes_valid_journal(tmp_path, capsys) -> None:
    rng = random.Random(23)
    config = random_config(rng, session_id="mergecli")
    entries = simulate_entries(rng, config, n_prompts=3)
    path_a = write_journal(tmp_path, "a", entries)
    path_b = write_journal(tmp_path, "b", entries)
    out = tmp_path / "merged.dlotj"
    assert main(["merge", str(path_a), str(path_b), "-o", str(out)]) == 0
    err = capsys.readouterr().err
    assert "conflicts = 0" in err
    state, _ = replay(out.read_bytes())
    assert state is not None


def test_merge_conflict_exits_one(tmp_path, capsys) -> None:
    doc = config_doc(session_id="conf", observers=("a",))
    config = validate_config(doc)
    from dlot.journal import EntryKind, config_snapshot_entry, make_entry
    from dlot.core import config_to_json, format_ts
    from conftest import T0

    def journal_with_label(label):
        return [
            config_snapshot_entry(0, T0, config_to_json(config)),
            make_entry(1, EntryKind.SESSION_STARTED, T0),
            make_entry(2, EntryKind.OBSERVATION_LOGGED, T0 + 10, {
                "observer_id": "a", "subject_id": "s01", "prompt_index": 0,
                "logged_at": format_ts(T0 + 10), "status": "logged",
                "selections": {"affect": [label]},
            }),
        ]

    path_a = write_journal(tmp_path, "a", journal_with_label("engaged"))
    path_b = write_journal(tmp_path, "b", journal_with_label("boredom"))
    out = tmp_path / "merged.dlotj"
    assert main(["merge", str(path_a), str(path_b), "-o", str(out)]) == 1
    err = capsys.readouterr().err
    assert "conflicts = 1" in err
    assert "observer=a" in err


# ---------------------------------------------------------------------------
# irr / sus

@pytest.fixture
def irr_csv(tmp_path):
    # the 4-item two-rater fixture with kappa 0.5
    config = make_config(observers=("r1", "r2"))
    header = "session_id,subject_id,subject_name,observer_id,prompt_index,timestamp,status,affect"
    labels = {
        ("r1", 0): "engaged", ("r1", 1): "engaged",
        ("r1", 2): "boredom", ("r1", 3): "boredom",
        ("r2", 0): "engaged", ("r2", 1): "boredom",
        ("r2", 2): "boredom", ("r2", 3): "boredom",
    }
    lines = [header]
    for (rater, idx), label in sorted(labels.items()):
        lines.append(
            f"study,s01,Subject 1,{rater},{idx},1970-01-01T00:00:0{idx}.000Z,logged,{label}")
    path = tmp_path / "export.csv"
    path.write_text("\r\n".join(lines) + "\r\n")
    return path


def test_irr_cohen_prints_half(irr_csv, capsys) -> None:
    assert main(["irr", str(irr_csv), "--group", "affect",
                 "--raters", "r1,r2", "--method", "cohen"]) == 0
    out = capsys.readouterr().out
    assert "kappa = 0.5" in out
    assert "n_items = 4" in out
    assert "observed_agreement = 0.75" in out


def test_irr_percent_and_fleiss(irr_csv, capsys) -> None:
    assert main(["irr", str(irr_csv), "--group", "affect", "--method", "percent"]) == 0
    assert "percent_agreement = 0.75" in capsys.readouterr().out
    assert main(["irr", str(irr_csv), "--group", "affect", "--method", "fleiss"]) == 0
    assert "kappa = " in capsys.readouterr().out


def test_irr_unknown_group_and_multiselect(irr_csv, tmp_path, capsys) -> None:
    assert main(["irr", str(irr_csv), "--group", "nope"]) == 1
    multi = tmp_path / "multi.csv"
    multi.write_text(
        "session_id,subject_id,subject_name,observer_id,prompt_index,timestamp,status,ctx\r\n"
        "s,a,A,r1,0,1970-01-01T00:00:00.000Z,logged,x;y\r\n"
        "s,a,A,r2,0,1970-01-01T00:00:00.000Z,logged,x\r\n")
    assert main(["irr", str(multi), "--group", "ctx"]) == 1
    assert "multiple-selection" in capsys.readouterr().err


def test_irr_undefined_kappa_is_domain_error(tmp_path, capsys) -> None:
    path = tmp_path / "degenerate.csv"
    path.write_text(
        "session_id,subject_id,subject_name,observer_id,prompt_index,timestamp,status,affect\r\n"
        "s,a,A,r1,0,1970-01-01T00:00:00.000Z,logged,engaged\r\n"
        "s,a,A,r2,0,1970-01-01T00:00:00.000Z,logged,engaged\r\n")
    assert main(["irr", str(path), "--group", "affect"]) == 1
    assert "undefined" in capsys.readouterr().err


def test_sus_scores_and_mean(tmp_path, capsys) -> None:
    path = tmp_path / "sus.csv"
    path.write_text(
        "q1,q2,q3,q4,q5,q6,q7,q8,q9,q10\n"
        "5,1,5,1,5,1,5,1,5,1\n"
        "3,3,3,3,3,3,3,3,3,3\n"
        "4,2,4,2,4,2,4,2,4,2\n")
    assert main(["sus", str(path)]) == 0
    out = capsys.readouterr().out
    assert "n = 3" in out
    assert "scores = 100.0, 50.0, 75.0" in out
    assert "mean = 75.0" in out


def test_sus_bad_rows_are_domain_errors(tmp_path, capsys) -> None:
    path = tmp_path / "bad.csv"
    path.write_text("5,1,5,1,5\n")
    assert main(["sus", str(path)]) == 1
    path.write_text("5,1,5,1,5,1,5,1,5,9\n")
    assert main(["sus", str(path)]) == 1


# ---------------------------------------------------------------------------
# usage errors

def test_unknown_subcommand_is_usage_error() -> None:
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_missing_required_flag_is_usage_error(irr_csv) -> None:
    with pytest.raises(SystemExit) as err:
        main(["irr", str(irr_csv)])
    assert err.value.code == 2


def test_bad_flag_value_is_usage_error(session_journal) -> None:
    path, _ = session_journal
    with pytest.raises(SystemExit) as err:
        main(["export", str(path), "--format", "pdf"])
    assert err.value.code == 2

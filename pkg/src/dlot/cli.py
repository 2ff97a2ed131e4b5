"""Command-line driver: every subcommand is a thin composition of module
operations, so its outputs are byte-identical to calling those operations
directly.

Exit codes: 0 success, 1 domain error (validation failure, corruption,
merge conflict), 2 usage error. Diagnostics go to stderr; data to stdout
or the file named by ``-o``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from dlot import analytics, export, merge, journal
from dlot.core import ConfigError, DlotError, validate_config

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

_EXAMPLE_CONFIG = {
    "session_id": "class-a-2026-02-14",
    "title": "Morning class observation",
    "scheme": {
        "groups": [
            {
                "name": "affect",
                "labels": ["engaged", "boredom", "confusion", "frustration", "neutral"],
                "selection": "single",
            },
            {
                "name": "context",
                "labels": ["alone", "with-peer", "with-teacher"],
                "selection": "multiple",
            },
        ]
    },
    "roster": {
        "subjects": [
            {"id": "s01", "display_name": "Student 01"},
            {"id": "s02", "display_name": "Student 02"},
        ]
    },
    "timer": {"interval_ms": 10000},
    "scheduling_mode": "round_robin",
    "observer_ids": ["observer-1", "observer-2"],
    "created_at": "2026-02-14T08:00:00.000Z",
}

_EXAMPLE_NOTES = """\
config fields:
  session_id       unique id; also names the journal file <session_id>.dlotj
  title            free-text study title
  scheme.groups    label groups; selection 'single' renders as radio buttons
                   (exactly one label per logged observation), 'multiple' as a
                   checklist (zero or more); labels may not contain ';'
  roster.subjects  ordered subjects; round_robin rotates prompts in this order
  timer.interval_ms  prompt interval in ms (default 10000, minimum 500)
  scheduling_mode  single_subject | round_robin | free_select
  observer_ids     observers allowed to join and submit
  created_at       ISO 8601 UTC timestamp
"""


def _write_output(data: bytes, output: str | None) -> None:
    if output and output != "-":
        Path(output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()


def _print_report(report: journal.ReplayReport) -> None:
    print(f"entries_read = {report.entries_read}", file=sys.stderr)
    print(f"truncated_tail = {str(report.truncated_tail).lower()}", file=sys.stderr)
    if report.first_bad_line is not None:
        print(f"first_bad_line = {report.first_bad_line} ({report.first_bad_reason})",
              file=sys.stderr)


def cmd_init(args: argparse.Namespace) -> int:
    body = json.dumps(_EXAMPLE_CONFIG, indent=2) + "\n"
    _write_output(body.encode("utf-8"), args.output)
    print(_EXAMPLE_NOTES, file=sys.stderr, end="")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        doc = json.loads(Path(args.config).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    try:
        config = validate_config(doc)
    except ConfigError as exc:
        for violation in exc.violations:
            print(str(violation), file=sys.stderr)
        return EXIT_DOMAIN
    print(f"ok: session {config.session_id!r} "
          f"({len(config.roster)} subjects, {len(config.scheme.groups)} groups, "
          f"{config.timer.interval_ms} ms interval)", file=sys.stderr)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from dlot import service

    addr = args.addr or os.environ.get("DLOT_ADDR") or service.DEFAULT_ADDR
    service.run(addr, journal_dir=args.journal_dir, assets_dir=args.assets)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        data = Path(args.journal).read_bytes()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    report = journal.verify(data)
    _print_report(report)
    return EXIT_DOMAIN if report.first_bad_line is not None else EXIT_OK


def _replay_state(path: str):
    state, report = journal.replay_path(path)
    if state is None:
        raise DlotError(f"{path}: journal has no config snapshot")
    return state, report


def cmd_replay(args: argparse.Namespace) -> int:
    state, report = _replay_state(args.journal)
    _print_report(report)
    by_status: dict[str, int] = {}
    for obs in state.observations:
        by_status[obs.status.value] = by_status.get(obs.status.value, 0) + 1
    print(f"session = {state.config.session_id}", file=sys.stderr)
    print(f"phase = {state.phase.value}", file=sys.stderr)
    print(f"prompts_issued = {state.prompts_issued}", file=sys.stderr)
    print(f"observations = {len(state.observations)} "
          f"({', '.join(f'{k}={v}' for k, v in sorted(by_status.items())) or 'none'})",
          file=sys.stderr)
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    state, _report = _replay_state(args.journal)
    if args.format == "csv":
        data = export.export_csv(state)
    else:
        data = export.export_xlsx(state)
    _write_output(data, args.output)
    return EXIT_OK


def cmd_merge(args: argparse.Namespace) -> int:
    entries, report = merge.merge_journals(args.journals)
    _write_output(journal.encode_journal(entries), args.output)
    print(f"sources = {len(report.sources)}", file=sys.stderr)
    print(f"rows_merged = {report.rows_merged}", file=sys.stderr)
    print(f"conflicts = {len(report.conflicts)}", file=sys.stderr)
    for conflict in report.conflicts:
        observer, prompt, subject = conflict.key
        print(f"conflict: observer={observer} prompt={prompt} subject={subject} "
              f"sources={conflict.sources[0]} vs {conflict.sources[1]}", file=sys.stderr)
    return EXIT_DOMAIN if report.conflicts else EXIT_OK


def _read_export_csv(path: str) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DlotError(f"{path}: empty CSV") from None
        rows = []
        for record in reader:
            if len(record) != len(header):
                raise DlotError(f"{path}: ragged CSV row {reader.line_num}")
            rows.append(dict(zip(header, record)))
    return header, rows


def cmd_irr(args: argparse.Namespace) -> int:
    header, rows = _read_export_csv(args.csv)
    for column in ("observer_id", "prompt_index", "subject_id", "status"):
        if column not in header:
            raise DlotError(f"{args.csv}: missing column {column!r}")
    if args.group not in header:
        raise DlotError(f"{args.csv}: no group column {args.group!r}")
    if args.group in export.BASE_HEADER:
        raise DlotError(f"{args.group!r} is not a label group column")

    records: list[tuple[analytics.ItemId, str, str | None]] = []
    for row in rows:
        cell = row[args.group]
        if ";" in cell:
            raise DlotError(
                f"group {args.group!r} appears to be multiple-selection; "
                "agreement statistics need a single-selection group")
        label = cell if (row["status"] == "logged" and cell) else None
        try:
            item = (int(row["prompt_index"]), row["subject_id"])
        except ValueError:
            raise DlotError(f"bad prompt_index {row['prompt_index']!r}") from None
        records.append((item, row["observer_id"], label))

    raters = args.raters.split(",") if args.raters else None
    table = analytics.build_table(records, raters)
    if args.method == "percent":
        result = analytics.percent_agreement(table)
    elif args.method == "cohen":
        result = analytics.cohen_kappa(table)
    else:
        result = analytics.fleiss_kappa(table)

    print(f"method = {result.statistic.value}")
    print(f"raters = {','.join(table.raters)}")
    print(f"n_items = {result.n_items}")
    print(f"dropped_items = {len(table.dropped_items)}")
    print(f"observed_agreement = {result.observed_agreement}")
    print(f"chance_agreement = {result.chance_agreement}")
    if result.statistic is analytics.Statistic.PERCENT:
        print(f"percent_agreement = {result.value}")
    else:
        print(f"kappa = {result.value}")
    return EXIT_OK


def cmd_sus(args: argparse.Namespace) -> int:
    responses: list[list[int]] = []
    with open(args.csv, "r", encoding="utf-8", newline="") as handle:
        for line_no, record in enumerate(csv.reader(handle), start=1):
            if not record or (line_no == 1 and not record[0].strip().lstrip("-").isdigit()):
                continue  # blank line or header row
            if len(record) != 10:
                raise DlotError(f"line {line_no}: expected 10 answers, got {len(record)}")
            try:
                answers = [int(cell) for cell in record]
            except ValueError:
                raise DlotError(f"line {line_no}: answers must be integers") from None
            try:
                analytics.sus_score(answers)
            except DlotError as exc:
                raise DlotError(f"line {line_no}: {exc}") from None
            responses.append(answers)
    if not responses:
        raise DlotError(f"{args.csv}: no responses")
    scores = [analytics.sus_score(r) for r in responses]
    print(f"n = {len(scores)}")
    print(f"scores = {', '.join(str(s) for s in scores)}")
    print(f"mean = {analytics.sus_mean(responses)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlot",
        description="Interval-prompted observation logging toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="emit an example session config")
    p.add_argument("-o", "--output", help="output file (default stdout)")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("validate", help="validate a session config document")
    p.add_argument("config", help="path to a JSON config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("serve", help="run the session server")
    p.add_argument("--addr", help="host:port (or DLOT_ADDR env)")
    p.add_argument("--journal-dir", default="journals", help="journal directory")
    p.add_argument("--assets", help="observer UI asset directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("verify", help="check a journal without building state")
    p.add_argument("journal", help="path to a .dlotj journal")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("replay", help="reconstruct session state from a journal")
    p.add_argument("journal", help="path to a .dlotj journal")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("export", help="export a journal to CSV or XLSX")
    p.add_argument("journal", help="path to a .dlotj journal")
    p.add_argument("--format", choices=("csv", "xlsx"), default="csv")
    p.add_argument("-o", "--output", help="output file (default stdout)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("merge", help="merge journals of one session")
    p.add_argument("journals", nargs="+", help="journal paths")
    p.add_argument("-o", "--output", help="merged journal output (default stdout)")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("irr", help="inter-rater agreement from a CSV export")
    p.add_argument("csv", help="CSV export path")
    p.add_argument("--group", required=True, help="label group column")
    p.add_argument("--raters", help="comma-separated observer ids (default: all)")
    p.add_argument("--method", choices=("percent", "cohen", "fleiss"), default="cohen")
    p.set_defaults(func=cmd_irr)

    p = sub.add_parser("sus", help="score usability responses (10 answers per row)")
    p.add_argument("csv", help="CSV of Likert answers, one respondent per row")
    p.set_defaults(func=cmd_sus)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())

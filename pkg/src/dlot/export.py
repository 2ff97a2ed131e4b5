"""Tabular exports: RFC 4180 CSV and a minimal single-sheet XLSX workbook.

Both formats render the same cell matrix, with the subject as primary key
and rows time-ordered within each subject. The XLSX archive is fully
deterministic: stored (uncompressed) entries in a fixed order with a
constant timestamp, all strings inline.
"""

from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass
from html import escape as _xml_escape
from typing import Sequence

from dlot.core import (
    MULTI_LABEL_JOINER,
    CategoryGroup,
    LabelScheme,
    Observation,
    Selection,
    SessionState,
    format_ts,
)

BASE_HEADER = (
    "session_id", "subject_id", "subject_name", "observer_id",
    "prompt_index", "timestamp", "status",
)
SHEET_NAME = "observations"

# Fixed ZIP member timestamp so identical input yields identical bytes.
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class ExportRow:
    session_id: str
    subject_id: str
    subject_name: str
    observer_id: str
    prompt_index: int
    timestamp: str  # ISO 8601 UTC, millisecond precision, Z suffix
    status: str
    group_cells: tuple[str, ...]

    def cells(self) -> tuple[str, ...]:
        return (
            self.session_id, self.subject_id, self.subject_name,
            self.observer_id, str(self.prompt_index), self.timestamp,
            self.status, *self.group_cells,
        )


def header_for(scheme: LabelScheme) -> tuple[str, ...]:
    return BASE_HEADER + scheme.group_names


def _group_cell(group: CategoryGroup, obs: Observation) -> str:
    chosen = obs.selections.get(group.name, frozenset())
    if group.selection is Selection.SINGLE:
        return next(iter(chosen)) if chosen else ""
    return MULTI_LABEL_JOINER.join(l for l in group.labels if l in chosen)


def to_rows(state: SessionState) -> list[ExportRow]:
    """Rows sorted by (subject position in roster, timestamp, observer_id)."""
    config = state.config
    roster = config.roster
    keyed: list[tuple[tuple[int, int, str], ExportRow]] = []
    for obs in state.observations:
        row = ExportRow(
            session_id=config.session_id,
            subject_id=obs.subject_id,
            subject_name=roster.subject(obs.subject_id).display_name,
            observer_id=obs.observer_id,
            prompt_index=obs.prompt_index,
            timestamp=format_ts(obs.logged_at),
            status=obs.status.value,
            group_cells=tuple(_group_cell(g, obs) for g in config.scheme.groups),
        )
        keyed.append(((roster.index_of(obs.subject_id), obs.logged_at, obs.observer_id), row))
    keyed.sort(key=lambda pair: pair[0])
    return [row for _, row in keyed]


def matrix_for(rows: Sequence[ExportRow], scheme: LabelScheme) -> list[list[str]]:
    """Header plus stringized data rows; the shared CSV/XLSX cell matrix."""
    return [list(header_for(scheme))] + [list(row.cells()) for row in rows]


# ---------------------------------------------------------------------------
# CSV (RFC 4180)

def _csv_field(value: str) -> str:
    if any(ch in value for ch in (",", '"', "\r", "\n")):
        return '"' + value.replace('"', '""') + '"'
    return value


def write_csv(rows: Sequence[ExportRow], scheme: LabelScheme) -> bytes:
    """RFC 4180 bytes: header first, CRLF endings, UTF-8 without BOM."""
    lines = [",".join(_csv_field(cell) for cell in record)
             for record in matrix_for(rows, scheme)]
    return ("\r\n".join(lines) + "\r\n").encode("utf-8")


# ---------------------------------------------------------------------------
# XLSX

_CONTENT_TYPES = (
    '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>'
    '<Types xmlns="http://schemas.openxmlformats.org/package/2006/content-types">'
    '<Default Extension="rels" ContentType="application/vnd.openxmlformats-package.relationships+xml"/>'
    '<Default Extension="xml" ContentType="application/xml"/>'
    '<Override PartName="/xl/workbook.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet.main+xml"/>'
    '<Override PartName="/xl/worksheets/sheet1.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.worksheet+xml"/>'
    "</Types>"
)

_ROOT_RELS = (
    '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>'
    '<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">'
    '<Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument" Target="xl/workbook.xml"/>'
    "</Relationships>"
)

_WORKBOOK = (
    '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>'
    '<workbook xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main" '
    'xmlns:r="http://schemas.openxmlformats.org/officeDocument/2006/relationships">'
    f'<sheets><sheet name="{SHEET_NAME}" sheetId="1" r:id="rId1"/></sheets>'
    "</workbook>"
)

_WORKBOOK_RELS = (
    '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>'
    '<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">'
    '<Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/worksheet" Target="worksheets/sheet1.xml"/>'
    "</Relationships>"
)


def _column_ref(index: int) -> str:
    """0-based column index to spreadsheet letters (0 -> A, 26 -> AA)."""
    n = index + 1
    ref = ""
    while n:
        n, rem = divmod(n - 1, 26)
        ref = chr(ord("A") + rem) + ref
    return ref


def _cell_xml(row_no: int, col: int, value: str) -> str:
    # CR must ride as a character reference or XML parsers normalize it away.
    text = _xml_escape(value, quote=False).replace("\r", "&#xD;")
    return (f'<c r="{_column_ref(col)}{row_no}" t="inlineStr">'
            f'<is><t xml:space="preserve">{text}</t></is></c>')


def _sheet_xml(matrix: Sequence[Sequence[str]]) -> str:
    parts = [
        '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>',
        '<worksheet xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main">',
        "<sheetData>",
    ]
    for r, record in enumerate(matrix, start=1):
        parts.append(f'<row r="{r}">')
        parts.extend(_cell_xml(r, c, cell) for c, cell in enumerate(record))
        parts.append("</row>")
    parts.append("</sheetData></worksheet>")
    return "".join(parts)


def write_xlsx(rows: Sequence[ExportRow], scheme: LabelScheme) -> bytes:
    """Minimal valid workbook: exactly five parts, one inline-string sheet."""
    members = (
        ("[Content_Types].xml", _CONTENT_TYPES),
        ("_rels/.rels", _ROOT_RELS),
        ("xl/workbook.xml", _WORKBOOK),
        ("xl/_rels/workbook.xml.rels", _WORKBOOK_RELS),
        ("xl/worksheets/sheet1.xml", _sheet_xml(matrix_for(rows, scheme))),
    )
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as archive:
        for name, text in members:
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_STORED
            info.external_attr = 0o600 << 16
            archive.writestr(info, text.encode("utf-8"))
    return buf.getvalue()


def export_csv(state: SessionState) -> bytes:
    return write_csv(to_rows(state), state.config.scheme)


def export_xlsx(state: SessionState) -> bytes:
    return write_xlsx(to_rows(state), state.config.scheme)

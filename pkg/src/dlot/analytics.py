"""Agreement statistics for observer training, and usability-scale scoring.

Kappa statistics are evaluated in exact rational arithmetic and converted
to float only at the boundary, so degenerate tables are handled crisply:
a chance-agreement of exactly 1 raises a typed "undefined" error instead
of returning 0 or NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

from dlot.core import (
    CategoryGroup,
    DlotError,
    Observation,
    ObservationStatus,
    Selection,
)

ItemId = tuple[int, str]  # (prompt_index, subject_id)


class AnalyticsError(DlotError):
    pass


class AgreementUndefinedError(AnalyticsError):
    """Chance agreement is exactly 1: kappa has no defined value."""


class Statistic(str, Enum):
    PERCENT = "percent"
    COHEN_KAPPA = "cohen_kappa"
    FLEISS_KAPPA = "fleiss_kappa"


@dataclass(frozen=True)
class RatingsTable:
    """Aligned items-by-raters categorical matrix.

    Every retained item carries a label from every rater; items dropped
    during alignment (any missed, skipped or absent rating) are listed in
    ``dropped_items``.
    """

    items: tuple[ItemId, ...]
    raters: tuple[str, ...]
    ratings: tuple[tuple[str, ...], ...]  # one row per item, one column per rater
    dropped_items: tuple[ItemId, ...] = ()

    def __post_init__(self) -> None:
        for row in self.ratings:
            if len(row) != len(self.raters):
                raise ValueError("every ratings row must have one label per rater")
        if len(self.ratings) != len(self.items):
            raise ValueError("ratings must have one row per item")

    @property
    def n_items(self) -> int:
        return len(self.items)

    def column(self, rater: str) -> tuple[str, ...]:
        i = self.raters.index(rater)
        return tuple(row[i] for row in self.ratings)


@dataclass(frozen=True)
class AgreementResult:
    statistic: Statistic
    value: float
    observed_agreement: float  # p_o, or mean per-item agreement for Fleiss
    chance_agreement: float    # p_e, or expected mean agreement for Fleiss
    n_items: int
    categories: tuple[str, ...] = ()
    confusion: tuple[tuple[int, ...], ...] | None = None  # two-rater case


def build_table(
    records: Iterable[tuple[ItemId, str, str | None]],
    raters: Sequence[str] | None = None,
) -> RatingsTable:
    """Complete-case alignment of (item, rater, label) records.

    A ``None`` label marks an explicit non-rating (missed or skipped); an
    absent (item, rater) pair drops the item the same way. When the same
    pair appears twice the last record wins.
    """
    cells: dict[ItemId, dict[str, str | None]] = {}
    seen_raters: set[str] = set()
    for item, rater, label in records:
        seen_raters.add(rater)
        cells.setdefault(item, {})[rater] = label
    rater_list = tuple(raters) if raters is not None else tuple(sorted(seen_raters))
    if len(rater_list) < 2:
        raise AnalyticsError("agreement requires at least two raters")
    if len(set(rater_list)) != len(rater_list):
        raise AnalyticsError("rater ids must be unique")

    items: list[ItemId] = []
    rows: list[tuple[str, ...]] = []
    dropped: list[ItemId] = []
    for item in sorted(cells):
        labels = [cells[item].get(r) for r in rater_list]
        if all(label is not None for label in labels):
            items.append(item)
            rows.append(tuple(labels))  # type: ignore[arg-type]
        else:
            dropped.append(item)
    return RatingsTable(items=tuple(items), raters=rater_list,
                        ratings=tuple(rows), dropped_items=tuple(dropped))


def align(
    observations: Iterable[Observation],
    group: CategoryGroup,
    raters: Sequence[str] | None = None,
) -> RatingsTable:
    """Align observations from two or more observers on one label group."""
    if group.selection is not Selection.SINGLE:
        raise AnalyticsError(
            f"group {group.name!r} is multiple-selection; agreement statistics "
            "are defined for single-selection groups only")
    records: list[tuple[ItemId, str, str | None]] = []
    for obs in observations:
        label: str | None = None
        if obs.status is ObservationStatus.LOGGED:
            chosen = obs.selections.get(group.name, frozenset())
            if len(chosen) == 1:
                label = next(iter(chosen))
        records.append(((obs.prompt_index, obs.subject_id), obs.observer_id, label))
    return build_table(records, raters)


def _require_items(table: RatingsTable) -> None:
    if table.n_items == 0:
        raise AnalyticsError("ratings table has no items")


def _pair_counts(table: RatingsTable) -> tuple[tuple[str, ...], list[list[int]]]:
    categories = tuple(sorted({label for row in table.ratings for label in row}))
    index = {c: i for i, c in enumerate(categories)}
    counts = [[0] * len(categories) for _ in categories]
    for a, b in table.ratings:
        counts[index[a]][index[b]] += 1
    return categories, counts


def percent_agreement(table: RatingsTable) -> AgreementResult:
    """Fraction of items both raters labeled identically (chance term 0)."""
    if len(table.raters) != 2:
        raise AnalyticsError("percent agreement requires exactly two raters")
    _require_items(table)
    categories, counts = _pair_counts(table)
    n = table.n_items
    p_o = Fraction(sum(counts[i][i] for i in range(len(categories))), n)
    return AgreementResult(
        statistic=Statistic.PERCENT,
        value=float(p_o),
        observed_agreement=float(p_o),
        chance_agreement=0.0,
        n_items=n,
        categories=categories,
        confusion=tuple(tuple(row) for row in counts),
    )


def cohen_kappa(table: RatingsTable) -> AgreementResult:
    """Two-rater chance-corrected agreement with product-of-marginals chance."""
    if len(table.raters) != 2:
        raise AnalyticsError("cohen_kappa requires exactly two raters")
    _require_items(table)
    categories, counts = _pair_counts(table)
    n = table.n_items
    k = len(categories)
    p_o = Fraction(sum(counts[i][i] for i in range(k)), n)
    row_marginals = [sum(counts[i][j] for j in range(k)) for i in range(k)]
    col_marginals = [sum(counts[i][j] for i in range(k)) for j in range(k)]
    p_e = sum(
        (Fraction(row_marginals[i], n) * Fraction(col_marginals[i], n)
         for i in range(k)),
        start=Fraction(0),
    )
    if p_e == 1:
        raise AgreementUndefinedError("kappa undefined: no chance variation")
    kappa = (p_o - p_e) / (1 - p_e)
    return AgreementResult(
        statistic=Statistic.COHEN_KAPPA,
        value=float(kappa),
        observed_agreement=float(p_o),
        chance_agreement=float(p_e),
        n_items=n,
        categories=categories,
        confusion=tuple(tuple(row) for row in counts),
    )


def fleiss_kappa(table: RatingsTable) -> AgreementResult:
    """Multi-rater chance-corrected agreement, fixed n raters per item."""
    n_raters = len(table.raters)
    _require_items(table)
    categories = tuple(sorted({label for row in table.ratings for label in row}))
    index = {c: i for i, c in enumerate(categories)}
    n_items = table.n_items

    per_item_agreement = Fraction(0)
    totals = [0] * len(categories)
    for row in table.ratings:
        item_counts = [0] * len(categories)
        for label in row:
            item_counts[index[label]] += 1
            totals[index[label]] += 1
        pairs = sum(c * c for c in item_counts) - n_raters
        per_item_agreement += Fraction(pairs, n_raters * (n_raters - 1))
    p_bar = per_item_agreement / n_items
    total = n_items * n_raters
    p_e_bar = sum((Fraction(t, total) ** 2 for t in totals), start=Fraction(0))
    if p_e_bar == 1:
        raise AgreementUndefinedError("kappa undefined: no chance variation")
    kappa = (p_bar - p_e_bar) / (1 - p_e_bar)
    return AgreementResult(
        statistic=Statistic.FLEISS_KAPPA,
        value=float(kappa),
        observed_agreement=float(p_bar),
        chance_agreement=float(p_e_bar),
        n_items=n_items,
        categories=categories,
    )


# ---------------------------------------------------------------------------
# System Usability Scale

def sus_score(answers: Sequence[int]) -> float:
    """Score one 10-item, 1..5 Likert response to the 0..100 scale.

    Odd items (1-indexed) contribute ``answer - 1``, even items
    ``5 - answer``; the sum is scaled by 2.5. Scores are always multiples
    of 2.5 in [0, 100].
    """
    if len(answers) != 10:
        raise AnalyticsError("a response must contain exactly 10 answers")
    total = 0
    for i, answer in enumerate(answers):
        if isinstance(answer, bool) or not isinstance(answer, int) or not 1 <= answer <= 5:
            raise AnalyticsError(f"answer {i + 1} must be an integer in 1..5")
        total += (answer - 1) if i % 2 == 0 else (5 - answer)
    return total * 2.5


def sus_mean(responses: Sequence[Sequence[int]]) -> float:
    if not responses:
        raise AnalyticsError("mean requires at least one response")
    scores = [sus_score(r) for r in responses]
    return sum(scores) / len(scores)

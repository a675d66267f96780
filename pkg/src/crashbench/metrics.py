"""Aggregation of evaluation records into benchmark metrics.

Definitions:
  * CRR: percentage of bugs whose patch eliminated the crash in every
    verification trial (per-bug attempt flags are averaged first when a bug
    has several attempts).
  * EPR: like CRR but the attempt must also be judged equivalent to the
    developer fix; only meaningful over fixed bugs.
  * pass@k: probability that at least one of k sampled attempts succeeds,
    estimated per bug with the unbiased estimator 1 - C(n-c,k)/C(n,k) and
    averaged over bugs. A naive first-k variant is available for
    comparability with reports that sliced attempts positionally.
  * mean@k: average per-attempt success rate; independent of k (<= n).
  * relative change between a before-cutoff and an after-cutoff value is
    expressed relative to the after side: 100 * (before - after) / after.

All aggregates are invariant under record reordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Callable, Iterable, Mapping, Sequence

from .errors import (
    EmptyInput,
    EmptySide,
    InsufficientAttempts,
    MixedOpenBugs,
    UndefinedMetric,
)
from .evaluation import EQ_EQUIVALENT, EQ_NOT_APPLICABLE, EvaluationRecord


def round_pct(value: float) -> float:
    """Two decimals, banker's rounding; used at every reporting surface."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


# --- core types -----------------------------------------------------------------

@dataclass
class AttemptMatrix:
    """Per-bug ordered success flags for one success predicate."""

    attempts: dict[str, list[bool]] = field(default_factory=dict)

    def add(self, bug_id: str, flag: bool) -> None:
        self.attempts.setdefault(bug_id, []).append(flag)

    @property
    def n_bugs(self) -> int:
        return len(self.attempts)

    def min_attempts(self) -> int:
        return min(len(v) for v in self.attempts.values()) if self.attempts else 0


@dataclass(frozen=True)
class MetricsReport:
    crr_percent: float
    epr_percent: float
    file_iou_mean: float
    function_iou_mean: float
    n_bugs: int
    n_attempts: int
    filters: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "crr_percent": round_pct(self.crr_percent),
            "epr_percent": round_pct(self.epr_percent),
            "file_iou_mean": round_pct(self.file_iou_mean),
            "function_iou_mean": round_pct(self.function_iou_mean),
            "n_bugs": self.n_bugs,
            "n_attempts": self.n_attempts,
            "filters": self.filters,
        }


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")


# --- record plumbing ----------------------------------------------------------------

def is_open_bug_record(record: EvaluationRecord) -> bool:
    """Open bugs carry neither localization nor judge output by construction."""
    return (
        record.localization is None
        and record.judge_votes is None
        and record.equivalence == EQ_NOT_APPLICABLE
        and not any(f.startswith("partial_votes") for f in record.flags)
    )


def _attempt_success(record: EvaluationRecord, equivalence_required: bool) -> bool:
    if equivalence_required:
        return record.crash_resolved and record.equivalence == EQ_EQUIVALENT
    return record.crash_resolved


def build_matrix(
    records: Iterable[EvaluationRecord],
    success: Callable[[EvaluationRecord], bool] | None = None,
) -> AttemptMatrix:
    if success is None:
        success = lambda r: r.crash_resolved
    ordered = sorted(records, key=lambda r: (r.bug_id, r.agent_name, r.attempt_index))
    matrix = AttemptMatrix()
    for r in ordered:
        matrix.add(r.bug_id, success(r))
    return matrix


def _per_bug_rate(records: Sequence[EvaluationRecord], equivalence_required: bool) -> float:
    by_bug: dict[str, list[bool]] = {}
    for r in records:
        by_bug.setdefault(r.bug_id, []).append(_attempt_success(r, equivalence_required))
    rates = [sum(flags) / len(flags) for flags in by_bug.values()]
    return 100.0 * sum(rates) / len(rates)


def crr(records: Sequence[EvaluationRecord]) -> float:
    """Crash resolution rate. Multiple attempts per bug average first."""
    if not records:
        raise EmptyInput("crr over zero records")
    return _per_bug_rate(records, equivalence_required=False)


def epr(records: Sequence[EvaluationRecord]) -> float:
    """Equivalent patch rate: resolved AND judged equivalent, fixed bugs only."""
    if not records:
        raise EmptyInput("epr over zero records")
    open_bugs = sorted({r.bug_id for r in records if is_open_bug_record(r)})
    if open_bugs:
        raise MixedOpenBugs(f"epr is undefined for open bugs: {', '.join(open_bugs)}")
    return _per_bug_rate(records, equivalence_required=True)


# --- pass@k / mean@k -------------------------------------------------------------------

def pass_at_k_single(n: int, c: int, k: int) -> float:
    """Unbiased per-problem estimator 1 - C(n-c, k)/C(n, k), in [0, 1]."""
    if k > n:
        raise ValueError(f"k={k} exceeds attempts n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


def pass_at_k(matrix: AttemptMatrix, k: int, naive: bool = False) -> float:
    """Average pass@k over the matrix's bugs, as a percentage.

    `naive` scores each bug by its first k attempts only instead of the
    unbiased subset estimator.
    """
    if not matrix.attempts:
        raise EmptyInput("pass@k over an empty matrix")
    values = []
    for bug_id, flags in matrix.attempts.items():
        n = len(flags)
        if n < k:
            raise InsufficientAttempts(bug_id, n, k)
        if naive:
            values.append(1.0 if any(flags[:k]) else 0.0)
        else:
            values.append(pass_at_k_single(n, sum(flags), k))
    return 100.0 * sum(values) / len(values)


def mean_at_k(matrix: AttemptMatrix, k: int = 1) -> float:
    """Average per-attempt success rate (c/n per bug); independent of k <= n."""
    if not matrix.attempts:
        raise EmptyInput("mean@k over an empty matrix")
    for bug_id, flags in matrix.attempts.items():
        if len(flags) < k:
            raise InsufficientAttempts(bug_id, len(flags), k)
    rates = [sum(flags) / len(flags) for flags in matrix.attempts.values()]
    return 100.0 * sum(rates) / len(rates)


def relative_change(before: float, after: float) -> float:
    """Signed percent change of `before` relative to `after`."""
    if after == 0:
        raise ZeroDivisionError("relative_change needs after > 0")
    return 100.0 * (before - after) / after


# --- judge alignment ------------------------------------------------------------------------

def judge_alignment(c: ConfusionCounts) -> dict[str, float]:
    """Accuracy/precision/recall/F1 (percent) from a judge confusion matrix."""
    total = c.tp + c.tn + c.fp + c.fn
    if total == 0:
        raise UndefinedMetric("accuracy")
    if c.tp + c.fp == 0:
        raise UndefinedMetric("precision")
    if c.tp + c.fn == 0:
        raise UndefinedMetric("recall")
    accuracy = (c.tp + c.tn) / total
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    if precision + recall == 0:
        raise UndefinedMetric("f1")
    f1 = 2 * precision * recall / (precision + recall)
    return {
        "accuracy": 100.0 * accuracy,
        "precision": 100.0 * precision,
        "recall": 100.0 * recall,
        "f1": 100.0 * f1,
    }


# --- reports ------------------------------------------------------------------------------------

def build_report(records: Sequence[EvaluationRecord], filters: dict | None = None) -> MetricsReport:
    """MetricsReport over a record set; EPR and IoU cover the fixed subset."""
    if not records:
        raise EmptyInput("report over zero records")
    fixed_records = [r for r in records if not is_open_bug_record(r)]
    epr_percent = _per_bug_rate(fixed_records, equivalence_required=True) if fixed_records else 0.0
    with_loc = [r for r in records if r.localization is not None]
    file_mean = (
        100.0 * sum(r.localization.file_iou for r in with_loc) / len(with_loc) if with_loc else 0.0
    )
    func_mean = (
        100.0 * sum(r.localization.function_iou for r in with_loc) / len(with_loc) if with_loc else 0.0
    )
    return MetricsReport(
        crr_percent=crr(records),
        epr_percent=epr_percent,
        file_iou_mean=file_mean,
        function_iou_mean=func_mean,
        n_bugs=len({r.bug_id for r in records}),
        n_attempts=len(records),
        filters=dict(filters or {}),
    )


@dataclass(frozen=True)
class CutoffReport:
    before: dict[str, float]  # cell key -> percent
    after: dict[str, float]
    changes: dict[str, float]  # cell key -> relative change (before vs after)
    n_before: int
    n_after: int

    def to_doc(self) -> dict:
        return {
            "before": {k: round_pct(v) for k, v in self.before.items()},
            "after": {k: round_pct(v) for k, v in self.after.items()},
            "changes": {k: round_pct(v) for k, v in self.changes.items()},
            "n_before": self.n_before,
            "n_after": self.n_after,
        }


def _side_cells(records: Sequence[EvaluationRecord], ks: Sequence[int], naive: bool) -> dict[str, float]:
    crr_matrix = build_matrix(records)
    epr_matrix = build_matrix(records, lambda r: _attempt_success(r, True))
    cells: dict[str, float] = {}
    for k in ks:
        cells[f"pass@{k}/crr"] = pass_at_k(crr_matrix, k, naive=naive)
        cells[f"pass@{k}/epr"] = pass_at_k(epr_matrix, k, naive=naive)
    k_mean = max(ks) if ks else 1
    cells[f"mean@{k_mean}/crr"] = mean_at_k(crr_matrix, 1)
    cells[f"mean@{k_mean}/epr"] = mean_at_k(epr_matrix, 1)
    return cells


def cutoff_report(
    records: Sequence[EvaluationRecord],
    fixed_dates: Mapping[str, date],
    cutoff_date: date,
    ks: Sequence[int] = (1,),
    naive: bool = False,
) -> CutoffReport:
    """Paired before/after aggregates with relative changes per cell.

    Only records of fixed bugs participate (the split is over fix dates);
    a fix dated on the cutoff day lands on the before side.
    """
    before = [r for r in records if r.bug_id in fixed_dates and fixed_dates[r.bug_id] <= cutoff_date]
    after = [r for r in records if r.bug_id in fixed_dates and fixed_dates[r.bug_id] > cutoff_date]
    if not before:
        raise EmptySide("before")
    if not after:
        raise EmptySide("after")
    before_cells = _side_cells(before, ks, naive)
    after_cells = _side_cells(after, ks, naive)
    changes = {
        key: relative_change(before_cells[key], after_cells[key])
        for key in before_cells
        if after_cells.get(key)
    }
    return CutoffReport(
        before=before_cells,
        after=after_cells,
        changes=changes,
        n_before=len({r.bug_id for r in before}),
        n_after=len({r.bug_id for r in after}),
    )


# --- text rendering ---------------------------------------------------------------------------------

def render_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for idx, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_cutoff_report(report: CutoffReport) -> str:
    keys = sorted(report.before)
    rows = [
        [
            key,
            f"{round_pct(report.before[key]):.2f}",
            f"{round_pct(report.after[key]):.2f}",
            f"{round_pct(report.changes[key]):+.2f}%" if key in report.changes else "n/a",
        ]
        for key in keys
    ]
    return render_table(["metric", "before", "after", "change"], rows)

"""Batch grading and reporting: category counts, stage deltas, bucket breakdowns.

Grading applies a correctness criterion: under ``public`` a transcript's own
outcome stands; under ``private`` the final solution must also pass the
grading suite (public plus private tests), and a publicly solved problem
whose solution fails there is downgraded to unsolved. Percentages round
half-up at two decimals; stage deltas are computed from unrounded ratios,
then rounded.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .loop import Category, HaltReason, RunTranscript
from .problems import DIFFICULTY_BUCKETS, UNRATED, Dataset, bucket_label, split_suites
from .verifier import ExecutionLimits, verify

CATEGORY_ORDER = (
    Category.SOLVED_WITHOUT_TESTS,
    Category.SOLVED_WITH_TESTS,
    Category.SOLVED_WITH_REMEDIATION,
    Category.UNSOLVED,
)


class Criterion(str, Enum):
    PUBLIC = "public"
    PRIVATE = "private"


class GradingError(Exception):
    pass


def round_pct(numerator: int, denominator: int) -> float:
    """100 * numerator / denominator, rounded half-up to 2 decimals; 0 when empty."""
    if denominator == 0:
        return 0.0
    value = Decimal(100 * numerator) / Decimal(denominator)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def grade_transcripts(
    transcripts: Iterable[RunTranscript],
    dataset: Dataset,
    criterion: Criterion,
    limits: ExecutionLimits | None = None,
    shim_cmd: Sequence[str] | None = None,
) -> dict[str, Category]:
    """Per-problem category under the chosen criterion.

    Private grading re-verifies each solved problem's final source against
    the union suite. The pipeline halted at its first public pass, so there
    is no later stage to fall back to: a private failure grades unsolved.
    Problems without private tests keep their public grade untouched.
    """
    by_id = {t.problem_id: t for t in transcripts}
    graded: dict[str, Category] = {}
    for problem in dataset.problems:
        transcript = by_id.get(problem.id)
        if transcript is None:
            raise GradingError(f"no transcript for problem {problem.id}")
        category = transcript.outcome.category
        if (
            criterion is Criterion.PUBLIC
            or category is Category.UNSOLVED
            or not problem.private_tests
        ):
            graded[problem.id] = category
            continue
        _, grading_suite = split_suites(problem)
        report = verify(
            transcript.outcome.final_source,
            grading_suite,
            problem.mode,
            problem.entrypoint,
            limits=limits,
            shim_cmd=shim_cmd,
        )
        graded[problem.id] = category if report.all_passed else Category.UNSOLVED
    return graded


@dataclass(frozen=True)
class CategoryReport:
    """Counts, percentages, cumulative solved rates, and stage deltas.

    ``cumulative_solved`` has one entry per stage (prompt-only, with tests,
    remediation); ``stage_deltas`` are the increments contributed by the
    with-tests and remediation stages; ``improvement_using_tests`` is their
    sum, i.e. everything beyond prompt-only generation.
    """

    dataset: str
    criterion: str
    total: int
    counts: dict[str, int]
    percentages: dict[str, float]
    cumulative_solved: tuple[float, float, float]
    stage_deltas: tuple[float, float]
    improvement_using_tests: float
    unsolved_pct: float
    buckets: dict[str, dict[str, int]]
    halt_reasons: dict[str, int]

    def __post_init__(self) -> None:
        if sum(self.counts.values()) != self.total:
            raise ValueError("category counts must sum to the dataset total")

    @classmethod
    def from_counts(
        cls,
        dataset: str,
        counts: Mapping[Category | str, int],
        criterion: str = Criterion.PUBLIC.value,
        buckets: Mapping[str, Mapping[str, int]] | None = None,
        halt_reasons: Mapping[str, int] | None = None,
    ) -> "CategoryReport":
        normalized = {c.value: 0 for c in CATEGORY_ORDER}
        for key, count in counts.items():
            normalized[Category(key).value] = count
        total = sum(normalized.values())
        a = normalized[Category.SOLVED_WITHOUT_TESTS.value]
        b = normalized[Category.SOLVED_WITH_TESTS.value]
        c = normalized[Category.SOLVED_WITH_REMEDIATION.value]
        return cls(
            dataset=dataset,
            criterion=criterion,
            total=total,
            counts=normalized,
            percentages={name: round_pct(count, total) for name, count in normalized.items()},
            cumulative_solved=(
                round_pct(a, total),
                round_pct(a + b, total),
                round_pct(a + b + c, total),
            ),
            stage_deltas=(round_pct(b, total), round_pct(c, total)),
            improvement_using_tests=round_pct(b + c, total),
            unsolved_pct=round_pct(normalized[Category.UNSOLVED.value], total),
            buckets={name: dict(inner) for name, inner in (buckets or {}).items()},
            halt_reasons=dict(halt_reasons or {}),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "criterion": self.criterion,
            "total": self.total,
            "counts": self.counts,
            "percentages": self.percentages,
            "cumulative_solved": list(self.cumulative_solved),
            "stage_deltas": list(self.stage_deltas),
            "improvement_using_tests": self.improvement_using_tests,
            "unsolved_pct": self.unsolved_pct,
            "buckets": self.buckets,
            "halt_reasons": self.halt_reasons,
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "CategoryReport":
        return cls(
            dataset=obj["dataset"],
            criterion=obj["criterion"],
            total=obj["total"],
            counts=dict(obj["counts"]),
            percentages=dict(obj["percentages"]),
            cumulative_solved=tuple(obj["cumulative_solved"]),
            stage_deltas=tuple(obj["stage_deltas"]),
            improvement_using_tests=obj["improvement_using_tests"],
            unsolved_pct=obj["unsolved_pct"],
            buckets={k: dict(v) for k, v in obj["buckets"].items()},
            halt_reasons=dict(obj["halt_reasons"]),
        )


def halt_reason_counts(
    transcripts: Iterable[RunTranscript], graded: Mapping[str, Category]
) -> dict[str, int]:
    """Why the unsolved problems halted; private downgrades get their own label."""
    reasons: Counter[str] = Counter()
    for transcript in transcripts:
        if graded.get(transcript.problem_id) is not Category.UNSOLVED:
            continue
        if transcript.outcome.category is Category.UNSOLVED:
            reasons[transcript.outcome.halt_reason.value] += 1
        else:
            reasons["private_failure"] += 1
    return dict(reasons)


def summarize(
    graded: Mapping[str, Category],
    dataset: Dataset,
    criterion: Criterion = Criterion.PUBLIC,
    halt_reasons: Mapping[str, int] | None = None,
) -> CategoryReport:
    """Fold graded categories into a CategoryReport with a difficulty breakdown."""
    missing = [p.id for p in dataset.problems if p.id not in graded]
    if missing:
        raise GradingError(f"graded categories missing problems {missing[:5]}")
    counts: Counter[str] = Counter()
    buckets: dict[str, dict[str, int]] = {}
    for problem in dataset.problems:
        category = graded[problem.id]
        counts[category.value] += 1
        label = bucket_label(problem)
        bucket = buckets.setdefault(label, {c.value: 0 for c in CATEGORY_ORDER})
        bucket[category.value] += 1
    return CategoryReport.from_counts(
        dataset.name,
        counts,
        criterion=criterion.value,
        buckets=buckets,
        halt_reasons=halt_reasons,
    )


def improvement_using_tests(report: CategoryReport) -> float:
    """Percentage points gained over prompt-only generation by the later stages."""
    return report.improvement_using_tests


def _bucket_order(report: CategoryReport) -> list[str]:
    known = [b.name for b in DIFFICULTY_BUCKETS] + [UNRATED]
    ordered = [name for name in known if name in report.buckets]
    ordered += sorted(set(report.buckets) - set(known))
    return ordered


def render_report(report: CategoryReport, fmt: str = "table") -> str:
    """Serialize a report as json, csv (plot-ready rows), or an aligned table."""
    if fmt == "json":
        return json.dumps(report.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        return _render_csv(report)
    if fmt == "table":
        return _render_table(report)
    raise ValueError(f"unknown report format {fmt!r}")


def _render_csv(report: CategoryReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "criterion", "scope", "category", "count", "percentage"])
    for category in CATEGORY_ORDER:
        writer.writerow(
            [
                report.dataset,
                report.criterion,
                "overall",
                category.value,
                report.counts[category.value],
                f"{report.percentages[category.value]:.2f}",
            ]
        )
    for bucket_name in _bucket_order(report):
        bucket = report.buckets[bucket_name]
        population = sum(bucket.values())
        for category in CATEGORY_ORDER:
            count = bucket.get(category.value, 0)
            writer.writerow(
                [
                    report.dataset,
                    report.criterion,
                    f"bucket:{bucket_name}",
                    category.value,
                    count,
                    f"{round_pct(count, population):.2f}",
                ]
            )
    return buf.getvalue()


def _render_table(report: CategoryReport) -> str:
    header = f"{report.dataset} (#{report.total}), criterion: {report.criterion}"
    rows = [
        ("Solved at stage A (prompt only)", f"{report.cumulative_solved[0]:.2f}%", ""),
        (
            "Solved by stage B (tests provided)",
            f"{report.cumulative_solved[1]:.2f}%",
            f"(+{report.stage_deltas[0]:.2f}%)",
        ),
        (
            "Solved by stage C (remediation loop)",
            f"{report.cumulative_solved[2]:.2f}%",
            f"(+{report.stage_deltas[1]:.2f}%)",
        ),
        ("Still unsolved", f"{report.unsolved_pct:.2f}%", ""),
        ("Improvement using tests", f"{report.improvement_using_tests:.2f}%", ""),
    ]
    label_width = max(len(r[0]) for r in rows)
    lines = [header, "-" * len(header)]
    lines += [f"{label:<{label_width}}  {pct:>8} {delta}".rstrip() for label, pct, delta in rows]
    counts_line = ", ".join(f"{c.value}={report.counts[c.value]}" for c in CATEGORY_ORDER)
    lines.append(f"counts: {counts_line}")
    if report.halt_reasons:
        halt_line = ", ".join(f"{k}={v}" for k, v in sorted(report.halt_reasons.items()))
        lines.append(f"unsolved halt reasons: {halt_line}")
    if report.buckets:
        lines.append("")
        lines.append("per-bucket breakdown (solved A / B / C / unsolved of population):")
        for bucket_name in _bucket_order(report):
            bucket = report.buckets[bucket_name]
            population = sum(bucket.values())
            parts = " / ".join(str(bucket.get(c.value, 0)) for c in CATEGORY_ORDER)
            lines.append(f"  {bucket_name:<12} {parts}  of {population}")
    return "\n".join(lines) + "\n"

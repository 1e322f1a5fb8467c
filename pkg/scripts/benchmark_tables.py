#!/usr/bin/env python3
"""Print the per-benchmark category tables from stored count fixtures.

The counts are the published per-category results for each benchmark (for
MBPP/HumanEval they are reconstructed from the published cumulative
percentages); this script re-derives all percentages, stage deltas, and the
improvement row from raw counts, which is exactly what `summarize` does on
real transcripts.
"""

from __future__ import annotations

import sys

from tddbench.bench import CategoryReport, render_report

# Table-style counts are private-criterion results; the last entry is the
# public-criterion CodeChef breakdown.
COUNT_FIXTURES = {
    "mbpp": {
        "solved_without_tests": 278,
        "solved_with_tests": 51,
        "solved_with_remediation": 21,
        "unsolved": 49,
    },
    "humaneval": {
        "solved_without_tests": 129,
        "solved_with_tests": 15,
        "solved_with_remediation": 9,
        "unsolved": 11,
    },
    "codechef": {
        "solved_without_tests": 253,
        "solved_with_tests": 34,
        "solved_with_remediation": 46,
        "unsolved": 767,
    },
    "codechef-public-criterion": {
        "solved_without_tests": 393,
        "solved_with_tests": 85,
        "solved_with_remediation": 103,
        "unsolved": 519,
    },
}


def main() -> int:
    fmt = sys.argv[1] if len(sys.argv) > 1 else "table"
    for name, counts in COUNT_FIXTURES.items():
        criterion = "public" if name.endswith("public-criterion") else "private"
        report = CategoryReport.from_counts(name, counts, criterion=criterion)
        sys.stdout.write(render_report(report, fmt))
        sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())

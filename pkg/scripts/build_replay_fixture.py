#!/usr/bin/env python3
"""Build the bundled mini-dataset fixture and its replay store.

Authors six problems that force every pipeline path (solved at stage A, at
stage B, at remediation iteration 2, iteration cap, repeated failures, agent
error), records a scripted backend's completions into a replay store, and
writes dataset + store + manifest under tests/fixtures/mini/.

Rerun after changing prompts, templates, or loop semantics:

    python scripts/build_replay_fixture.py
"""

from __future__ import annotations

import json
import sys
import threading
from pathlib import Path

from tddbench.agents import load_template_set
from tddbench.engine import (
    CompletionEngine,
    CompletionRequest,
    ReplayStore,
    RequestSettings,
    ScriptedBackend,
    StoreMode,
)
from tddbench.loop import LoopConfig, run_problem, transcript_to_json
from tddbench.problems import Dataset, Mode, Problem, TestCase, TestKind, render_dataset, split_suites

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "mini"

ANALYSIS_TEXT = (
    "The solution's observable behavior does not match the expected outputs in the "
    "failing tests; its core logic computes the wrong result."
)
ADVICE_TEXT = (
    "Rework the core computation so every listed failing test produces exactly the "
    "expected output; keep the input handling and output format unchanged."
)


def fenced(code: str, prose: str = "Here is the solution.") -> str:
    return f"{prose}\n\n```python\n{code}```\n"


ECHO_OK = "import sys\n\nsys.stdout.write(sys.stdin.read())\n"
SUM_WRONG = "import sys\n\na, b = map(int, sys.stdin.read().split())\nprint(a * b)\n"
SUM_OK = "import sys\n\na, b = map(int, sys.stdin.read().split())\nprint(a + b)\n"
MEDIAN_MAX = "def median_of_three(a, b, c):\n    return max(a, b, c)\n"
MEDIAN_MIN = "def median_of_three(a, b, c):\n    return min(a, b, c)\n"
MEDIAN_FIRST = "def median_of_three(a, b, c):\n    return a\n"
MEDIAN_OK = "def median_of_three(a, b, c):\n    return sorted([a, b, c])[1]\n"
PARITY_NEITHER = "import sys\n\nsys.stdin.read()\nprint('NEITHER')\n"
PARITY_UNKNOWN = "import sys\n\nsys.stdin.read()\nprint('UNKNOWN')\n"
PARITY_ODD = "import sys\n\nsys.stdin.read()\nprint('ODD')\n"
PARITY_EVEN = "import sys\n\nsys.stdin.read()\nprint('EVEN')\n"
FIRST_WORD_WRONG = "def first_word(text):\n    return text\n"
REFUSAL = "I am sorry, but I cannot write the code you are asking for."

CODER_SCRIPTS: dict[str, list[str]] = {
    "Echo stream": [fenced(ECHO_OK)],
    "Pair sum": [fenced(SUM_WRONG), fenced(SUM_OK, "Fixed version below.")],
    "Median of three": [
        fenced(MEDIAN_MAX),
        fenced(MEDIAN_MIN),
        fenced(MEDIAN_FIRST, "Taking the advice into account:"),
        fenced(MEDIAN_OK, "Taking the advice into account:"),
    ],
    "Parity word": [
        fenced(PARITY_NEITHER),
        fenced(PARITY_UNKNOWN),
        fenced(PARITY_ODD),
        fenced(PARITY_EVEN),
        fenced(PARITY_ODD),
    ],
    "First word": [fenced(FIRST_WORD_WRONG)],
    "Greeting": [REFUSAL],
}


def make_responder():
    counters: dict[str, int] = {}
    lock = threading.Lock()

    def respond(request: CompletionRequest) -> str:
        system = request.messages[0].content
        user = request.messages[-1].content
        if "debugging assistant" in system:
            return ANALYSIS_TEXT
        if "senior reviewer" in system:
            return ADVICE_TEXT
        for marker, script in CODER_SCRIPTS.items():
            if f"Problem: {marker}" in user:
                with lock:
                    index = counters.get(marker, 0)
                    counters[marker] = index + 1
                return script[min(index, len(script) - 1)]
        raise AssertionError(f"no script matches request: {user[:100]!r}")

    return respond


def stdio(test_id: str, stdin: str, stdout: str) -> TestCase:
    return TestCase(id=test_id, kind=TestKind.STDIO, input=stdin, expected=stdout)


def call(test_id: str, args: list, expected) -> TestCase:
    return TestCase(id=test_id, kind=TestKind.FUNCTION_CALL, input=args, expected=expected)


def build_dataset() -> Dataset:
    problems = (
        Problem(
            id="echo",
            title="Echo stream",
            prompt="Read the entire standard input and write it back to standard output unchanged.",
            mode=Mode.FULL_PROGRAM,
            difficulty_score=500,
            public_tests=(stdio("m1", "hello\n", "hello"), stdio("m2", "a\nb\n", "a\nb")),
            private_tests=(stdio("h1", "mirror\n", "mirror"),),
        ),
        Problem(
            id="pair-sum",
            title="Pair sum",
            prompt="Read two integers separated by whitespace from standard input and print their sum.",
            mode=Mode.FULL_PROGRAM,
            difficulty_score=1000,
            public_tests=(stdio("s1", "2 3\n", "5"), stdio("s2", "10 -4\n", "6")),
        ),
        Problem(
            id="median3",
            title="Median of three",
            prompt="Return the median of three numbers.",
            mode=Mode.FUNCTION_LEVEL,
            entrypoint="def median_of_three(a, b, c):",
            public_tests=(call("d1", [1, 2, 3], 2), call("d2", [9, 1, 5], 5), call("d3", [7, 7, 3], 7)),
            private_tests=(call("h3", [2, 9, 4], 4),),
        ),
        Problem(
            id="parity",
            title="Parity word",
            prompt="Read one integer from standard input and print EVEN if it is even, otherwise print ODD.",
            mode=Mode.FULL_PROGRAM,
            difficulty_score=2500,
            public_tests=(stdio("e1", "2\n", "EVEN"), stdio("e2", "3\n", "ODD")),
        ),
        Problem(
            id="first-word",
            title="First word",
            prompt="Return the first whitespace-separated word of the given string.",
            mode=Mode.FUNCTION_LEVEL,
            entrypoint="def first_word(text):",
            public_tests=(call("w1", ["hello world"], "hello"), call("w2", ["a b c"], "a")),
        ),
        Problem(
            id="greet",
            title="Greeting",
            prompt="Read a name from standard input and print 'Hello, <name>!'.",
            mode=Mode.FULL_PROGRAM,
            difficulty_score=1800,
            public_tests=(stdio("g1", "Bob\n", "Hello, Bob!"),),
        ),
    )
    return Dataset(name="mini", problems=problems)


EXPECTED = {
    "echo": {"category": "solved_without_tests", "halt_reason": "passed", "attempts": 1},
    "pair-sum": {"category": "solved_with_tests", "halt_reason": "passed", "attempts": 2},
    "median3": {
        "category": "solved_with_remediation",
        "halt_reason": "passed",
        "attempts": 4,
        "final_iteration": 2,
    },
    "parity": {"category": "unsolved", "halt_reason": "iteration_cap", "attempts": 7},
    "first-word": {"category": "unsolved", "halt_reason": "repeated_failures", "attempts": 5},
    "greet": {"category": "unsolved", "halt_reason": "agent_error", "attempts": 2},
}


def main() -> int:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset()
    (FIXTURE_DIR / "mini.jsonl").write_text(render_dataset(dataset), encoding="utf-8")

    store_path = FIXTURE_DIR / "replay_store.jsonl"
    if store_path.exists():
        store_path.unlink()
    engine = CompletionEngine(
        backend=ScriptedBackend(make_responder(), backend_id="scripted-fixture"),
        store=ReplayStore(store_path, StoreMode.RECORD),
        settings=RequestSettings(model_id="fixture-model"),
    )
    template = load_template_set("default")
    config = LoopConfig()

    recorded = {}
    for problem in dataset.problems:
        transcript = run_problem(problem, config, engine, template)
        recorded[problem.id] = transcript
        expected = EXPECTED[problem.id]
        actual = {
            "category": transcript.outcome.category.value,
            "halt_reason": transcript.outcome.halt_reason.value,
            "attempts": len(transcript.attempts),
        }
        if "final_iteration" in expected:
            actual["final_iteration"] = transcript.attempts[-1].iteration
        if actual != expected:
            raise SystemExit(f"fixture mismatch for {problem.id}: expected {expected}, got {actual}")
        print(f"{problem.id}: {actual}")

    # recorded outcomes must replay identically, and replay must be bit-stable
    def replay_all():
        engine = CompletionEngine(
            store=ReplayStore(store_path, StoreMode.REPLAY),
            settings=RequestSettings(model_id="fixture-model"),
        )
        return {p.id: run_problem(p, config, engine, template) for p in dataset.problems}

    first, second = replay_all(), replay_all()
    for problem in dataset.problems:
        if first[problem.id].outcome != recorded[problem.id].outcome:
            raise SystemExit(f"replay of {problem.id} diverges from the recorded outcome")
        if transcript_to_json(first[problem.id]) != transcript_to_json(second[problem.id]):
            raise SystemExit(f"replay of {problem.id} is not bit-deterministic")

    manifest = {
        "dataset": dataset.name,
        "model_id": "fixture-model",
        "template_set": template.id,
        "problems": EXPECTED,
        "outcome_vector": [EXPECTED[p.id]["category"] for p in dataset.problems],
        "suites": {
            p.id: {
                "public": [t.id for t in split_suites(p)[0]],
                "private_union": [t.id for t in split_suites(p)[1]],
            }
            for p in dataset.problems
        },
    }
    (FIXTURE_DIR / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"fixtures written to {FIXTURE_DIR}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

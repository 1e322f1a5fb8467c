"""Acceptance suite: one test per release criterion, each printing a PASS/FAIL
line (visible with ``pytest -s tests/test_acceptance.py``)."""

import contextlib
import dataclasses
import filecmp
import itertools
import json
import random
import subprocess
import sys
import time
from pathlib import Path

import pytest

from tddbench.bench import CategoryReport, Criterion, grade_transcripts, improvement_using_tests
from tddbench.cli import main as cli_main
from tddbench.engine import CompletionEngine, ReplayStore, StoreMode
from tddbench.loop import Category, LoopConfig, StopDecision, run_problem, should_stop
from tddbench.problems import (
    DIFFICULTY_BUCKETS,
    Dataset,
    Mode,
    Problem,
    TestCase,
    TestKind,
    load_dataset_path,
)
from tddbench.verifier import ExecutionLimits, TestStatus, parse_shim_output, verify

from conftest import FIXTURE_SETTINGS

GOLDEN_DIR = Path(__file__).parent.parent / "shim" / "tests" / "golden"


@contextlib.contextmanager
def criterion(name, budget_s=None):
    started = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"[acceptance] {name}: FAIL", flush=True)
        raise
    elapsed = time.monotonic() - started
    if budget_s is not None:
        assert elapsed < budget_s, f"{name} took {elapsed:.1f}s, budget {budget_s}s"
    print(f"[acceptance] {name}: PASS ({elapsed:.1f}s)", flush=True)


def close(actual, expected, tolerance):
    assert abs(actual - expected) <= tolerance + 1e-9, (
        f"{actual} not within {tolerance} of {expected}"
    )


def counts(a, b, c, u):
    return {
        "solved_without_tests": a,
        "solved_with_tests": b,
        "solved_with_remediation": c,
        "unsolved": u,
    }


# --- criterion 1: report arithmetic ---------------------------------------


def test_report_arithmetic_vs_published_numbers():
    with criterion("report arithmetic vs published numbers", budget_s=5):
        overall = CategoryReport.from_counts("overall", counts(393, 85, 103, 519))
        for category, expected in [
            ("solved_without_tests", 35.72),
            ("solved_with_tests", 7.72),
            ("solved_with_remediation", 9.36),
            ("unsolved", 47.18),
        ]:
            close(overall.percentages[category], expected, 0.02)

        tables = {
            "mbpp": (counts(278, 51, 21, 49), (69.67, 82.45, 87.71), (12.78, 5.26), 12.28, 18.04),
            "humaneval": (counts(129, 15, 9, 11), (78.66, 87.81, 93.30), (9.15, 5.49), 6.71, 14.64),
            "codechef": (counts(253, 34, 46, 767), (23.00, 26.09, 30.27), (3.09, 4.18), 69.73, 7.27),
        }
        for name, (cnt, cumulative, deltas, unsolved, improvement) in tables.items():
            report = CategoryReport.from_counts(name, cnt)
            for actual, expected in zip(report.cumulative_solved, cumulative):
                close(actual, expected, 0.04)
            for actual, expected in zip(report.stage_deltas, deltas):
                close(actual, expected, 0.04)
            close(report.unsolved_pct, unsolved, 0.04)
            close(improvement_using_tests(report), improvement, 0.04)


# --- criterion 2: deterministic end-to-end ---------------------------------


def test_deterministic_end_to_end(mini_dir, mini_manifest, tmp_path):
    with criterion("deterministic end-to-end replay", budget_s=60):
        out_dirs = [tmp_path / "run1", tmp_path / "run2"]
        for out_dir in out_dirs:
            code = cli_main(
                [
                    "run",
                    "--dataset", str(mini_dir / "mini.jsonl"),
                    "--backend", "replay",
                    "--store", str(mini_dir / "replay_store.jsonl"),
                    "--model", "fixture-model",
                    "--workers", "2",
                    "--per-test-timeout", "5",
                    "--suite-timeout", "30",
                    "--out", str(out_dir),
                ]
            )
            assert code == 0

        names = sorted(p.name for p in out_dirs[0].glob("*.json"))
        assert len(names) == 6
        for name in names:
            first = (out_dirs[0] / name).read_bytes()
            second = (out_dirs[1] / name).read_bytes()
            assert first == second, f"transcript {name} differs between runs"

        dataset = load_dataset_path(mini_dir / "mini.jsonl")
        outcome_vector = []
        for problem in dataset.problems:
            transcript = json.loads((out_dirs[0] / f"{problem.id}.json").read_text())
            outcome_vector.append(transcript["outcome"]["category"])
            expected = mini_manifest["problems"][problem.id]
            assert transcript["outcome"]["halt_reason"] == expected["halt_reason"]
            if "final_iteration" in expected:
                assert transcript["attempts"][-1]["iteration"] == expected["final_iteration"]
        assert outcome_vector == [
            "solved_without_tests",
            "solved_with_tests",
            "solved_with_remediation",
            "unsolved",
            "unsolved",
            "unsolved",
        ]


# --- criterion 3: stopping rule vs brute-force oracle -----------------------


def brute_force_should_stop(history, cutoff, cap):
    """Independent oracle: literal consecutive-equality reading."""
    repeated = False
    if len(history) >= cutoff:
        tail = history[len(history) - cutoff:]
        repeated = True
        for i in range(1, cutoff):
            if tail[i] != tail[0]:
                repeated = False
                break
    if repeated:
        return StopDecision.STOP_REPEATED
    if len(history) == cap:
        return StopDecision.STOP_ITERATION_CAP
    return StopDecision.CONTINUE


def test_stopping_rule_exhaustive():
    with criterion("stopping rule exhaustive vs oracle", budget_s=5):
        universe = [frozenset({"t1"}), frozenset({"t2"}), frozenset({"t1", "t2"})]
        checked = 0
        for cutoff, cap in [(3, 5), (2, 5), (2, 3), (1, 4), (4, 4)]:
            config = LoopConfig(max_iterations=cap, repeat_failure_cutoff=cutoff)
            for length in range(0, cap + 1):
                for history in itertools.product(universe, repeat=length):
                    expected = brute_force_should_stop(list(history), cutoff, cap)
                    assert should_stop(list(history), config) is expected
                    checked += 1
        assert checked > 3**5


# --- criterion 4: verifier oracle table -------------------------------------


def fc(test_id, args, expected, timeout_ms=None):
    return TestCase(test_id, TestKind.FUNCTION_CALL, args, expected, timeout_ms)


def sio(test_id, stdin, stdout):
    return TestCase(test_id, TestKind.STDIO, stdin, stdout)


ADD_SIG = "def add_nums(a, b):"
ADD_SUITE = (fc("t1", [2, 3], 5), fc("t2", [-1, 1], 0), fc("t3", [10, 20], 30))
SUM_SUITE = (sio("s1", "2 3\n", "5"), sio("s2", "10 20\n", "30"))

ORACLE_CORPUS = [
    (
        "correct",
        "def add_nums(a, b):\n    return a + b\n",
        ADD_SUITE, Mode.FUNCTION_LEVEL, ADD_SIG,
        ["pass", "pass", "pass"],
    ),
    (
        "off_by_one",
        "def add_nums(a, b):\n    return a + b + 1\n",
        ADD_SUITE, Mode.FUNCTION_LEVEL, ADD_SIG,
        ["wrong_answer", "wrong_answer", "wrong_answer"],
    ),
    (
        "crash_on_negative",
        "def add_nums(a, b):\n    if a < 0:\n        raise ValueError('negative')\n    return a + b\n",
        ADD_SUITE, Mode.FUNCTION_LEVEL, ADD_SIG,
        ["pass", "runtime_error", "pass"],
    ),
    (
        "infinite_loop",
        "def add_nums(a, b):\n    while True:\n        pass\n",
        (fc("t1", [1, 1], 2),), Mode.FUNCTION_LEVEL, ADD_SIG,
        ["timeout"],
    ),
    (
        "wrong_output_format",
        "import sys\na, b = map(int, sys.stdin.read().split())\nprint('Result:', a + b)\n",
        SUM_SUITE, Mode.FULL_PROGRAM, None,
        ["wrong_answer", "wrong_answer"],
    ),
    (
        "non_compiling",
        "def add_nums(a, b:\n    return a + b\n",
        ADD_SUITE, Mode.FUNCTION_LEVEL, ADD_SIG,
        ["setup_error", "setup_error", "setup_error"],
    ),
    (
        "partial_pass",
        "def add_nums(a, b):\n    return 5\n",
        ADD_SUITE, Mode.FUNCTION_LEVEL, ADD_SIG,
        ["pass", "wrong_answer", "wrong_answer"],
    ),
    (
        "whitespace_variant",
        "import sys\na, b = map(int, sys.stdin.read().split())\nsys.stdout.write(f'{a + b}  \\n\\n\\n')\n",
        SUM_SUITE, Mode.FULL_PROGRAM, None,
        ["pass", "pass"],
    ),
    (
        "float_tolerance_edge",
        "def halve(x):\n    return x / 2\n",
        (fc("u1", [1.0], 0.5), fc("u2", [3.0], 1.5000004), fc("u3", [3.0], 1.51)),
        Mode.FUNCTION_LEVEL, "def halve(x):",
        ["pass", "pass", "wrong_answer"],
    ),
    (
        "filesystem_probe",
        "def add_nums(a, b):\n    open('/tmp/tddbench-oracle-escape.txt', 'w').write('x')\n    return a + b\n",
        (fc("t1", [2, 3], 5),), Mode.FUNCTION_LEVEL, ADD_SIG,
        ["runtime_error"],
    ),
]


def test_verifier_oracle_table():
    with criterion("verifier oracle table", budget_s=90):
        limits = ExecutionLimits(per_test_timeout=1.0, total_suite_timeout=30.0)
        for name, source, suite, mode, entrypoint, expected in ORACLE_CORPUS:
            started = time.monotonic()
            report = verify(source, suite, mode, entrypoint, limits=limits)
            elapsed = time.monotonic() - started
            statuses = [r.status.value for r in report.results]
            assert statuses == expected, f"{name}: {statuses} != {expected}"
            if name == "infinite_loop":
                assert elapsed < 3 * limits.per_test_timeout, f"loop kill took {elapsed:.1f}s"
        assert not Path("/tmp/tddbench-oracle-escape.txt").exists()


# --- criterion 5: private-criterion downgrade -------------------------------


@pytest.fixture(scope="module")
def replayed(mini_dir):
    dataset = load_dataset_path(mini_dir / "mini.jsonl")
    store = ReplayStore(mini_dir / "replay_store.jsonl", StoreMode.REPLAY)
    engine = CompletionEngine(store=store, settings=FIXTURE_SETTINGS)
    from tddbench.agents import load_template_set

    template = load_template_set("default")
    limits = ExecutionLimits(per_test_timeout=5.0, total_suite_timeout=30.0)
    transcripts = [
        run_problem(p, LoopConfig(), engine, template, limits=limits) for p in dataset.problems
    ]
    return dataset, transcripts


def inject_private(dataset, additions):
    problems = []
    for problem in dataset.problems:
        extra = additions.get(problem.id, ())
        if extra:
            problem = dataclasses.replace(problem, private_tests=problem.private_tests + tuple(extra))
        problems.append(problem)
    return Dataset(name=dataset.name, problems=tuple(problems))


def category_counts(graded):
    result = {c: 0 for c in Category}
    for category in graded.values():
        result[category] += 1
    return result


def random_private_test(problem, rng, tag):
    if problem.mode is Mode.FULL_PROGRAM:
        payload = "".join(rng.choice("abcxyz 0123") for _ in range(rng.randint(1, 8)))
        expected = rng.choice([payload.strip(), "something else", payload.upper().strip()])
        return TestCase(tag, TestKind.STDIO, payload + "\n", expected)
    args = [rng.randint(-9, 9) for _ in range(3)]
    if problem.id == "first-word":
        args = ["{} {}".format(rng.choice(["alpha", "beta"]), rng.choice(["x", "y"]))]
        expected = rng.choice(["alpha", "beta", "zzz"])
    else:
        expected = rng.choice([sorted(args)[1], rng.randint(-9, 9)])
    return TestCase(tag, TestKind.FUNCTION_CALL, args, expected)


def test_private_criterion_downgrade(replayed):
    with criterion("private-criterion downgrade and monotonicity", budget_s=120):
        dataset, transcripts = replayed
        limits = ExecutionLimits(per_test_timeout=5.0, total_suite_timeout=30.0)

        # one injected private-only failure: echo cannot uppercase
        variant = inject_private(
            dataset, {"echo": [TestCase("hx", TestKind.STDIO, "shout\n", "SHOUT")]}
        )
        public = grade_transcripts(transcripts, variant, Criterion.PUBLIC)
        private = grade_transcripts(transcripts, variant, Criterion.PRIVATE, limits=limits)
        solved_public = sum(1 for c in public.values() if c is not Category.UNSOLVED)
        solved_private = sum(1 for c in private.values() if c is not Category.UNSOLVED)
        assert solved_private == solved_public - 1
        assert private["echo"] is Category.UNSOLVED

        # monotonicity across randomized injections
        rng = random.Random(1106)
        base_public = category_counts(grade_transcripts(transcripts, dataset, Criterion.PUBLIC))
        for trial in range(100):
            target = rng.choice(dataset.problems)
            additions = {
                target.id: [
                    random_private_test(target, rng, f"inj-{trial}-{k}")
                    for k in range(rng.randint(1, 2))
                ]
            }
            variant = inject_private(dataset, additions)
            private_counts = category_counts(
                grade_transcripts(transcripts, variant, Criterion.PRIVATE, limits=limits)
            )
            for category in Category:
                if category is Category.UNSOLVED:
                    assert private_counts[category] >= base_public[category]
                else:
                    assert private_counts[category] <= base_public[category]
            solved_prefix_public = 0
            solved_prefix_private = 0
            for category in (
                Category.SOLVED_WITHOUT_TESTS,
                Category.SOLVED_WITH_TESTS,
                Category.SOLVED_WITH_REMEDIATION,
            ):
                solved_prefix_public += base_public[category]
                solved_prefix_private += private_counts[category]
                assert solved_prefix_private <= solved_prefix_public


# --- criterion 6: bucketing -------------------------------------------------


def test_bucketing_tiling_and_populations():
    with criterion("difficulty bucketing and per-bucket populations", budget_s=30):
        from tddbench.problems import bucket_for_score

        hits = {bucket.name: 0 for bucket in DIFFICULTY_BUCKETS}
        for score in range(0, 5001):
            hits[bucket_for_score(score).name] += 1
        assert sum(hits.values()) == 5001
        for bucket in DIFFICULTY_BUCKETS:
            assert hits[bucket.name] == bucket.hi - bucket.lo + 1

        problems = []
        graded = {}
        categories = list(Category)
        for bucket in DIFFICULTY_BUCKETS:
            for k in range(100):
                score = bucket.lo + round(k * (bucket.hi - bucket.lo) / 99)
                problem = Problem(
                    id=f"{bucket.name}-{k}",
                    title=f"{bucket.name} {k}",
                    prompt="synthetic",
                    mode=Mode.FULL_PROGRAM,
                    difficulty_score=score,
                    public_tests=(TestCase("t1", TestKind.STDIO, "", ""),),
                )
                problems.append(problem)
                graded[problem.id] = categories[(len(problems)) % len(categories)]
        dataset = Dataset("table-shaped", tuple(problems))
        assert len(dataset) == 1100

        from tddbench.bench import summarize

        report = summarize(graded, dataset)
        assert set(report.buckets) == {bucket.name for bucket in DIFFICULTY_BUCKETS}
        for bucket in DIFFICULTY_BUCKETS:
            assert sum(report.buckets[bucket.name].values()) == 100


# --- criterion 7 (secondary): shim protocol conformance ----------------------


def zero_elapsed_lines(stdout):
    lines = []
    for line in stdout.splitlines():
        obj = json.loads(line)
        if "elapsed_ms" in obj:
            obj["elapsed_ms"] = 0
        lines.append(json.dumps(obj, ensure_ascii=False, sort_keys=True))
    return lines


def test_shim_protocol_conformance(tmp_path):
    with criterion("shim protocol golden files and truncated-stream parsing", budget_s=60):
        stdout_by_job = {}
        for name in ("all_pass", "setup_error", "mixed"):
            job = json.loads((GOLDEN_DIR / f"{name}.job.json").read_text())
            workdir = tmp_path / name
            workdir.mkdir()
            proc = subprocess.run(
                [sys.executable, "-m", "tddshim"],
                input=json.dumps({**job, "workdir": str(workdir)}),
                capture_output=True,
                text=True,
                timeout=60,
            )
            assert proc.returncode == 0
            golden = (GOLDEN_DIR / f"{name}.golden.jsonl").read_text().splitlines()
            assert zero_elapsed_lines(proc.stdout) == golden, f"golden mismatch for {name}"
            stdout_by_job[name] = proc.stdout

        # parent-side parsing of the stream cut at every line boundary
        stream = stdout_by_job["mixed"]
        boundaries = [i + 1 for i, ch in enumerate(stream) if ch == "\n"]
        for cut in [0] + boundaries:
            prefix = stream[:cut]
            results, done, error = parse_shim_output(prefix)
            assert error is None
            assert len(results) == prefix.count('"test_id"')
            assert (done is not None) == (cut == len(stream))

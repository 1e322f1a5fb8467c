"""Problem and dataset model: test cases, difficulty buckets, JSONL loading.

A problem is either ``function_level`` (candidates implement one function
against a given signature, tests are function calls) or ``full_program``
(candidates are whole programs, tests feed stdin and compare stdout).
Datasets are JSON-lines files, one problem object per line; see
``render_dataset`` for the canonical serialization.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Union


class TestKind(str, Enum):
    FUNCTION_CALL = "function_call"
    STDIO = "stdio"


class Mode(str, Enum):
    FUNCTION_LEVEL = "function_level"
    FULL_PROGRAM = "full_program"


#: Highest difficulty score any bucket covers; larger scores are rejected.
MAX_DIFFICULTY_SCORE = 5000

#: Pseudo-bucket label for problems that carry no difficulty score.
UNRATED = "unrated"


class DatasetError(ValueError):
    """Dataset problem with a position: record index and field path."""

    def __init__(self, message: str, *, record: int | None = None, field: str | None = None):
        self.record = record
        self.field = field
        where = []
        if record is not None:
            where.append(f"record {record}")
        if field:
            where.append(f"field {field}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class DatasetParseError(DatasetError):
    """The stream violates the JSONL schema (bad JSON, wrong type, missing key)."""


class DatasetValidationError(DatasetError):
    """The record parsed but violates a model invariant."""


@dataclass(frozen=True)
class TestCase:
    """One check: a function call with expected return value, or a stdin/stdout pair.

    ``input`` is an argument list for ``function_call`` tests and the stdin
    text for ``stdio`` tests; ``expected`` is a JSON value or the expected
    stdout text respectively. ``timeout_ms`` overrides the per-test limit.
    """

    id: str
    kind: TestKind
    input: Any
    expected: Any
    timeout_ms: int | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("test id must be non-empty")
        if self.kind is TestKind.FUNCTION_CALL and not isinstance(self.input, list):
            raise ValueError(f"test {self.id}: function_call input must be an argument list")
        if self.kind is TestKind.STDIO:
            if not isinstance(self.input, str):
                raise ValueError(f"test {self.id}: stdio input must be text")
            if not isinstance(self.expected, str):
                raise ValueError(f"test {self.id}: stdio expected must be text")
        if self.timeout_ms is not None and self.timeout_ms <= 0:
            raise ValueError(f"test {self.id}: timeout_ms must be positive")


_KIND_FOR_MODE = {
    Mode.FUNCTION_LEVEL: TestKind.FUNCTION_CALL,
    Mode.FULL_PROGRAM: TestKind.STDIO,
}


@dataclass(frozen=True)
class Problem:
    """A programming task with public (visible) and private (grading-only) tests."""

    id: str
    title: str
    prompt: str
    mode: Mode
    entrypoint: str | None = None
    difficulty_score: int | None = None
    public_tests: tuple[TestCase, ...] = ()
    private_tests: tuple[TestCase, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("problem id must be non-empty")
        if not self.public_tests:
            raise ValueError(f"problem {self.id}: public_tests must be non-empty")
        if self.mode is Mode.FUNCTION_LEVEL and not self.entrypoint:
            raise ValueError(f"problem {self.id}: function_level requires an entrypoint signature")
        if self.mode is Mode.FULL_PROGRAM and self.entrypoint:
            raise ValueError(f"problem {self.id}: full_program must not carry an entrypoint")
        if self.difficulty_score is not None and not 0 <= self.difficulty_score <= MAX_DIFFICULTY_SCORE:
            raise ValueError(
                f"problem {self.id}: difficulty_score must be in [0, {MAX_DIFFICULTY_SCORE}]"
            )
        want_kind = _KIND_FOR_MODE[self.mode]
        seen: set[str] = set()
        for suite_name, suite in (("public_tests", self.public_tests), ("private_tests", self.private_tests)):
            for test in suite:
                if test.kind is not want_kind:
                    raise ValueError(
                        f"problem {self.id}: {suite_name} test {test.id} has kind "
                        f"{test.kind.value}, expected {want_kind.value} for mode {self.mode.value}"
                    )
                if test.id in seen:
                    raise ValueError(f"problem {self.id}: duplicate test id {test.id!r}")
                seen.add(test.id)


@dataclass(frozen=True)
class DifficultyBucket:
    """A named, inclusive difficulty range."""

    name: str
    lo: int
    hi: int

    def contains(self, score: int) -> bool:
        return self.lo <= score <= self.hi


#: The eleven rating buckets, ordered; together they tile [0, 5000] exactly.
DIFFICULTY_BUCKETS: tuple[DifficultyBucket, ...] = (
    DifficultyBucket("Beginner", 0, 999),
    DifficultyBucket("1* Beginner", 1000, 1199),
    DifficultyBucket("1* Advanced", 1200, 1399),
    DifficultyBucket("2* Beginner", 1400, 1499),
    DifficultyBucket("2* Advanced", 1500, 1599),
    DifficultyBucket("3* Beginner", 1600, 1699),
    DifficultyBucket("3* Advanced", 1700, 1799),
    DifficultyBucket("4*", 1800, 1999),
    DifficultyBucket("5*", 2000, 2199),
    DifficultyBucket("6*", 2200, 2499),
    DifficultyBucket("7*", 2500, 5000),
)


def bucket_for_score(score: int) -> DifficultyBucket:
    """Return the unique bucket whose range contains ``score``.

    Scores outside [0, 5000] are rejected; there is no clamping.
    """
    if not isinstance(score, int) or isinstance(score, bool):
        raise TypeError(f"difficulty score must be an integer, got {score!r}")
    if not 0 <= score <= MAX_DIFFICULTY_SCORE:
        raise ValueError(f"difficulty score {score} out of range [0, {MAX_DIFFICULTY_SCORE}]")
    for bucket in DIFFICULTY_BUCKETS:
        if bucket.contains(score):
            return bucket
    raise AssertionError("buckets do not tile the score range")  # pragma: no cover


def bucket_label(problem: Problem) -> str:
    """Bucket name for a problem, or the ``unrated`` pseudo-bucket."""
    if problem.difficulty_score is None:
        return UNRATED
    return bucket_for_score(problem.difficulty_score).name


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of problems with unique ids."""

    name: str
    problems: tuple[Problem, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for problem in self.problems:
            if problem.id in seen:
                raise ValueError(f"duplicate problem id {problem.id!r}")
            seen.add(problem.id)

    def __len__(self) -> int:
        return len(self.problems)

    def by_id(self, problem_id: str) -> Problem:
        for problem in self.problems:
            if problem.id == problem_id:
                return problem
        raise KeyError(problem_id)


def split_suites(problem: Problem) -> tuple[tuple[TestCase, ...], tuple[TestCase, ...]]:
    """Return (public suite, private grading suite).

    The private grading suite is the union public + private: a solution only
    counts as private-correct if it passes every check, the way a grading
    system would run it. Test ids are disjoint by Problem invariant, so the
    union never drops or duplicates a test.
    """
    return problem.public_tests, problem.public_tests + problem.private_tests


# --- JSONL loading / rendering -------------------------------------------

_REQUIRED_KEYS = ("id", "title", "prompt", "mode", "public_tests")
_ALLOWED_KEYS = set(_REQUIRED_KEYS) | {"entrypoint", "difficulty_score", "private_tests"}
_TEST_REQUIRED_KEYS = ("id", "kind", "input", "expected")
_TEST_ALLOWED_KEYS = set(_TEST_REQUIRED_KEYS) | {"timeout_ms"}


def _parse_test(obj: Any, record: int, path: str) -> TestCase:
    if not isinstance(obj, dict):
        raise DatasetParseError("test must be an object", record=record, field=path)
    for key in _TEST_REQUIRED_KEYS:
        if key not in obj:
            raise DatasetParseError(f"missing key {key!r}", record=record, field=f"{path}.{key}")
    unknown = set(obj) - _TEST_ALLOWED_KEYS
    if unknown:
        raise DatasetParseError(
            f"unknown keys {sorted(unknown)}", record=record, field=path
        )
    try:
        kind = TestKind(obj["kind"])
    except ValueError:
        raise DatasetParseError(
            f"kind must be one of {[k.value for k in TestKind]}",
            record=record,
            field=f"{path}.kind",
        ) from None
    timeout_ms = obj.get("timeout_ms")
    if timeout_ms is not None and (not isinstance(timeout_ms, int) or isinstance(timeout_ms, bool)):
        raise DatasetParseError("timeout_ms must be an integer", record=record, field=f"{path}.timeout_ms")
    try:
        return TestCase(
            id=_expect_str(obj["id"], record, f"{path}.id"),
            kind=kind,
            input=obj["input"],
            expected=obj["expected"],
            timeout_ms=timeout_ms,
        )
    except ValueError as exc:
        raise DatasetValidationError(str(exc), record=record, field=path) from None


def _expect_str(value: Any, record: int, path: str) -> str:
    if not isinstance(value, str):
        raise DatasetParseError("expected a string", record=record, field=path)
    return value


def _parse_problem(obj: Any, record: int) -> Problem:
    if not isinstance(obj, dict):
        raise DatasetParseError("record must be a JSON object", record=record)
    for key in _REQUIRED_KEYS:
        if key not in obj:
            raise DatasetParseError(f"missing key {key!r}", record=record, field=key)
    unknown = set(obj) - _ALLOWED_KEYS
    if unknown:
        raise DatasetParseError(f"unknown keys {sorted(unknown)}", record=record)
    try:
        mode = Mode(obj["mode"])
    except ValueError:
        raise DatasetParseError(
            f"mode must be one of {[m.value for m in Mode]}", record=record, field="mode"
        ) from None
    for suite_key in ("public_tests", "private_tests"):
        if suite_key in obj and not isinstance(obj[suite_key], list):
            raise DatasetParseError("must be a list", record=record, field=suite_key)
    public = tuple(
        _parse_test(t, record, f"public_tests[{i}]") for i, t in enumerate(obj["public_tests"])
    )
    private = tuple(
        _parse_test(t, record, f"private_tests[{i}]")
        for i, t in enumerate(obj.get("private_tests", []))
    )
    entrypoint = obj.get("entrypoint")
    if entrypoint is not None:
        entrypoint = _expect_str(entrypoint, record, "entrypoint")
    score = obj.get("difficulty_score")
    if score is not None and (not isinstance(score, int) or isinstance(score, bool)):
        raise DatasetParseError("difficulty_score must be an integer", record=record, field="difficulty_score")
    try:
        return Problem(
            id=_expect_str(obj["id"], record, "id"),
            title=_expect_str(obj["title"], record, "title"),
            prompt=_expect_str(obj["prompt"], record, "prompt"),
            mode=mode,
            entrypoint=entrypoint,
            difficulty_score=score,
            public_tests=public,
            private_tests=private,
        )
    except ValueError as exc:
        raise DatasetValidationError(str(exc), record=record) from None


Source = Union[str, bytes, "io.IOBase", Path]


def _read_text(source: Source) -> str:
    if isinstance(source, Path):
        return source.read_text(encoding="utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def load_dataset(source: Source, name: str = "dataset", format_id: str = "jsonl") -> Dataset:
    """Load and validate a dataset from JSONL ``source``.

    ``source`` may be text, bytes, an open file, or a Path. Errors carry the
    offending record index (0-based) and, where applicable, a field path.
    """
    if format_id != "jsonl":
        raise ValueError(f"unsupported dataset format {format_id!r}")
    text = _read_text(source)
    problems: list[Problem] = []
    # split on \n only: splitlines() would also break records at unicode
    # line separators that json leaves unescaped inside strings
    for record, line in enumerate(text.split("\n")):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"invalid JSON: {exc.msg}", record=record) from None
        problems.append(_parse_problem(obj, record))
    try:
        return Dataset(name=name, problems=tuple(problems))
    except ValueError as exc:
        raise DatasetValidationError(str(exc)) from None


def load_dataset_path(path: str | Path, format_id: str = "jsonl") -> Dataset:
    """Load a dataset file, naming the dataset after the file stem."""
    path = Path(path)
    return load_dataset(path, name=path.stem, format_id=format_id)


def _test_to_obj(test: TestCase) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": test.id,
        "kind": test.kind.value,
        "input": test.input,
        "expected": test.expected,
    }
    if test.timeout_ms is not None:
        obj["timeout_ms"] = test.timeout_ms
    return obj


def _problem_to_obj(problem: Problem) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": problem.id,
        "title": problem.title,
        "prompt": problem.prompt,
        "mode": problem.mode.value,
        "public_tests": [_test_to_obj(t) for t in problem.public_tests],
        "private_tests": [_test_to_obj(t) for t in problem.private_tests],
    }
    if problem.entrypoint is not None:
        obj["entrypoint"] = problem.entrypoint
    if problem.difficulty_score is not None:
        obj["difficulty_score"] = problem.difficulty_score
    return obj


def render_dataset(dataset: Dataset) -> str:
    """Serialize to canonical JSONL; ``load_dataset`` round-trips it."""
    return "".join(
        json.dumps(_problem_to_obj(p), ensure_ascii=False, sort_keys=True) + "\n"
        for p in dataset.problems
    )

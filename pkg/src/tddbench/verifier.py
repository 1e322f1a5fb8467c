"""Run candidate code against a test suite in an isolated child process.

The heavy lifting happens in the runner shim (a separate executable); this
module owns the parent side of the contract: job construction, process
lifecycle, the total-suite timeout backstop, incremental JSON-lines parsing,
and turning raw result lines into a structured report plus LLM-readable
feedback.
"""

from __future__ import annotations

import json
import os
import shutil
import signal
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

from .problems import Mode, TestCase, TestKind


class TestStatus(str, Enum):
    PASS = "pass"
    WRONG_ANSWER = "wrong_answer"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    SETUP_ERROR = "setup_error"


class VerifierError(Exception):
    pass


class InfrastructureError(VerifierError):
    """The sandbox itself failed (spawn error, shim crash); not a test status."""


class ShimProtocolError(VerifierError):
    """The shim emitted something the protocol does not allow."""

    def __init__(self, message: str, raw_line: str | None = None):
        self.raw_line = raw_line
        super().__init__(f"{message}: {raw_line!r}" if raw_line is not None else message)


@dataclass(frozen=True)
class ExecutionLimits:
    """Resource limits for one verification. Durations in seconds."""

    per_test_timeout: float = 10.0
    memory_cap_bytes: int = 512 * 1024 * 1024
    total_suite_timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.per_test_timeout <= 0 or self.total_suite_timeout <= 0 or self.memory_cap_bytes <= 0:
            raise ValueError("execution limits must be positive")
        if self.per_test_timeout > self.total_suite_timeout:
            raise ValueError("per_test_timeout must not exceed total_suite_timeout")


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test. ``input`` is carried along so feedback can show it."""

    test_id: str
    status: TestStatus
    input: Any
    expected: Any
    actual: Any = None
    diagnostic: str = ""

    @property
    def passed(self) -> bool:
        return self.status is TestStatus.PASS

    def to_dict(self) -> dict[str, Any]:
        return {
            "test_id": self.test_id,
            "status": self.status.value,
            "input": self.input,
            "expected": self.expected,
            "actual": self.actual,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "TestResult":
        return cls(
            test_id=obj["test_id"],
            status=TestStatus(obj["status"]),
            input=obj["input"],
            expected=obj["expected"],
            actual=obj.get("actual"),
            diagnostic=obj.get("diagnostic", ""),
        )


@dataclass(frozen=True)
class VerificationReport:
    """Per-test results in suite order; pass/fail aggregates are derived."""

    results: tuple[TestResult, ...]
    executed_lines: tuple[int, ...] | None = None

    @property
    def all_passed(self) -> bool:
        return not self.failing_set

    @property
    def failing_set(self) -> frozenset[str]:
        return frozenset(r.test_id for r in self.results if not r.passed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "results": [r.to_dict() for r in self.results],
            "all_passed": self.all_passed,
            "failing": sorted(self.failing_set),
            "executed_lines": list(self.executed_lines) if self.executed_lines is not None else None,
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "VerificationReport":
        lines = obj.get("executed_lines")
        return cls(
            results=tuple(TestResult.from_dict(r) for r in obj["results"]),
            executed_lines=tuple(lines) if lines is not None else None,
        )


def normalize_output(raw: str) -> str:
    """Canonical stdout form: \\n endings, no trailing whitespace per line,
    no trailing blank lines. Nothing else changes (leading spaces survive)."""
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def default_shim_command() -> list[str]:
    return [sys.executable, "-m", "tddshim"]


def parse_shim_output(
    text: str, allow_partial_tail: bool = False
) -> tuple[list[dict[str, Any]], dict[str, Any] | None, dict[str, Any] | None]:
    """Parse shim stdout into (result lines, done record, error record).

    The protocol is prefix-safe: any prefix ending at a line boundary parses
    to a well-formed partial result. A trailing partial line is tolerated
    only when ``allow_partial_tail`` is set (the parent killed the child).
    """
    chunks = text.split("\n")
    complete, tail = chunks[:-1], chunks[-1]
    if tail and not allow_partial_tail:
        raise ShimProtocolError("truncated shim output line", raw_line=tail)
    results: list[dict[str, Any]] = []
    done: dict[str, Any] | None = None
    error: dict[str, Any] | None = None
    for line in complete:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise ShimProtocolError("shim output line is not JSON", raw_line=line) from None
        if not isinstance(obj, dict):
            raise ShimProtocolError("shim output line is not an object", raw_line=line)
        if obj.get("done"):
            done = obj
        elif "error" in obj:
            error = obj
        elif "test_id" in obj and "status" in obj:
            results.append(obj)
        else:
            raise ShimProtocolError("unrecognized shim record", raw_line=line)
    return results, done, error


def _check_preconditions(suite: Sequence[TestCase], mode: Mode, entrypoint: str | None) -> None:
    if not suite:
        raise ValueError("test suite must be non-empty")
    if mode is Mode.FUNCTION_LEVEL and not entrypoint:
        raise ValueError("function_level verification requires an entrypoint signature")
    if mode is Mode.FULL_PROGRAM and entrypoint:
        raise ValueError("full_program verification must not carry an entrypoint")
    want = TestKind.FUNCTION_CALL if mode is Mode.FUNCTION_LEVEL else TestKind.STDIO
    for test in suite:
        if test.kind is not want:
            raise ValueError(f"test {test.id} kind {test.kind.value} does not match mode {mode.value}")


def _build_job(
    source: str,
    suite: Sequence[TestCase],
    mode: Mode,
    entrypoint: str | None,
    limits: ExecutionLimits,
    workdir: str,
    strict_output: bool,
    collect_coverage: bool,
) -> dict[str, Any]:
    job: dict[str, Any] = {
        "source": source,
        "mode": mode.value,
        "workdir": workdir,
        "per_test_timeout_ms": int(limits.per_test_timeout * 1000),
        "memory_cap_bytes": limits.memory_cap_bytes,
        "compare": "exact" if strict_output else "normalized",
        "tests": [
            {
                "id": t.id,
                "kind": t.kind.value,
                "input": t.input,
                "expected": t.expected,
                **({"timeout_ms": t.timeout_ms} if t.timeout_ms is not None else {}),
            }
            for t in suite
        ],
    }
    if entrypoint is not None:
        job["entrypoint"] = entrypoint
    if collect_coverage:
        job["coverage"] = True
    return job


def _shim_env(workdir: str) -> dict[str, str]:
    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "PYTHONIOENCODING": "utf-8",
        "PYTHONHASHSEED": "0",
        "LANG": os.environ.get("LANG", "C.UTF-8"),
        "HOME": workdir,
        "TMPDIR": workdir,
    }
    if "PYTHONPATH" in os.environ:
        env["PYTHONPATH"] = os.environ["PYTHONPATH"]
    return env


def verify(
    source: str,
    suite: Sequence[TestCase],
    mode: Mode,
    entrypoint: str | None = None,
    limits: ExecutionLimits | None = None,
    shim_cmd: Sequence[str] | None = None,
    strict_output: bool = False,
    collect_coverage: bool = False,
) -> VerificationReport:
    """Execute ``source`` against ``suite`` in a sandboxed child process.

    Spawns the runner shim in a fresh working directory, streams its JSON
    result lines, kills it if the whole suite exceeds the total timeout, and
    returns a report covering every test exactly once.
    """
    limits = limits or ExecutionLimits()
    _check_preconditions(suite, mode, entrypoint)
    cmd = list(shim_cmd) if shim_cmd else default_shim_command()

    workdir = tempfile.mkdtemp(prefix="tddbench-")
    suite_timed_out = False
    try:
        job = _build_job(source, suite, mode, entrypoint, limits, workdir, strict_output, collect_coverage)
        try:
            proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=workdir,
                env=_shim_env(workdir),
                text=True,
                start_new_session=True,
            )
        except OSError as exc:
            raise InfrastructureError(f"failed to spawn sandbox process: {exc}") from exc
        try:
            stdout, stderr = proc.communicate(input=json.dumps(job), timeout=limits.total_suite_timeout)
        except subprocess.TimeoutExpired:
            suite_timed_out = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            stdout, stderr = proc.communicate()
    finally:
        shutil.rmtree(workdir, ignore_errors=True)

    if not suite_timed_out and proc.returncode != 0:
        raise InfrastructureError(
            f"sandbox shim exited with code {proc.returncode}: {stderr.strip()[:2000]}"
        )

    lines, done, error = parse_shim_output(stdout, allow_partial_tail=suite_timed_out)
    if error is not None:
        raise InfrastructureError(f"shim rejected the job: {error.get('error')}")
    if not suite_timed_out and done is None:
        raise ShimProtocolError("shim finished without a done record")

    by_id: dict[str, dict[str, Any]] = {}
    for line in lines:
        if line["test_id"] in by_id:
            raise ShimProtocolError("duplicate result for test", raw_line=json.dumps(line))
        by_id[line["test_id"]] = line

    results: list[TestResult] = []
    for test in suite:
        line = by_id.pop(test.id, None)
        if line is None:
            if not suite_timed_out:
                raise ShimProtocolError(f"shim produced no result for test {test.id}")
            results.append(
                TestResult(
                    test_id=test.id,
                    status=TestStatus.TIMEOUT,
                    input=test.input,
                    expected=test.expected,
                    diagnostic=f"suite time limit of {limits.total_suite_timeout:g}s exceeded",
                )
            )
            continue
        try:
            status = TestStatus(line["status"])
        except ValueError:
            raise ShimProtocolError("unknown test status", raw_line=json.dumps(line)) from None
        results.append(
            TestResult(
                test_id=test.id,
                status=status,
                input=test.input,
                expected=test.expected,
                actual=line.get("actual"),
                diagnostic=line.get("diagnostic") or "",
            )
        )
    if by_id:
        raise ShimProtocolError(f"shim reported unknown test ids {sorted(by_id)}")

    executed = done.get("executed_lines") if done else None
    return VerificationReport(
        results=tuple(results),
        executed_lines=tuple(executed) if executed is not None else None,
    )


def _render_value(value: Any, normalized: bool) -> str:
    if isinstance(value, str):
        return json.dumps(normalize_output(value) if normalized else value, ensure_ascii=False)
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


def format_feedback(report: VerificationReport, source: str, max_diagnostic_bytes: int = 2048) -> str:
    """Render failing tests as text an LLM can act on.

    One block per failing test: id, input, expected vs actual (normalized for
    stdout comparisons), the status name, and a truncated diagnostic.
    Deterministic for a given report.
    """
    failing = [r for r in report.results if not r.passed]
    if not failing:
        raise ValueError("format_feedback requires at least one failing test")
    parts = [f"{len(failing)} of {len(report.results)} tests failed."]
    for result in failing:
        # stdio tests carry stdin text as input; only those compare normalized
        is_stdio = isinstance(result.input, str)
        normalized = is_stdio and isinstance(result.expected, str) and isinstance(result.actual, str)
        block = [
            f"FAILED {result.test_id} [{result.status.value}]",
            f"  input: {_render_value(result.input, normalized=False)}",
            f"  expected: {_render_value(result.expected, normalized)}",
            f"  actual: {_render_value(result.actual, normalized)}",
        ]
        if result.diagnostic:
            diagnostic = result.diagnostic
            if len(diagnostic.encode("utf-8")) > max_diagnostic_bytes:
                diagnostic = diagnostic.encode("utf-8")[:max_diagnostic_bytes].decode("utf-8", "ignore") + "...[truncated]"
            block.append("  diagnostic: " + diagnostic.replace("\n", "\n    "))
        parts.append("\n".join(block))
    if report.executed_lines is not None:
        total_lines = len(source.splitlines())
        parts.append(f"Executed {len(report.executed_lines)} of {total_lines} candidate source lines.")
    return "\n\n".join(parts)

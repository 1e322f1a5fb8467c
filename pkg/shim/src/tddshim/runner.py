"""Execute one verification job: candidate source + test suite -> JSON result lines.

Protocol: a single job JSON document on stdin; one result line per test on
stdout, in suite order, each flushed as soon as it is known, followed by a
final ``{"done": true, "count": N}`` record. Exit code 0 whenever the
protocol completed (test failures included), 1 for shim-internal failure,
2 for a malformed job.
"""

import contextlib
import io
import json
import math
import os
import re
import signal
import subprocess
import sys
import time
import traceback

try:
    import resource
except ImportError:  # non-POSIX fallback, limits become no-ops
    resource = None

from . import guard

STATUS_PASS = "pass"
STATUS_WRONG = "wrong_answer"
STATUS_RUNTIME_ERROR = "runtime_error"
STATUS_TIMEOUT = "timeout"
STATUS_SETUP_ERROR = "setup_error"

DEFAULT_TIMEOUT_MS = 10_000
FLOAT_TOLERANCE = 1e-6
CANDIDATE_FILENAME = "candidate.py"
MAX_CAPTURE_BYTES = 262_144


class ShimJobError(ValueError):
    pass


class _TestTimeout(BaseException):
    # BaseException so candidate except-Exception blocks cannot swallow it
    pass


def normalize_output(raw):
    """Line endings to \\n, strip trailing whitespace per line, drop trailing blanks."""
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def values_match(expected, actual, tol=FLOAT_TOLERANCE):
    """Structural equality over JSON-shaped values, reals within tol."""
    if isinstance(expected, bool) or isinstance(actual, bool):
        return isinstance(expected, bool) and isinstance(actual, bool) and expected == actual
    if expected is None or actual is None:
        return expected is None and actual is None
    if isinstance(expected, (int, float)) and isinstance(actual, (int, float)):
        e, a = float(expected), float(actual)
        if math.isnan(e) or math.isnan(a):
            return math.isnan(e) and math.isnan(a)
        if math.isinf(e) or math.isinf(a):
            return e == a
        if isinstance(expected, int) and isinstance(actual, int):
            return expected == actual
        return abs(e - a) <= tol
    if isinstance(expected, str) and isinstance(actual, str):
        return expected == actual
    if isinstance(expected, list) and isinstance(actual, (list, tuple)):
        return len(expected) == len(actual) and all(
            values_match(e, a, tol) for e, a in zip(expected, actual)
        )
    if isinstance(expected, dict) and isinstance(actual, dict):
        return expected.keys() == actual.keys() and all(
            values_match(v, actual[k], tol) for k, v in expected.items()
        )
    return False


def entrypoint_name(signature):
    """Function name out of a signature like 'def median(a, b, c):'."""
    match = re.search(r"def\s+([A-Za-z_]\w*)", signature)
    if match:
        return match.group(1)
    match = re.match(r"\s*([A-Za-z_]\w*)", signature)
    if match:
        return match.group(1)
    raise ShimJobError(f"cannot find a function name in entrypoint {signature!r}")


_MODES = ("function_level", "full_program")
_KIND_FOR_MODE = {"function_level": "function_call", "full_program": "stdio"}


def validate_job(job):
    """Re-validate the job against the problem-model invariants; refuse anything off."""
    if not isinstance(job, dict):
        raise ShimJobError("job must be a JSON object")
    source = job.get("source")
    if not isinstance(source, str):
        raise ShimJobError("job.source must be candidate source text")
    mode = job.get("mode")
    if mode not in _MODES:
        raise ShimJobError(f"job.mode must be one of {_MODES}")
    workdir = job.get("workdir")
    if not isinstance(workdir, str) or not os.path.isdir(workdir):
        raise ShimJobError("job.workdir must be an existing directory")
    entrypoint = job.get("entrypoint")
    if mode == "function_level":
        if not isinstance(entrypoint, str) or not entrypoint:
            raise ShimJobError("function_level job requires an entrypoint signature")
        entrypoint_name(entrypoint)
    tests = job.get("tests")
    if not isinstance(tests, list) or not tests:
        raise ShimJobError("job.tests must be a non-empty list")
    want_kind = _KIND_FOR_MODE[mode]
    seen = set()
    for i, test in enumerate(tests):
        if not isinstance(test, dict):
            raise ShimJobError(f"tests[{i}] must be an object")
        for key in ("id", "kind", "input", "expected"):
            if key not in test:
                raise ShimJobError(f"tests[{i}] missing key {key!r}")
        if test["kind"] != want_kind:
            raise ShimJobError(f"tests[{i}] kind {test['kind']!r} does not match mode {mode}")
        if want_kind == "function_call" and not isinstance(test["input"], list):
            raise ShimJobError(f"tests[{i}] function_call input must be an argument list")
        if want_kind == "stdio" and not (
            isinstance(test["input"], str) and isinstance(test["expected"], str)
        ):
            raise ShimJobError(f"tests[{i}] stdio input/expected must be text")
        if test["id"] in seen:
            raise ShimJobError(f"duplicate test id {test['id']!r}")
        seen.add(test["id"])
        timeout_ms = test.get("timeout_ms")
        if timeout_ms is not None and (not isinstance(timeout_ms, int) or timeout_ms <= 0):
            raise ShimJobError(f"tests[{i}] timeout_ms must be a positive integer")
    timeout_ms = job.get("per_test_timeout_ms", DEFAULT_TIMEOUT_MS)
    if not isinstance(timeout_ms, int) or timeout_ms <= 0:
        raise ShimJobError("per_test_timeout_ms must be a positive integer")
    compare = job.get("compare", "normalized")
    if compare not in ("normalized", "exact"):
        raise ShimJobError("compare must be 'normalized' or 'exact'")
    return job


def _emit(out, obj):
    out.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
    out.flush()


def _json_safe(value):
    try:
        json.dumps(value)
        return value
    except (TypeError, ValueError):
        return repr(value)


def _clip(text):
    if len(text) > MAX_CAPTURE_BYTES:
        return text[:MAX_CAPTURE_BYTES] + "\n...[truncated]"
    return text


def _sanitize(text, workdir):
    return text.replace(workdir.rstrip(os.sep), "<workdir>")


@contextlib.contextmanager
def _deadline(seconds):
    if not hasattr(signal, "setitimer"):
        yield
        return

    def _on_alarm(_signum, _frame):
        raise _TestTimeout()

    previous = signal.signal(signal.SIGALRM, _on_alarm)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, previous)


def _candidate_traceback(exc):
    """Traceback text restricted to candidate frames, so paths stay stable."""
    tb_exc = traceback.TracebackException.from_exception(exc)
    frames = [f for f in tb_exc.stack if f.filename == CANDIDATE_FILENAME]
    parts = []
    if frames:
        parts.append("Traceback (most recent call last):\n")
        parts.extend(traceback.StackSummary.from_list(frames).format())
    parts.extend(tb_exc.format_exception_only())
    return "".join(parts)


class _CoverageTracer:
    """Collects executed line numbers of the candidate file via sys.settrace."""

    def __init__(self):
        self.lines = set()

    def global_trace(self, frame, event, _arg):
        if frame.f_code.co_filename == CANDIDATE_FILENAME:
            return self.local_trace
        return None

    def local_trace(self, frame, event, _arg):
        if event == "line":
            self.lines.add(frame.f_lineno)
        return self.local_trace


def _apply_memory_cap(cap_bytes):
    if resource is None or not cap_bytes:
        return
    try:
        resource.setrlimit(resource.RLIMIT_AS, (cap_bytes, cap_bytes))
    except (ValueError, OSError):
        pass


def _setup_error_all(out, tests, diagnostic):
    for test in tests:
        _emit(out, {
            "test_id": test["id"],
            "status": STATUS_SETUP_ERROR,
            "actual": None,
            "diagnostic": diagnostic,
            "elapsed_ms": 0,
        })
    _emit(out, {"done": True, "count": len(tests)})
    return 0


def _run_function_level(job, out):
    workdir = job["workdir"]
    tests = job["tests"]
    default_timeout = job.get("per_test_timeout_ms", DEFAULT_TIMEOUT_MS) / 1000.0
    tracer = _CoverageTracer() if job.get("coverage") else None

    with open(os.path.join(workdir, CANDIDATE_FILENAME), "w", encoding="utf-8") as fh:
        fh.write(job["source"])

    _apply_memory_cap(job.get("memory_cap_bytes"))
    guard.install(workdir)

    namespace = {"__name__": "candidate"}
    if tracer:
        sys.settrace(tracer.global_trace)
    try:
        code = compile(job["source"], CANDIDATE_FILENAME, "exec")
        with _deadline(default_timeout), contextlib.redirect_stdout(io.StringIO()), \
                contextlib.redirect_stderr(io.StringIO()):
            exec(code, namespace)
        fn = namespace.get(entrypoint_name(job["entrypoint"]))
        if not callable(fn):
            raise NameError(f"entrypoint {job['entrypoint']!r} not defined by candidate")
    except _TestTimeout:
        sys.settrace(None)
        return _setup_error_all(out, tests, "candidate timed out while loading")
    except BaseException as exc:
        sys.settrace(None)
        return _setup_error_all(out, tests, _sanitize(_candidate_traceback(exc), workdir))

    count = 0
    for test in tests:
        timeout_s = (test.get("timeout_ms") or default_timeout * 1000) / 1000.0
        started = time.monotonic()
        status, actual, diagnostic = STATUS_RUNTIME_ERROR, None, ""
        try:
            with _deadline(timeout_s), contextlib.redirect_stdout(io.StringIO()), \
                    contextlib.redirect_stderr(io.StringIO()):
                sys.stdin = io.StringIO("")
                returned = fn(*test["input"])
            actual = _json_safe(returned)
            status = STATUS_PASS if values_match(test["expected"], returned) else STATUS_WRONG
        except _TestTimeout:
            status, diagnostic = STATUS_TIMEOUT, f"no result within {timeout_s:g}s"
        except MemoryError:
            status, diagnostic = STATUS_RUNTIME_ERROR, "memory limit exceeded"
        except BaseException as exc:
            status = STATUS_RUNTIME_ERROR
            diagnostic = _sanitize(_candidate_traceback(exc), workdir)
        finally:
            sys.stdin = sys.__stdin__
        _emit(out, {
            "test_id": test["id"],
            "status": status,
            "actual": actual,
            "diagnostic": diagnostic,
            "elapsed_ms": int((time.monotonic() - started) * 1000),
        })
        count += 1

    if tracer:
        sys.settrace(None)
    done = {"done": True, "count": count}
    if tracer:
        done["executed_lines"] = sorted(tracer.lines)
    _emit(out, done)
    return 0


_GUARD_DIR = ".sandbox"


def _write_guard_dir(workdir):
    guard_dir = os.path.join(workdir, _GUARD_DIR)
    os.makedirs(guard_dir, exist_ok=True)
    with open(guard.__file__, encoding="utf-8") as src:
        guard_source = src.read()
    with open(os.path.join(guard_dir, "sitecustomize.py"), "w", encoding="utf-8") as dst:
        dst.write(guard_source)
    return guard_dir


def _child_env(workdir, guard_dir):
    return {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "PYTHONPATH": guard_dir,
        "TDDSHIM_ALLOWED_ROOT": workdir,
        "PYTHONIOENCODING": "utf-8",
        "PYTHONHASHSEED": "0",
        "HOME": workdir,
        "TMPDIR": workdir,
        "LANG": os.environ.get("LANG", "C.UTF-8"),
    }


def _run_full_program(job, out):
    workdir = job["workdir"]
    tests = job["tests"]
    default_timeout_ms = job.get("per_test_timeout_ms", DEFAULT_TIMEOUT_MS)
    compare_exact = job.get("compare", "normalized") == "exact"

    candidate_path = os.path.join(workdir, CANDIDATE_FILENAME)
    with open(candidate_path, "w", encoding="utf-8") as fh:
        fh.write(job["source"])

    # cheap pre-flight so a syntax error is one setup_error, not N runtime errors
    try:
        compile(job["source"], CANDIDATE_FILENAME, "exec")
    except (SyntaxError, ValueError) as exc:
        return _setup_error_all(out, tests, _sanitize(_candidate_traceback(exc), workdir))

    guard_dir = _write_guard_dir(workdir)
    env = _child_env(workdir, guard_dir)
    memory_cap = job.get("memory_cap_bytes")

    def _preexec():
        _apply_memory_cap(memory_cap)

    count = 0
    for test in tests:
        timeout_s = (test.get("timeout_ms") or default_timeout_ms) / 1000.0
        started = time.monotonic()
        status, actual, diagnostic = STATUS_RUNTIME_ERROR, None, ""
        try:
            proc = subprocess.Popen(
                [sys.executable, CANDIDATE_FILENAME],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=workdir,
                env=env,
                text=True,
                start_new_session=True,
                preexec_fn=_preexec if resource else None,
            )
        except OSError as exc:
            _emit(out, {
                "test_id": test["id"],
                "status": STATUS_RUNTIME_ERROR,
                "actual": None,
                "diagnostic": f"failed to spawn candidate: {exc}",
                "elapsed_ms": 0,
            })
            count += 1
            continue
        try:
            stdout, stderr = proc.communicate(input=test["input"], timeout=timeout_s)
            if proc.returncode != 0:
                status = STATUS_RUNTIME_ERROR
                diagnostic = _sanitize(_clip(stderr), workdir)
                actual = _clip(stdout)
            else:
                actual = _clip(stdout)
                if compare_exact:
                    ok = stdout == test["expected"]
                else:
                    ok = normalize_output(stdout) == normalize_output(test["expected"])
                status = STATUS_PASS if ok else STATUS_WRONG
                diagnostic = ""
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            proc.communicate()
            status, diagnostic = STATUS_TIMEOUT, f"no result within {timeout_s:g}s"
        _emit(out, {
            "test_id": test["id"],
            "status": status,
            "actual": actual,
            "diagnostic": diagnostic,
            "elapsed_ms": int((time.monotonic() - started) * 1000),
        })
        count += 1

    _emit(out, {"done": True, "count": count})
    return 0


def execute_job(job, out):
    """Run one validated job, emitting protocol lines to ``out``."""
    os.chdir(job["workdir"])
    if job["mode"] == "function_level":
        return _run_function_level(job, out)
    return _run_full_program(job, out)


def main(argv=None):
    out = sys.stdout
    try:
        raw = sys.stdin.read()
        try:
            job = json.loads(raw)
        except json.JSONDecodeError as exc:
            _emit(out, {"error": f"malformed job JSON: {exc.msg}"})
            return 2
        try:
            job = validate_job(job)
        except ShimJobError as exc:
            _emit(out, {"error": str(exc)})
            return 2
        return execute_job(job, out)
    except Exception:
        traceback.print_exc(file=sys.stderr)
        return 1

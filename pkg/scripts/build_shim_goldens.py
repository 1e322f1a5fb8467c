#!/usr/bin/env python3
"""Regenerate the shim protocol golden files under shim/tests/golden/.

Each golden pairs a job JSON (workdir filled in at run time) with the shim's
output, elapsed_ms zeroed since wall time is the one non-deterministic field.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
from pathlib import Path

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "shim" / "tests" / "golden"

ADD_SOURCE = "def add_nums(a, b):\n    return a + b\n"
BROKEN_SOURCE = "def broken(:\n"
MIXED_SOURCE = (
    "def probe(x):\n"
    "    if x == 'boom':\n"
    "        raise RuntimeError('exploded')\n"
    "    if x == 'spin':\n"
    "        while True:\n"
    "            pass\n"
    "    return x * 2\n"
)

JOBS = {
    "all_pass": {
        "source": ADD_SOURCE,
        "mode": "function_level",
        "entrypoint": "def add_nums(a, b):",
        "per_test_timeout_ms": 2000,
        "tests": [
            {"id": "t1", "kind": "function_call", "input": [2, 3], "expected": 5},
            {"id": "t2", "kind": "function_call", "input": [-1, 1], "expected": 0},
        ],
    },
    "setup_error": {
        "source": BROKEN_SOURCE,
        "mode": "function_level",
        "entrypoint": "def broken(x):",
        "per_test_timeout_ms": 2000,
        "tests": [
            {"id": "a", "kind": "function_call", "input": [1], "expected": 1},
            {"id": "b", "kind": "function_call", "input": [2], "expected": 2},
            {"id": "c", "kind": "function_call", "input": [3], "expected": 3},
        ],
    },
    "mixed": {
        "source": MIXED_SOURCE,
        "mode": "function_level",
        "entrypoint": "def probe(x):",
        "per_test_timeout_ms": 500,
        "tests": [
            {"id": "ok", "kind": "function_call", "input": [3], "expected": 6},
            {"id": "wrong", "kind": "function_call", "input": [4], "expected": 9},
            {"id": "crash", "kind": "function_call", "input": ["boom"], "expected": 0},
            {"id": "hang", "kind": "function_call", "input": ["spin"], "expected": 0},
        ],
    },
}


def zero_elapsed(stdout: str) -> str:
    lines = []
    for line in stdout.splitlines():
        obj = json.loads(line)
        if "elapsed_ms" in obj:
            obj["elapsed_ms"] = 0
        lines.append(json.dumps(obj, ensure_ascii=False, sort_keys=True))
    return "\n".join(lines) + "\n"


def main() -> int:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    for name, job in JOBS.items():
        with tempfile.TemporaryDirectory() as workdir:
            proc = subprocess.run(
                [sys.executable, "-m", "tddshim"],
                input=json.dumps({**job, "workdir": workdir}),
                capture_output=True,
                text=True,
                timeout=60,
            )
        if proc.returncode != 0:
            raise SystemExit(f"{name}: shim exited {proc.returncode}: {proc.stderr}")
        (GOLDEN_DIR / f"{name}.job.json").write_text(
            json.dumps(job, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        (GOLDEN_DIR / f"{name}.golden.jsonl").write_text(zero_elapsed(proc.stdout), encoding="utf-8")
        print(f"{name}: {len(proc.stdout.splitlines())} lines")
    print(f"goldens written to {GOLDEN_DIR}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

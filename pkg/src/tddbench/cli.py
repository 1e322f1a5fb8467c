"""Command line interface: run, report, validate.

Exit codes: 0 success, 2 dataset/validation errors, 3 infrastructure failure
(sandbox, transport, replay miss).
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .agents import load_template_set
from .bench import (
    Criterion,
    GradingError,
    grade_transcripts,
    halt_reason_counts,
    render_report,
    summarize,
)
from .engine import (
    CompletionEngine,
    EngineError,
    OpenAIChatBackend,
    ReplayStore,
    RequestSettings,
    StoreMode,
)
from .loop import LoopConfig, StagesEnabled, load_transcripts, run_problem, save_transcript
from .problems import DatasetError, load_dataset_path
from .verifier import ExecutionLimits, InfrastructureError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFRASTRUCTURE = 3


def _add_dataset_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True, help="path to a JSONL dataset file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tddbench")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the generation pipeline over a dataset")
    _add_dataset_arg(run)
    run.add_argument("--backend", choices=["live", "record", "replay"], required=True)
    run.add_argument("--store", help="replay store JSONL path (required for record/replay)")
    run.add_argument("--criterion", choices=[c.value for c in Criterion], default="public")
    run.add_argument("--max-iters", type=int, default=5)
    run.add_argument("--repeat-cutoff", type=int, default=3)
    run.add_argument("--seed", type=int, default=1106)
    run.add_argument("--temperature", type=float, default=0.0)
    run.add_argument("--max-tokens", type=int, default=4096)
    run.add_argument("--model", default="gpt-4-turbo")
    run.add_argument("--template-set", default="default")
    run.add_argument("--workers", type=int, default=4)
    run.add_argument("--out", required=True, help="directory for per-problem transcripts")
    run.add_argument("--per-test-timeout", type=float, default=10.0)
    run.add_argument("--suite-timeout", type=float, default=120.0)
    run.add_argument("--api-key-env", default="PROVIDER_API_KEY")
    run.add_argument("--base-url", default="https://api.openai.com/v1")
    run.add_argument("--format", choices=["json", "csv", "table"], default="table")

    report = sub.add_parser("report", help="grade stored transcripts and render a report")
    _add_dataset_arg(report)
    report.add_argument("--transcripts", required=True, help="directory of transcript JSON files")
    report.add_argument("--criterion", choices=[c.value for c in Criterion], default="public")
    report.add_argument("--format", choices=["json", "csv", "table"], default="table")

    validate = sub.add_parser("validate", help="check a dataset file against the schema")
    _add_dataset_arg(validate)
    return parser


def _build_engine(args: argparse.Namespace) -> CompletionEngine:
    settings = RequestSettings(
        model_id=args.model,
        temperature=args.temperature,
        seed=args.seed,
        max_tokens=args.max_tokens,
    )
    if args.backend == "replay":
        if not args.store:
            raise SystemExit("--store is required for replay mode")
        store = ReplayStore(args.store, StoreMode.REPLAY)
        return CompletionEngine(backend=None, store=store, settings=settings)
    backend = OpenAIChatBackend(base_url=args.base_url, api_key_env=args.api_key_env)
    if args.backend == "record":
        if not args.store:
            raise SystemExit("--store is required for record mode")
        store = ReplayStore(args.store, StoreMode.RECORD)
        return CompletionEngine(backend=backend, store=store, settings=settings)
    return CompletionEngine(backend=backend, store=None, settings=settings)


def _cmd_run(args: argparse.Namespace) -> int:
    dataset = load_dataset_path(args.dataset)
    template = load_template_set(args.template_set)
    engine = _build_engine(args)
    config = LoopConfig(
        max_iterations=args.max_iters,
        repeat_failure_cutoff=args.repeat_cutoff,
        stages=StagesEnabled(),
    )
    limits = ExecutionLimits(
        per_test_timeout=args.per_test_timeout,
        total_suite_timeout=args.suite_timeout,
    )
    out_dir = Path(args.out)

    def run_one(problem):
        transcript = run_problem(problem, config, engine, template, limits=limits)
        save_transcript(transcript, out_dir)
        return transcript

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        transcripts = list(pool.map(run_one, dataset.problems))

    criterion = Criterion(args.criterion)
    graded = grade_transcripts(transcripts, dataset, criterion, limits=limits)
    report = summarize(graded, dataset, criterion, halt_reason_counts(transcripts, graded))
    sys.stdout.write(render_report(report, args.format))
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    dataset = load_dataset_path(args.dataset)
    transcripts = load_transcripts(args.transcripts)
    criterion = Criterion(args.criterion)
    graded = grade_transcripts(transcripts, dataset, criterion)
    report = summarize(graded, dataset, criterion, halt_reason_counts(transcripts, graded))
    sys.stdout.write(render_report(report, args.format))
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    dataset = load_dataset_path(args.dataset)
    modes = {p.mode.value: 0 for p in dataset.problems}
    for problem in dataset.problems:
        modes[problem.mode.value] += 1
    mode_text = ", ".join(f"{count} {mode}" for mode, count in sorted(modes.items())) or "empty"
    print(f"ok: {dataset.name} with {len(dataset)} problems ({mode_text})")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        return _cmd_validate(args)
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GradingError as exc:
        print(f"grading error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InfrastructureError, EngineError) as exc:
        print(f"infrastructure failure: {exc}", file=sys.stderr)
        return EXIT_INFRASTRUCTURE


if __name__ == "__main__":
    sys.exit(main())

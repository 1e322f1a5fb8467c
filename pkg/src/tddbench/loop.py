"""Escalation state machine for one problem.

Stage A: coder sees the prompt alone. Stage B: fresh generation with the
public tests rendered into the prompt. Stage C: analyze -> advise ->
regenerate -> verify, bounded by an iteration cap and a repeated-failure
cutoff (the same failing set seen a configured number of times in a row).
Every attempt lands in a transcript that is self-contained for replay audit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

from .agents import (
    AgentError,
    AgentExchange,
    AgentKind,
    CodeExtractionError,
    PromptTemplate,
    analyze_failures,
    build_coder_prompt,
    extract_code,
    propose_remediation,
)
from .engine import (
    CompletionEngine,
    canonical_digest,
    request_from_dict,
    request_to_dict,
    result_from_dict,
    result_to_dict,
)
from .problems import Problem, split_suites
from .verifier import ExecutionLimits, VerificationReport, format_feedback, verify


class Stage(str, Enum):
    PROMPT_ONLY = "prompt_only"
    WITH_TESTS = "with_tests"
    REMEDIATION = "remediation"


class Category(str, Enum):
    SOLVED_WITHOUT_TESTS = "solved_without_tests"
    SOLVED_WITH_TESTS = "solved_with_tests"
    SOLVED_WITH_REMEDIATION = "solved_with_remediation"
    UNSOLVED = "unsolved"


SOLVED_CATEGORIES = (
    Category.SOLVED_WITHOUT_TESTS,
    Category.SOLVED_WITH_TESTS,
    Category.SOLVED_WITH_REMEDIATION,
)

_CATEGORY_FOR_STAGE = {
    Stage.PROMPT_ONLY: Category.SOLVED_WITHOUT_TESTS,
    Stage.WITH_TESTS: Category.SOLVED_WITH_TESTS,
    Stage.REMEDIATION: Category.SOLVED_WITH_REMEDIATION,
}


class HaltReason(str, Enum):
    PASSED = "passed"
    ITERATION_CAP = "iteration_cap"
    REPEATED_FAILURES = "repeated_failures"
    AGENT_ERROR = "agent_error"


class StopDecision(str, Enum):
    CONTINUE = "continue"
    STOP_ITERATION_CAP = "stop_iteration_cap"
    STOP_REPEATED = "stop_repeated"


@dataclass(frozen=True)
class StagesEnabled:
    prompt_only: bool = True
    with_tests: bool = True
    remediation: bool = True


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 5
    repeat_failure_cutoff: int = 3
    stages: StagesEnabled = field(default_factory=StagesEnabled)

    def __post_init__(self) -> None:
        if self.max_iterations < 1 or self.repeat_failure_cutoff < 1:
            raise ValueError("iteration bounds must be positive")
        if self.repeat_failure_cutoff > self.max_iterations:
            raise ValueError("repeat_failure_cutoff must not exceed max_iterations")


@dataclass(frozen=True)
class Attempt:
    """One generation + verification round.

    ``failing_ids`` is this attempt's contribution to the stage C failing
    history: the report's failing set, or the whole public suite when code
    extraction failed. None for a passing attempt or a round cut short by an
    agent error.
    """

    stage: Stage
    iteration: int
    source: str | None
    report: VerificationReport | None
    exchanges: tuple[AgentExchange, ...]
    failing_ids: frozenset[str] | None

    def __post_init__(self) -> None:
        if self.stage is Stage.REMEDIATION and self.iteration < 1:
            raise ValueError("remediation attempts start at iteration 1")
        if self.stage is not Stage.REMEDIATION and self.iteration != 0:
            raise ValueError("only remediation attempts carry an iteration number")

    @property
    def passed(self) -> bool:
        return self.report is not None and self.report.all_passed


@dataclass(frozen=True)
class RunOutcome:
    category: Category
    final_source: str | None
    halt_reason: HaltReason

    def __post_init__(self) -> None:
        if self.category in SOLVED_CATEGORIES and self.final_source is None:
            raise ValueError("a solved outcome requires final_source")


@dataclass(frozen=True)
class RunTranscript:
    problem_id: str
    attempts: tuple[Attempt, ...]
    outcome: RunOutcome
    config: LoopConfig
    template_set: str
    backend_id: str


def should_stop(failing_history: Sequence[frozenset[str]], config: LoopConfig) -> StopDecision:
    """Stopping rule over the ordered stage C failing sets.

    Stop when the last ``repeat_failure_cutoff`` entries are set-equal, or
    when ``max_iterations`` verifications have happened; the repeated-failure
    check wins when both hold.
    """
    n = len(failing_history)
    cutoff = config.repeat_failure_cutoff
    if n >= cutoff:
        tail = failing_history[-cutoff:]
        if all(entry == tail[0] for entry in tail):
            return StopDecision.STOP_REPEATED
    if n >= config.max_iterations:
        return StopDecision.STOP_ITERATION_CAP
    return StopDecision.CONTINUE


def run_problem(
    problem: Problem,
    config: LoopConfig,
    engine: CompletionEngine,
    template: PromptTemplate,
    limits: ExecutionLimits | None = None,
    shim_cmd: Sequence[str] | None = None,
) -> RunTranscript:
    """Drive one problem through the enabled stages and return its transcript.

    Agent-level failures become an unsolved outcome; infrastructure failures
    (sandbox, transport, replay misses) propagate as exceptions and are not
    outcomes at all.
    """
    settings = engine.settings
    public_suite, _ = split_suites(problem)
    full_failing = frozenset(t.id for t in public_suite)
    attempts: list[Attempt] = []
    last_source: str | None = None
    last_report: VerificationReport | None = None

    def finish(category: Category, final_source: str | None, halt: HaltReason) -> RunTranscript:
        return RunTranscript(
            problem_id=problem.id,
            attempts=tuple(attempts),
            outcome=RunOutcome(category=category, final_source=final_source, halt_reason=halt),
            config=config,
            template_set=template.id,
            backend_id=engine.backend_id,
        )

    def coder_round(
        stage: Stage,
        iteration: int,
        include_tests: bool,
        advice: str | None = None,
        prior_code: str | None = None,
        lead_exchanges: tuple[AgentExchange, ...] = (),
    ) -> Attempt:
        request = build_coder_prompt(
            problem, include_tests, advice, prior_code, template=template, settings=settings
        )
        result = engine.complete(request)
        try:
            source = extract_code(result.text)
        except CodeExtractionError:
            exchange = AgentExchange(AgentKind.CODER, request, result, parsed=None)
            return Attempt(stage, iteration, None, None, lead_exchanges + (exchange,), full_failing)
        exchange = AgentExchange(AgentKind.CODER, request, result, parsed=source)
        report = verify(
            source, public_suite, problem.mode, problem.entrypoint, limits=limits, shim_cmd=shim_cmd
        )
        return Attempt(
            stage,
            iteration,
            source,
            report,
            lead_exchanges + (exchange,),
            None if report.all_passed else report.failing_set,
        )

    def note(attempt: Attempt) -> None:
        nonlocal last_source, last_report
        attempts.append(attempt)
        if attempt.source is not None and attempt.report is not None:
            last_source, last_report = attempt.source, attempt.report

    if config.stages.prompt_only:
        attempt = coder_round(Stage.PROMPT_ONLY, 0, include_tests=False)
        note(attempt)
        if attempt.passed:
            return finish(Category.SOLVED_WITHOUT_TESTS, attempt.source, HaltReason.PASSED)

    if config.stages.with_tests:
        # fresh generation, no carryover from stage A
        attempt = coder_round(Stage.WITH_TESTS, 0, include_tests=True)
        note(attempt)
        if attempt.passed:
            return finish(Category.SOLVED_WITH_TESTS, attempt.source, HaltReason.PASSED)

    if not config.stages.remediation:
        return finish(Category.UNSOLVED, None, HaltReason.ITERATION_CAP)

    if last_source is None or last_report is None:
        # nothing extractable to analyze: the coder never produced code
        return finish(Category.UNSOLVED, None, HaltReason.AGENT_ERROR)

    failing_history: list[frozenset[str]] = []
    iteration = 0
    while True:
        iteration += 1
        try:
            feedback = format_feedback(last_report, last_source)
            analyzer = analyze_failures(
                feedback,
                last_source,
                engine,
                template=template,
                settings=settings,
                problem_prompt=problem.prompt,
            )
            advisor = propose_remediation(
                analyzer.parsed, last_source, engine, template=template, settings=settings
            )
        except AgentError:
            attempts.append(Attempt(Stage.REMEDIATION, iteration, None, None, (), None))
            return finish(Category.UNSOLVED, None, HaltReason.AGENT_ERROR)
        attempt = coder_round(
            Stage.REMEDIATION,
            iteration,
            include_tests=True,
            advice=advisor.parsed,
            prior_code=last_source,
            lead_exchanges=(analyzer, advisor),
        )
        note(attempt)
        if attempt.passed:
            return finish(Category.SOLVED_WITH_REMEDIATION, attempt.source, HaltReason.PASSED)
        assert attempt.failing_ids is not None
        failing_history.append(attempt.failing_ids)
        decision = should_stop(failing_history, config)
        if decision is StopDecision.STOP_REPEATED:
            return finish(Category.UNSOLVED, None, HaltReason.REPEATED_FAILURES)
        if decision is StopDecision.STOP_ITERATION_CAP:
            return finish(Category.UNSOLVED, None, HaltReason.ITERATION_CAP)


def classify_outcome(transcript: RunTranscript) -> RunOutcome:
    """Recompute the outcome from the attempts alone (pure, deterministic)."""
    for attempt in transcript.attempts:
        if attempt.passed:
            return RunOutcome(
                category=_CATEGORY_FOR_STAGE[attempt.stage],
                final_source=attempt.source,
                halt_reason=HaltReason.PASSED,
            )
    config = transcript.config
    if not config.stages.remediation:
        return RunOutcome(Category.UNSOLVED, None, HaltReason.ITERATION_CAP)
    history = [
        a.failing_ids
        for a in transcript.attempts
        if a.stage is Stage.REMEDIATION and a.failing_ids is not None
    ]
    decision = should_stop(history, config)
    if decision is StopDecision.STOP_REPEATED:
        return RunOutcome(Category.UNSOLVED, None, HaltReason.REPEATED_FAILURES)
    if decision is StopDecision.STOP_ITERATION_CAP:
        return RunOutcome(Category.UNSOLVED, None, HaltReason.ITERATION_CAP)
    return RunOutcome(Category.UNSOLVED, None, HaltReason.AGENT_ERROR)


# --- transcript (de)serialization -----------------------------------------


def _exchange_to_dict(exchange: AgentExchange) -> dict[str, Any]:
    return {
        "agent": exchange.agent.value,
        "digest": canonical_digest(exchange.request),
        "request": request_to_dict(exchange.request),
        "result": result_to_dict(exchange.result),
        "parsed": exchange.parsed,
    }


def _exchange_from_dict(obj: dict[str, Any]) -> AgentExchange:
    return AgentExchange(
        agent=AgentKind(obj["agent"]),
        request=request_from_dict(obj["request"]),
        result=result_from_dict(obj["result"]),
        parsed=obj.get("parsed"),
    )


def transcript_to_dict(transcript: RunTranscript) -> dict[str, Any]:
    return {
        "problem_id": transcript.problem_id,
        "template_set": transcript.template_set,
        "backend_id": transcript.backend_id,
        "config": {
            "max_iterations": transcript.config.max_iterations,
            "repeat_failure_cutoff": transcript.config.repeat_failure_cutoff,
            "stages": {
                "prompt_only": transcript.config.stages.prompt_only,
                "with_tests": transcript.config.stages.with_tests,
                "remediation": transcript.config.stages.remediation,
            },
        },
        "attempts": [
            {
                "stage": a.stage.value,
                "iteration": a.iteration,
                "source": a.source,
                "failing_ids": sorted(a.failing_ids) if a.failing_ids is not None else None,
                "report": a.report.to_dict() if a.report is not None else None,
                "exchanges": [_exchange_to_dict(e) for e in a.exchanges],
            }
            for a in transcript.attempts
        ],
        "outcome": {
            "category": transcript.outcome.category.value,
            "halt_reason": transcript.outcome.halt_reason.value,
            "final_source": transcript.outcome.final_source,
        },
    }


def transcript_from_dict(obj: dict[str, Any]) -> RunTranscript:
    config = LoopConfig(
        max_iterations=obj["config"]["max_iterations"],
        repeat_failure_cutoff=obj["config"]["repeat_failure_cutoff"],
        stages=StagesEnabled(**obj["config"]["stages"]),
    )
    attempts = tuple(
        Attempt(
            stage=Stage(a["stage"]),
            iteration=a["iteration"],
            source=a.get("source"),
            report=VerificationReport.from_dict(a["report"]) if a.get("report") else None,
            exchanges=tuple(_exchange_from_dict(e) for e in a.get("exchanges", [])),
            failing_ids=frozenset(a["failing_ids"]) if a.get("failing_ids") is not None else None,
        )
        for a in obj["attempts"]
    )
    outcome = RunOutcome(
        category=Category(obj["outcome"]["category"]),
        final_source=obj["outcome"].get("final_source"),
        halt_reason=HaltReason(obj["outcome"]["halt_reason"]),
    )
    return RunTranscript(
        problem_id=obj["problem_id"],
        attempts=attempts,
        outcome=outcome,
        config=config,
        template_set=obj["template_set"],
        backend_id=obj["backend_id"],
    )


def transcript_to_json(transcript: RunTranscript) -> str:
    return json.dumps(transcript_to_dict(transcript), ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def save_transcript(transcript: RunTranscript, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    safe_id = "".join(c if c.isalnum() or c in "-_." else "_" for c in transcript.problem_id)
    path = directory / f"{safe_id}.json"
    path.write_text(transcript_to_json(transcript), encoding="utf-8")
    return path


def load_transcripts(directory: str | Path) -> list[RunTranscript]:
    directory = Path(directory)
    transcripts = []
    for path in sorted(directory.glob("*.json")):
        transcripts.append(transcript_from_dict(json.loads(path.read_text(encoding="utf-8"))))
    return transcripts

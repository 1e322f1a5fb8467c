"""The three pipeline agents: coder, analyzer, remediation.

Prompt wording lives in plain-text template sets (one file per section,
``{slot}`` markers), referenced by id in transcripts so runs stay
comparable. This module owns prompt assembly and response parsing only;
the loop controller decides when each agent is called.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

from .engine import (
    CompletionEngine,
    CompletionRequest,
    CompletionResult,
    Message,
    RequestSettings,
    canonical_digest,
)
from .problems import Mode, Problem, TestCase, TestKind


class AgentKind(str, Enum):
    CODER = "coder"
    ANALYZER = "analyzer"
    REMEDIATION = "remediation"


class AgentError(Exception):
    """An agent produced an unusable completion (empty or error-terminated)."""


class CodeExtractionError(Exception):
    """No code could be extracted from the completion text."""


_SECTIONS = (
    "coder_system",
    "coder_task",
    "coder_function",
    "coder_program",
    "coder_tests",
    "coder_remediation",
    "analyzer_system",
    "analyzer_user",
    "remediation_system",
    "remediation_user",
)


@dataclass(frozen=True)
class PromptTemplate:
    """A named set of message skeleton sections with {slot} markers."""

    id: str
    sections: dict[str, str]

    def __post_init__(self) -> None:
        missing = [s for s in _SECTIONS if s not in self.sections]
        if missing:
            raise ValueError(f"template set {self.id!r} is missing sections {missing}")

    def render(self, section: str, **slots: str) -> str:
        return self.sections[section].format(**slots).strip()


def builtin_template_dir() -> Path:
    return Path(__file__).parent / "templates"


def load_template_set(name_or_path: str) -> PromptTemplate:
    """Load a template set by built-in name or directory path."""
    path = Path(name_or_path)
    if not path.is_dir():
        path = builtin_template_dir() / name_or_path
    if not path.is_dir():
        raise FileNotFoundError(f"no template set named {name_or_path!r}")
    sections = {f.stem: f.read_text(encoding="utf-8") for f in sorted(path.glob("*.txt"))}
    return PromptTemplate(id=path.name, sections=sections)


@dataclass(frozen=True)
class AgentExchange:
    """One agent call: the request, the raw result, and the parsed payload."""

    agent: AgentKind
    request: CompletionRequest
    result: CompletionResult
    parsed: str | None

    @property
    def digest(self) -> str:
        return canonical_digest(self.request)


def render_tests(tests: Sequence[TestCase]) -> str:
    """One line per test with id, input, and expected value, JSON-encoded."""
    lines = []
    for test in tests:
        if test.kind is TestKind.FUNCTION_CALL:
            lines.append(
                f"- {test.id}: arguments {json.dumps(test.input, ensure_ascii=False)}"
                f" must return {json.dumps(test.expected, ensure_ascii=False)}"
            )
        else:
            lines.append(
                f"- {test.id}: stdin {json.dumps(test.input, ensure_ascii=False)}"
                f" must print {json.dumps(test.expected, ensure_ascii=False)}"
            )
    return "\n".join(lines)


def build_coder_prompt(
    problem: Problem,
    include_tests: bool,
    advice: str | None = None,
    prior_code: str | None = None,
    *,
    template: PromptTemplate,
    settings: RequestSettings,
) -> CompletionRequest:
    """Assemble the coder request for any stage.

    Tests appear iff ``include_tests``; advice and prior code appear iff this
    is a remediation round (advice implies prior_code).
    """
    if advice is not None and prior_code is None:
        raise ValueError("advice without prior_code: remediation rounds carry both")
    parts = [template.render("coder_task", title=problem.title, prompt=problem.prompt)]
    if problem.mode is Mode.FUNCTION_LEVEL:
        parts.append(template.render("coder_function", entrypoint=problem.entrypoint))
    else:
        parts.append(template.render("coder_program"))
    if include_tests:
        parts.append(template.render("coder_tests", tests=render_tests(problem.public_tests)))
    if advice is not None:
        parts.append(template.render("coder_remediation", prior_code=prior_code, advice=advice))
    return CompletionRequest(
        model_id=settings.model_id,
        messages=(
            Message("system", template.render("coder_system")),
            Message("user", "\n\n".join(parts)),
        ),
        temperature=settings.temperature,
        seed=settings.seed,
        max_tokens=settings.max_tokens,
    )


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)

#: First-token heuristics for unfenced completions that are plausibly code.
DEFAULT_CODE_STARTERS = (
    "def", "class", "import", "from", "if", "for", "while", "try", "with",
    "return", "print", "async", "assert", "lambda", "yield", "global", "del",
)
_PREFIX_STARTERS = ("#", "@", '"""', "'''")
_ASSIGNMENT_RE = re.compile(r"[A-Za-z_][\w.\[\]'\" ,()]*=[^=]")


def _plausible_code(text: str) -> bool:
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith(_PREFIX_STARTERS):
            return True
        first = re.split(r"[\s(:]", stripped, maxsplit=1)[0]
        if first in DEFAULT_CODE_STARTERS:
            return True
        return bool(_ASSIGNMENT_RE.match(stripped))
    return False


def extract_code(text: str, prefer_last: bool = True) -> str:
    """Pull source code out of a completion.

    Contents of the last complete fenced block win (models often emit a
    corrected final block after discussion); set ``prefer_last=False`` for
    first-block behavior. Unfenced text is returned whole when it plausibly
    starts as code; otherwise extraction fails.
    """
    blocks = _FENCE_RE.findall(text)
    if blocks:
        block = blocks[-1] if prefer_last else blocks[0]
        return block.strip("\n").rstrip()
    if _plausible_code(text):
        return text.strip("\n").rstrip()
    raise CodeExtractionError("completion contains no extractable code")


def _call_agent(
    agent: AgentKind,
    system_section: str,
    user_text: str,
    engine: CompletionEngine,
    template: PromptTemplate,
    settings: RequestSettings,
) -> AgentExchange:
    request = CompletionRequest(
        model_id=settings.model_id,
        messages=(Message("system", template.render(system_section)), Message("user", user_text)),
        temperature=settings.temperature,
        seed=settings.seed,
        max_tokens=settings.max_tokens,
    )
    result = engine.complete(request)
    text = result.text.strip()
    if result.finish_reason == "error" or not text:
        raise AgentError(f"{agent.value} agent returned an empty completion")
    return AgentExchange(agent=agent, request=request, result=result, parsed=text)


def analyze_failures(
    feedback: str,
    source: str,
    engine: CompletionEngine,
    *,
    template: PromptTemplate,
    settings: RequestSettings,
    problem_prompt: str = "",
) -> AgentExchange:
    """One analyzer call over verifier feedback; returns the diagnosis exchange.

    The problem prompt is included by default for extra context.
    """
    if not feedback.strip():
        raise ValueError("analyze_failures requires non-empty feedback")
    user = template.render(
        "analyzer_user", prompt=problem_prompt, prior_code=source, feedback=feedback
    )
    return _call_agent(AgentKind.ANALYZER, "analyzer_system", user, engine, template, settings)


def propose_remediation(
    analysis: str,
    source: str,
    engine: CompletionEngine,
    *,
    template: PromptTemplate,
    settings: RequestSettings,
) -> AgentExchange:
    """One remediation call over the analyzer's diagnosis; returns the advice exchange."""
    if not analysis.strip():
        raise ValueError("propose_remediation requires non-empty analysis")
    user = template.render("remediation_user", prior_code=source, analysis=analysis)
    return _call_agent(AgentKind.REMEDIATION, "remediation_system", user, engine, template, settings)

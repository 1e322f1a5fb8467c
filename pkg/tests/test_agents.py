import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tddbench.agents import (
    AgentError,
    AgentKind,
    CodeExtractionError,
    analyze_failures,
    build_coder_prompt,
    extract_code,
    load_template_set,
    propose_remediation,
    render_tests,
)
from tddbench.engine import CompletionEngine, RequestSettings, ScriptedBackend
from tddbench.problems import Mode, Problem, TestCase, TestKind

SETTINGS = RequestSettings(model_id="test-model")


def echo_engine(text="analysis: looks wrong"):
    return CompletionEngine(backend=ScriptedBackend(lambda request: text))


@pytest.fixture(scope="module")
def template():
    return load_template_set("default")


@pytest.fixture(scope="module")
def fl_problem():
    return Problem(
        id="median3",
        title="Median of three",
        prompt="Return the median of three numbers.",
        mode=Mode.FUNCTION_LEVEL,
        entrypoint="def median_of_three(a, b, c):",
        public_tests=(
            TestCase("d1", TestKind.FUNCTION_CALL, [1, 2, 3], 2),
            TestCase("d2", TestKind.FUNCTION_CALL, [9, 1, 5], 5),
        ),
    )


@pytest.fixture(scope="module")
def fp_problem():
    return Problem(
        id="echo",
        title="Echo stream",
        prompt="Echo stdin to stdout.",
        mode=Mode.FULL_PROGRAM,
        public_tests=(TestCase("m1", TestKind.STDIO, "a\n", "a"),),
    )


def all_text(request):
    return "\n".join(m.content for m in request.messages)


class TestTemplates:
    def test_default_set_loads_with_all_sections(self, template):
        assert template.id == "default"
        assert "coder_system" in template.sections

    def test_unknown_set_rejected(self):
        with pytest.raises(FileNotFoundError):
            load_template_set("no-such-set")

    def test_template_constancy_across_calls(self, template, fl_problem):
        first = build_coder_prompt(fl_problem, True, template=template, settings=SETTINGS)
        second = build_coder_prompt(fl_problem, False, template=template, settings=SETTINGS)
        assert first.messages[0].content == second.messages[0].content


class TestBuildCoderPrompt:
    def test_without_tests_no_test_text_appears(self, template, fl_problem):
        request = build_coder_prompt(fl_problem, False, template=template, settings=SETTINGS)
        text = all_text(request)
        assert fl_problem.prompt in text
        for test in fl_problem.public_tests:
            assert test.id not in text

    def test_with_tests_every_id_input_expected_appears(self, template, fl_problem):
        request = build_coder_prompt(fl_problem, True, template=template, settings=SETTINGS)
        text = all_text(request)
        for test in fl_problem.public_tests:
            assert test.id in text
            assert json.dumps(test.input, ensure_ascii=False) in text
            assert json.dumps(test.expected, ensure_ascii=False) in text

    def test_remediation_slots_rendered_verbatim(self, template, fl_problem):
        advice = "check the sort order carefully"
        code = "def median_of_three(a, b, c):\n    return a"
        request = build_coder_prompt(
            fl_problem, True, advice=advice, prior_code=code, template=template, settings=SETTINGS
        )
        text = all_text(request)
        assert advice in text
        assert code in text

    def test_advice_without_prior_code_rejected(self, template, fl_problem):
        with pytest.raises(ValueError):
            build_coder_prompt(fl_problem, True, advice="do better", template=template, settings=SETTINGS)

    def test_function_level_includes_signature(self, template, fl_problem):
        request = build_coder_prompt(fl_problem, False, template=template, settings=SETTINGS)
        assert fl_problem.entrypoint in all_text(request)

    def test_full_program_instructs_stdio(self, template, fp_problem):
        request = build_coder_prompt(fp_problem, False, template=template, settings=SETTINGS)
        text = all_text(request)
        assert "standard input" in text and "standard output" in text

    def test_settings_applied(self, template, fl_problem):
        request = build_coder_prompt(fl_problem, False, template=template, settings=SETTINGS)
        assert request.model_id == "test-model"
        assert request.seed == 1106
        assert request.temperature == 0.0

    def test_render_tests_lists_stdio_pairs(self, fp_problem):
        text = render_tests(fp_problem.public_tests)
        assert "m1" in text and json.dumps("a\n") in text


class TestExtractCode:
    def test_single_fenced_block(self):
        assert extract_code("intro\n```python\nx = 1\n```\nbye") == "x = 1"

    def test_last_of_two_blocks_wins(self):
        text = "```python\nx = 1\n```\nactually, better:\n```python\nx = 2\n```\n"
        assert extract_code(text) == "x = 2"

    def test_first_block_mode(self):
        text = "```\nx = 1\n```\n```\nx = 2\n```"
        assert extract_code(text, prefer_last=False) == "x = 1"

    def test_prose_fails(self):
        with pytest.raises(CodeExtractionError):
            extract_code("I am sorry, but I cannot write the code you are asking for.")

    def test_unfenced_code_accepted_when_plausible(self):
        source = "def f(x):\n    return x\n"
        assert extract_code(source) == source.rstrip()

    def test_unfenced_assignment_accepted(self):
        assert extract_code("x = 1\nprint(x)") == "x = 1\nprint(x)"

    def test_incomplete_fence_ignored(self):
        text = "```python\nx = 1\n```\ntrailing ```python\nnot closed"
        assert extract_code(text) == "x = 1"

    @settings(max_examples=50, deadline=None)
    @given(
        st.sampled_from(["def f():", "import os", "x = 1", "# comment", "class A:", "print(1)"]),
        st.text(alphabet=st.characters(blacklist_characters="`"), max_size=30),
    )
    def test_idempotent_on_own_output(self, starter, rest):
        body = starter + "\n" + rest
        extracted = extract_code(f"Some prose.\n```python\n{body}\n```\n")
        assert extract_code(extracted) == extracted


class TestAnalyzer:
    def test_returns_non_empty_analysis(self, template):
        exchange = analyze_failures(
            "FAILED d1 [wrong_answer]", "def f():\n    pass", echo_engine(),
            template=template, settings=SETTINGS, problem_prompt="median task",
        )
        assert exchange.agent is AgentKind.CODER or exchange.agent is AgentKind.ANALYZER
        assert exchange.agent is AgentKind.ANALYZER
        assert exchange.parsed

    def test_feedback_embedded_verbatim_with_all_ids(self, template):
        feedback = "FAILED d1 [wrong_answer]\nFAILED d2 [timeout]"
        exchange = analyze_failures(
            feedback, "code", echo_engine(), template=template, settings=SETTINGS
        )
        user = exchange.request.messages[-1].content
        assert feedback in user
        assert "d1" in user and "d2" in user

    def test_empty_feedback_rejected(self, template):
        with pytest.raises(ValueError):
            analyze_failures("  ", "code", echo_engine(), template=template, settings=SETTINGS)

    def test_empty_completion_is_agent_error(self, template):
        with pytest.raises(AgentError):
            analyze_failures(
                "FAILED d1", "code", echo_engine(""), template=template, settings=SETTINGS
            )


class TestRemediation:
    def test_analysis_embedded_verbatim(self, template):
        analysis = "off-by-one in loop bound"
        exchange = propose_remediation(
            analysis, "code", echo_engine("advice"), template=template, settings=SETTINGS
        )
        assert analysis in exchange.request.messages[-1].content
        assert exchange.parsed == "advice"
        assert exchange.agent is AgentKind.REMEDIATION

    def test_empty_analysis_rejected(self, template):
        with pytest.raises(ValueError):
            propose_remediation("", "code", echo_engine(), template=template, settings=SETTINGS)

    def test_empty_completion_is_agent_error(self, template):
        with pytest.raises(AgentError):
            propose_remediation("diagnosis", "code", echo_engine(""), template=template, settings=SETTINGS)

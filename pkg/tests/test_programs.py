import pytest
from hypothesis import given, strategies as st

from s2distill import prompts
from s2distill.backend import MockBackend, SamplingParams
from s2distill.programs import (Criterion, CriterionScores, EvalPlan, FewShotExample,
                                PlanParseError, RephraseFailed, SolveParseError,
                                Verdict, VerdictParseError, extract_final_answer,
                                parse_bracket_verdict, parse_criterion_scores,
                                parse_eval_plan, run_bsm, run_cot, run_rar_1step,
                                run_rar_2step, run_s2a, run_system1, swap_verdict)

P = SamplingParams(temperature=0.0)


class TestSystem1:
    def test_direct_answer(self):
        backend = MockBackend.from_mapping({"what is 6*7?": "42"})
        trace = run_system1(backend, "what is 6*7?", P)
        assert trace.final_text == "42"
        assert trace.intermediate_texts == []
        assert trace.program == "system1"

    def test_tokens_from_single_call(self):
        backend = MockBackend(lambda p, i: "one two three four")
        trace = run_system1(backend, "q", P)
        assert trace.total_generated_tokens == 4

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            run_system1(MockBackend(lambda p, i: "x"), "", P)


class TestRar:
    def test_1step_uses_template_and_single_call(self):
        backend = MockBackend(lambda p, i: "rephrase plus answer")
        trace = run_rar_1step(backend, "Q?", P)
        assert backend.calls[0][0] == prompts.render_rar_1step("Q?")
        assert trace.intermediate_texts == []
        assert trace.total_generated_tokens == 3

    def test_2step_scripted_flow(self):
        def script(prompt, i):
            if "rephrase" in prompt:
                return "R"
            assert prompt == "R Answer the Yes or No question."
            return "Yes"
        backend = MockBackend(script)
        trace = run_rar_2step(backend, "coin question", P, task="coin_flip")
        assert trace.intermediate_texts == ["R"]
        assert trace.final_text == "Yes"

    def test_2step_tokens_sum_both_calls(self):
        def script(prompt, i):
            return "a b c" if "rephrase" in prompt else "d e"
        trace = run_rar_2step(MockBackend(script), "q", P, task="coin_flip")
        assert trace.total_generated_tokens == 3 + 2

    def test_empty_rephrase_raises(self):
        backend = MockBackend(lambda p, i: "   " if "rephrase" in p else "Yes")
        with pytest.raises(RephraseFailed):
            run_rar_2step(backend, "q", P, task="coin_flip")


class TestS2a:
    def test_two_stage_flow(self):
        def script(prompt, i):
            if prompt.startswith("Given the following text"):
                return "clean context"
            assert prompt == "clean context\n\nAnswer in an unbiased way."
            return "unbiased answer"
        trace = run_s2a(MockBackend(script), "biased input", P)
        assert trace.intermediate_texts == ["clean context"]
        assert trace.final_text == "unbiased answer"
        assert trace.total_generated_tokens == 2 + 2

    def test_default_params_use_top_p_09(self):
        seen = {}

        class Probe(MockBackend):
            def _complete(self, messages, params, sample_index):
                seen["top_p"] = params.top_p
                return super()._complete(messages, params, sample_index)

        run_s2a(Probe(lambda p, i: "x"), "input")
        assert seen["top_p"] == 0.9


PLAN_TEXT = """Here is an evaluation plan:
1. Relevance: how directly the response addresses the question
2. Accuracy: factual correctness
3. Clarity - readability and structure
"""


class TestParsers:
    def test_plan_parse_names_and_count(self):
        plan = parse_eval_plan(PLAN_TEXT)
        assert [c.name for c in plan.criteria] == ["Relevance", "Accuracy", "Clarity"]
        assert plan.criteria[0].description.startswith("how directly")

    def test_plan_truncated_to_five(self):
        text = "\n".join(f"{i}. Factor{i}: description {i}" for i in range(1, 8))
        plan = parse_eval_plan(text)
        assert len(plan.criteria) == 5
        assert plan.criteria[-1].name == "Factor5"

    def test_plan_with_no_criteria_raises(self):
        with pytest.raises(PlanParseError):
            parse_eval_plan("nothing useful here")

    def test_scores_from_sample_lines(self):
        scores = parse_criterion_scores("1. Relevance:\n* Assistant A: 4/5\n"
                                        "* Assistant B: 2/5", "Relevance")
        assert (scores.score_a, scores.score_b) == (4, 2)

    def test_scores_without_digits_raise(self):
        with pytest.raises(SolveParseError):
            parse_criterion_scores("Assistant A is better than Assistant B")

    def test_bracket_verdict_last_wins(self):
        assert parse_bracket_verdict("[[B]] but finally [[A]]") is Verdict.A
        assert parse_bracket_verdict("Conclusive judgement: [[C]]") is Verdict.TIE

    def test_bracket_verdict_missing(self):
        with pytest.raises(VerdictParseError):
            parse_bracket_verdict("no verdict at all")

    def test_score_bounds_enforced(self):
        with pytest.raises(ValueError):
            CriterionScores("x", 0, 3)

    def test_plan_requires_distinct_names(self):
        with pytest.raises(ValueError):
            EvalPlan([Criterion("a"), Criterion("a")])


def bsm_backend(score_lines, merge_text="Conclusive judgement: [[A]]"):
    """Two-criterion plan; per-criterion scores from score_lines."""
    def script(prompt, i):
        if "Evaluation Plan:" in prompt:
            return "1. Relevance: fit\n2. Accuracy: facts"
        if "[Evaluation Criterion]" in prompt:
            which = 0 if "Relevance" in prompt else 1
            a, b = score_lines[which]
            return f"* Assistant A: {a}/5\n* Assistant B: {b}/5"
        return merge_text
    return MockBackend(script)


class TestBsm:
    def test_average_merge_verdicts(self):
        for scores, expected in [([(4, 2), (4, 2)], Verdict.A),
                                 ([(2, 4), (2, 4)], Verdict.B),
                                 ([(3, 3), (3, 3)], Verdict.TIE),
                                 ([(4, 2), (2, 4)], Verdict.TIE)]:
            _, verdict = run_bsm(bsm_backend(scores), "q", "a", "b", P)
            assert verdict is expected, scores

    def test_trace_structure_average_mode(self):
        trace, _ = run_bsm(bsm_backend([(4, 2), (4, 2)]), "q", "a", "b", P)
        assert len(trace.intermediate_texts) == 3  # branch + 2 solves
        assert trace.final_text == "Conclusive judgement: [[A]]"

    def test_llm_merge_parses_bracket(self):
        backend = bsm_backend([(4, 2), (4, 2)], merge_text="I pick [[B]]")
        trace, verdict = run_bsm(backend, "q", "a", "b", P, merge_mode="llm")
        assert verdict is Verdict.B
        assert len(trace.intermediate_texts) == 4  # + merge output

    def test_solve_reask_once_then_succeed(self):
        attempts = []

        def script(prompt, i):
            if "Evaluation Plan:" in prompt:
                return "1. Relevance: fit"
            attempts.append(i)
            if len(attempts) == 1:
                return "no scores here"
            return "Assistant A: 4\nAssistant B: 2"
        _, verdict = run_bsm(MockBackend(script), "q", "a", "b", P)
        assert verdict is Verdict.A
        assert len(attempts) == 2

    def test_solve_failure_after_reask_raises(self):
        def script(prompt, i):
            if "Evaluation Plan:" in prompt:
                return "1. Relevance: fit"
            return "still no scores"
        with pytest.raises(SolveParseError):
            run_bsm(MockBackend(script), "q", "a", "b", P)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            run_bsm(bsm_backend([(3, 3)]), "q", "", "b", P)

    @given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)),
                    min_size=1, max_size=5))
    def test_average_merge_antisymmetry(self, score_pairs):
        _, verdict = run_bsm(bsm_many(score_pairs), "q", "a", "b", P)
        swapped = [(b, a) for a, b in score_pairs]
        _, verdict_swapped = run_bsm(bsm_many(swapped), "q", "b", "a", P)
        assert verdict_swapped is swap_verdict(verdict)


def bsm_many(score_pairs):
    names = [f"Crit{i}" for i in range(len(score_pairs))]

    def script(prompt, i):
        if "Evaluation Plan:" in prompt:
            return "\n".join(f"{i + 1}. {n}: desc" for i, n in enumerate(names))
        for name, (a, b) in zip(names, score_pairs):
            if f"Evaluation of {name}:" in prompt:
                return f"Assistant A: {a}\nAssistant B: {b}"
        raise AssertionError(f"unexpected prompt {prompt[:60]}")
    return MockBackend(script)


class TestCot:
    def test_final_answer_extraction(self):
        backend = MockBackend(lambda p, i: "Let me think. 9 * 2 = 18. Final answer: 18")
        trace = run_cot(backend, "what is 9*2?", P)
        assert trace.final_text == "18"
        assert not trace.marker_missing
        assert trace.intermediate_texts == ["Let me think. 9 * 2 = 18. Final answer: 18"]

    def test_last_marker_wins(self):
        text = 'Use "Final answer: ..." like this. Final answer: 7'
        assert extract_final_answer(text) == ("7", False)

    def test_missing_marker_flagged(self):
        backend = MockBackend(lambda p, i: "some reasoning\nthe answer is 7")
        trace = run_cot(backend, "q", P)
        assert trace.marker_missing
        assert trace.final_text == "the answer is 7"

    def test_zero_shot_prompt_is_template(self):
        backend = MockBackend(lambda p, i: "Final answer: 1")
        run_cot(backend, "q", P)
        assert backend.calls[0][0] == prompts.render_cot("q")

    def test_few_shot_requires_cots(self):
        backend = MockBackend(lambda p, i: "Final answer: 1")
        with pytest.raises(ValueError):
            run_cot(backend, "q", P, mode="few_shot",
                    shots=[FewShotExample("a", "1")])

    def test_few_shot_prepends_examples(self):
        backend = MockBackend(lambda p, i: "Final answer: 1")
        shots = [FewShotExample("1+1?", "2", cot="add them")]
        run_cot(backend, "q", P, mode="few_shot", shots=shots)
        prompt = backend.calls[0][0]
        assert prompt.startswith("Question: 1+1?")
        assert prompt.endswith(prompts.render_cot("q"))


class TestSwapVerdict:
    def test_mapping(self):
        assert swap_verdict(Verdict.A) is Verdict.B
        assert swap_verdict(Verdict.B) is Verdict.A
        assert swap_verdict(Verdict.TIE) is Verdict.TIE

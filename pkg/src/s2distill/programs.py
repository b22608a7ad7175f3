"""The System 1 baseline and the four multi-step programs.

Every program returns a trace carrying the intermediate generations, the
final response, and the total generated-token count summed over all
constituent completions.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from . import prompts
from .backend import Backend, Completion, SamplingParams, user_message

FINAL_ANSWER_MARKER = "Final answer:"
MAX_CRITERIA = 5


class ProgramError(Exception):
    """Base class for program-level failures."""


class RephraseFailed(ProgramError):
    """The rephrase stage produced an empty question."""


class PlanParseError(ProgramError):
    """No evaluation criteria could be parsed from the branch output."""


class SolveParseError(ProgramError):
    """A solve output had no recognizable scores, even after one re-ask."""


class VerdictParseError(ProgramError):
    """No bracketed verdict found in the merge output."""


class Verdict(Enum):
    A = "A"
    B = "B"
    TIE = "Tie"


def swap_verdict(v: Verdict) -> Verdict:
    """Map a verdict through a response-order swap: A and B exchange, ties fix."""
    if v is Verdict.A:
        return Verdict.B
    if v is Verdict.B:
        return Verdict.A
    return v


def verdict_text(v: Verdict) -> str:
    letter = {"A": "A", "B": "B", "Tie": "C"}[v.value]
    return f"Conclusive judgement: [[{letter}]]"


@dataclass
class Criterion:
    name: str
    description: str = ""


@dataclass
class EvalPlan:
    criteria: list[Criterion]

    def __post_init__(self):
        if not (1 <= len(self.criteria) <= MAX_CRITERIA):
            raise ValueError("a plan holds 1 to 5 criteria")
        names = [c.name for c in self.criteria]
        if len(set(names)) != len(names) or any(not n for n in names):
            raise ValueError("criterion names must be non-empty and distinct")


@dataclass
class CriterionScores:
    criterion_name: str
    score_a: int
    score_b: int

    def __post_init__(self):
        if not (1 <= self.score_a <= 5 and 1 <= self.score_b <= 5):
            raise ValueError("scores must lie in [1, 5]")


@dataclass
class FewShotExample:
    question: str
    answer: str
    cot: str | None = None


@dataclass
class System2Trace:
    input: str
    intermediate_texts: list[str]
    final_text: str
    total_generated_tokens: int
    program: str
    marker_missing: bool = False


def _call(backend: Backend, prompt: str, params: SamplingParams,
          sample_index: int) -> Completion:
    return backend.complete(user_message(prompt), params, sample_index=sample_index)


def run_system1(backend: Backend, x: str, params: SamplingParams,
                sample_index: int = 0) -> System2Trace:
    """Direct response: one call, no intermediate generations."""
    if not x:
        raise ValueError("input must be non-empty")
    completion = _call(backend, x, params, sample_index)
    return System2Trace(input=x, intermediate_texts=[], final_text=completion.text,
                        total_generated_tokens=completion.completion_tokens,
                        program="system1")


def run_rar_1step(backend: Backend, question: str, params: SamplingParams,
                  sample_index: int = 0) -> System2Trace:
    """Single-call rephrase-and-answer; the rephrase lives inline in the
    generation, so the trace has no separate intermediate texts."""
    if not question:
        raise ValueError("question must be non-empty")
    completion = _call(backend, prompts.render_rar_1step(question), params, sample_index)
    return System2Trace(input=question, intermediate_texts=[],
                        final_text=completion.text,
                        total_generated_tokens=completion.completion_tokens,
                        program="rar1")


def run_rar_2step(backend: Backend, question: str, params: SamplingParams,
                  task: str = "generic", sample_index: int = 0) -> System2Trace:
    """Two calls: rephrase the question with a task-specific prompt, then
    answer the rephrased question."""
    if not question:
        raise ValueError("question must be non-empty")
    if task not in ("last_letter", "coin_flip", "generic"):
        raise ValueError(f"unknown rephrase task {task!r}")
    step1 = _call(backend, prompts.render_rar_rephrase(question, task), params, sample_index)
    rephrased = step1.text.strip()
    if not rephrased:
        raise RephraseFailed("rephrase stage returned empty text")
    step2 = _call(backend, prompts.render_rar_answer(rephrased, task), params, sample_index)
    return System2Trace(
        input=question,
        intermediate_texts=[rephrased],
        final_text=step2.text,
        total_generated_tokens=step1.completion_tokens + step2.completion_tokens,
        program="rar2",
    )


S2A_DEFAULT_PARAMS = SamplingParams(top_p=0.9)


def run_s2a(backend: Backend, text: str, params: SamplingParams | None = None,
            sample_index: int = 0) -> System2Trace:
    """Two stages: strip bias/irrelevant context from the input, then answer
    the rewritten input. Both stages default to nucleus sampling, top_p 0.9."""
    if not text:
        raise ValueError("input must be non-empty")
    params = params or S2A_DEFAULT_PARAMS
    stage1 = _call(backend, prompts.render_s2a_stage1(text), params, sample_index)
    stage2 = _call(backend, prompts.render_s2a_stage2(stage1.text), params, sample_index)
    return System2Trace(
        input=text,
        intermediate_texts=[stage1.text],
        final_text=stage2.text,
        total_generated_tokens=stage1.completion_tokens + stage2.completion_tokens,
        program="s2a",
    )


_LIST_MARKER = re.compile(r"^\s*(?:[-*•]+|\(?\d+[.)]|\d+\s*[-–])\s*")
_NAME_SEPARATOR = re.compile(r"[:–-]")


def parse_eval_plan(text: str) -> EvalPlan:
    """Parse a branch output: one criterion per nonempty line, list markers
    and numbering stripped, ``name [:–-] description``. Lines without a
    description (for example a preamble ending in a colon) are skipped.
    At most five criteria are kept; extra lines are dropped."""
    criteria: list[Criterion] = []
    seen: set[str] = set()
    for raw_line in text.splitlines():
        line = _LIST_MARKER.sub("", raw_line.strip())
        if not line:
            continue
        sep = _NAME_SEPARATOR.search(line)
        if sep is None:
            continue
        name = line[:sep.start()].strip()
        description = line[sep.end():].strip()
        if not name or not description or name.lower() in seen:
            continue
        seen.add(name.lower())
        criteria.append(Criterion(name=name, description=description))
        if len(criteria) == MAX_CRITERIA:
            break
    if not criteria:
        raise PlanParseError(f"no criteria found in branch output: {text[:200]!r}")
    return EvalPlan(criteria=criteria)


_SCORE_DIGIT = re.compile(r"[1-5]")


def parse_criterion_scores(text: str, criterion_name: str = "") -> CriterionScores:
    """Parse a solve output: the first line mentioning Assistant A carrying a
    digit 1-5 supplies score_a, likewise Assistant B. The score is the first
    such digit on the line (a "/5" suffix is ignored by construction)."""
    score_a = score_b = None
    for line in text.splitlines():
        if score_a is None and "Assistant A" in line:
            m = _SCORE_DIGIT.search(line)
            if m:
                score_a = int(m.group())
                continue
        if score_b is None and "Assistant B" in line:
            m = _SCORE_DIGIT.search(line)
            if m:
                score_b = int(m.group())
    if score_a is None or score_b is None:
        raise SolveParseError(f"no scores found in solve output: {text[:200]!r}")
    return CriterionScores(criterion_name=criterion_name, score_a=score_a, score_b=score_b)


_BRACKET_VERDICT = re.compile(r"\[\[([ABC])\]\]")


def parse_bracket_verdict(text: str) -> Verdict:
    """Take the last bracketed verdict in the text; [[C]] means a tie."""
    matches = _BRACKET_VERDICT.findall(text)
    if not matches:
        raise VerdictParseError(f"no [[A]]/[[B]]/[[C]] verdict in: {text[:200]!r}")
    return {"A": Verdict.A, "B": Verdict.B, "C": Verdict.TIE}[matches[-1]]


def _solve_one(backend: Backend, user_query: str, response_a: str, response_b: str,
               criterion: Criterion, params: SamplingParams,
               sample_index: int) -> tuple[str, CriterionScores, int]:
    prompt = prompts.render_bsm_solve(user_query, response_a, response_b,
                                      criterion.name, criterion.description)
    completion = _call(backend, prompt, params, sample_index)
    try:
        scores = parse_criterion_scores(completion.text, criterion.name)
        return completion.text, scores, completion.completion_tokens
    except SolveParseError:
        # One re-ask on a format slip, then give up on the example.
        retry = _call(backend, prompt, params, sample_index + 1)
        scores = parse_criterion_scores(retry.text, criterion.name)
        return retry.text, scores, completion.completion_tokens + retry.completion_tokens


def run_bsm(backend: Backend, user_query: str, response_a: str, response_b: str,
            params: SamplingParams, merge_mode: str = "average",
            sample_index: int = 0) -> tuple[System2Trace, Verdict]:
    """Branch into up to five evaluation criteria, score each independently,
    then merge by score averaging or by an LLM verdict call."""
    for label, value in (("user_query", user_query), ("response_a", response_a),
                         ("response_b", response_b)):
        if not value:
            raise ValueError(f"{label} must be non-empty")
    if merge_mode not in ("average", "llm"):
        raise ValueError(f"unknown merge_mode {merge_mode!r}")

    branch = _call(backend, prompts.render_bsm_branch(user_query), params, sample_index)
    plan = parse_eval_plan(branch.text)

    # Re-asks use sample_index + 1; space criteria two indices apart so the
    # cache keys of a retry never collide with a neighbour's first ask.
    with ThreadPoolExecutor(max_workers=len(plan.criteria)) as pool:
        futures = [
            pool.submit(_solve_one, backend, user_query, response_a, response_b,
                        criterion, params, sample_index + 2 * i)
            for i, criterion in enumerate(plan.criteria)
        ]
        solved = [f.result() for f in futures]
    solve_texts = [text for text, _, _ in solved]
    scores = [score for _, score, _ in solved]
    total_tokens = branch.completion_tokens + sum(tokens for _, _, tokens in solved)

    intermediate = [branch.text, *solve_texts]
    if merge_mode == "average":
        mean_a = sum(s.score_a for s in scores) / len(scores)
        mean_b = sum(s.score_b for s in scores) / len(scores)
        if mean_a > mean_b:
            verdict = Verdict.A
        elif mean_a < mean_b:
            verdict = Verdict.B
        else:
            verdict = Verdict.TIE
    else:
        merge = _call(backend, prompts.render_bsm_merge("\n\n".join(solve_texts)),
                      params, sample_index)
        verdict = parse_bracket_verdict(merge.text)
        intermediate.append(merge.text)
        total_tokens += merge.completion_tokens

    trace = System2Trace(
        input=user_query,
        intermediate_texts=intermediate,
        final_text=verdict_text(verdict),
        total_generated_tokens=total_tokens,
        program="bsm",
    )
    return trace, verdict


def extract_final_answer(text: str) -> tuple[str, bool]:
    """Return (answer, marker_missing). The answer is the substring after the
    last "Final answer:" marker; without a marker, the last nonempty line."""
    idx = text.rfind(FINAL_ANSWER_MARKER)
    if idx >= 0:
        return text[idx + len(FINAL_ANSWER_MARKER):].strip(), False
    lines = [line for line in text.splitlines() if line.strip()]
    return (lines[-1].strip() if lines else ""), True


def run_cot(backend: Backend, question: str, params: SamplingParams,
            mode: str = "zero_shot", shots: list[FewShotExample] | None = None,
            sample_index: int = 0) -> System2Trace:
    """Single call with step-by-step reasoning; the final answer is extracted
    from the marked suffix of the generation."""
    if not question:
        raise ValueError("question must be non-empty")
    if mode not in ("zero_shot", "few_shot"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "few_shot":
        if not shots:
            raise ValueError("few_shot mode requires shots")
        if any(s.cot is None for s in shots):
            raise ValueError("few_shot shots must carry reasoning text")
        blocks = [prompts.render_cot_shot(s.question, s.cot, s.answer) for s in shots]
        prompt = "\n\n".join(blocks) + "\n\n" + prompts.render_cot(question)
    else:
        prompt = prompts.render_cot(question)
    completion = _call(backend, prompt, params, sample_index)
    answer, missing = extract_final_answer(completion.text)
    return System2Trace(
        input=question,
        intermediate_texts=[completion.text],
        final_text=answer,
        total_generated_tokens=completion.completion_tokens,
        program="cot",
        marker_missing=missing,
    )

"""Unsupervised curation: consistency filters and the distillation-set builder.

Two filter families are implemented. Output self-consistency samples a
program N times and keeps the plurality answer; perturbation consistency
judges a response pair in both orders and keeps examples whose verdicts
agree once the swap is undone. Curated examples store only the final
response; intermediate generations are always dropped.
"""

from __future__ import annotations

import logging
import random
import re
import string
from collections import Counter
from dataclasses import dataclass, field, asdict

from . import prompts
from .backend import Backend, ContextOverflow, SamplingParams, user_message
from .programs import ProgramError, System2Trace, Verdict, swap_verdict, verdict_text

logger = logging.getLogger(__name__)

USC_FALLBACK_ANSWER_COUNT = 10


class UscParseError(ProgramError):
    """The consistency-selection call had no FINAL: marker."""


NORMALIZER_RULES = ("lowercase", "strip_punct", "collapse_ws",
                    "yes_no_canonical", "numeric_canonical")

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def _yes_no_canonical(s: str) -> str:
    stripped = s.strip().rstrip(string.punctuation + string.whitespace)
    if stripped.lower() == "yes":
        return "Yes"
    if stripped.lower() == "no":
        return "No"
    return s


def _numeric_canonical(s: str) -> str:
    cleaned = s.replace(",", "").replace("$", "").replace("€", "").replace("£", "")
    matches = _NUMBER.findall(cleaned)
    if not matches:
        return s
    value = matches[-1]
    if "." in value:
        value = value.rstrip("0").rstrip(".")
    return value if value not in ("", "-") else "0"


_RULE_FNS = {
    "lowercase": str.lower,
    "strip_punct": lambda s: s.translate(_PUNCT_TABLE),
    "collapse_ws": lambda s: " ".join(s.split()),
    "yes_no_canonical": _yes_no_canonical,
    "numeric_canonical": _numeric_canonical,
}


@dataclass(frozen=True)
class Normalizer:
    """Ordered text-canonicalization rules; the composition is idempotent,
    which makes "majority over free text" well defined."""

    rules: tuple[str, ...] = ()

    def __post_init__(self):
        unknown = [r for r in self.rules if r not in _RULE_FNS]
        if unknown:
            raise ValueError(f"unknown normalizer rules: {unknown}")

    def __call__(self, text: str) -> str:
        for rule in self.rules:
            text = _RULE_FNS[rule](text)
        return text


IDENTITY_NORMALIZER = Normalizer()
YES_NO_NORMALIZER = Normalizer(("collapse_ws", "yes_no_canonical"))
NUMERIC_NORMALIZER = Normalizer(("numeric_canonical",))
TEXT_NORMALIZER = Normalizer(("lowercase", "strip_punct", "collapse_ws"))

NORMALIZERS = {
    "identity": IDENTITY_NORMALIZER,
    "yes_no": YES_NO_NORMALIZER,
    "numeric": NUMERIC_NORMALIZER,
    "text": TEXT_NORMALIZER,
}


def vote_groups(answers: list[str], norm: Normalizer) -> tuple[str | None, int]:
    """Group answers by normalized form; return (winner_raw, top_count).

    winner_raw is the first-seen raw text of the unique most frequent
    group, or None when the top count is shared by two or more groups.
    """
    if not answers:
        raise ValueError("answers must be non-empty")
    counts: Counter[str] = Counter()
    first_seen: dict[str, str] = {}
    for answer in answers:
        key = norm(answer)
        counts[key] += 1
        first_seen.setdefault(key, answer)
    ranked = counts.most_common()
    top_key, top_count = ranked[0]
    if len(ranked) > 1 and ranked[1][1] == top_count:
        return None, top_count
    return first_seen[top_key], top_count


def majority_vote(answers: list[str], norm: Normalizer = IDENTITY_NORMALIZER,
                  strict: bool = False) -> str | None:
    """Plurality winner over normalized answers; None on a tied top count.

    With ``strict`` the winner must additionally hold more than half the
    votes (the default plurality rule matches common self-consistency use).
    """
    winner, top_count = vote_groups(answers, norm)
    if winner is not None and strict and top_count * 2 <= len(answers):
        return None
    return winner


def usc_select(backend: Backend, question: str, answers: list[str],
               params: SamplingParams, seed: int = 0,
               sample_index: int = 0) -> tuple[str, int]:
    """Ask the model to compose the answer most consistent with the samples.

    Returns (answer, generated_tokens). On a context overflow the prompt is
    re-rendered with the first ten answers; if that still overflows, a
    seeded uniform pick among the answers is returned instead.
    """
    if not answers:
        raise ValueError("answers must be non-empty")

    def attempt(subset: list[str]):
        prompt = prompts.render_usc(question, subset)
        return backend.complete(user_message(prompt), params, sample_index=sample_index)

    try:
        completion = attempt(answers)
    except ContextOverflow:
        try:
            completion = attempt(answers[:USC_FALLBACK_ANSWER_COUNT])
        except ContextOverflow:
            choice = random.Random(seed).choice(answers)
            logger.info("consistency prompt overflowed twice; picked a random answer")
            return choice, 0
    idx = completion.text.rfind("FINAL:")
    if idx < 0:
        raise UscParseError(f"no FINAL: marker in: {completion.text[:200]!r}")
    return completion.text[idx + len("FINAL:"):].strip(), completion.completion_tokens


def perturbation_consistent_judge(bsm_runner, query: str, response_a: str,
                                  response_b: str):
    """Judge the pair in both orders; keep the verdict only when the two
    runs agree once the swapped run's labels are mapped back.

    ``bsm_runner(query, a, b) -> (trace, verdict)``. Returns
    (verdict, (trace_orig, trace_swapped)) or None on disagreement or any
    parse failure.
    """
    try:
        trace_orig, v_orig = bsm_runner(query, response_a, response_b)
        trace_swapped, v_swapped = bsm_runner(query, response_b, response_a)
    except ProgramError as exc:
        logger.debug("judge run discarded on parse failure: %s", exc)
        return None
    if swap_verdict(v_swapped) != v_orig:
        return None
    return v_orig, (trace_orig, trace_swapped)


@dataclass
class DistillExample:
    input: str
    target: str
    program: str
    n_samples: int
    agreement_fraction: float
    trace_token_cost: int

    def __post_init__(self):
        if not self.target:
            raise ValueError("target must be non-empty")
        if not (0 < self.agreement_fraction <= 1):
            raise ValueError("agreement_fraction must lie in (0, 1]")


@dataclass
class CurationReport:
    total: int = 0
    kept: int = 0
    discarded_no_majority: int = 0
    discarded_parse_error: int = 0
    mean_agreement: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FilterSpec:
    """Which consistency filter the builder applies.

    kind: "majority", "usc", or "perturbation".
    n: samples per input for the sampling filters.
    strict_majority: require a count > n/2 winner instead of plurality.
    keep_ties: whether swap-consistent tie verdicts become targets.
    predicate: optional hook selecting which inputs are curated at all
      (inputs failing it are skipped and not counted).
    """

    kind: str
    n: int = 8
    strict_majority: bool = False
    keep_ties: bool = True
    predicate: object = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("majority", "usc", "perturbation"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind != "perturbation" and self.n < 1:
            raise ValueError("n must be >= 1")


def build_distill_set(inputs, program_runner, filt: FilterSpec,
                      norm: Normalizer = IDENTITY_NORMALIZER,
                      usc_backend: Backend | None = None,
                      usc_params: SamplingParams | None = None,
                      ) -> tuple[list[DistillExample], CurationReport]:
    """Run the program over unlabeled inputs, filter, and keep only
    (input, final response) pairs; intermediate generations are dropped.

    For the sampling filters ``program_runner(x, sample_index) -> trace``;
    for the perturbation filter the inputs are judge pairs and
    ``program_runner(query, a, b) -> (trace, verdict)``. Per-example errors
    count as discards; the build never aborts on one bad example.
    """
    examples: list[DistillExample] = []
    report = CurationReport()
    agreements: list[float] = []

    for item in inputs:
        if filt.predicate is not None and not filt.predicate(item):
            continue
        report.total += 1
        try:
            if filt.kind == "perturbation":
                example = _curate_judged_pair(item, program_runner, filt)
            else:
                example = _curate_sampled(item, program_runner, filt, norm,
                                          usc_backend, usc_params)
        except KeyboardInterrupt:
            # Flush what we have; the partially curated set stays valid.
            logger.warning("interrupted; returning %d curated examples", len(examples))
            report.total -= 1
            break
        except (ProgramError, ValueError) as exc:
            logger.debug("input discarded on error: %s", exc)
            report.discarded_parse_error += 1
            continue
        if example is None:
            report.discarded_no_majority += 1
            continue
        examples.append(example)
        report.kept += 1
        agreements.append(example.agreement_fraction)

    if agreements:
        report.mean_agreement = sum(agreements) / len(agreements)
    return examples, report


def _curate_sampled(x: str, program_runner, filt: FilterSpec, norm: Normalizer,
                    usc_backend, usc_params) -> DistillExample | None:
    traces: list[System2Trace] = [program_runner(x, i) for i in range(filt.n)]
    answers = [t.final_text for t in traces]
    token_cost = sum(t.total_generated_tokens for t in traces)
    program = traces[0].program

    if filt.kind == "majority":
        winner, top_count = vote_groups(answers, norm)
        if winner is None or (filt.strict_majority and top_count * 2 <= filt.n):
            return None
        return DistillExample(input=x, target=winner, program=program,
                              n_samples=filt.n,
                              agreement_fraction=top_count / filt.n,
                              trace_token_cost=token_cost)

    # usc: compose the consistent answer with a dedicated model call.
    if usc_backend is None:
        raise ValueError("usc filter requires usc_backend")
    answer, usc_tokens = usc_select(usc_backend, x, answers,
                                    usc_params or SamplingParams(), seed=filt.seed)
    matching = sum(1 for a in answers if norm(a) == norm(answer))
    return DistillExample(input=x, target=answer, program=program,
                          n_samples=filt.n,
                          agreement_fraction=max(matching, 1) / filt.n,
                          trace_token_cost=token_cost + usc_tokens)


def _curate_judged_pair(pair, bsm_runner, filt: FilterSpec) -> DistillExample | None:
    result = perturbation_consistent_judge(bsm_runner, pair.query,
                                           pair.response_a, pair.response_b)
    if result is None:
        return None
    verdict, (trace_orig, trace_swapped) = result
    if verdict is Verdict.TIE and not filt.keep_ties:
        return None
    return DistillExample(
        input=prompts.render_pairwise_judge(pair.query, pair.response_a, pair.response_b),
        target=verdict_text(verdict),
        program=trace_orig.program,
        n_samples=2,
        agreement_fraction=1.0,
        trace_token_cost=(trace_orig.total_generated_tokens
                          + trace_swapped.total_generated_tokens),
    )


def two_stage_vote_rar(backend: Backend, question: str, n: int,
                       params: SamplingParams, task: str = "coin_flip",
                       norm: Normalizer = YES_NO_NORMALIZER,
                       strict: bool = False) -> str | None:
    """Vote over the final answers of n independent full two-step runs,
    drawing a fresh rephrase in every run."""
    from .programs import run_rar_2step

    if n < 1:
        raise ValueError("n must be >= 1")
    answers = [run_rar_2step(backend, question, params, task=task,
                             sample_index=i).final_text for i in range(n)]
    return majority_vote(answers, norm, strict=strict)

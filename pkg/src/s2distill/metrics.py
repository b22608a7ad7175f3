"""Evaluation metrics: exact match, human-agreement, position-inconsistency
rate, majority voting at k, and per-category breakdowns.

Token figures are averages of backend-reported generated-token counts per
input, covering intermediate and final generations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from .curation import Normalizer, IDENTITY_NORMALIZER, vote_groups
from .programs import Verdict, swap_verdict


@dataclass
class EvalReport:
    metric_name: str
    value: float
    n: int
    per_category: dict[str, float] | None = None
    mean_tokens: float = 0.0
    discarded: int = 0

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be > 0")
        if not (0.0 <= self.value <= 1.0):
            raise ValueError("rates lie in [0, 1]")
        if self.mean_tokens < 0:
            raise ValueError("mean_tokens must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def exact_match(preds: list[str], golds: list[str],
                norm: Normalizer = IDENTITY_NORMALIZER,
                tokens: list[int] | None = None) -> EvalReport:
    """Fraction of predictions whose normalized form equals the gold's."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise ValueError("nothing to score")
    hits = sum(1 for p, g in zip(preds, golds) if norm(p) == norm(g))
    mean_tokens = (sum(tokens) / len(tokens)) if tokens else 0.0
    return EvalReport(metric_name="exact_match", value=hits / len(preds),
                      n=len(preds), mean_tokens=mean_tokens)


def _as_label(value) -> str:
    return value.value if isinstance(value, Verdict) else str(value)


def agreement(verdict_pairs: list[tuple[Verdict | None, str | Verdict]]) -> EvalReport:
    """Fraction of scored examples where the model verdict matches the human
    label. Records whose model verdict is None (discarded upstream) are
    excluded from numerator and denominator and counted separately."""
    scored = [(m, h) for m, h in verdict_pairs if m is not None]
    discarded = len(verdict_pairs) - len(scored)
    if not scored:
        raise ValueError("no scored verdicts")
    hits = sum(1 for m, h in scored if _as_label(m) == _as_label(h))
    return EvalReport(metric_name="agreement", value=hits / len(scored),
                      n=len(scored), discarded=discarded)


def inconsistency_rate(order_pairs: list[tuple[Verdict, Verdict]]) -> EvalReport:
    """Position bias: fraction of examples whose swapped-order verdict,
    mapped back through the swap (A and B exchange, Tie fixed), differs
    from the original-order verdict."""
    if not order_pairs:
        raise ValueError("no verdict pairs")
    inconsistent = sum(1 for v_orig, v_swapped in order_pairs
                       if swap_verdict(v_swapped) != v_orig)
    return EvalReport(metric_name="inconsistency_rate",
                      value=inconsistent / len(order_pairs), n=len(order_pairs))


def majority_at_k(per_question_samples: list[list[str]], golds: list[str], k: int,
                  norm: Normalizer = IDENTITY_NORMALIZER,
                  per_question_tokens: list[list[int]] | None = None) -> EvalReport:
    """Majority-vote the first k samples per question and score exact match.

    A tied vote scores as incorrect (the denominator stays fixed).
    mean_tokens averages, over questions, the summed token counts of all k
    samples a vote consumed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(per_question_samples) != len(golds):
        raise ValueError("sample lists and golds differ in length")
    if not golds:
        raise ValueError("nothing to score")
    for i, samples in enumerate(per_question_samples):
        if len(samples) < k:
            raise ValueError(f"question {i} has only {len(samples)} samples, need {k}")
    hits = 0
    for samples, gold in zip(per_question_samples, golds):
        winner, _ = vote_groups(samples[:k], norm)
        if winner is not None and norm(winner) == norm(gold):
            hits += 1
    mean_tokens = 0.0
    if per_question_tokens is not None:
        if len(per_question_tokens) != len(golds):
            raise ValueError("token lists and golds differ in length")
        sums = [sum(tok[:k]) for tok in per_question_tokens]
        mean_tokens = sum(sums) / len(sums)
    return EvalReport(metric_name=f"majority@{k}", value=hits / len(golds),
                      n=len(golds), mean_tokens=mean_tokens)


def per_category(records: list[tuple[str | None, object]], metric_fn) -> dict[str, EvalReport]:
    """Group records by category and apply a metric per group.

    ``records`` pairs each category (None lands in "uncategorized") with
    the record the metric consumes; ``metric_fn(list_of_records) ->
    EvalReport``.
    """
    groups: dict[str, list] = {}
    for category, record in records:
        groups.setdefault(category if category else "uncategorized", []).append(record)
    return {category: metric_fn(items) for category, items in groups.items()}


def format_report_table(rows: list[tuple[str, EvalReport]]) -> str:
    """Aligned plain-text table: method, metric, value, #Tokens."""
    header = ("Method", "Metric", "Value", "#Tokens")
    body = [(method, r.metric_name, f"{100 * r.value:.2f}%", f"{r.mean_tokens:.1f}")
            for method, r in rows]
    widths = [max(len(col) for col in column) for column in zip(header, *body)]
    lines = ["  ".join(col.ljust(w) for col, w in zip(row, widths))
             for row in (header, *body)]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)

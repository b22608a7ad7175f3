"""Synthetic symbolic tasks with exact oracles, and JSONL dataset loaders.

The generators are pure functions of (pool, params, seed): the same seed
always yields byte-identical datasets. Gold labels are withheld from the
curation layer and used only by evaluation.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .curation import NUMERIC_NORMALIZER

DEFAULT_SPLIT_SIZES = {"last_letter": (200, 200, 200),
                       "coin_flip": (20000, 3330, 1330)}

COIN_FLIP_VARIANTS = {
    "plain": "",
    "flip_means_reverse": " Flip means reverse.",
    "flip_means_reverse_yes_no": " Flip means reverse. Answer the Yes or No question.",
}


class ConfigError(Exception):
    """Bad generator configuration (empty or duplicated pools, etc.)."""


class SchemaError(Exception):
    """A dataset line violated the expected JSONL schema."""


@dataclass
class TaskInstance:
    id: str
    question: str
    gold: str | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class JudgePair:
    id: str
    query: str
    response_a: str
    response_b: str
    human_label: str | None = None

    def __post_init__(self):
        if self.response_a == self.response_b:
            raise ValueError("the two candidate responses must differ")
        if self.human_label is not None and self.human_label not in ("A", "B", "Tie"):
            raise ValueError(f"invalid human label {self.human_label!r}")


def _load_pool(filename: str) -> list[str]:
    text = resources.files("s2distill.data").joinpath(filename).read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def default_word_pool() -> list[str]:
    return _load_pool("words.txt")


def default_name_pool() -> list[str]:
    return _load_pool("names.txt")


def _check_pool(pool: list[str], what: str) -> None:
    if not pool:
        raise ConfigError(f"{what} pool is empty")
    if any(not w or not w.isalpha() for w in pool):
        raise ConfigError(f"{what} pool entries must be non-empty and alphabetic")
    if len(set(pool)) != len(pool):
        raise ConfigError(f"{what} pool contains duplicates")


def render_last_letter_question(words: list[str]) -> str:
    return (f"Take the last letters of the words in \"{' '.join(words)}\" "
            "and concatenate them.")


def last_letter_gold(words: list[str]) -> str:
    return "".join(w[-1] for w in words)


def _split_plan(count: int | None, task: str) -> list[tuple[str, int]]:
    if count is None:
        sizes = DEFAULT_SPLIT_SIZES[task]
        return list(zip(("train", "valid", "test"), sizes))
    return [("train", count)]


def gen_last_letter(word_pool: list[str] | None = None, n_words: int = 2,
                    count: int | None = None, seed: int = 0) -> list[TaskInstance]:
    """Concatenate-the-last-letters instances.

    When the pool is large enough every generated instance uses fresh
    words, so the whole dataset is built from distinct words; otherwise
    words are reused but duplicate questions are rejected by resampling.
    """
    if n_words < 1:
        raise ConfigError("n_words must be >= 1")
    pool = list(word_pool) if word_pool is not None else default_word_pool()
    _check_pool(pool, "word")
    if len(pool) < n_words:
        raise ConfigError(f"pool of {len(pool)} words cannot fill {n_words}-word instances")

    plan = _split_plan(count, "last_letter")
    total = sum(n for _, n in plan)
    rng = random.Random(seed)

    chunks: list[list[str]] = []
    if len(pool) >= n_words * total:
        shuffled = pool[:]
        rng.shuffle(shuffled)
        chunks = [shuffled[i * n_words:(i + 1) * n_words] for i in range(total)]
    else:
        seen_questions: set[tuple[str, ...]] = set()
        for _ in range(total):
            for _attempt in range(1000):
                words = tuple(rng.sample(pool, n_words))
                if words not in seen_questions:
                    seen_questions.add(words)
                    chunks.append(list(words))
                    break
            else:
                raise ConfigError("could not sample enough distinct word combinations")

    instances = []
    i = 0
    for split, n in plan:
        for j in range(n):
            words = chunks[i]
            instances.append(TaskInstance(
                id=f"last_letter-{split}-{j:05d}",
                question=render_last_letter_question(words),
                gold=last_letter_gold(words),
                meta={"split": split, "words": words},
            ))
            i += 1
    return instances


def coin_flip_gold(flips: list[bool]) -> str:
    """Exact oracle: the coin is still heads up iff the flip count is even."""
    return "Yes" if sum(flips) % 2 == 0 else "No"


def render_coin_flip_question(names: list[str], flips: list[bool]) -> str:
    steps = " ".join(
        f"{name} flips the coin." if flip else f"{name} does not flip the coin."
        for name, flip in zip(names, flips))
    return f"A coin is heads up. {steps} Is the coin still heads up?"


def gen_coin_flip(name_pool: list[str] | None = None,
                  n_steps_range: tuple[int, int] = (2, 4),
                  count: int | None = None, seed: int = 0) -> list[TaskInstance]:
    """Coin-flip parity instances; each step names a distinct person who
    flips the coin or leaves it alone. Step counts are drawn uniformly
    from the inclusive range."""
    lo, hi = n_steps_range
    if lo < 1 or hi < lo:
        raise ConfigError("n_steps_range must satisfy 1 <= lo <= hi")
    pool = list(name_pool) if name_pool is not None else default_name_pool()
    _check_pool(pool, "name")
    if len(pool) < hi:
        raise ConfigError(f"name pool of {len(pool)} cannot fill {hi} distinct steps")

    rng = random.Random(seed)
    instances = []
    for split, n in _split_plan(count, "coin_flip"):
        for j in range(n):
            n_steps = rng.randint(lo, hi)
            names = rng.sample(pool, n_steps)
            flips = [rng.random() < 0.5 for _ in range(n_steps)]
            instances.append(TaskInstance(
                id=f"coin_flip-{split}-{j:05d}",
                question=render_coin_flip_question(names, flips),
                gold=coin_flip_gold(flips),
                meta={"split": split, "n_steps": n_steps, "n_flips": sum(flips)},
            ))
    return instances


def coin_flip_prompt_variant(question: str, variant: str = "plain") -> str:
    """Append the published prompt-suffix ablation for the variant."""
    if variant not in COIN_FLIP_VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    return question + COIN_FLIP_VARIANTS[variant]


def _read_jsonl(path: str | Path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def _require(record: dict, keys: list[str], path, lineno: int) -> None:
    for key in keys:
        if key not in record or not isinstance(record[key], str) or not record[key]:
            raise SchemaError(f"{path}:{lineno}: missing or empty field {key!r}")


def load_judge_pairs(path: str | Path) -> list[JudgePair]:
    """JSONL schema: {id, query, response_a, response_b, human_label?}."""
    pairs = []
    for lineno, record in _read_jsonl(path):
        _require(record, ["id", "query", "response_a", "response_b"], path, lineno)
        try:
            pairs.append(JudgePair(
                id=record["id"], query=record["query"],
                response_a=record["response_a"], response_b=record["response_b"],
                human_label=record.get("human_label"),
            ))
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def load_qa(path: str | Path) -> list[TaskInstance]:
    """JSONL schema: {id, question, gold?, biased?}."""
    instances = []
    for lineno, record in _read_jsonl(path):
        _require(record, ["id", "question"], path, lineno)
        meta = {}
        if "biased" in record:
            if not isinstance(record["biased"], bool):
                raise SchemaError(f"{path}:{lineno}: 'biased' must be a boolean")
            meta["biased"] = record["biased"]
        if "category" in record:
            meta["category"] = record["category"]
        instances.append(TaskInstance(id=record["id"], question=record["question"],
                                      gold=record.get("gold"), meta=meta))
    return instances


def split_by_bias(instances: list[TaskInstance]) -> tuple[list[TaskInstance],
                                                          list[TaskInstance]]:
    """Route records into (biased, unbiased) eval splits by meta.biased."""
    biased = [t for t in instances if t.meta.get("biased")]
    unbiased = [t for t in instances if not t.meta.get("biased")]
    return biased, unbiased


def load_math(path: str | Path) -> list[TaskInstance]:
    """JSONL schema: {id, question, answer}; a trailing "#### n" marker in
    the answer supplies the gold value, normalized numerically."""
    instances = []
    for lineno, record in _read_jsonl(path):
        _require(record, ["id", "question", "answer"], path, lineno)
        answer = record["answer"]
        if "####" in answer:
            answer = answer.rsplit("####", 1)[1].strip()
        gold = NUMERIC_NORMALIZER(answer)
        instances.append(TaskInstance(id=record["id"], question=record["question"],
                                      gold=gold, meta={"raw_answer": record["answer"]}))
    return instances


def write_task_jsonl(instances: list[TaskInstance], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in instances:
            record = {"id": t.id, "question": t.question, "gold": t.gold, "meta": t.meta}
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_task_jsonl(path: str | Path) -> list[TaskInstance]:
    instances = []
    for lineno, record in _read_jsonl(path):
        _require(record, ["id", "question"], path, lineno)
        instances.append(TaskInstance(id=record["id"], question=record["question"],
                                      gold=record.get("gold"),
                                      meta=record.get("meta", {})))
    return instances

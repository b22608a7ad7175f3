"""Prompt templates for the five programs, kept byte-exact.

Placeholders are ``{name}`` tokens filled in a single pass, so braces
inside substituted values are never re-expanded.
"""

from __future__ import annotations

import re

RAR_1STEP = "{question}\n\nReword and elaborate on the inquiry, then provide an answer."

RAR_2STEP_LAST_LETTER_STEP1 = (
    "{question}\n\n"
    "Based on the details given in the initial inquiry, could you kindly rephrase the "
    "question and separate these 2 words in the revised question? Please ensure these "
    "2 words remain unchanged from the original question."
)

RAR_2STEP_COIN_FLIP_STEP1 = (
    "{question}\n\n"
    "Based on the information provided in the original query, could you please rephrase "
    "it and expand it to help you do better answering. Please ensure that your response "
    "solely includes the reformulated question, excluding any introductory phrases or "
    "explanatory remarks, while preserving all the details from the original query."
)

RAR_2STEP_STEP2 = "{rephrased question}"

RAR_2STEP_COIN_FLIP_STEP2 = "{rephrased question} Answer the Yes or No question."

S2A_STAGE1 = (
    "Given the following text by a user, extract the part that is unbiased and not "
    "their opinion, so that using that text alone would be good context for providing "
    "an unbiased answer to the question portion of the text. Please include the actual "
    "question or query that the user is asking. Separate this into two categories "
    "labeled with “Unbiased text context (includes all content except user’s "
    "bias):” and “Question/Query (does not include user bias/preference):”."
    "\n\nText by User: {input}"
)

S2A_STAGE2 = "{input}\n\nAnswer in an unbiased way."

BSM_BRANCH = (
    "We want to evaluate the quality of the responses provided by two AI assistants to "
    "the user question displayed below. Your task is to propose an evaluation plan that "
    "can be executed to compare the two responses. The evaluation plan should consist "
    "of a list of up to five factors that one should consider such as helpfulness, "
    "relevance, accuracy, etc. In each line, write an evaluation criterion along with a "
    "short descrition of how we should evaluate that criterion.\n"
    "User Question: {user_query}\n"
    "Evaluation Plan:"
)

BSM_SOLVE = (
    "You are given a user question and responses provided by two AI assistants. Your "
    "task is to evaluate and score the quality of the responses based on a single "
    "evaluation criterion displayed below. Make sure to evaluate only based on the "
    "criterion specified and none other. In the first line, provide a score between 1 "
    "to 5 for Assistant A's response. In the second line, provide a score between 1 to "
    "5 for Assistant B's response.\n"
    "\n"
    "[User Question]\n"
    "{user_query}\n"
    "[The Start of Assistant A's Answer]\n"
    "{response_a}\n"
    "[The End of Assistant A's Answer]\n"
    "[The Start of Assistant B's Answer]\n"
    "{response_b}\n"
    "[The End of Assistant B's Answer]\n"
    "[Evaluation Criterion]\n"
    "{eval_criterion}\n"
    "[End of Evaluation Criterion]\n"
    "Evaluation of {criterion_name}:"
)

BSM_MERGE = (
    "{solve_output}\n\n"
    "Instruction: You are requested to combine the five points that were previously "
    "discussed. For each point, provide a concise explanation to clarify its relevance. "
    "Also, include the respective score for each point to ensure a thorough "
    "understanding. Once you've done this, please draft a summary paragraph that "
    "encapsulates an overall evaluation based on these five points. Finally, present "
    "your conclusive judgement. Use the format \"[[A]]\" if you determine assistant A "
    "to be superior, \"[[B]]\" if you find assistant B to be better, and \"[[C]]\" in "
    "case of a tie."
)

COT = (
    "Your task is to answer the question below. Give step by step reasoning before you "
    "answer, and when you're ready to answer, please use the format \"Final answer: "
    "...\"\n\n"
    "Question: {input}\n\n"
    "Solution:"
)

USC = (
    "Read the question: {question}. {answer_count} answers have been provided: "
    "{answers} Carefully read all answers and compose the final answer such that it is "
    "consistent with the majority of variants provided. Provide final answer as "
    "\"FINAL: <your final answer>"
)

# Plain pairwise judge prompt: the System 1 counterpart of BSM, and the
# prompt stored in exported judge-distillation examples.
PAIRWISE_JUDGE = (
    "Please act as an impartial judge and evaluate the quality of the responses "
    "provided by two AI assistants to the user question displayed below. Output your "
    "final verdict by strictly following this format: \"[[A]]\" if assistant A is "
    "better, \"[[B]]\" if assistant B is better, and \"[[C]]\" for a tie.\n"
    "\n"
    "[User Question]\n"
    "{user_query}\n"
    "\n"
    "[The Start of Assistant A's Answer]\n"
    "{response_a}\n"
    "[The End of Assistant A's Answer]\n"
    "\n"
    "[The Start of Assistant B's Answer]\n"
    "{response_b}\n"
    "[The End of Assistant B's Answer]"
)

_PLACEHOLDER = re.compile(r"\{([a-z_][a-z_ ]*)\}")


def fill(template: str, values: dict[str, str]) -> str:
    """Substitute ``{name}`` placeholders in one pass.

    Values are inserted literally; braces inside them are not treated as
    placeholders. Unknown placeholders raise KeyError.
    """
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def render_rar_1step(question: str) -> str:
    return fill(RAR_1STEP, {"question": question})


def render_rar_rephrase(question: str, task: str) -> str:
    if task == "last_letter":
        return fill(RAR_2STEP_LAST_LETTER_STEP1, {"question": question})
    # The generic wording is the coin-flip step-1 prompt, which carries no
    # task-specific constraints.
    return fill(RAR_2STEP_COIN_FLIP_STEP1, {"question": question})


def render_rar_answer(rephrased_question: str, task: str) -> str:
    if task == "coin_flip":
        return fill(RAR_2STEP_COIN_FLIP_STEP2, {"rephrased question": rephrased_question})
    return fill(RAR_2STEP_STEP2, {"rephrased question": rephrased_question})


def render_s2a_stage1(text: str) -> str:
    return fill(S2A_STAGE1, {"input": text})


def render_s2a_stage2(rewritten: str) -> str:
    return fill(S2A_STAGE2, {"input": rewritten})


def render_bsm_branch(user_query: str) -> str:
    return fill(BSM_BRANCH, {"user_query": user_query})


def render_bsm_solve(user_query: str, response_a: str, response_b: str,
                     criterion_name: str, criterion_description: str) -> str:
    criterion = f"{criterion_name}: {criterion_description}" if criterion_description \
        else criterion_name
    return fill(BSM_SOLVE, {
        "user_query": user_query,
        "response_a": response_a,
        "response_b": response_b,
        "eval_criterion": criterion,
        "criterion_name": criterion_name,
    })


def render_bsm_merge(solve_output: str) -> str:
    return fill(BSM_MERGE, {"solve_output": solve_output})


def render_cot(question: str) -> str:
    return fill(COT, {"input": question})


def render_cot_shot(question: str, cot: str, answer: str) -> str:
    """One in-context example, mirroring the zero-shot prompt layout."""
    return f"Question: {question}\n\nSolution: {cot}\nFinal answer: {answer}"


def render_answer_only_shot(question: str, answer: str) -> str:
    """In-context example without reasoning, for the direct-answer baseline."""
    return f"Question: {question}\nFinal answer: {answer}"


def render_usc(question: str, answers: list[str]) -> str:
    numbered = "\n".join(f"{i + 1}. {a}" for i, a in enumerate(answers))
    return fill(USC, {
        "question": question,
        "answer_count": str(len(answers)),
        "answers": "\n" + numbered + "\n",
    })


def render_pairwise_judge(user_query: str, response_a: str, response_b: str) -> str:
    return fill(PAIRWISE_JUDGE, {
        "user_query": user_query,
        "response_a": response_a,
        "response_b": response_b,
    })

#!/usr/bin/env python3
"""Manual smoke check against a live OpenAI-compatible endpoint.

Compares direct answering against two-step rephrase-then-answer with
majority voting on generated coin-flip questions. The expectation is that
voting over the two-step program scores at least as well as the direct
baseline; the margin depends entirely on the served model, so this is a
directional check, not a regression gate.

Usage:
  export S2D_API_KEY=...
  python3 scripts/live_smoke.py --endpoint https://host/v1 --model my-model \
      [--count 50] [--n 8] [--seed 7]
"""

import argparse

from s2distill.backend import BackendConfig, SamplingParams, build_backend
from s2distill.curation import YES_NO_NORMALIZER, two_stage_vote_rar
from s2distill.metrics import exact_match
from s2distill.programs import run_system1
from s2distill.tasks import gen_coin_flip


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--endpoint", required=True)
    parser.add_argument("--model", required=True)
    parser.add_argument("--count", type=int, default=50)
    parser.add_argument("--n", type=int, default=8)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--auth-env-var", default="S2D_API_KEY")
    args = parser.parse_args()

    config = BackendConfig(endpoint_url=args.endpoint, model_id=args.model,
                           auth_env_var=args.auth_env_var)
    backend = build_backend(config, kind="http")
    params = SamplingParams(temperature=0.7, max_tokens=512, seed=args.seed)
    instances = gen_coin_flip(count=args.count, seed=args.seed)

    direct, voted, golds = [], [], []
    for idx, t in enumerate(instances):
        question = t.question + " Answer the Yes or No question."
        direct.append(run_system1(backend, question, params).final_text)
        winner = two_stage_vote_rar(backend, t.question, args.n, params)
        voted.append(winner or "")
        golds.append(t.gold)
        print(f"[{idx + 1}/{len(instances)}] gold={t.gold} "
              f"direct={direct[-1]!r} voted={voted[-1]!r}")

    em_direct = exact_match(direct, golds, YES_NO_NORMALIZER).value
    em_voted = exact_match(voted, golds, YES_NO_NORMALIZER).value
    print(f"\ndirect EM:          {em_direct:.3f}")
    print(f"two-step voted EM:  {em_voted:.3f}")
    if em_voted >= em_direct:
        print("smoke check passed: voting matched or beat the direct baseline")
    else:
        print("smoke check FAILED directionally (model-dependent)")


if __name__ == "__main__":
    main()

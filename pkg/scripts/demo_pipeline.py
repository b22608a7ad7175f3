#!/usr/bin/env python3
"""End-to-end dry run of the distillation pipeline on the mock backend.

Generates a coin-flip dataset, curates a distillation set with the
majority-vote filter over the two-step rephrase program, exports the SFT
file, and prints a small metric table. No network access is needed.

Usage: python3 scripts/demo_pipeline.py [--workdir DIR] [--count N] [--seed S]
"""

import argparse
import json
import tempfile
from pathlib import Path

from s2distill.cli import main as cli_main
from s2distill.metrics import EvalReport, format_report_table, majority_at_k
from s2distill.curation import YES_NO_NORMALIZER


def run(argv):
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(f"step failed with exit code {code}: {argv}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default=None)
    parser.add_argument("--count", type=int, default=20)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp())
    workdir.mkdir(parents=True, exist_ok=True)
    dataset = workdir / "dataset.jsonl"
    runs = workdir / "runs.jsonl"
    distill = workdir / "distill.jsonl"
    report = workdir / "curation.json"
    sft = workdir / "sft.jsonl"
    seed = ["--seed", str(args.seed)]

    run(seed + ["gen", "coin-flip", "--count", str(args.count),
                "--out", str(dataset)])
    run(seed + ["run", "--program", "rar2", "--task", "coin_flip",
                "--dataset", str(dataset), "--out", str(runs), "--n", "8"])
    run(seed + ["curate", "--filter", "majority", "--program", "rar2",
                "--task", "coin_flip", "--n", "8", "--dataset", str(dataset),
                "--out", str(distill), "--report", str(report)])
    run(seed + ["export", "--distill", str(distill), "--out", str(sft),
                "--task", "coin_flip"])

    records = [json.loads(line) for line in runs.read_text().splitlines()]
    samples = [[s["final_text"] for s in r["samples"]] for r in records]
    tokens = [[s["tokens"] for s in r["samples"]] for r in records]
    golds = [r["gold"] for r in records]
    rows = []
    for k in (1, 8):
        rows.append((f"rar2 vote@{k}",
                     majority_at_k(samples, golds, k, YES_NO_NORMALIZER, tokens)))
    print()
    print(format_report_table(rows))
    print(f"\nartifacts in {workdir}")


if __name__ == "__main__":
    main()

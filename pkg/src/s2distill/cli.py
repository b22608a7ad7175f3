"""Operator entry point: gen -> run -> curate -> eval -> export pipelines.

Config precedence per key: CLI flag > S2D_* env var > JSON config file >
built-in default. A dry-run mode (--backend mock) exercises the whole
pipeline without network calls.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import curation, export, metrics, programs, tasks
from .backend import (Backend, BackendConfig, BackendError, build_backend,
                      SamplingParams)
from .curation import (CurationReport, DistillExample, FilterSpec, NORMALIZERS,
                       build_distill_set)
from .programs import ProgramError, Verdict

logger = logging.getLogger(__name__)

ENV_PREFIX = "S2D_"

DEFAULTS = {
    "backend": "mock",
    "cache": "off",
    "cache_dir": ".s2d_cache",
    "seed": 0,
    "max_in_flight": 8,
    "endpoint_url": "",
    "model_id": "mock",
    "auth_env_var": "S2D_API_KEY",
    "temperature": 0.7,
    "top_p": 1.0,
    "max_tokens": 1024,
    "timeout": 120.0,
    "max_retries": 3,
}

_KEY_TYPES = {
    "seed": int, "max_in_flight": int, "max_tokens": int, "max_retries": int,
    "temperature": float, "top_p": float, "timeout": float,
}

PROGRAMS = ("system1", "rar1", "rar2", "s2a", "bsm", "cot")
FILTERS = ("majority", "usc", "perturbation")
METRICS = ("exact-match", "agreement", "inconsistency", "majority-at-k")


class UsageError(Exception):
    """Invalid arguments or config; maps to exit code 1."""


def resolve_config(cli_values: dict, environ: dict | None = None,
                   config_file: str | None = None) -> dict:
    """Merge config sources with per-key precedence:
    CLI flag > env var > config file > default."""
    environ = os.environ if environ is None else environ
    file_data: dict = {}
    if config_file:
        path = Path(config_file)
        if not path.exists():
            raise UsageError(f"config file not found: {config_file}")
        try:
            file_data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(file_data) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")

    resolved = {}
    for key, default in DEFAULTS.items():
        caster = _KEY_TYPES.get(key, str)
        value = default
        if key in file_data:
            value = file_data[key]
        env_name = ENV_PREFIX + key.upper()
        if env_name in environ:
            value = environ[env_name]
        if cli_values.get(key) is not None:
            value = cli_values[key]
        try:
            resolved[key] = caster(value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for config key {key!r}: {value!r}") from exc
    return resolved


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def reproducibility_stanza(config: dict) -> dict:
    return {"seed": config["seed"], "config_hash": config_hash(config),
            "cache_mode": config["cache"]}


def make_backend(config: dict) -> Backend:
    backend_config = BackendConfig(
        endpoint_url=config["endpoint_url"],
        model_id=config["model_id"],
        auth_env_var=config["auth_env_var"],
        timeout=config["timeout"],
        max_retries=config["max_retries"],
        max_in_flight=config["max_in_flight"],
        cache_dir=config["cache_dir"] if config["cache"] != "off" else None,
        cache_mode=config["cache"],
    )
    return build_backend(backend_config, kind=config["backend"])


def make_params(config: dict, top_p: float | None = None) -> SamplingParams:
    return SamplingParams(
        temperature=config["temperature"],
        top_p=config["top_p"] if top_p is None else top_p,
        max_tokens=config["max_tokens"],
        seed=config["seed"],
    )


def make_runner(backend: Backend, program: str, params: SamplingParams,
                task: str = "generic"):
    """Build ``runner(x, sample_index) -> trace`` for a named program."""
    if program == "system1":
        return lambda x, i: programs.run_system1(backend, x, params, sample_index=i)
    if program == "rar1":
        return lambda x, i: programs.run_rar_1step(backend, x, params, sample_index=i)
    if program == "rar2":
        return lambda x, i: programs.run_rar_2step(backend, x, params, task=task,
                                                   sample_index=i)
    if program == "s2a":
        return lambda x, i: programs.run_s2a(backend, x, params, sample_index=i)
    if program == "cot":
        return lambda x, i: programs.run_cot(backend, x, params, sample_index=i)
    raise UsageError(f"program {program!r} is not a single-input program")


def make_pair_runner(backend: Backend, params: SamplingParams, merge_mode: str = "average"):
    return lambda query, a, b: programs.run_bsm(backend, query, a, b, params,
                                                merge_mode=merge_mode)


def _write_manifest(out_path: Path, payload: dict) -> None:
    manifest = out_path.with_name(out_path.stem + ".manifest.json")
    manifest.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")


def cmd_gen(args, config: dict) -> int:
    if args.task == "coin-flip":
        instances = tasks.gen_coin_flip(
            n_steps_range=(args.steps_min, args.steps_max),
            count=args.count, seed=config["seed"])
    else:
        instances = tasks.gen_last_letter(n_words=args.n_words, count=args.count,
                                          seed=config["seed"])
    tasks.write_task_jsonl(instances, args.out)
    _write_manifest(Path(args.out), {"task": args.task, "count": len(instances),
                                     **reproducibility_stanza(config)})
    print(f"wrote {len(instances)} instances to {args.out}")
    return 0


def cmd_run(args, config: dict) -> int:
    dataset = tasks.read_task_jsonl(args.dataset)
    if args.limit:
        dataset = dataset[:args.limit]
    backend = make_backend(config)
    params = make_params(config)
    runner = make_runner(backend, args.program, params, task=args.task)
    out_path = Path(args.out)
    with out_path.open("w", encoding="utf-8") as fh:
        for instance in dataset:
            question = tasks.coin_flip_prompt_variant(instance.question, args.variant) \
                if args.variant != "plain" else instance.question
            samples = []
            for i in range(args.n):
                trace = runner(question, i)
                samples.append({"final_text": trace.final_text,
                                "tokens": trace.total_generated_tokens})
            record = {"id": instance.id, "question": question, "gold": instance.gold,
                      "samples": samples}
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    _write_manifest(out_path, {"program": args.program, "n": args.n,
                               "count": len(dataset), **reproducibility_stanza(config)})
    print(f"ran {args.program} over {len(dataset)} inputs -> {args.out}")
    return 0


def _norm_for(name: str) -> curation.Normalizer:
    if name not in NORMALIZERS:
        raise UsageError(f"unknown normalizer {name!r} (choose from {sorted(NORMALIZERS)})")
    return NORMALIZERS[name]


def cmd_curate(args, config: dict) -> int:
    backend = make_backend(config)
    params = make_params(config)
    norm = _norm_for(args.norm)
    filt = FilterSpec(kind=args.filter, n=args.n, strict_majority=args.strict,
                      keep_ties=not args.drop_ties, seed=config["seed"])

    if args.filter == "perturbation":
        pairs = tasks.load_judge_pairs(args.dataset)
        if args.limit:
            pairs = pairs[:args.limit]
        runner = make_pair_runner(backend, params, merge_mode=args.merge_mode)
        examples, report = build_distill_set(pairs, runner, filt, norm)
    else:
        dataset = tasks.read_task_jsonl(args.dataset)
        if args.limit:
            dataset = dataset[:args.limit]
        inputs = [tasks.coin_flip_prompt_variant(t.question, args.variant)
                  if args.variant != "plain" else t.question for t in dataset]
        runner = make_runner(backend, args.program, params, task=args.task)
        examples, report = build_distill_set(
            inputs, runner, filt, norm,
            usc_backend=backend if args.filter == "usc" else None,
            usc_params=params)

    out_path = Path(args.out)
    with out_path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.__dict__, ensure_ascii=False, sort_keys=True) + "\n")
    report_payload = {**report.to_dict(), **reproducibility_stanza(config)}
    Path(args.report).write_text(json.dumps(report_payload, sort_keys=True, indent=2) + "\n",
                                 encoding="utf-8")
    print(f"kept {report.kept}/{report.total} examples -> {args.out}")
    return 0


def _read_jsonl_records(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def cmd_eval(args, config: dict) -> int:
    norm = _norm_for(args.norm)
    if args.metric == "exact-match":
        dataset = {t.id: t for t in tasks.read_task_jsonl(args.dataset)}
        preds = _read_jsonl_records(args.preds)
        pred_texts, golds = [], []
        for record in preds:
            instance = dataset.get(record["id"])
            if instance is None or instance.gold is None:
                raise UsageError(f"prediction id {record['id']!r} has no gold label")
            pred_texts.append(record["prediction"])
            golds.append(instance.gold)
        report = metrics.exact_match(pred_texts, golds, norm)
    elif args.metric == "majority-at-k":
        runs = _read_jsonl_records(args.runs)
        samples = [[s["final_text"] for s in r["samples"]] for r in runs]
        token_lists = [[s["tokens"] for s in r["samples"]] for r in runs]
        golds = [r["gold"] for r in runs]
        if any(g is None for g in golds):
            raise UsageError("run file lacks gold labels")
        report = metrics.majority_at_k(samples, golds, args.k, norm, token_lists)
    elif args.metric == "agreement":
        records = _read_jsonl_records(args.verdicts)
        pairs = [(Verdict(r["model"]) if r.get("model") else None, r["human"])
                 for r in records]
        report = metrics.agreement(pairs)
    else:  # inconsistency
        records = _read_jsonl_records(args.verdicts)
        pairs = [(Verdict(r["original"]), Verdict(r["swapped"])) for r in records]
        report = metrics.inconsistency_rate(pairs)

    payload = report.to_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                                  encoding="utf-8")
    return 0


def cmd_export(args, config: dict) -> int:
    records = _read_jsonl_records(args.distill)
    if not records:
        raise UsageError(f"no distill examples in {args.distill}")
    examples = [DistillExample(**record) for record in records]
    manifest = export.export_sft(examples, args.out, task=args.task,
                                 loss_on_answer_only=not args.full_loss,
                                 extra_manifest=reproducibility_stanza(config))
    print(f"exported {manifest['count']} examples -> {args.out} "
          f"(sha256 {manifest['sha256'][:12]})")
    return 0


def cmd_report(args, config: dict) -> int:
    curation_report = None
    if args.curation:
        data = json.loads(Path(args.curation).read_text(encoding="utf-8"))
        curation_report = CurationReport(**{
            k: data[k] for k in ("total", "kept", "discarded_no_majority",
                                 "discarded_parse_error", "mean_agreement")})
    eval_reports = []
    for path in args.eval or []:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        name = data.pop("name", Path(path).stem)
        eval_reports.append((name, metrics.EvalReport(**data)))
    export.export_report(curation_report, eval_reports, args.out)
    print(f"wrote report bundle -> {args.out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="s2distill",
                     description="Run, curate, evaluate, and export System 2 "
                                 "distillation pipelines.")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--backend", choices=("http", "mock"))
    parser.add_argument("--cache", choices=("off", "record", "replay", "read_through"))
    parser.add_argument("--cache-dir", dest="cache_dir")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic task dataset")
    p.add_argument("task", choices=("coin-flip", "last-letter"))
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--n-words", type=int, default=2)
    p.add_argument("--steps-min", type=int, default=2)
    p.add_argument("--steps-max", type=int, default=4)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run a program over a dataset")
    p.add_argument("--program", choices=PROGRAMS, required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--task", choices=("last_letter", "coin_flip", "generic"),
                   default="generic")
    p.add_argument("--variant", choices=tuple(tasks.COIN_FLIP_VARIANTS), default="plain")
    p.add_argument("--limit", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("curate", help="build a filtered distillation set")
    p.add_argument("--program", choices=PROGRAMS, default="rar2")
    p.add_argument("--filter", choices=FILTERS, required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--norm", default="yes_no")
    p.add_argument("--task", choices=("last_letter", "coin_flip", "generic"),
                   default="generic")
    p.add_argument("--variant", choices=tuple(tasks.COIN_FLIP_VARIANTS), default="plain")
    p.add_argument("--merge-mode", choices=("average", "llm"), default="average")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--drop-ties", action="store_true")
    p.add_argument("--limit", type=int, default=0)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("eval", help="compute a metric")
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--dataset")
    p.add_argument("--preds")
    p.add_argument("--runs")
    p.add_argument("--verdicts")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--norm", default="identity")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write fine-tuning-ready SFT files")
    p.add_argument("--distill", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=tuple(export.TRAINING_SCHEDULE), default=None)
    p.add_argument("--full-loss", action="store_true",
                   help="apply the training loss to the whole sequence")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="bundle curation and eval reports")
    p.add_argument("--curation")
    p.add_argument("--eval", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        cli_values = {key: getattr(args, key, None)
                      for key in ("backend", "cache", "cache_dir", "seed",
                                  "max_in_flight")}
        config = resolve_config(cli_values, config_file=args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (tasks.ConfigError, tasks.SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except (BackendError, ProgramError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

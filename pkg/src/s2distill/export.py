"""Serialize curated distillation sets into fine-tuning-ready JSONL plus a
training-config manifest. Training itself is out of scope; the manifest
records the hyperparameters a consumer should use.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .curation import CurationReport, DistillExample
from .metrics import EvalReport

SFT_KEYS = ("prompt", "completion", "meta")

TRAINING_DEFAULTS = {"dropout": 0.1, "learning_rate": 5.5e-6, "warmup": 1}

# Per-task fine-tuning schedule: task -> (total steps, training tokens per step).
TRAINING_SCHEDULE = {
    "last_letter": (3, 66000),
    "coin_flip": (100, 66000),
    "triviaqa": (350, 23000),
    "oasst2": (600, 131000),
    "gsm8k": (5000, 33000),
}


class ExportError(Exception):
    pass


def manifest_path_for(sft_path: str | Path) -> Path:
    sft_path = Path(sft_path)
    return sft_path.with_name(sft_path.stem + ".manifest.json")


def export_sft(examples: list[DistillExample], path: str | Path,
               loss_on_answer_only: bool = True, task: str | None = None,
               extra_manifest: dict | None = None) -> dict:
    """Write one {prompt, completion, meta} object per line plus a manifest.

    The prompt field stores the direct (System 1) prompt the student will
    be trained on; targets never contain intermediate generations. Export
    is deterministic: the same examples in the same order produce a
    byte-identical file and content hash.
    """
    if not examples:
        raise ExportError("refusing to export an empty distillation set")
    path = Path(path)
    lines = []
    for ex in examples:
        record = {
            "prompt": ex.input,
            "completion": ex.target,
            "meta": {"program": ex.program, "agreement": ex.agreement_fraction},
        }
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    content = "\n".join(lines) + "\n"
    path.write_text(content, encoding="utf-8")

    config = dict(TRAINING_DEFAULTS)
    if task is not None:
        if task in TRAINING_SCHEDULE:
            steps, tokens_per_step = TRAINING_SCHEDULE[task]
            config["steps"] = steps
            config["tokens_per_step"] = tokens_per_step
    manifest = {
        "count": len(examples),
        "sha256": hashlib.sha256(content.encode("utf-8")).hexdigest(),
        "config": config,
        "loss_on_answer_only": loss_on_answer_only,
    }
    if task is not None:
        manifest["task"] = task
    if extra_manifest:
        manifest.update(extra_manifest)
    manifest_path_for(path).write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    return manifest


def export_report(curation_report: CurationReport | None,
                  eval_reports: list[tuple[str, EvalReport]] | None,
                  path: str | Path) -> dict:
    """Single JSON bundle with a stable schema; either section may be absent."""
    bundle: dict = {}
    if curation_report is not None:
        bundle["curation"] = curation_report.to_dict()
    if eval_reports:
        bundle["eval"] = [{"name": name, **report.to_dict()}
                          for name, report in eval_reports]
    Path(path).write_text(
        json.dumps(bundle, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    return bundle


def read_sft(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records

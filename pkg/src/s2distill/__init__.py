"""Toolkit for distilling multi-step (System 2) LLM programs into direct
(System 1) responses: program runners, consistency-based curation, metric
reporting, and SFT dataset export."""

__version__ = "0.1.0"

from .backend import (BackendConfig, ChatMessage, Completion, SamplingParams,
                      build_backend)
from .curation import (DistillExample, FilterSpec, Normalizer, build_distill_set,
                       majority_vote)
from .programs import System2Trace, Verdict

__all__ = [
    "BackendConfig", "ChatMessage", "Completion", "SamplingParams", "build_backend",
    "DistillExample", "FilterSpec", "Normalizer", "build_distill_set",
    "majority_vote", "System2Trace", "Verdict", "__version__",
]

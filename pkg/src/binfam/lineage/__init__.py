"""Creation-time and lineage inference."""

from .infer import InferenceConfig, SAConfig, evaluate_lineage, infer_lineage
from .learn import LearnConfig, corpus_log_evidence, learn_priors
from .model import (
    LineageError,
    LineageGraph,
    LineageModel,
    LineagePriors,
    TimeEvidence,
    score_lineage,
)
from .synth import SyntheticLineage, generate_synthetic_lineage, prufer_decode
from .times import CreationTimePosterior, MCMCConfig, infer_creation_times

__all__ = [
    "CreationTimePosterior",
    "InferenceConfig",
    "LearnConfig",
    "LineageError",
    "LineageGraph",
    "LineageModel",
    "LineagePriors",
    "MCMCConfig",
    "SAConfig",
    "SyntheticLineage",
    "TimeEvidence",
    "corpus_log_evidence",
    "evaluate_lineage",
    "generate_synthetic_lineage",
    "infer_creation_times",
    "infer_lineage",
    "learn_priors",
    "prufer_decode",
    "score_lineage",
]

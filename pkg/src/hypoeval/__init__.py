"""Hypothesis-guided text evaluation.

Learns a bank of natural-language scoring rubrics from a small set of
human-scored examples (optionally informed by summarized literature),
scores new texts with an LLM judge guided by the selected rubrics, and
reports rank correlation against human annotations.
"""

from .evaluator import RubricScorer, ScoreUnparseableError, evaluate, select_hypotheses
from .gateway import (
    CompletionRequest,
    CompletionResult,
    Gateway,
    GatewayError,
    ResponseCache,
    ScriptedProvider,
    live_provider_from_env,
    scripted_provider_from_file,
)
from .hypogen import GenContext, generate_bank, summarize_literature
from .prompts import PromptLibrary
from .rewards import initial_reward, top_k, update_reward
from .stats import MetaRecord, grouped_correlation, pearson, spearman
from .types import (
    AspectSpec,
    CorrelationReport,
    HypoGenConfig,
    Hypothesis,
    HypothesisBank,
    LabeledSample,
    LiteratureCorpus,
    LiteratureSummary,
    ScoreRecord,
    load_aspect,
    load_bank,
    load_samples,
    save_bank,
    save_samples,
    validate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AspectSpec",
    "CompletionRequest",
    "CompletionResult",
    "CorrelationReport",
    "Gateway",
    "GatewayError",
    "GenContext",
    "HypoGenConfig",
    "Hypothesis",
    "HypothesisBank",
    "LabeledSample",
    "LiteratureCorpus",
    "LiteratureSummary",
    "MetaRecord",
    "PromptLibrary",
    "ResponseCache",
    "RubricScorer",
    "ScoreRecord",
    "ScoreUnparseableError",
    "ScriptedProvider",
    "evaluate",
    "generate_bank",
    "grouped_correlation",
    "initial_reward",
    "live_provider_from_env",
    "load_aspect",
    "load_bank",
    "load_samples",
    "pearson",
    "save_bank",
    "save_samples",
    "scripted_provider_from_file",
    "select_hypotheses",
    "spearman",
    "summarize_literature",
    "top_k",
    "update_reward",
    "validate_dataset",
    "__version__",
]

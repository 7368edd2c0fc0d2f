"""Exception hierarchy shared across the pipeline.

Every error raised by library code derives from XaiqaError so the CLI can
report a single machine-parsable error line and exit nonzero.
"""

from __future__ import annotations


class XaiqaError(Exception):
    """Base class for all pipeline errors."""


class CorpusError(XaiqaError):
    """Malformed corpus/vocabulary input or violated document invariants."""


class ConfigError(XaiqaError):
    """Invalid pipeline configuration (all problems listed in the message)."""


class TrainingError(XaiqaError):
    """Classifier training failure (empty corpus, non-finite loss, ...)."""


class ScorerError(XaiqaError):
    """Scoring failure: remote transport/shape problems or bad local input."""


class ExplainError(XaiqaError):
    """Explainer failure: degenerate tallies, oversized docs, scorer errors."""


class EmbedderError(XaiqaError):
    """Embedding provider failure (dimension mismatch, remote errors)."""


class GenerationError(XaiqaError):
    """QA pair generation or post-processing failure."""


class HardnessError(XaiqaError):
    """Lexical-overlap computation failure (e.g. empty filtered question)."""


class MetricsError(XaiqaError):
    """Evaluation/statistics failure (empty samples, shape mismatches)."""


class PromptError(XaiqaError):
    """Prompt assembly failure (budget exceeded by the query alone, ...)."""

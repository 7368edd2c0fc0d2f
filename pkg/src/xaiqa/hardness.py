"""Question-context lexical overlap (QCLO) and hard-subset construction.

QCLO is the fraction of (filtered, stemmed) question words that also occur
in the context. Stopwords and question-template words are removed from both
sides before stemming, so template boilerplate never counts as overlap.
Items with low QCLO are the "hard" questions; the hardest-k% subset takes
the lowest-QCLO items.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

from .errors import HardnessError
from .porter import porter_stem
from .textutil import tokenize

STOPWORDS_VERSION = "builtin-en-1"


def _load_stopwords() -> frozenset[str]:
    text = resources.files("xaiqa.resources").joinpath("stopwords_en.txt").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


DEFAULT_STOPWORDS = _load_stopwords()

# Covers the default question template so its boilerplate never overlaps.
DEFAULT_QUESTION_WORDS = frozenset(
    {
        "who", "what", "when", "where", "why", "how",
        "does", "do", "did", "is", "are", "was", "were",
        "has", "have", "had",
        "patient", "patient's", "history", "medical",
    }
)


@dataclass(frozen=True)
class QcloConfig:
    stopwords: frozenset[str] = field(default=DEFAULT_STOPWORDS)
    question_words: frozenset[str] = field(default=DEFAULT_QUESTION_WORDS)
    apply_stemming: bool = True

    def __post_init__(self) -> None:
        for name, words in (("stopwords", self.stopwords), ("question_words", self.question_words)):
            bad = [w for w in words if w != w.lower()]
            if bad:
                raise HardnessError(f"{name} must be lowercase; offending entries: {sorted(bad)[:5]}")


@dataclass(frozen=True)
class HardnessRecord:
    item_id: str
    qclo: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.qclo <= 1.0:
            raise HardnessError(f"qclo for {self.item_id!r} outside [0, 1]: {self.qclo}")


def _filtered_stems(text: str, cfg: QcloConfig) -> set[str]:
    kept = (t for t in tokenize(text) if t not in cfg.stopwords and t not in cfg.question_words)
    if cfg.apply_stemming:
        return {porter_stem(t) for t in kept}
    return set(kept)


def qclo(question: str, context: str, cfg: QcloConfig | None = None) -> float:
    """|Q ∩ C| / |Q| over filtered, stemmed word sets.

    Raises HardnessError when the question has no surviving tokens after
    filtering; callers flag such items and exclude them from stratification.
    """
    cfg = cfg or QcloConfig()
    q = _filtered_stems(question, cfg)
    if not q:
        raise HardnessError("question has no tokens left after stopword/question-word filtering")
    c = _filtered_stems(context, cfg)
    return len(q & c) / len(q)


def hardest_subset(records: Sequence[HardnessRecord], fraction: float) -> list[HardnessRecord]:
    """Lowest-QCLO items: floor(fraction * N) of them, at least one.

    Sorted ascending by (qclo, item_id) so tied items select stably and
    subsets nest across fractions.
    """
    if not 0.0 < fraction <= 1.0:
        raise HardnessError(f"fraction must lie in (0, 1], got {fraction}")
    if not records:
        return []
    ranked = sorted(records, key=lambda r: (r.qclo, r.item_id))
    k = max(1, math.floor(fraction * len(ranked)))
    return ranked[:k]

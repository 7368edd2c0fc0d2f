"""Sentence-by-label importance via masked sampling, with an exhaustive oracle.

For each of K iterations a random subset of sentences is replaced in-place
by the mask token and the perturbed text is scored. A sentence's importance
for a label is the mean label probability over iterations where the
sentence was unmasked minus the mean over iterations where it was masked.
Joint masking means one run prices every sentence, which is what makes the
estimator cheap relative to one-at-a-time occlusion.

``explain_exhaustive`` computes the same difference over all 2^m mask
patterns and is the convergence oracle for the sampled estimator at
mask probability 0.5.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .corpus import Document
from .errors import ExplainError
from .jsonl import read_jsonl, require_fields, write_jsonl

ScoreFn = Callable[[Sequence[str]], np.ndarray]


@dataclass(frozen=True)
class MspConfig:
    num_iterations: int = 100
    mask_probability: float = 0.1
    mask_token: str = "[MASK]"
    seed: int = 0
    min_count_guard: int = 5

    def __post_init__(self) -> None:
        if self.num_iterations < 1:
            raise ExplainError("num_iterations must reach at least 1")
        if not 0.0 < self.mask_probability < 1.0:
            raise ExplainError("mask_probability must lie strictly between 0 and 1")
        if self.min_count_guard < 1:
            raise ExplainError("min_count_guard must reach at least 1")


@dataclass(frozen=True)
class ImportanceMatrix:
    doc_id: str
    labels: tuple[str, ...]
    scores: np.ndarray  # (n_sentences, n_labels)
    counts_masked: np.ndarray  # (n_sentences,)
    counts_unmasked: np.ndarray  # (n_sentences,)

    def to_record(self, config_echo: dict[str, Any] | None = None) -> dict[str, Any]:
        record = {
            "doc_id": self.doc_id,
            "labels": list(self.labels),
            "scores": self.scores.tolist(),
            "counts_masked": self.counts_masked.tolist(),
            "counts_unmasked": self.counts_unmasked.tolist(),
        }
        if config_echo is not None:
            record["config"] = config_echo
        return record

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "ImportanceMatrix":
        return cls(
            doc_id=str(record["doc_id"]),
            labels=tuple(record["labels"]),
            scores=np.asarray(record["scores"], dtype=np.float64),
            counts_masked=np.asarray(record["counts_masked"], dtype=np.int64),
            counts_unmasked=np.asarray(record["counts_unmasked"], dtype=np.int64),
        )


def _as_score_fn(scorer: Any) -> ScoreFn:
    if callable(scorer):
        return scorer
    if hasattr(scorer, "score_texts"):
        return scorer.score_texts
    raise ExplainError("scorer must be callable or expose score_texts()")


def perturb_text(doc: Document, mask_row: Sequence[bool], mask_token: str) -> str:
    """Document text with masked sentences replaced in-place by the token.

    Inter-sentence whitespace is preserved so offsets of unmasked sentences
    remain recoverable in the perturbed string.
    """
    parts: list[str] = []
    cursor = 0
    for sent, masked in zip(doc.sentences, mask_row):
        parts.append(doc.text[cursor : sent.start])
        parts.append(mask_token if masked else sent.text)
        cursor = sent.end
    parts.append(doc.text[cursor:])
    return "".join(parts)


def _score_perturbed(
    doc: Document,
    masks: np.ndarray,
    score_fn: ScoreFn,
    mask_token: str,
    n_labels: int,
    batch_size: int,
    first_iteration: int = 0,
) -> np.ndarray:
    probs = np.empty((masks.shape[0], n_labels))
    for start in range(0, masks.shape[0], batch_size):
        chunk = masks[start : start + batch_size]
        texts = [perturb_text(doc, row, mask_token) for row in chunk]
        try:
            out = np.asarray(score_fn(texts), dtype=np.float64)
        except Exception as exc:
            lo = first_iteration + start
            raise ExplainError(f"scorer failed on iterations [{lo}, {lo + len(texts)}): {exc}") from exc
        if out.shape != (len(texts), n_labels):
            lo = first_iteration + start
            raise ExplainError(
                f"scorer returned shape {out.shape} for iterations [{lo}, {lo + len(texts)})"
            )
        probs[start : start + len(texts)] = out
    return probs


def _tally_to_matrix(doc_id: str, labels: Sequence[str], masks: np.ndarray, probs: np.ndarray) -> ImportanceMatrix:
    sums_masked, sums_unmasked, n_masked, n_unmasked = kernels.msp_tally(masks, probs)
    degenerate = np.where((n_masked == 0) | (n_unmasked == 0))[0]
    if degenerate.size:
        s = int(degenerate[0])
        state = "unmasked" if n_masked[s] == 0 else "masked"
        raise ExplainError(f"sentence {s} was never {state} after all iterations and guard top-ups")
    scores = sums_unmasked / n_unmasked[:, None] - sums_masked / n_masked[:, None]
    return ImportanceMatrix(
        doc_id=doc_id,
        labels=tuple(labels),
        scores=scores,
        counts_masked=n_masked,
        counts_unmasked=n_unmasked,
    )


def explain(
    doc: Document,
    scorer: Any,
    labels: Sequence[str],
    cfg: MspConfig,
    batch_size: int = 512,
) -> ImportanceMatrix:
    """Masked-sampling importance matrix for one document.

    Exactly ``cfg.num_iterations`` perturbed texts are scored (batched), plus
    guard iterations for any sentence left with an empty masked or unmasked
    tally: each such sentence gets ``cfg.min_count_guard`` extra iterations
    forcing the missing state while the other sentences are drawn i.i.d.

    Deterministic: the mask sequence is a pure function of (doc_id, cfg).
    """
    m = len(doc.sentences)
    if m == 0:
        raise ExplainError(f"document {doc.doc_id!r} has no sentences")
    score_fn = _as_score_fn(scorer)
    n_labels = len(labels)

    seed_key = [cfg.seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(doc.doc_id.encode("utf-8"))]
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    masks = rng.random((cfg.num_iterations, m)) < cfg.mask_probability
    probs = _score_perturbed(doc, masks, score_fn, cfg.mask_token, n_labels, batch_size)

    n_masked = masks.sum(axis=0)
    need_guard = [s for s in range(m) if n_masked[s] == 0 or n_masked[s] == cfg.num_iterations]
    if need_guard:
        extra_rows = []
        for s in need_guard:
            forced = rng.random((cfg.min_count_guard, m)) < cfg.mask_probability
            forced[:, s] = n_masked[s] == 0  # force the missing state
            extra_rows.append(forced)
        extra = np.concatenate(extra_rows)
        extra_probs = _score_perturbed(
            doc, extra, score_fn, cfg.mask_token, n_labels, batch_size, first_iteration=cfg.num_iterations
        )
        masks = np.concatenate([masks, extra])
        probs = np.concatenate([probs, extra_probs])

    return _tally_to_matrix(doc.doc_id, labels, masks, probs)


MAX_EXHAUSTIVE_SENTENCES = 16


def explain_exhaustive(
    doc: Document,
    scorer: Any,
    labels: Sequence[str],
    mask_token: str = "[MASK]",
    batch_size: int = 512,
) -> ImportanceMatrix:
    """Exact importance matrix over all 2^m mask patterns (none excluded).

    The sampled estimator at mask probability 0.5 converges to this value;
    documents above ``MAX_EXHAUSTIVE_SENTENCES`` sentences are rejected.
    """
    m = len(doc.sentences)
    if m == 0:
        raise ExplainError(f"document {doc.doc_id!r} has no sentences")
    if m > MAX_EXHAUSTIVE_SENTENCES:
        raise ExplainError(f"document {doc.doc_id!r} has {m} sentences; exhaustive mode allows {MAX_EXHAUSTIVE_SENTENCES}")
    score_fn = _as_score_fn(scorer)
    patterns = np.arange(2**m, dtype=np.uint32)
    masks = (patterns[:, None] >> np.arange(m)) & 1 == 1
    probs = _score_perturbed(doc, masks, score_fn, mask_token, len(labels), batch_size)
    return _tally_to_matrix(doc.doc_id, labels, masks, probs)


def write_matrices(
    path: str | Path,
    matrices: Iterable[ImportanceMatrix],
    config_echo: dict[str, Any] | None = None,
) -> int:
    return write_jsonl(path, (m.to_record(config_echo) for m in matrices))


def read_matrices(path: str | Path) -> dict[str, ImportanceMatrix]:
    matrices: dict[str, ImportanceMatrix] = {}
    for lineno, record in read_jsonl(path):
        require_fields(path, lineno, record, ("doc_id", "labels", "scores", "counts_masked", "counts_unmasked"))
        matrix = ImportanceMatrix.from_record(record)
        matrices[matrix.doc_id] = matrix
    return matrices

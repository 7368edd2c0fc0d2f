"""Synthetic QA pair generation.

Three generation methods share one contract: exactly one pair per
(document, positive label), with the label description rendered into the
question template and an answer sentence chosen from the document.

  * explainer-driven: answer = sentence at the argmax of the label's
    importance-matrix column, score = the column max;
  * cosine baseline: answer = sentence whose embedding is most similar to
    the label-description embedding, score = that cosine;
  * random baseline: uniform seeded sentence choice, score = 0.

Post-processing re-splits an answer sentence with the extended segmenter
(bullets, numbered lists, semicolons) and keeps the segment most similar
to the question, never lengthening the answer. Answers are always exact
document substrings at recorded offsets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Document, LabelAssignment, LabelVocabulary, SegmenterConfig, segment
from .embedder import Embedder, cosine
from .errors import GenerationError
from .explainer import ImportanceMatrix
from .jsonl import read_jsonl, require_fields, write_jsonl

DEFAULT_TEMPLATE = "Does the patient have {X} in their medical history?"
DEFAULT_TOP_R = 5914

METHODS = ("xaiqa", "xaiqa_pp", "cosine", "random")


@dataclass(frozen=True)
class AnswerSpan:
    start: int
    end: int
    text: str


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: AnswerSpan
    doc_id: str
    label_code: str
    method: str
    score: float


@dataclass(frozen=True)
class GenerationRun:
    run_id: str
    method: str
    config_echo: dict[str, Any]


def make_run_id(method: str, config_echo: Mapping[str, Any]) -> str:
    blob = json.dumps({"method": method, "config": config_echo}, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def render_question(template: str, description: str) -> str:
    if "{X}" not in template:
        raise GenerationError("question template must contain the placeholder {X}")
    return template.replace("{X}", description)


def _positive_labels(vocab: LabelVocabulary, assignment: LabelAssignment) -> list[tuple[int, str, str]]:
    return [
        (j, code, description)
        for j, (code, description) in enumerate(vocab.entries)
        if code in assignment.positive_codes
    ]


def _sentence_answer(doc: Document, sentence_index: int) -> AnswerSpan:
    sent = doc.sentences[sentence_index]
    return AnswerSpan(start=sent.start, end=sent.end, text=sent.text)


def generate_xaiqa(
    docs: Sequence[Document],
    vocab: LabelVocabulary,
    assignments: Sequence[LabelAssignment],
    importance: Mapping[str, ImportanceMatrix],
    template: str = DEFAULT_TEMPLATE,
) -> list[QAPair]:
    """One pair per (doc, positive label): answer at the column argmax.

    Argmax ties resolve to the lowest sentence index. Raises when a
    positive-labeled document has no importance matrix.
    """
    by_doc = {a.doc_id: a for a in assignments}
    pairs: list[QAPair] = []
    for doc in docs:
        assignment = by_doc.get(doc.doc_id)
        if assignment is None or not assignment.positive_codes:
            continue
        matrix = importance.get(doc.doc_id)
        if matrix is None:
            raise GenerationError(f"missing importance matrix for document {doc.doc_id!r}")
        if matrix.labels != vocab.codes:
            raise GenerationError(f"importance matrix for {doc.doc_id!r} has mismatched label order")
        if matrix.scores.shape[0] != len(doc.sentences):
            raise GenerationError(f"importance matrix for {doc.doc_id!r} has {matrix.scores.shape[0]} rows, document has {len(doc.sentences)} sentences")
        for j, code, description in _positive_labels(vocab, assignment):
            column = matrix.scores[:, j]
            idx = int(np.argmax(column))
            pairs.append(
                QAPair(
                    question=render_question(template, description),
                    answer=_sentence_answer(doc, idx),
                    doc_id=doc.doc_id,
                    label_code=code,
                    method="xaiqa",
                    score=float(column[idx]),
                )
            )
    return pairs


def generate_cosine(
    docs: Sequence[Document],
    vocab: LabelVocabulary,
    assignments: Sequence[LabelAssignment],
    embedder: Embedder,
    template: str = DEFAULT_TEMPLATE,
) -> list[QAPair]:
    """One pair per (doc, positive label): the sentence most similar to the
    label description. Ties (including the all-zero case) resolve to the
    lowest sentence index."""
    description_vecs = {
        code: embedder.embed([description])[0] for code, description in vocab.entries
    }
    by_doc = {a.doc_id: a for a in assignments}
    pairs: list[QAPair] = []
    for doc in docs:
        assignment = by_doc.get(doc.doc_id)
        if assignment is None or not assignment.positive_codes:
            continue
        if not doc.sentences:
            raise GenerationError(f"document {doc.doc_id!r} has no sentences")
        sent_vecs = embedder.embed([s.text for s in doc.sentences])
        for _, code, description in _positive_labels(vocab, assignment):
            sims = [cosine(description_vecs[code], v) for v in sent_vecs]
            best = max(range(len(sims)), key=lambda i: (sims[i], -i))
            pairs.append(
                QAPair(
                    question=render_question(template, description),
                    answer=_sentence_answer(doc, best),
                    doc_id=doc.doc_id,
                    label_code=code,
                    method="cosine",
                    score=float(sims[best]),
                )
            )
    return pairs


def generate_random(
    docs: Sequence[Document],
    vocab: LabelVocabulary,
    assignments: Sequence[LabelAssignment],
    seed: int = 0,
    template: str = DEFAULT_TEMPLATE,
) -> list[QAPair]:
    """Uniform seeded sentence choice per (doc, positive label); score 0."""
    rng = np.random.default_rng(seed)
    by_doc = {a.doc_id: a for a in assignments}
    pairs: list[QAPair] = []
    for doc in docs:
        assignment = by_doc.get(doc.doc_id)
        if assignment is None or not assignment.positive_codes:
            continue
        if not doc.sentences:
            raise GenerationError(f"document {doc.doc_id!r} has no sentences")
        for _, code, description in _positive_labels(vocab, assignment):
            idx = int(rng.integers(0, len(doc.sentences)))
            pairs.append(
                QAPair(
                    question=render_question(template, description),
                    answer=_sentence_answer(doc, idx),
                    doc_id=doc.doc_id,
                    label_code=code,
                    method="random",
                    score=0.0,
                )
            )
    return pairs


_EXTENDED_CFG = SegmenterConfig(mode="extended")


def postprocess(
    pairs: Sequence[QAPair],
    docs: Sequence[Document],
    embedder: Embedder,
) -> list[QAPair]:
    """Replace each answer with its extended-mode segment most similar to
    the question; scores are preserved and the method retagged ``xaiqa_pp``.

    The original answer substring is re-split in place, so the new answer is
    an exact document substring and never longer than the old one.
    """
    by_id = {doc.doc_id: doc for doc in docs}
    out: list[QAPair] = []
    for pair in pairs:
        doc = by_id.get(pair.doc_id)
        if doc is None:
            raise GenerationError(f"pair references unknown document {pair.doc_id!r}")
        answer = pair.answer
        if doc.text[answer.start : answer.end] != answer.text:
            raise GenerationError(
                f"answer for {pair.doc_id!r} no longer matches document text at [{answer.start}, {answer.end})"
            )
        segments = segment(answer.text, _EXTENDED_CFG)
        if not segments:
            out.append(replace(pair, method="xaiqa_pp"))
            continue
        question_vec = embedder.embed([pair.question])[0]
        seg_vecs = embedder.embed([s.text for s in segments])
        sims = [cosine(question_vec, v) for v in seg_vecs]
        best = max(range(len(sims)), key=lambda i: (sims[i], -i))
        chosen = segments[best]
        new_answer = AnswerSpan(
            start=answer.start + chosen.start,
            end=answer.start + chosen.end,
            text=chosen.text,
        )
        out.append(replace(pair, answer=new_answer, method="xaiqa_pp"))
    return out


def select_top_r(pairs: Sequence[QAPair], r: int = DEFAULT_TOP_R) -> list[QAPair]:
    """Keep the r highest-scored pairs; ties break by (doc_id, label_code)."""
    if r < 1:
        raise GenerationError("r must reach at least 1")
    ranked = sorted(pairs, key=lambda p: (-p.score, p.doc_id, p.label_code))
    return ranked[: min(r, len(ranked))]


def mix(
    base: Sequence[QAPair],
    synthetic: Sequence[QAPair],
    ratio: tuple[int, int],
    seed: int = 0,
) -> list[QAPair]:
    """Blend base pairs with synthetic pairs at a base:synthetic ratio.

    Draws floor(len(base) * s / b) synthetic pairs without replacement and
    shuffles the blend deterministically; a zero synthetic share returns the
    base list unchanged.
    """
    b, s = ratio
    if b < 1 or s < 0:
        raise GenerationError(f"invalid base:synthetic ratio {ratio!r}")
    need = (len(base) * s) // b
    if need == 0:
        return list(base)
    if need > len(synthetic):
        raise GenerationError(f"ratio {b}:{s} needs {need} synthetic pairs, only {len(synthetic)} available")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(synthetic), size=need, replace=False)
    blended = list(base) + [synthetic[int(i)] for i in chosen]
    rng.shuffle(blended)
    return blended


# -- pairs file ----------------------------------------------------------------


def pair_to_record(pair: QAPair, run_id: str) -> dict[str, Any]:
    return {
        "question": pair.question,
        "answer_text": pair.answer.text,
        "answer_start": pair.answer.start,
        "answer_end": pair.answer.end,
        "doc_id": pair.doc_id,
        "label_code": pair.label_code,
        "method": pair.method,
        "score": pair.score,
        "run_id": run_id,
    }


def write_pairs(path: str | Path, pairs: Iterable[QAPair], run: GenerationRun) -> int:
    return write_jsonl(path, (pair_to_record(p, run.run_id) for p in pairs))


def read_pairs(path: str | Path) -> list[QAPair]:
    pairs: list[QAPair] = []
    fields = ("question", "answer_text", "answer_start", "answer_end", "doc_id", "label_code", "method", "score")
    for lineno, record in read_jsonl(path):
        require_fields(path, lineno, record, fields)
        pairs.append(
            QAPair(
                question=str(record["question"]),
                answer=AnswerSpan(
                    start=int(record["answer_start"]),
                    end=int(record["answer_end"]),
                    text=str(record["answer_text"]),
                ),
                doc_id=str(record["doc_id"]),
                label_code=str(record["label_code"]),
                method=str(record["method"]),
                score=float(record["score"]),
            )
        )
    return pairs

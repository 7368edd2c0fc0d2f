"""Planted-signal corpus factory shared by generator, CLI and acceptance tests.

Every document carries one verbatim-description sentence per label (so
description tokens are non-discriminative) plus, for each positive label,
a drug "signal" sentence whose presence is perfectly tied to the label.
A classifier trained on this corpus must key on the drug tokens, so the
explainer-driven method should answer with the signal sentence while the
cosine baseline answers with the verbatim-description sentence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from xaiqa.corpus import Document, LabelAssignment, LabelVocabulary, make_document

LABELS = (
    ("C01", "unspecified hypothyroidism", "levothyroxine"),
    ("C02", "esophageal reflux", "omeprazole"),
    ("C03", "type 2 diabetes mellitus", "metformin"),
    ("C04", "congestive heart failure", "furosemide"),
    ("C05", "unspecified glaucoma", "latanoprost"),
    ("C06", "rheumatoid arthritis", "methotrexate"),
)

_FILLERS = (
    "followup scheduled routine stable vitals recorded morning rounds completed "
    "notes reviewed today plan discussed family meeting held diet advanced tolerated "
    "ambulating hallway assistance sleep adequate rest comfortable afebrile overnight"
).split()


def description_sentence(description: str) -> str:
    return description.capitalize() + " noted on problem list."

def signal_sentence(drug: str) -> str:
    return f"Continue {drug} 100 mcg tablet daily."


@dataclass(frozen=True)
class PlantedCorpus:
    docs: list[Document]
    vocab: LabelVocabulary
    assignments: list[LabelAssignment]
    # (doc_id, code) -> sentence index of the planted signal / description
    signal_index: dict[tuple[str, str], int]
    description_index: dict[tuple[str, str], int]


def build_planted_corpus(n_docs: int = 50, seed: int = 7, positive_rate: float = 0.4) -> PlantedCorpus:
    rng = np.random.default_rng(seed)
    vocab = LabelVocabulary(entries=tuple((code, desc) for code, desc, _ in LABELS))
    docs: list[Document] = []
    assignments: list[LabelAssignment] = []
    signal_index: dict[tuple[str, str], int] = {}
    description_index: dict[tuple[str, str], int] = {}

    for i in range(n_docs):
        doc_id = f"doc{i:03d}"
        positive = [code for code, _, _ in LABELS if rng.random() < positive_rate]
        if not positive:  # every document carries at least one label
            positive = [LABELS[int(rng.integers(0, len(LABELS)))][0]]

        sentences = [description_sentence(desc) for _, desc, _ in LABELS]
        desc_slots = list(range(len(LABELS)))
        for code, _, drug in LABELS:
            if code in positive:
                sentences.append(signal_sentence(drug))
        n_fillers = int(rng.integers(3, 6))
        for _ in range(n_fillers):
            words = rng.choice(_FILLERS, size=int(rng.integers(4, 7)), replace=False)
            sentences.append(" ".join(words).capitalize() + ".")

        order = rng.permutation(len(sentences))
        shuffled = [sentences[j] for j in order]
        doc = make_document(doc_id, " ".join(shuffled))
        assert len(doc.sentences) == len(sentences), "fixture sentences must survive segmentation"

        position_of = {int(j): pos for pos, j in enumerate(order)}
        for slot, (code, _, _) in zip(desc_slots, LABELS):
            description_index[(doc_id, code)] = position_of[slot]
        cursor = len(LABELS)
        for code, _, drug in LABELS:
            if code in positive:
                signal_index[(doc_id, code)] = position_of[cursor]
                cursor += 1

        docs.append(doc)
        assignments.append(LabelAssignment(doc_id=doc_id, positive_codes=frozenset(positive)))
    return PlantedCorpus(docs, vocab, assignments, signal_index, description_index)


def write_corpus_files(corpus: PlantedCorpus, directory: Path) -> tuple[Path, Path]:
    directory.mkdir(parents=True, exist_ok=True)
    corpus_path = directory / "corpus.jsonl"
    vocab_path = directory / "vocab.jsonl"
    by_doc = {a.doc_id: sorted(a.positive_codes) for a in corpus.assignments}
    with corpus_path.open("w", encoding="utf-8") as fh:
        for doc in corpus.docs:
            fh.write(json.dumps({"doc_id": doc.doc_id, "text": doc.text, "codes": by_doc[doc.doc_id]}) + "\n")
    with vocab_path.open("w", encoding="utf-8") as fh:
        for code, description in corpus.vocab.entries:
            fh.write(json.dumps({"code": code, "description": description}) + "\n")
    return corpus_path, vocab_path

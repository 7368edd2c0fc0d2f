"""Black-box multi-label scorers and ranking metrics.

The builtin scorer is a TF-IDF linear model: log-scaled term frequency times
smoothed idf, one logistic regression per label, trained by mini-batch
gradient descent with L2 weight decay. It is a deterministic, desk-scale
stand-in for a fine-tuned neural classifier; the explainer only ever sees
the ``score_texts`` surface, so builtin and remote scorers are
interchangeable.

Remote scorer wire protocol (JSON over HTTP):
    GET  <endpoint>/labels -> {"labels": [str, ...]}           (handshake)
    POST <endpoint>/score  {"texts": [str, ...]}
         -> {"scores": [[float, ...], ...], "truncated": [bool, ...]}
"""

from __future__ import annotations

import json
import math
import urllib.error
import urllib.request
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import kernels
from .corpus import Document, LabelAssignment, LabelVocabulary
from .errors import ScorerError, TrainingError
from .textutil import tokenize

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0
    epochs: int = 80
    batch_size: int = 16
    weight_decay: float = 0.01
    seed: int = 0


class Scorer(Protocol):
    """Anything that maps texts to a (n_texts, n_labels) probability matrix."""

    labels: tuple[str, ...]

    def score_texts(self, texts: Sequence[str]) -> np.ndarray: ...


@dataclass
class LinearModelParams:
    """Trained TF-IDF logistic model; immutable after training."""

    vocab: dict[str, int]  # term -> feature column
    idf: np.ndarray  # (n_features,)
    weights: np.ndarray  # (n_labels, n_features)
    bias: np.ndarray  # (n_labels,)
    labels: tuple[str, ...]
    train_config: TrainConfig
    epoch_losses: tuple[float, ...] = ()
    labels_without_positives: tuple[str, ...] = ()

    def featurize(self, texts: Sequence[str]) -> np.ndarray:
        x = np.zeros((len(texts), len(self.idf)))
        for row, text in enumerate(texts):
            counts: dict[int, int] = {}
            for token in tokenize(text):
                col = self.vocab.get(token)
                if col is not None:
                    counts[col] = counts.get(col, 0) + 1
            for col, count in counts.items():
                x[row, col] = (1.0 + math.log(count)) * self.idf[col]
        return x

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        z = self.featurize(texts) @ self.weights.T + self.bias
        return _sigmoid(z)

    def save(self, path: str | Path) -> None:
        payload = {
            "schema_version": MODEL_SCHEMA_VERSION,
            "kind": "tfidf_logistic",
            "vocab": self.vocab,
            "idf": self.idf.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "labels": list(self.labels),
            "train_config": asdict(self.train_config),
            "epoch_losses": list(self.epoch_losses),
            "labels_without_positives": list(self.labels_without_positives),
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearModelParams":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        version = payload.get("schema_version")
        if version != MODEL_SCHEMA_VERSION:
            raise ScorerError(f"unsupported model schema version: {version!r}")
        return cls(
            vocab={str(k): int(v) for k, v in payload["vocab"].items()},
            idf=np.asarray(payload["idf"], dtype=np.float64),
            weights=np.asarray(payload["weights"], dtype=np.float64),
            bias=np.asarray(payload["bias"], dtype=np.float64),
            labels=tuple(payload["labels"]),
            train_config=TrainConfig(**payload["train_config"]),
            epoch_losses=tuple(payload.get("epoch_losses", ())),
            labels_without_positives=tuple(payload.get("labels_without_positives", ())),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[np.logical_not(pos)])
    out[np.logical_not(pos)] = ez / (1.0 + ez)
    return out


def train_linear(
    docs: Sequence[Document],
    vocab: LabelVocabulary,
    assignments: Sequence[LabelAssignment],
    config: TrainConfig | None = None,
) -> LinearModelParams:
    """Fit the builtin model. Deterministic given ``config.seed``.

    Labels with no positive example are kept as all-negative columns (so the
    score matrix stays aligned with the vocabulary) and reported via a
    warning and ``labels_without_positives``.
    """
    config = config or TrainConfig()
    if not docs:
        raise TrainingError("cannot train on an empty corpus")

    doc_tokens = [tokenize(doc.text) for doc in docs]
    terms = sorted({t for tokens in doc_tokens for t in tokens})
    term_col = {t: i for i, t in enumerate(terms)}
    n_docs, n_feat = len(docs), len(terms)

    df = np.zeros(n_feat)
    for tokens in doc_tokens:
        for col in {term_col[t] for t in tokens}:
            df[col] += 1
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0

    x = np.zeros((n_docs, n_feat))
    for row, tokens in enumerate(doc_tokens):
        counts: dict[int, int] = {}
        for t in tokens:
            col = term_col[t]
            counts[col] = counts.get(col, 0) + 1
        for col, count in counts.items():
            x[row, col] = (1.0 + math.log(count)) * idf[col]

    positives = {a.doc_id: a.positive_codes for a in assignments}
    y = np.zeros((n_docs, len(vocab)))
    for row, doc in enumerate(docs):
        for j, code in enumerate(vocab.codes):
            if code in positives.get(doc.doc_id, frozenset()):
                y[row, j] = 1.0

    empty = tuple(code for j, code in enumerate(vocab.codes) if y[:, j].sum() == 0)
    if empty:
        warnings.warn(f"labels with no positive example: {', '.join(empty)}", stacklevel=2)

    rng = np.random.default_rng(config.seed)
    order = np.stack([rng.permutation(n_docs) for _ in range(config.epochs)]) if config.epochs else np.zeros((0, n_docs), dtype=np.int64)
    wt, bias, losses, bad_epoch, bad_batch = kernels.fit_logistic(
        x, y, order, config.batch_size, config.learning_rate, config.weight_decay
    )
    if bad_epoch >= 0:
        raise TrainingError(f"non-finite loss at epoch {bad_epoch}, batch {bad_batch}")

    return LinearModelParams(
        vocab=term_col,
        idf=idf,
        weights=np.ascontiguousarray(wt.T),
        bias=bias,
        labels=vocab.codes,
        train_config=config,
        epoch_losses=tuple(float(v) for v in losses),
        labels_without_positives=empty,
    )


def score(scorer: Scorer, texts: Sequence[str]) -> np.ndarray:
    """Score texts with any scorer; validates shape and [0, 1] range."""
    if not texts:
        return np.zeros((0, len(scorer.labels)))
    matrix = np.asarray(scorer.score_texts(texts), dtype=np.float64)
    if matrix.shape != (len(texts), len(scorer.labels)):
        raise ScorerError(
            f"score matrix shape {matrix.shape} does not match ({len(texts)}, {len(scorer.labels)})"
        )
    if not np.isfinite(matrix).all() or (matrix < 0).any() or (matrix > 1).any():
        raise ScorerError("score matrix contains values outside [0, 1]")
    return matrix


class RemoteScorer:
    """HTTP client for an external multi-label scorer.

    Fetches the label order once at construction; batches score requests.
    ``truncated_total`` counts texts the server reported as truncated, so
    the pipeline can log coverage.
    """

    def __init__(self, endpoint: str, batch_size: int = 32, timeout: float = 30.0) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.batch_size = batch_size
        self.timeout = timeout
        self.truncated_total = 0
        payload = self._request("GET", f"{self.endpoint}/labels", None, batch_index=0)
        labels = payload.get("labels")
        if not isinstance(labels, list) or not all(isinstance(c, str) for c in labels):
            raise ScorerError("handshake response missing 'labels' list")
        self.labels: tuple[str, ...] = tuple(labels)

    def _request(self, method: str, url: str, body: dict | None, batch_index: int) -> dict:
        data = json.dumps(body).encode("utf-8") if body is not None else None
        req = urllib.request.Request(url, data=data, method=method, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except (urllib.error.URLError, OSError) as exc:
            raise ScorerError(f"remote scorer transport failure at batch {batch_index}: {exc}") from exc
        try:
            payload = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ScorerError(f"remote scorer returned malformed JSON at batch {batch_index}") from exc
        if not isinstance(payload, dict):
            raise ScorerError(f"remote scorer returned a non-object response at batch {batch_index}")
        return payload

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows: list[list[float]] = []
        for batch_index, start in enumerate(range(0, len(texts), self.batch_size)):
            batch = list(texts[start : start + self.batch_size])
            payload = self._request("POST", f"{self.endpoint}/score", {"texts": batch}, batch_index)
            scores = payload.get("scores")
            if not isinstance(scores, list) or len(scores) != len(batch):
                raise ScorerError(f"remote scorer shape mismatch at batch {batch_index}")
            for row in scores:
                if not isinstance(row, list) or len(row) != len(self.labels):
                    raise ScorerError(f"remote scorer shape mismatch at batch {batch_index}")
            truncated = payload.get("truncated")
            if isinstance(truncated, list):
                self.truncated_total += sum(1 for t in truncated if t)
            rows.extend(scores)
        return np.asarray(rows, dtype=np.float64).reshape(len(texts), len(self.labels))


# -- ranking metrics ----------------------------------------------------------


@dataclass(frozen=True)
class ClassifierMetrics:
    micro_ap: float
    macro_ap: float
    per_label_ap: dict[str, float] = field(default_factory=dict)
    skipped_labels: tuple[str, ...] = ()


def average_precision(scores: Sequence[float], positives: Sequence[bool]) -> float:
    """Step-interpolated AP over the score-descending ranking.

    Ties are broken by ascending item position (callers order items by
    doc_id), so AP is a pure function of its inputs. Undefined without at
    least one positive.
    """
    if len(scores) != len(positives):
        raise ScorerError("scores and positives must have equal length")
    total_pos = sum(1 for p in positives if p)
    if total_pos == 0:
        raise ScorerError("average precision is undefined without positives")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ap = 0.0
    tp = 0
    for rank, i in enumerate(order, start=1):
        if positives[i]:
            tp += 1
            ap += (1.0 / total_pos) * (tp / rank)
    return ap


def evaluate_classifier(
    scorer: Scorer,
    docs: Sequence[Document],
    assignments: Sequence[LabelAssignment],
    vocab: LabelVocabulary,
) -> ClassifierMetrics:
    """Micro/macro average precision of a scorer over a labeled corpus.

    Labels without any positive are excluded from the macro average and
    reported in ``skipped_labels``. Score ties are broken by ascending
    doc_id (and by label order for the pooled micro ranking).
    """
    docs = sorted(docs, key=lambda d: d.doc_id)
    matrix = score(scorer, [doc.text for doc in docs])
    positives = {a.doc_id: a.positive_codes for a in assignments}
    y = np.zeros(matrix.shape, dtype=bool)
    for row, doc in enumerate(docs):
        for j, code in enumerate(vocab.codes):
            y[row, j] = code in positives.get(doc.doc_id, frozenset())

    per_label: dict[str, float] = {}
    skipped: list[str] = []
    for j, code in enumerate(vocab.codes):
        if not y[:, j].any():
            skipped.append(code)
            continue
        per_label[code] = average_precision(matrix[:, j].tolist(), y[:, j].tolist())
    macro = float(np.mean(list(per_label.values()))) if per_label else 0.0

    flat_order = sorted(
        ((i, j) for i in range(matrix.shape[0]) for j in range(matrix.shape[1])),
        key=lambda ij: (-matrix[ij[0], ij[1]], ij[1], ij[0]),
    )
    micro = average_precision(
        [matrix[i, j] for i, j in flat_order], [bool(y[i, j]) for i, j in flat_order]
    )
    return ClassifierMetrics(micro_ap=micro, macro_ap=macro, per_label_ap=per_label, skipped_labels=tuple(skipped))

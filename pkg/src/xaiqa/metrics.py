"""Extractive-QA scoring and the statistics used to compare methods.

Span metrics: ROUGE-2 bigram recall (lowercase alphanumeric tokens,
clipped bigram counts, unigram-recall fallback for references shorter
than two tokens), token F1 and exact match over SQuAD-style normalized
text (lowercase, punctuation stripped, articles dropped, whitespace
collapsed). Items with several references score against each and keep
the max per metric.

Statistics: percentile bootstrap of per-item means, Welch's unequal
variance t-test (p-values from a continued-fraction regularized
incomplete beta, iteration cap 300, documented below), Cohen's kappa
and raw agreement, and the rule for combining two annotators' judgments
into semantic/lexical/abbreviation outcomes.
"""

from __future__ import annotations

import math
import re
import string
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import MetricsError
from .jsonl import read_jsonl, require_fields, write_jsonl
from .textutil import tokenize

# -- domain records -----------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    item_id: str
    span_text: str
    start_idx: int | None = None
    parse_failed: bool = False


@dataclass(frozen=True)
class GoldAnswer:
    text: str
    start: int | None = None


@dataclass(frozen=True)
class GoldItem:
    item_id: str
    question: str
    context_doc_id: str
    answers: tuple[GoldAnswer, ...]


@dataclass(frozen=True)
class AnnotationRecord:
    pair_id: str
    annotator_id: str
    correct: bool
    lexical: bool
    abbreviation: bool
    negation: bool
    method: str = "unknown"

    def __post_init__(self) -> None:
        if (self.lexical or self.abbreviation or self.negation) and not self.correct:
            raise MetricsError(
                f"annotation for pair {self.pair_id!r} by {self.annotator_id!r} marks a flag without 'correct'"
            )


# -- span metrics ---------------------------------------------------------------

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop English articles, collapse spaces."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(prediction: str, reference: str) -> int:
    return int(normalize_answer(prediction) == normalize_answer(reference))


def token_f1(prediction: str, reference: str) -> float:
    pred = normalize_answer(prediction).split()
    ref = normalize_answer(reference).split()
    if not pred or not ref:
        return float(pred == ref)
    common = Counter(pred) & Counter(ref)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision = same / len(pred)
    recall = same / len(ref)
    return 2 * precision * recall / (precision + recall)


def rouge2_recall(prediction: str, reference: str) -> float:
    """Fraction of reference bigrams present in the prediction (clipped counts).

    References with fewer than two tokens fall back to unigram recall; an
    empty reference scores 1.0 only against an empty prediction.
    """
    pred_tokens = tokenize(prediction)
    ref_tokens = tokenize(reference)
    if len(ref_tokens) < 2:
        if not ref_tokens:
            return float(not pred_tokens)
        return float(ref_tokens[0] in pred_tokens)
    ref_bigrams = Counter(zip(ref_tokens, ref_tokens[1:]))
    pred_bigrams = Counter(zip(pred_tokens, pred_tokens[1:]))
    matched = sum((ref_bigrams & pred_bigrams).values())
    return matched / sum(ref_bigrams.values())


METRIC_NAMES = ("rouge2", "f1", "em")


def score_item(prediction: str, references: Sequence[str]) -> dict[str, float]:
    """Max over references for each metric independently."""
    if not references:
        raise MetricsError("an item needs at least one reference answer")
    return {
        "rouge2": max(rouge2_recall(prediction, r) for r in references),
        "f1": max(token_f1(prediction, r) for r in references),
        "em": float(max(exact_match(prediction, r) for r in references)),
    }


# -- bootstrap ------------------------------------------------------------------


def bootstrap_ci(
    values: Sequence[float],
    iterations: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float, float]:
    """(mean of resample means, percentile low, percentile high).

    Resamples with replacement at the original size; the interval takes the
    (1 - level)/2 and (1 + level)/2 quantiles of the resample means.
    """
    if len(values) == 0:
        raise MetricsError("bootstrap needs at least one value")
    if iterations < 1:
        raise MetricsError("bootstrap needs at least one iteration")
    if not 0.0 < level < 1.0:
        raise MetricsError("bootstrap level must lie strictly between 0 and 1")
    arr = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.shape[0], size=(iterations, arr.shape[0]))
    means = kernels.bootstrap_means(arr, idx)
    low, high = np.quantile(means, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return float(means.mean()), float(low), float(high)


# -- Welch's t-test ---------------------------------------------------------------

_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-14
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise MetricsError("incomplete beta continued fraction did not converge within 300 iterations")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) by Lentz continued fraction, accurate to ~1e-12."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_value: float


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> WelchResult:
    """Two-sample t-test without assuming equal variances.

    Uses the Welch statistic and the Welch-Satterthwaite degrees of freedom;
    the two-sided p-value comes from the t distribution via the regularized
    incomplete beta.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise MetricsError("both samples need at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise MetricsError("both samples have zero variance")
    se_a, se_b = va / a.size, vb / b.size
    t = (a.mean() - b.mean()) / math.sqrt(se_a + se_b)
    df = (se_a + se_b) ** 2 / (se_a**2 / (a.size - 1) + se_b**2 / (b.size - 1))
    x = df / (df + t * t)
    p = regularized_incomplete_beta(df / 2.0, 0.5, x)
    return WelchResult(t=float(t), df=float(df), p_value=float(min(1.0, p)))


# -- agreement --------------------------------------------------------------------


def raw_agreement(a: Sequence[bool], b: Sequence[bool]) -> float:
    if len(a) != len(b):
        raise MetricsError(f"annotation length mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise MetricsError("agreement needs at least one item")
    return sum(1 for x, y in zip(a, b) if bool(x) == bool(y)) / len(a)


def cohen_kappa(a: Sequence[bool], b: Sequence[bool]) -> float:
    """Chance-corrected agreement with marginal-product chance term.

    When both raters are constant and equal the chance agreement is 1 and
    kappa is defined as 1.
    """
    po = raw_agreement(a, b)
    pa = sum(map(bool, a)) / len(a)
    pb = sum(map(bool, b)) / len(b)
    pe = pa * pb + (1.0 - pa) * (1.0 - pb)
    if pe == 1.0:
        return 1.0
    return (po - pe) / (1.0 - pe)


# -- annotation combination ----------------------------------------------------------


@dataclass(frozen=True)
class CombinedAnnotation:
    pair_id: str
    method: str
    semantic: bool
    lexical: bool
    abbreviation: bool


def combine_annotations(records: Sequence[AnnotationRecord]) -> list[CombinedAnnotation]:
    """Merge two annotators' records per pair.

    semantic: correct by at least one annotator and flagged lexical or
    abbreviation by neither; lexical/abbreviation: flagged by either.
    """
    by_pair: dict[str, list[AnnotationRecord]] = {}
    for record in records:
        by_pair.setdefault(record.pair_id, []).append(record)
    combined: list[CombinedAnnotation] = []
    for pair_id in sorted(by_pair):
        pair_records = by_pair[pair_id]
        if len(pair_records) != 2 or pair_records[0].annotator_id == pair_records[1].annotator_id:
            raise MetricsError(f"pair {pair_id!r} needs exactly two annotators, got {len(pair_records)}")
        first, second = pair_records
        if first.method != second.method:
            raise MetricsError(f"pair {pair_id!r} has inconsistent methods between annotators")
        lexical = first.lexical or second.lexical
        abbreviation = first.abbreviation or second.abbreviation
        semantic = (first.correct or second.correct) and not lexical and not abbreviation
        combined.append(
            CombinedAnnotation(
                pair_id=pair_id,
                method=first.method,
                semantic=semantic,
                lexical=lexical,
                abbreviation=abbreviation,
            )
        )
    return combined


def count_by_method(combined: Sequence[CombinedAnnotation]) -> dict[str, dict[str, int]]:
    counts: dict[str, dict[str, int]] = {}
    for item in combined:
        bucket = counts.setdefault(item.method, {"semantic": 0, "lexical": 0, "abbreviation": 0, "total": 0})
        bucket["total"] += 1
        bucket["semantic"] += int(item.semantic)
        bucket["lexical"] += int(item.lexical)
        bucket["abbreviation"] += int(item.abbreviation)
    return counts


# -- evaluation report -----------------------------------------------------------


@dataclass(frozen=True)
class StratumSummary:
    n: int
    metrics: dict[str, tuple[float, float, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class EvalReport:
    per_item: dict[str, dict[str, float]]
    strata: dict[str, StratumSummary]
    bootstrap_iterations: int
    bootstrap_level: float
    bootstrap_seed: int
    missing_predictions: tuple[str, ...] = ()
    ignored_predictions: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "bootstrap": {
                "iterations": self.bootstrap_iterations,
                "level": self.bootstrap_level,
                "seed": self.bootstrap_seed,
            },
            "strata": {
                name: {
                    "n": summary.n,
                    "metrics": {
                        metric: {"mean": m, "ci_low": lo, "ci_high": hi}
                        for metric, (m, lo, hi) in summary.metrics.items()
                    },
                }
                for name, summary in self.strata.items()
            },
            "per_item": self.per_item,
            "missing_predictions": list(self.missing_predictions),
            "ignored_predictions": list(self.ignored_predictions),
        }


def evaluate_predictions(
    gold: Sequence[GoldItem],
    predictions: Sequence[Prediction],
    strata: Mapping[str, Sequence[str]] | None = None,
    iterations: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> EvalReport:
    """Score predictions against gold items and aggregate per stratum.

    Gold items without a prediction are scored as abstentions (empty span)
    and listed in ``missing_predictions``; predictions without a gold item
    are ignored and listed. ``strata`` maps stratum name to item ids; the
    'full' stratum over all gold items is always present. Bootstrap seeds
    derive from (seed, stratum, metric) so results are order-independent.
    """
    by_id: dict[str, Prediction] = {}
    gold_ids = {item.item_id for item in gold}
    ignored: list[str] = []
    for pred in predictions:
        if pred.item_id not in gold_ids:
            ignored.append(pred.item_id)
            continue
        by_id[pred.item_id] = pred

    per_item: dict[str, dict[str, float]] = {}
    missing: list[str] = []
    for item in gold:
        pred = by_id.get(item.item_id)
        if pred is None:
            missing.append(item.item_id)
        span = pred.span_text if pred is not None else ""
        per_item[item.item_id] = score_item(span, [a.text for a in item.answers])

    all_strata: dict[str, Sequence[str]] = {"full": [item.item_id for item in gold]}
    if strata:
        all_strata.update(strata)

    summaries: dict[str, StratumSummary] = {}
    for name, ids in all_strata.items():
        scored_ids = [i for i in ids if i in per_item]
        summary_metrics: dict[str, tuple[float, float, float]] = {}
        for metric_idx, metric in enumerate(METRIC_NAMES):
            values = [per_item[i][metric] for i in scored_ids]
            if not values:
                continue
            stratum_seed = np.random.SeedSequence(
                [seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8")), metric_idx]
            ).generate_state(1)[0]
            summary_metrics[metric] = bootstrap_ci(values, iterations, level, int(stratum_seed))
        summaries[name] = StratumSummary(n=len(scored_ids), metrics=summary_metrics)

    return EvalReport(
        per_item=per_item,
        strata=summaries,
        bootstrap_iterations=iterations,
        bootstrap_level=level,
        bootstrap_seed=seed,
        missing_predictions=tuple(missing),
        ignored_predictions=tuple(ignored),
    )


def render_table(report: EvalReport) -> str:
    """Aligned plain-text table: one row per stratum."""
    header = ["stratum", "n"] + [f"{m} mean [ci]" for m in METRIC_NAMES]
    rows = [header]
    for name, summary in report.strata.items():
        row = [name, str(summary.n)]
        for metric in METRIC_NAMES:
            if metric in summary.metrics:
                mean, lo, hi = summary.metrics[metric]
                row.append(f"{mean:.3f} [{lo:.3f} - {hi:.3f}]")
            else:
                row.append("-")
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# -- file formats -----------------------------------------------------------------


def read_gold(path: str | Path) -> list[GoldItem]:
    items: list[GoldItem] = []
    for lineno, record in read_jsonl(path):
        require_fields(path, lineno, record, ("item_id", "question", "context_doc_id", "answers"))
        answers = tuple(
            GoldAnswer(text=str(a["text"]), start=a.get("start")) for a in record["answers"]
        )
        if not answers:
            raise MetricsError(f"{path}:{lineno}: gold item {record['item_id']!r} has no answers")
        items.append(
            GoldItem(
                item_id=str(record["item_id"]),
                question=str(record["question"]),
                context_doc_id=str(record["context_doc_id"]),
                answers=answers,
            )
        )
    return items


def read_predictions(path: str | Path) -> list[Prediction]:
    preds: list[Prediction] = []
    for lineno, record in read_jsonl(path):
        require_fields(path, lineno, record, ("item_id", "span_text"))
        start_idx = record.get("start_idx")
        preds.append(
            Prediction(
                item_id=str(record["item_id"]),
                span_text=str(record["span_text"]),
                start_idx=int(start_idx) if start_idx is not None else None,
                parse_failed=bool(record.get("parse_failed", False)),
            )
        )
    return preds


def write_predictions(path: str | Path, predictions: Iterable[Prediction]) -> int:
    def to_record(p: Prediction) -> dict[str, Any]:
        record: dict[str, Any] = {"item_id": p.item_id, "span_text": p.span_text, "start_idx": p.start_idx}
        if p.parse_failed:
            record["parse_failed"] = True
        return record

    return write_jsonl(path, (to_record(p) for p in predictions))


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    records: list[AnnotationRecord] = []
    for lineno, record in read_jsonl(path):
        require_fields(path, lineno, record, ("pair_id", "annotator_id", "correct", "lexical", "abbreviation", "negation"))
        records.append(
            AnnotationRecord(
                pair_id=str(record["pair_id"]),
                annotator_id=str(record["annotator_id"]),
                correct=bool(record["correct"]),
                lexical=bool(record["lexical"]),
                abbreviation=bool(record["abbreviation"]),
                negation=bool(record["negation"]),
                method=str(record.get("method", "unknown")),
            )
        )
    return records

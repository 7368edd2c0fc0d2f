"""Prompt assembly with context windows and budget-aware trimming.

Prompts are emitted as text, never submitted anywhere. The zero-shot and
few-shot instruction blocks ship as resource files; few-shot prompts add
in-context examples (question, a context window around the answer, and the
JSON answer object) followed by a reminder suffix and the query.

When a prompt exceeds its budget, examples are dropped one at a time from
the end of the example list (the lowest-ranked, since callers pass
examples in rank order) until it fits; the manifest records what survived.
The query document itself is never truncated: a query that alone exceeds
the budget is an error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Sequence

from .corpus import Document
from .errors import PromptError
from .generator import AnswerSpan, QAPair
from .metrics import Prediction


def _resource(name: str) -> str:
    return resources.files("xaiqa.resources").joinpath(name).read_text(encoding="utf-8")


ZERO_SHOT_TEMPLATE = _resource("zero_shot.txt").rstrip("\n")
FEW_SHOT_TEMPLATE = _resource("few_shot.txt").rstrip("\n")
FEW_SHOT_SUFFIX = _resource("few_shot_suffix.txt").rstrip("\n")

DEFAULT_WINDOW_RADIUS = 100
DEFAULT_NUM_EXAMPLES = 10


@dataclass(frozen=True)
class PromptBudget:
    max_units: int
    unit: str = "approx_tokens"  # "chars" or "approx_tokens"
    chars_per_token: float = 4.0

    def __post_init__(self) -> None:
        if self.max_units < 1:
            raise PromptError("budget max_units must reach at least 1")
        if self.unit not in ("chars", "approx_tokens"):
            raise PromptError(f"unknown budget unit: {self.unit!r}")
        if self.chars_per_token <= 0:
            raise PromptError("chars_per_token must be positive")

    def cost(self, text: str, tokenizer: Callable[[str], int] | None = None) -> int:
        if tokenizer is not None:
            return tokenizer(text)
        if self.unit == "chars":
            return len(text)
        return math.ceil(len(text) / self.chars_per_token)


@dataclass(frozen=True)
class FewShotExample:
    example_id: str
    question: str
    answer_text: str
    context_window: str
    window_radius: int = DEFAULT_WINDOW_RADIUS

    def __post_init__(self) -> None:
        if self.answer_text not in self.context_window:
            raise PromptError(f"example {self.example_id!r}: answer is not inside its context window")


def build_context_window(doc: Document, span: AnswerSpan, radius: int) -> str:
    """Document substring reaching ``radius`` characters beyond each side
    of the span, clipped at the document bounds."""
    if radius < 0:
        raise PromptError("window radius must not be negative")
    if doc.text[span.start : span.end] != span.text:
        raise PromptError(f"span does not match document {doc.doc_id!r} text at [{span.start}, {span.end})")
    return doc.text[max(0, span.start - radius) : min(len(doc.text), span.end + radius)]


def make_example(example_id: str, doc: Document, pair: QAPair, radius: int = DEFAULT_WINDOW_RADIUS) -> FewShotExample:
    window = build_context_window(doc, pair.answer, radius)
    return FewShotExample(
        example_id=example_id,
        question=pair.question,
        answer_text=pair.answer.text,
        context_window=window,
        window_radius=radius,
    )


def _render_example(example: FewShotExample) -> str:
    answer = json.dumps(
        {"start_idx": example.context_window.find(example.answer_text), "span_text": example.answer_text},
        ensure_ascii=False,
    )
    return f'Question: "{example.question}"\nDocument: "{example.context_window}"\nAnswer: {answer}'


def _render_query(question: str, document: str) -> str:
    return f'Question: "{question}"\nDocument: "{document}"'


def _render_prompt(examples: Sequence[FewShotExample], question: str, document: str) -> str:
    query = _render_query(question, document)
    if not examples:
        return f"{ZERO_SHOT_TEMPLATE}\n\n{query}\n"
    blocks = "\n\n".join(_render_example(e) for e in examples)
    return f"{FEW_SHOT_TEMPLATE}\n\n{blocks}\n\n{FEW_SHOT_SUFFIX}\n\n{query}\n"


def assemble_prompt(
    examples: Sequence[FewShotExample],
    query_question: str,
    query_document: str,
    budget: PromptBudget,
    query_id: str = "",
    tokenizer: Callable[[str], int] | None = None,
) -> tuple[str, dict]:
    """Render the prompt for one query, trimming examples to fit the budget.

    Returns (prompt, manifest) where the manifest records the retained
    example ids and the final unit count. Raises PromptError when even the
    zero-example prompt exceeds the budget.
    """
    for keep in range(len(examples), -1, -1):
        retained = list(examples[:keep])
        prompt = _render_prompt(retained, query_question, query_document)
        unit_count = budget.cost(prompt, tokenizer)
        if unit_count <= budget.max_units:
            manifest = {
                "query_id": query_id,
                "retained_examples": [e.example_id for e in retained],
                "unit_count": unit_count,
            }
            return prompt, manifest
    raise PromptError(
        f"query {query_id or '<unnamed>'} exceeds the budget of {budget.max_units} {budget.unit} even with no examples"
    )


def parse_model_answer(raw: str, item_id: str = "", recover_unclosed: bool = False) -> Prediction:
    """Extract {"start_idx", "span_text"} from the first JSON object in ``raw``.

    Tolerates surrounding prose. With ``recover_unclosed`` a final unclosed
    object is retried with '"}' and '}' appended. Unparsable input yields an
    abstention (empty span) flagged ``parse_failed``.
    """
    decoder = json.JSONDecoder()
    candidates = [raw]
    if recover_unclosed:
        candidates.extend([raw + '"}', raw + "}"])
    for candidate in candidates:
        pos = candidate.find("{")
        while pos != -1:
            try:
                obj, _ = decoder.raw_decode(candidate, pos)
            except json.JSONDecodeError:
                pos = candidate.find("{", pos + 1)
                continue
            if isinstance(obj, dict) and "span_text" in obj:
                start = obj.get("start_idx")
                return Prediction(
                    item_id=item_id,
                    span_text=str(obj["span_text"]),
                    start_idx=int(start) if isinstance(start, (int, float)) and not isinstance(start, bool) else None,
                )
            pos = candidate.find("{", pos + 1)
    return Prediction(item_id=item_id, span_text="", start_idx=None, parse_failed=True)

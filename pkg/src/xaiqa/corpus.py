"""Labeled document corpora: loading, validation and sentence segmentation.

All character offsets are Unicode scalar (Python ``str``) indices. Sentence
spans partition the non-whitespace content of a document: joining span texts
with the skipped whitespace reconstructs the original text exactly.

Two segmentation modes exist. ``default`` splits after sentence terminators
('.', '?', '!'). ``extended`` additionally splits on semicolons and before
list markers (bullets, hyphens, numbered-item tokens '0)'..'9)'), which is
how clinical list-heavy text is broken into answer-sized segments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusError
from .jsonl import read_jsonl, require_fields

# Terminators break after the token; markers break before it. A break only
# triggers when the token is followed by whitespace (markers additionally
# require start-of-text or preceding whitespace).
DEFAULT_TERMINATORS = (".", "?", "!")
EXTENDED_TERMINATORS = (".", "?", "!", ";")
EXTENDED_MARKERS = ("•", "-") + tuple(f"{d})" for d in range(10))

# The full extended break-token inventory, for reference and config echo.
EXTENDED_BREAK_TOKENS = (".", "?", "!", "•", "-", ";") + tuple(f"{d})" for d in range(10))

DEFAULT_ABBREVIATIONS = frozenset({"Dr.", "Mr.", "Mrs.", "vs.", "e.g.", "i.e."})


@dataclass(frozen=True)
class SentenceSpan:
    """A sentence with [start, end) character offsets into its document."""

    index: int
    start: int
    end: int
    text: str


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    sentences: tuple[SentenceSpan, ...]


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered (code, description) entries; codes are unique question sources."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for code, description in self.entries:
            if code in seen:
                raise CorpusError(f"duplicate label code: {code!r}")
            if not description.strip():
                raise CorpusError(f"label {code!r} has an empty description")
            seen.add(code)

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(code for code, _ in self.entries)

    def description_of(self, code: str) -> str:
        for c, description in self.entries:
            if c == code:
                return description
        raise CorpusError(f"unknown label code: {code!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, code: str) -> bool:
        return any(c == code for c, _ in self.entries)


@dataclass(frozen=True)
class LabelAssignment:
    doc_id: str
    positive_codes: frozenset[str]


@dataclass(frozen=True)
class SegmenterConfig:
    mode: str = "default"  # "default" or "extended"
    extra_break_tokens: tuple[str, ...] = ()
    abbreviations: frozenset[str] = field(default=DEFAULT_ABBREVIATIONS)

    def __post_init__(self) -> None:
        if self.mode not in ("default", "extended"):
            raise CorpusError(f"unknown segmenter mode: {self.mode!r}")


def _preceding_word(text: str, end: int) -> str:
    """Text from the last whitespace boundary up to ``end`` (exclusive)."""
    start = end
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    return text[start:end]


def _break_positions(text: str, cfg: SegmenterConfig) -> list[int]:
    if cfg.mode == "extended":
        terminators = EXTENDED_TERMINATORS + cfg.extra_break_tokens
        markers = EXTENDED_MARKERS
    else:
        terminators = DEFAULT_TERMINATORS + cfg.extra_break_tokens
        markers = ()

    n = len(text)
    breaks: set[int] = set()
    for token in terminators:
        pos = text.find(token)
        while pos != -1:
            end = pos + len(token)
            if end < n and text[end].isspace():
                if _preceding_word(text, end) not in cfg.abbreviations:
                    breaks.add(end)
            pos = text.find(token, pos + 1)
    for token in markers:
        pos = text.find(token)
        while pos != -1:
            end = pos + len(token)
            at_word_start = pos == 0 or text[pos - 1].isspace()
            if at_word_start and end < n and text[end].isspace():
                breaks.add(pos)
            pos = text.find(token, pos + 1)
    return sorted(b for b in breaks if 0 < b < n)


def segment(text: str, cfg: SegmenterConfig | None = None) -> list[SentenceSpan]:
    """Split ``text`` into trimmed, offset-exact sentence spans.

    Deterministic: a pure function of (text, cfg). Whitespace-only input
    yields an empty list; segments empty after trimming are dropped and
    indices re-packed.
    """
    cfg = cfg or SegmenterConfig()
    bounds = [0] + _break_positions(text, cfg) + [len(text)]
    spans: list[SentenceSpan] = []
    for raw_start, raw_end in zip(bounds, bounds[1:]):
        start, end = raw_start, raw_end
        while start < end and text[start].isspace():
            start += 1
        while end > start and text[end - 1].isspace():
            end -= 1
        if end <= start:
            continue
        spans.append(SentenceSpan(index=len(spans), start=start, end=end, text=text[start:end]))
    return spans


def make_document(doc_id: str, text: str, cfg: SegmenterConfig | None = None) -> Document:
    return Document(doc_id=doc_id, text=text, sentences=tuple(segment(text, cfg)))


def load_vocabulary(vocab_path: str | Path) -> LabelVocabulary:
    entries: list[tuple[str, str]] = []
    for lineno, obj in read_jsonl(vocab_path):
        require_fields(vocab_path, lineno, obj, ("code", "description"))
        entries.append((str(obj["code"]), str(obj["description"])))
    return LabelVocabulary(entries=tuple(entries))


def load_corpus(
    path: str | Path,
    vocab_path: str | Path,
    cfg: SegmenterConfig | None = None,
) -> tuple[list[Document], LabelVocabulary, list[LabelAssignment]]:
    """Load documents and label assignments, segmenting with ``default`` mode.

    Corpus file: JSON-lines {"doc_id", "text", "codes"}. Vocabulary file:
    JSON-lines {"code", "description"}. Raises CorpusError on malformed
    records (with line number), duplicate doc_ids, or codes missing from
    the vocabulary (naming the code).
    """
    vocab = load_vocabulary(vocab_path)
    known = set(vocab.codes)
    docs: list[Document] = []
    assignments: list[LabelAssignment] = []
    seen_ids: set[str] = set()
    for lineno, obj in read_jsonl(path):
        require_fields(path, lineno, obj, ("doc_id", "text", "codes"))
        doc_id = str(obj["doc_id"])
        if doc_id in seen_ids:
            raise CorpusError(f"{path}:{lineno}: duplicate doc_id: {doc_id!r}")
        seen_ids.add(doc_id)
        codes = obj["codes"]
        if not isinstance(codes, list):
            raise CorpusError(f"{path}:{lineno}: 'codes' must be a list")
        for code in codes:
            if code not in known:
                raise CorpusError(f"{path}:{lineno}: assignment references unknown code {code!r}")
        docs.append(make_document(doc_id, str(obj["text"]), cfg))
        assignments.append(LabelAssignment(doc_id=doc_id, positive_codes=frozenset(map(str, codes))))
    return docs, vocab, assignments

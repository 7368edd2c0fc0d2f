"""Shared word tokenizer: lowercase alphanumeric runs.

Used for classifier features, the builtin embedder, ROUGE tokenization and
lexical-overlap filtering so all lexical statistics agree on word identity.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Split ``text`` into lowercase alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())

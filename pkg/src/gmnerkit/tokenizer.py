"""Deterministic whitespace tokenizer with punctuation detachment.

Splits on whitespace, then detaches leading and trailing ASCII punctuation
characters as separate tokens. Internal punctuation (hyphens, digits, dots)
stays attached, so designations like "F-35" survive as single tokens.
"""
from __future__ import annotations

import re
import string

from .types import Token

_PUNCT = frozenset(string.punctuation)
_CHUNK = re.compile(r"\S+")


class EmptyTextError(ValueError):
    """Raised when the input is empty or whitespace-only."""


def tokenize(text: str) -> list[Token]:
    if not text.strip():
        raise EmptyTextError("cannot tokenize empty or whitespace-only text")
    tokens: list[Token] = []
    for match in _CHUNK.finditer(text):
        start, end = match.span()
        tokens.extend(_split_chunk(text, start, end))
    return tokens


def _split_chunk(text: str, start: int, end: int) -> list[Token]:
    lead: list[Token] = []
    trail: list[Token] = []
    i, j = start, end
    while i < j and text[i] in _PUNCT:
        lead.append(Token(text[i], i, i + 1))
        i += 1
    while j > i and text[j - 1] in _PUNCT:
        trail.append(Token(text[j - 1], j - 1, j))
        j -= 1
    out = lead
    if i < j:
        out.append(Token(text[i:j], i, j))
    out.extend(reversed(trail))
    return out

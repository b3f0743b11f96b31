"""Shared helpers: prompt templates, LLM reply parsing, span location."""
from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path

from .tokenizer import tokenize
from .types import EntityType, MentionSpan, Sentence, schema_by_name

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def load_prompt(name: str, prompts_dir: str | Path | None = None) -> str:
    """Read a prompt template, preferring an override directory when given."""
    if prompts_dir is not None:
        override = Path(prompts_dir) / f"{name}.txt"
        if override.exists():
            return override.read_text(encoding="utf-8")
    return (resources.files("gmnerkit") / "prompts" / f"{name}.txt").read_text(
        encoding="utf-8"
    )


def render_template(template: str, values: dict[str, str]) -> str:
    """Replace ``{name}`` placeholders for the given names only.

    Other brace constructs (JSON examples in the template text) pass through
    untouched, unlike ``str.format``.
    """
    pattern = re.compile(r"\{(" + "|".join(re.escape(k) for k in values) + r")\}")
    return pattern.sub(lambda m: str(values[m.group(1)]), template)


def extract_json(text: str):
    """Pull the first JSON value out of an LLM reply, or None.

    Tries fenced ```json blocks first, then the first balanced object or
    array found in the raw text.
    """
    for match in _FENCE.finditer(text):
        value = _try_parse(match.group(1))
        if value is not None:
            return value
    for start, ch in enumerate(text):
        if ch not in "{[":
            continue
        closer = "}" if ch == "{" else "]"
        candidate = _balanced_slice(text, start, ch, closer)
        if candidate is not None:
            value = _try_parse(candidate)
            if value is not None:
                return value
    return None


def _try_parse(snippet: str):
    try:
        return json.loads(snippet)
    except json.JSONDecodeError:
        return None


def _balanced_slice(text: str, start: int, opener: str, closer: str) -> str | None:
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == opener:
            depth += 1
        elif ch == closer:
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    return None


class SpanLocationError(ValueError):
    pass


def sentence_from_text(sid: str, text: str) -> Sentence:
    return Sentence(id=sid, text=text, tokens=tuple(tokenize(text)))


def locate_span(sentence: Sentence, surface: str, etype: EntityType,
                taken: list[MentionSpan]) -> MentionSpan:
    """Find the first occurrence of ``surface`` aligned to token boundaries
    and not overlapping any span in ``taken``."""
    if not surface:
        raise SpanLocationError("empty surface")
    starts = {tok.char_start: i for i, tok in enumerate(sentence.tokens)}
    ends = {tok.char_end: i for i, tok in enumerate(sentence.tokens)}
    pos = sentence.text.find(surface)
    while pos != -1:
        end = pos + len(surface)
        if pos in starts and end in ends:
            span = MentionSpan(
                sentence_id=sentence.id,
                token_start=starts[pos],
                token_end=ends[end] + 1,
                surface=surface,
                etype=etype,
            )
            if not any(span.overlaps(t) for t in taken):
                return span
        pos = sentence.text.find(surface, pos + 1)
    raise SpanLocationError(
        f"surface {surface!r} not found on token boundaries in sentence "
        f"{sentence.id!r}"
    )


def locate_entities(sentence: Sentence, pairs: list[tuple[str, str]],
                    schema: list[EntityType]) -> list[MentionSpan]:
    """Locate (surface, type name) pairs in order; raises on any failure."""
    types = schema_by_name(schema)
    spans: list[MentionSpan] = []
    for surface, tname in pairs:
        if tname not in types:
            raise SpanLocationError(f"type not in schema: {tname!r}")
        spans.append(locate_span(sentence, surface, types[tname], spans))
    return spans

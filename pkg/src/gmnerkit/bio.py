"""BIO tag encoding and decoding over token spans."""
from __future__ import annotations

from .types import EntityType, MentionSpan, Sentence, schema_by_name

OUTSIDE = "O"


class OverlappingSpansError(ValueError):
    pass


def bio_labels(schema: list[EntityType]) -> list[str]:
    """The full tag set: O first, then B-/I- pairs in schema id order."""
    labels = [OUTSIDE]
    for etype in sorted(schema, key=lambda t: t.id):
        labels.append(f"B-{etype.name}")
        labels.append(f"I-{etype.name}")
    return labels


def bio_encode(spans: list[MentionSpan], n_tokens: int) -> list[str]:
    """Tag a token sequence with the given non-overlapping spans."""
    ordered = sorted(spans, key=lambda s: s.token_start)
    tags = [OUTSIDE] * n_tokens
    prev_end = 0
    for span in ordered:
        if span.token_start < prev_end:
            raise OverlappingSpansError(
                f"span [{span.token_start},{span.token_end}) overlaps a previous span"
            )
        if span.token_end > n_tokens:
            raise OverlappingSpansError(
                f"span [{span.token_start},{span.token_end}) exceeds {n_tokens} tokens"
            )
        tags[span.token_start] = f"B-{span.etype.name}"
        for i in range(span.token_start + 1, span.token_end):
            tags[i] = f"I-{span.etype.name}"
        prev_end = span.token_end
    return tags


def bio_decode(tags: list[str], sentence: Sentence,
               schema: list[EntityType]) -> list[MentionSpan]:
    """Recover spans from a tag sequence.

    Tolerant of ill-formed sequences: an I- tag without a matching open chunk
    starts a new span, as in standard CoNLL evaluation.
    """
    by_name = schema_by_name(schema)
    spans: list[MentionSpan] = []
    start = None
    current = None
    for i, tag in enumerate(tags):
        if tag == OUTSIDE:
            if current is not None:
                spans.append(_make_span(sentence, start, i, by_name[current]))
                current = None
            continue
        prefix, _, name = tag.partition("-")
        if name not in by_name:
            raise ValueError(f"tag {tag!r} references unknown type {name!r}")
        if prefix == "B" or current != name:
            if current is not None:
                spans.append(_make_span(sentence, start, i, by_name[current]))
            start, current = i, name
    if current is not None:
        spans.append(_make_span(sentence, start, len(tags), by_name[current]))
    return spans


def _make_span(sentence: Sentence, start: int, end: int,
               etype: EntityType) -> MentionSpan:
    surface = sentence.text[
        sentence.tokens[start].char_start:sentence.tokens[end - 1].char_end
    ]
    return MentionSpan(
        sentence_id=sentence.id,
        token_start=start,
        token_end=end,
        surface=surface,
        etype=etype,
    )

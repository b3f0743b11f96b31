"""Dataset ingestion: JSON-lines records to validated AnnotatedSamples.

Record schema (one JSON object per line, UTF-8, LF endings):

    {"id": "s1",                       # optional; defaults to line number
     "text": "...",
     "image": {"path": "...", "width": 640, "height": 480},
     "entities": [{"char_start": 4, "char_end": 8, "type": "SHIP",
                   "box": {"x_min": 1, "y_min": 2, "x_max": 30, "y_max": 40}}]}

``box`` may be null when the entity has no visual region. Char spans must land
exactly on token boundaries; misaligned spans are hard errors, not drops.
"""
from __future__ import annotations

import json
from pathlib import Path

from .tokenizer import tokenize
from .types import (
    AnnotatedSample,
    BoundingBox,
    EntityType,
    GmnerTriplet,
    InvariantError,
    MentionSpan,
    Sentence,
    build_schema,
    schema_by_name,
)

FORMAT_JSONL_V1 = "jsonl-v1"


class DatasetError(ValueError):
    """Schema violation; carries the offending line number and field."""

    def __init__(self, line_no: int, field: str, message: str):
        self.line_no = line_no
        self.field = field
        super().__init__(f"line {line_no}, field {field!r}: {message}")


class SpanAlignmentError(DatasetError):
    """An annotated char span does not land on token boundaries."""


def derive_schema(path: str | Path) -> list[EntityType]:
    """Collect entity type names from a dataset file, sorted for stable ids."""
    names = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            for ent in record.get("entities", []):
                if isinstance(ent, dict) and isinstance(ent.get("type"), str):
                    names.add(ent["type"])
    return build_schema(sorted(names))


def load_dataset(path: str | Path, schema: list[EntityType] | None = None,
                 format: str = FORMAT_JSONL_V1) -> list[AnnotatedSample]:
    if format != FORMAT_JSONL_V1:
        raise ValueError(f"unknown dataset format {format!r}")
    if schema is None:
        schema = derive_schema(path)
    types = schema_by_name(schema)

    samples: list[AnnotatedSample] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(line_no, "<record>", f"invalid JSON: {exc}") from exc
            sample = _parse_record(record, line_no, types)
            if sample.sentence.id in seen_ids:
                raise DatasetError(line_no, "id",
                                   f"duplicate sentence id {sample.sentence.id!r}")
            seen_ids.add(sample.sentence.id)
            samples.append(sample)
    return samples


def _require(record: dict, field: str, kind: type, line_no: int, parent: str = ""):
    path = f"{parent}.{field}" if parent else field
    if field not in record:
        raise DatasetError(line_no, path, "missing")
    value = record[field]
    if kind is int and isinstance(value, bool):
        raise DatasetError(line_no, path, "expected integer, got bool")
    if not isinstance(value, kind):
        raise DatasetError(line_no, path, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _parse_record(record: dict, line_no: int,
                  types: dict[str, EntityType]) -> AnnotatedSample:
    text = _require(record, "text", str, line_no)
    if not text.strip():
        raise DatasetError(line_no, "text", "empty")
    image = _require(record, "image", dict, line_no)
    image_path = _require(image, "path", str, line_no, "image")
    image_w = _require(image, "width", int, line_no, "image")
    image_h = _require(image, "height", int, line_no, "image")
    if image_w <= 0 or image_h <= 0:
        raise DatasetError(line_no, "image", "non-positive dimensions")
    entities = _require(record, "entities", list, line_no)
    sid = record.get("id", f"s{line_no}")
    if not isinstance(sid, str) or not sid:
        raise DatasetError(line_no, "id", "must be a non-empty string")

    sentence = Sentence(id=sid, text=text, tokens=tuple(tokenize(text)))
    starts = {tok.char_start: i for i, tok in enumerate(sentence.tokens)}
    ends = {tok.char_end: i for i, tok in enumerate(sentence.tokens)}

    triplets = []
    for k, ent in enumerate(entities):
        fieldp = f"entities[{k}]"
        if not isinstance(ent, dict):
            raise DatasetError(line_no, fieldp, "expected object")
        cs = _require(ent, "char_start", int, line_no, fieldp)
        ce = _require(ent, "char_end", int, line_no, fieldp)
        tname = _require(ent, "type", str, line_no, fieldp)
        if tname not in types:
            raise DatasetError(line_no, f"{fieldp}.type", f"unknown type {tname!r}")
        if not (0 <= cs < ce <= len(text)):
            raise DatasetError(line_no, fieldp, f"char span [{cs},{ce}) outside text")
        if cs not in starts or ce not in ends:
            raise SpanAlignmentError(
                line_no, fieldp,
                f"char span [{cs},{ce}) covering {text[cs:ce]!r} does not align "
                f"with token boundaries",
            )
        span = MentionSpan(
            sentence_id=sid,
            token_start=starts[cs],
            token_end=ends[ce] + 1,
            surface=text[cs:ce],
            etype=types[tname],
        )
        box = ent.get("box")
        region = None
        if box is not None:
            if not isinstance(box, dict):
                raise DatasetError(line_no, f"{fieldp}.box", "expected object or null")
            coords = [
                _require(box, key, int, line_no, f"{fieldp}.box")
                for key in ("x_min", "y_min", "x_max", "y_max")
            ]
            try:
                region = BoundingBox(*coords)
            except InvariantError as exc:
                raise DatasetError(line_no, f"{fieldp}.box", str(exc)) from exc
        triplets.append(GmnerTriplet(mention=span, region=region))

    ordered = sorted(triplets, key=lambda t: t.mention.token_start)
    for a, b in zip(ordered, ordered[1:]):
        if a.mention.overlaps(b.mention):
            raise DatasetError(line_no, "entities", "overlapping entity spans")

    try:
        return AnnotatedSample(
            sentence=sentence,
            triplets=tuple(triplets),
            image_path=image_path,
            image_w=image_w,
            image_h=image_h,
        )
    except InvariantError as exc:
        raise DatasetError(line_no, "<record>", str(exc)) from exc

from __future__ import annotations

import numpy as np
import pytest

from gmnerkit.types import (
    AnnotatedSample,
    BoundingBox,
    EntityType,
    GmnerTriplet,
    MentionSpan,
    build_schema,
)
from gmnerkit.util import sentence_from_text


@pytest.fixture
def schema() -> list[EntityType]:
    return build_schema(["AIRCRAFT", "SHIP", "WEAPON", "PERSON"])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def make_sentence(sid: str, text: str):
    return sentence_from_text(sid, text)


def make_span(sentence, token_start, token_end, etype) -> MentionSpan:
    surface = sentence.text[
        sentence.tokens[token_start].char_start:
        sentence.tokens[token_end - 1].char_end
    ]
    return MentionSpan(
        sentence_id=sentence.id,
        token_start=token_start,
        token_end=token_end,
        surface=surface,
        etype=etype,
    )


def make_sample(sid: str, text: str, spans_with_boxes, image_path="images/x.png",
                image_w=640, image_h=480) -> AnnotatedSample:
    """spans_with_boxes: list of (token_start, token_end, EntityType, box|None)."""
    sentence = make_sentence(sid, text)
    triplets = []
    for start, end, etype, box in spans_with_boxes:
        span = make_span(sentence, start, end, etype)
        region = BoundingBox(*box) if box is not None else None
        triplets.append(GmnerTriplet(mention=span, region=region))
    return AnnotatedSample(
        sentence=sentence,
        triplets=tuple(triplets),
        image_path=image_path,
        image_w=image_w,
        image_h=image_h,
    )

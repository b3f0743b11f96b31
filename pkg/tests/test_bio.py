import numpy as np
import pytest

from gmnerkit.bio import OverlappingSpansError, bio_decode, bio_encode, bio_labels
from gmnerkit.types import build_schema

from conftest import make_sentence, make_span


@pytest.fixture
def weapon_schema():
    return build_schema(["WEAPON", "SHIP"])


def test_label_set_order(weapon_schema):
    assert bio_labels(weapon_schema) == ["O", "B-WEAPON", "I-WEAPON", "B-SHIP", "I-SHIP"]


def test_no_spans_all_outside():
    assert bio_encode([], 4) == ["O", "O", "O", "O"]


def test_single_span(weapon_schema):
    sent = make_sentence("s1", "the MG5 machine gun")
    span = make_span(sent, 1, 3, weapon_schema[0])
    assert bio_encode([span], 4) == ["O", "B-WEAPON", "I-WEAPON", "O"]


def test_adjacent_same_type_spans_roundtrip(weapon_schema):
    sent = make_sentence("s1", "a b c d")
    spans = [make_span(sent, 0, 2, weapon_schema[0]),
             make_span(sent, 2, 4, weapon_schema[0])]
    tags = bio_encode(spans, 4)
    assert tags == ["B-WEAPON", "I-WEAPON", "B-WEAPON", "I-WEAPON"]
    decoded = bio_decode(tags, sent, weapon_schema)
    assert decoded == spans


def test_overlap_rejected(weapon_schema):
    sent = make_sentence("s1", "a b c d")
    spans = [make_span(sent, 0, 2, weapon_schema[0]),
             make_span(sent, 1, 3, weapon_schema[0])]
    with pytest.raises(OverlappingSpansError):
        bio_encode(spans, 4)


def test_decode_tolerates_dangling_inside(weapon_schema):
    sent = make_sentence("s1", "a b c")
    decoded = bio_decode(["O", "I-SHIP", "O"], sent, weapon_schema)
    assert len(decoded) == 1
    assert decoded[0].token_start == 1 and decoded[0].token_end == 2
    assert decoded[0].etype.name == "SHIP"


def test_roundtrip_property(weapon_schema):
    """bio_decode(bio_encode(x)) == x over random non-overlapping span sets."""
    rng = np.random.default_rng(7)
    words = ["w%d" % i for i in range(12)]
    sent = make_sentence("s1", " ".join(words))
    n = len(words)
    for _ in range(300):
        spans = []
        cursor = 0
        while cursor < n:
            gap = int(rng.integers(0, 3))
            start = cursor + gap
            if start >= n:
                break
            length = int(rng.integers(1, 4))
            end = min(start + length, n)
            etype = weapon_schema[int(rng.integers(0, len(weapon_schema)))]
            spans.append(make_span(sent, start, end, etype))
            cursor = end
        tags = bio_encode(spans, n)
        assert bio_decode(tags, sent, weapon_schema) == spans

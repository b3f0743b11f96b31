import pytest

from gmnerkit.tokenizer import EmptyTextError, tokenize


def surfaces(text):
    return [t.surface for t in tokenize(text)]


def test_whitespace_split_with_offsets():
    tokens = tokenize("the MG5 machine gun")
    assert [t.surface for t in tokens] == ["the", "MG5", "machine", "gun"]
    assert [(t.char_start, t.char_end) for t in tokens] == [
        (0, 3), (4, 7), (8, 15), (16, 19)
    ]


def test_trailing_punctuation_detached():
    tokens = tokenize("F-35,")
    assert [t.surface for t in tokens] == ["F-35", ","]
    assert [(t.char_start, t.char_end) for t in tokens] == [(0, 4), (4, 5)]


def test_single_token():
    tokens = tokenize("a")
    assert [(t.surface, t.char_start, t.char_end) for t in tokens] == [("a", 0, 1)]


def test_internal_hyphen_and_digits_kept():
    assert surfaces("the F-35 and MG5") == ["the", "F-35", "and", "MG5"]


def test_leading_and_trailing_punctuation():
    assert surfaces("(F-35),") == ["(", "F-35", ")", ","]


def test_all_punctuation_chunk():
    assert surfaces("--") == ["-", "-"]


@pytest.mark.parametrize("text", ["", "   ", "\n\t"])
def test_empty_input_rejected(text):
    with pytest.raises(EmptyTextError):
        tokenize(text)


def test_offsets_reconstruct_text():
    text = 'He said, "the F-35 (not F-22!) flew"; we agreed.'
    tokens = tokenize(text)
    # Tokens cover only non-space chars, in ascending order.
    rebuilt = list(text)
    last_end = 0
    for tok in tokens:
        assert tok.char_start >= last_end
        assert text[tok.char_start:tok.char_end] == tok.surface
        for i in range(last_end, tok.char_start):
            assert text[i].isspace()
        last_end = tok.char_end
    covered = "".join(t.surface for t in tokens)
    assert covered == "".join(ch for ch in text if not ch.isspace())


def test_deterministic_across_runs():
    text = "Alpha-1, bravo (c2) -- d3."
    assert tokenize(text) == tokenize(text)

import json
import math

import numpy as np
import pytest

from gmnerkit.embeddings import (
    DimMismatchError,
    EmbeddingError,
    EmbeddingStore,
    MissingKeyError,
    ZeroNormError,
    cosine,
    entity_key,
    image_key,
    load_store,
    save_store,
    token_key,
)


def test_binary_roundtrip(tmp_path):
    store = EmbeddingStore(kind="sentence", dim=4)
    store.add("s1", [1.0, 2.0, 3.0, 4.0])
    store.add("s2", [0.5, -0.5, 0.25, 0.0])
    path = tmp_path / "sent.emb"
    save_store(store, path)
    loaded = load_store(path)
    assert loaded.kind == "sentence"
    assert loaded.dim == 4
    assert len(loaded) == 2
    np.testing.assert_allclose(loaded.get("s1"), [1, 2, 3, 4], atol=1e-6)


def test_kind_mismatch_detected(tmp_path):
    store = EmbeddingStore(kind="token", dim=2)
    store.add("a", [1.0, 0.0])
    path = tmp_path / "x.emb"
    save_store(store, path)
    with pytest.raises(EmbeddingError):
        load_store(path, kind="image")


def test_jsonl_fallback_with_header(tmp_path):
    path = tmp_path / "vectors.jsonl"
    lines = [
        {"kind": "entity", "dim": 3},
        {"key": "e1", "vec": [1.0, 0.0, 0.0]},
        {"key": "e2", "vec": [0.0, 1.0, 0.0]},
    ]
    path.write_text("\n".join(json.dumps(x) for x in lines) + "\n")
    store = load_store(path)
    assert store.kind == "entity"
    assert len(store) == 2


def test_jsonl_fallback_without_header_needs_kind(tmp_path):
    path = tmp_path / "vectors.jsonl"
    path.write_text(json.dumps({"key": "e1", "vec": [1.0, 0.0]}) + "\n")
    with pytest.raises(EmbeddingError):
        load_store(path)
    store = load_store(path, kind="entity")
    assert store.dim == 2


def test_dim_mismatch_reports_key(tmp_path):
    path = tmp_path / "vectors.jsonl"
    lines = [
        {"kind": "sentence", "dim": 4},
        {"key": "s1", "vec": [1.0, 0.0, 0.0]},
    ]
    path.write_text("\n".join(json.dumps(x) for x in lines) + "\n")
    with pytest.raises(DimMismatchError) as err:
        load_store(path)
    assert "s1" in str(err.value)


def test_duplicate_key_rejected():
    store = EmbeddingStore(kind="sentence", dim=2)
    store.add("s1", [1.0, 0.0])
    with pytest.raises(EmbeddingError):
        store.add("s1", [0.0, 1.0])


def test_non_finite_rejected():
    store = EmbeddingStore(kind="sentence", dim=2)
    with pytest.raises(EmbeddingError):
        store.add("s1", [float("nan"), 0.0])


def test_missing_key_is_error_not_zero():
    store = EmbeddingStore(kind="sentence", dim=2)
    with pytest.raises(MissingKeyError):
        store.get("absent")


def test_cosine_self_similarity():
    v = np.array([1.0, 2.0, 2.0])
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-9)


def test_cosine_orthogonal():
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cosine_closed_form():
    got = cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
    assert got == pytest.approx(1 / math.sqrt(2), abs=1e-9)


def test_cosine_zero_norm_error():
    with pytest.raises(ZeroNormError):
        cosine(np.zeros(3), np.ones(3))


def test_cosine_dim_mismatch():
    with pytest.raises(DimMismatchError):
        cosine(np.ones(3), np.ones(4))


def test_cosine_symmetry_and_scale_invariance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = rng.normal(size=5)
        b = rng.normal(size=5)
        k = float(rng.uniform(0.1, 100.0))
        assert cosine(a, b) == cosine(b, a)
        assert cosine(k * a, b) == pytest.approx(cosine(a, b), abs=1e-9)
        assert -1.0 <= cosine(a, b) <= 1.0
        assert cosine(a, a) == pytest.approx(1.0, abs=1e-9)


def test_float32_quantization_bound(tmp_path):
    rng = np.random.default_rng(11)
    store = EmbeddingStore(kind="image", dim=16)
    vecs = {}
    for i in range(20):
        v = rng.normal(size=16)
        vecs[f"i{i}"] = v
        store.add(f"i{i}", v)
    path = tmp_path / "img.emb"
    save_store(store, path)
    loaded = load_store(path)
    for key, v in vecs.items():
        assert cosine(loaded.get(key), v) >= 1 - 1e-6


def test_key_scheme_stability():
    assert token_key("s1", 3) == "s1#t3"
    assert entity_key("Nimitz") == entity_key("Nimitz")
    assert entity_key("Nimitz") != entity_key("Nimit")
    assert image_key("a/b.png").startswith("i:")
    assert entity_key("x").startswith("e:")

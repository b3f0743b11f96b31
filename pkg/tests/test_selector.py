import numpy as np
import pytest

from gmnerkit.embeddings import EmbeddingStore, entity_key, image_key
from gmnerkit.selector import (
    IclExample,
    Selector,
    SelectorConfig,
    SelectorQuery,
    top_k_indices,
)

from conftest import make_sample


def build_pool(schema, specs):
    """specs: list of (sid, [(surface slot, type idx, has_box)], image tag).

    Returns (candidates, stores) with deterministic per-name embeddings.
    """
    rng = np.random.default_rng(99)
    sentence_store = EmbeddingStore(kind="sentence", dim=4)
    entity_store = EmbeddingStore(kind="entity", dim=4)
    image_store = EmbeddingStore(kind="image", dim=4)
    vectors: dict[str, np.ndarray] = {}

    def vec_for(name):
        if name not in vectors:
            vectors[name] = rng.normal(size=4)
        return vectors[name]

    candidates = []
    for sid, entities, image_tag in specs:
        words = []
        spans = []
        for i, (surface, type_idx, has_box) in enumerate(entities):
            start = len(words)
            words.extend(surface.split())
            box = (0, 0, 10 + i, 10 + i) if has_box else None
            spans.append((start, len(words), schema[type_idx], box))
        words.append(".")
        sample = make_sample(sid, " ".join(words), spans,
                             image_path=f"images/{image_tag}.png")
        candidates.append(IclExample.from_sample(sample))
        sentence_store.add(sid, vec_for(f"sent:{sid}"))
        for surface, _, _ in entities:
            key = entity_key(surface)
            if key not in entity_store:
                entity_store.add(key, vec_for(f"ent:{surface}"))
        image_store.add(image_key(f"images/{image_tag}.png"), vec_for(f"img:{image_tag}"))
    return candidates, (sentence_store, entity_store, image_store), vec_for


@pytest.fixture
def pool(schema):
    specs = [
        ("d0", [("Falcon", 0, True)], "im0"),
        ("d1", [("Nimitz", 1, True), ("Harpoon", 2, True)], "im1"),
        ("d2", [("Cole", 3, False)], "im2"),  # no regions at all
        ("d3", [], "im3"),                     # no entities
    ]
    return build_pool(schema, specs)


def make_selector(pool, **kwargs):
    candidates, stores, vec_for = pool
    config = SelectorConfig(**kwargs) if kwargs else SelectorConfig(k=2)
    return Selector(candidates, *stores, config), candidates, vec_for


class TestEntitySimilarity:
    def test_identical_embedding_same_type_scores_one_plus_delta(self, pool, schema):
        selector, candidates, vec_for = make_selector(pool)
        query = ((schema[0].name, vec_for("ent:Falcon")),)
        got = selector.entity_similarity(query, candidates[0])
        assert got == 1.0 + 0.6

    def test_identical_embedding_different_type_scores_one(self, pool, schema):
        selector, candidates, vec_for = make_selector(pool)
        query = ((schema[1].name, vec_for("ent:Falcon")),)
        assert selector.entity_similarity(query, candidates[0]) == pytest.approx(1.0)

    def test_orthogonal_different_type_scores_zero(self, pool, schema):
        selector, candidates, vec_for = make_selector(pool)
        base = vec_for("ent:Falcon")
        ortho = np.array([-base[1], base[0], -base[3], base[2]])
        assert np.dot(base, ortho) == pytest.approx(0.0, abs=1e-12)
        got = selector.entity_similarity(((schema[1].name, ortho),), candidates[0])
        assert got == pytest.approx(0.0, abs=1e-9)

    def test_candidate_without_entities_scores_zero(self, pool, schema):
        selector, candidates, vec_for = make_selector(pool)
        query = ((schema[0].name, vec_for("ent:Falcon")),)
        assert selector.entity_similarity(query, candidates[3]) == 0.0

    def test_empty_query_scores_zero(self, pool):
        selector, candidates, _ = make_selector(pool)
        assert selector.entity_similarity((), candidates[0]) == 0.0

    def test_mean_of_max_aggregation(self, pool, schema):
        # Two query entities against d1's two entities: each query entity
        # takes its best pair score; the candidate score is their mean.
        selector, candidates, vec_for = make_selector(pool)
        q1 = (schema[1].name, vec_for("ent:Nimitz"))    # same type + same vec -> 1.6
        q2 = (schema[0].name, vec_for("ent:Harpoon"))   # same vec, type differs -> 1.0
        got = selector.entity_similarity((q1, q2), candidates[1])
        from gmnerkit.embeddings import cosine
        c_nimitz, c_harpoon = vec_for("ent:Nimitz"), vec_for("ent:Harpoon")
        best_q1 = max(1.0 + 0.6, cosine(c_nimitz, c_harpoon))
        best_q2 = max(cosine(c_harpoon, c_nimitz), 1.0)
        assert got == pytest.approx((best_q1 + best_q2) / 2, abs=1e-12)


class TestSentenceAndImage:
    def test_same_sentence_embedding_is_one(self, pool):
        selector, candidates, vec_for = make_selector(pool)
        got = selector.sentence_similarity(vec_for("sent:d0"), candidates[0])
        assert got == pytest.approx(1.0, abs=1e-9)

    def test_candidate_without_regions_scores_zero(self, pool):
        selector, candidates, vec_for = make_selector(pool)
        # d2's only entity has no box, so its image score is pinned to 0.
        assert selector.image_similarity(vec_for("img:im2"), candidates[2]) == 0.0

    def test_query_without_image_scores_zero(self, pool):
        selector, candidates, _ = make_selector(pool)
        assert selector.image_similarity(None, candidates[0]) == 0.0

    def test_same_image_with_regions_is_one(self, pool):
        selector, candidates, vec_for = make_selector(pool)
        got = selector.image_similarity(vec_for("img:im0"), candidates[0])
        assert got == pytest.approx(1.0, abs=1e-9)


class TestTopK:
    def test_combined_score_closed_form(self):
        cfg = SelectorConfig()
        combined = cfg.lambda1 * 1.6 + cfg.lambda2 * 0.9 + cfg.lambda3 * 0.8
        assert combined == pytest.approx(1.48, abs=1e-12)

    def test_topk_on_known_scores(self):
        assert top_k_indices([0.2, 1.48, 0.7], 2) == [1, 2]

    def test_selection_matches_sort_oracle(self, pool, schema):
        selector, candidates, vec_for = make_selector(pool)
        query = SelectorQuery(
            sentence_vec=vec_for("sent:d1"),
            entities=((schema[1].name, vec_for("ent:Nimitz")),),
            image_vec=vec_for("img:im1"),
        )
        chosen, scores = selector.select_topk(query)
        combined = [s.combined for s in scores]
        oracle = sorted(range(len(combined)), key=lambda j: (-combined[j], j))[:2]
        assert [ex.sample.sentence.id for ex in chosen] == \
            [candidates[j].sample.sentence.id for j in oracle]

    def test_k_larger_than_pool_rejected(self, pool):
        selector, _, vec_for = make_selector(pool, k=10)
        query = SelectorQuery(sentence_vec=vec_for("sent:d0"), entities=(),
                              image_vec=None)
        with pytest.raises(ValueError):
            selector.select_topk(query)

    def test_fixed_mode_returns_first_k(self, pool):
        selector, candidates, _ = make_selector(pool)
        fixed = selector.select_fixed()
        assert fixed == candidates[:2]


def oracle_topk(combined, k):
    """Independent route: repeated argmax extraction, lowest index on ties."""
    remaining = list(range(len(combined)))
    out = []
    for _ in range(k):
        best = remaining[0]
        for j in remaining[1:]:
            if combined[j] > combined[best]:
                best = j
        out.append(best)
        remaining.remove(best)
    return out


class TestTopKOracleProperty:
    def test_random_instances_match_extraction_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(500):
            n = int(rng.integers(1, 12))
            k = int(rng.integers(1, n + 1))
            combined = list(rng.normal(size=n))
            if n >= 2 and rng.random() < 0.3:
                combined[int(rng.integers(0, n - 1))] = combined[-1]  # force ties
            assert top_k_indices(combined, k) == oracle_topk(combined, k)

    def test_monotonicity_raising_a_score_keeps_selection(self):
        """Increasing only candidate j's score never evicts j."""
        rng = np.random.default_rng(43)
        for _ in range(300):
            n = int(rng.integers(2, 10))
            k = int(rng.integers(1, n + 1))
            combined = list(rng.normal(size=n))
            selected = top_k_indices(combined, k)
            j = selected[int(rng.integers(0, len(selected)))]
            combined[j] += float(rng.uniform(0.0, 5.0))
            assert j in top_k_indices(combined, k)


class TestConfig:
    def test_invalid_k(self):
        with pytest.raises(ValueError):
            SelectorConfig(k=0)

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            SelectorConfig(lambda1=-0.5)

    def test_all_zero_weights(self):
        with pytest.raises(ValueError):
            SelectorConfig(lambda1=0.0, lambda2=0.0, lambda3=0.0)

    def test_entity_weight_only_ranks_by_entity_cosine(self, pool, schema):
        selector, candidates, vec_for = make_selector(
            pool, lambda1=1.0, lambda2=0.0, lambda3=0.0, k=4, delta=0.0)
        query = SelectorQuery(
            sentence_vec=vec_for("sent:d0"),
            entities=((schema[0].name, vec_for("ent:Nimitz")),),
            image_vec=None,
        )
        _, trace = selector.select_topk(query)
        for s in trace:
            assert s.combined == pytest.approx(s.entity, abs=1e-12)

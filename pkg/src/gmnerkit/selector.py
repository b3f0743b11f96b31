"""Stage 3 in-context example retrieval.

Scores every candidate from the annotated pool against the query at three
levels: type-aware entity similarity (cosine plus a margin when types match,
mean over query entities of the best candidate entity), plain sentence
cosine, and image cosine with a hard zero for candidates whose image has no
annotated regions. The weighted sum ranks candidates; the pool is small, so
scoring is exact and dense.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingStore, cosine, entity_key, image_key
from .types import AnnotatedSample


@dataclass(frozen=True)
class SelectorConfig:
    delta: float = 0.6
    lambda1: float = 0.6
    lambda2: float = 0.4
    lambda3: float = 0.2
    k: int = 3

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        weights = (self.lambda1, self.lambda2, self.lambda3)
        if any(w < 0 for w in weights):
            raise ValueError("lambda weights must be >= 0")
        if not any(w > 0 for w in weights):
            raise ValueError("at least one lambda weight must be positive")


@dataclass(frozen=True)
class IclExample:
    sample: AnnotatedSample
    sentence_key: str
    entity_keys: tuple[str, ...]
    entity_types: tuple[str, ...]
    image_key: str
    has_regions: bool

    @classmethod
    def from_sample(cls, sample: AnnotatedSample) -> "IclExample":
        mentions = sample.mentions()
        return cls(
            sample=sample,
            sentence_key=sample.sentence.id,
            entity_keys=tuple(entity_key(m.surface) for m in mentions),
            entity_types=tuple(m.etype.name for m in mentions),
            image_key=image_key(sample.image_path),
            has_regions=sample.has_regions(),
        )


@dataclass(frozen=True)
class SelectorQuery:
    """Query side of a selection: the refined entities plus raw embeddings."""
    sentence_vec: np.ndarray
    entities: tuple[tuple[str, np.ndarray], ...]  # (type name, vector)
    image_vec: np.ndarray | None


@dataclass(frozen=True)
class CandidateScore:
    index: int
    entity: float
    sentence: float
    image: float
    combined: float


def top_k_indices(combined: list[float], k: int) -> list[int]:
    """Indices of the k highest scores, descending, ties to the lower index."""
    if k > len(combined):
        raise ValueError(f"k={k} exceeds candidate pool size {len(combined)}")
    order = sorted(range(len(combined)), key=lambda j: (-combined[j], j))
    return order[:k]


class Selector:
    """Immutable once constructed; queries may run concurrently."""

    def __init__(self, candidates: list[IclExample], sentence_store: EmbeddingStore,
                 entity_store: EmbeddingStore, image_store: EmbeddingStore,
                 config: SelectorConfig):
        self.candidates = list(candidates)
        self.sentence_store = sentence_store
        self.entity_store = entity_store
        self.image_store = image_store
        self.config = config

    def entity_similarity(self, query_entities, candidate: IclExample) -> float:
        """Mean over query entities of the best matching candidate entity,
        where a pair scores cosine plus delta when the types agree."""
        if not query_entities or not candidate.entity_keys:
            return 0.0
        cand = [
            (tname, self.entity_store.get(key))
            for tname, key in zip(candidate.entity_types, candidate.entity_keys)
        ]
        total = 0.0
        for q_type, q_vec in query_entities:
            best = max(
                cosine(q_vec, c_vec) + (self.config.delta if q_type == c_type else 0.0)
                for c_type, c_vec in cand
            )
            total += best
        return total / len(query_entities)

    def sentence_similarity(self, query_vec: np.ndarray,
                            candidate: IclExample) -> float:
        return cosine(query_vec, self.sentence_store.get(candidate.sentence_key))

    def image_similarity(self, query_vec: np.ndarray | None,
                         candidate: IclExample) -> float:
        if query_vec is None or not candidate.has_regions:
            return 0.0
        return cosine(query_vec, self.image_store.get(candidate.image_key))

    def score_all(self, query: SelectorQuery) -> list[CandidateScore]:
        cfg = self.config
        scores = []
        for j, candidate in enumerate(self.candidates):
            s_ent = self.entity_similarity(query.entities, candidate)
            s_sen = self.sentence_similarity(query.sentence_vec, candidate)
            s_img = self.image_similarity(query.image_vec, candidate)
            combined = cfg.lambda1 * s_ent + cfg.lambda2 * s_sen + cfg.lambda3 * s_img
            scores.append(CandidateScore(
                index=j, entity=s_ent, sentence=s_sen, image=s_img, combined=combined
            ))
        return scores

    def select_topk(self, query: SelectorQuery) -> tuple[list[IclExample], list[CandidateScore]]:
        """Top-K candidates by combined score, ties broken by lower index."""
        scores = self.score_all(query)
        chosen = top_k_indices([s.combined for s in scores], self.config.k)
        return [self.candidates[j] for j in chosen], scores

    def select_fixed(self) -> list[IclExample]:
        """Fixed-shot fallback: the first K pool examples, ignoring the query."""
        if self.config.k > len(self.candidates):
            raise ValueError(
                f"k={self.config.k} exceeds candidate pool size {len(self.candidates)}"
            )
        return self.candidates[:self.config.k]

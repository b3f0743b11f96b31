"""Entropy-based uncertainty scoring and confident/uncertain routing.

Token entropy uses natural log (nats); entity uncertainty is the mean token
entropy over the mention's tokens. Entities route to refinement only when
uncertainty strictly exceeds the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .crf import MarginalTable
from .types import MentionSpan

KEEP = "KEEP"
REFINE = "REFINE"

# Probabilities below this contribute exactly zero to the entropy sum.
_ENTROPY_EPS = 1e-12


@dataclass(frozen=True)
class RouterConfig:
    beta: float = 0.8
    log_base: float | None = None  # None means natural log

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.log_base is not None and self.log_base <= 1:
            raise ValueError(f"log base must exceed 1, got {self.log_base}")


@dataclass(frozen=True)
class RoutingDecision:
    mention: MentionSpan
    uncertainty: float
    routed_to: str  # KEEP or REFINE


class NotADistributionError(ValueError):
    pass


def token_entropy(row: Sequence[float] | np.ndarray,
                  log_base: float | None = None) -> float:
    """Shannon entropy of one label distribution, with 0*log(0) := 0."""
    p = np.asarray(row, dtype=np.float64)
    if p.ndim != 1:
        raise NotADistributionError("expected a 1-D probability row")
    if np.any(p < 0):
        raise NotADistributionError("negative probability")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise NotADistributionError(f"row sums to {float(p.sum())}, not 1")
    mask = p > _ENTROPY_EPS
    h = float(-np.sum(p[mask] * np.log(p[mask])))
    if log_base is not None:
        h /= math.log(log_base)
    return max(h, 0.0) + 0.0  # normalize -0.0


def entity_uncertainty(mention: MentionSpan, table: MarginalTable,
                       log_base: float | None = None) -> float:
    if mention.token_end > len(table):
        raise IndexError(
            f"span [{mention.token_start},{mention.token_end}) outside the "
            f"{len(table)}-row marginal table"
        )
    entropies = [
        token_entropy(table.row(i), log_base=log_base)
        for i in range(mention.token_start, mention.token_end)
    ]
    return float(sum(entropies) / len(entropies))


@dataclass
class RouteResult:
    keep: list[MentionSpan]
    refine: list[MentionSpan]
    decisions: list[RoutingDecision]


def route(predictions: Sequence[MentionSpan],
          marginals_by_sentence: Mapping[str, MarginalTable],
          config: RouterConfig) -> RouteResult:
    """Split predictions by the strict ``uncertainty > beta`` rule."""
    keep: list[MentionSpan] = []
    refine: list[MentionSpan] = []
    decisions: list[RoutingDecision] = []
    for mention in predictions:
        table = marginals_by_sentence[mention.sentence_id]
        u = entity_uncertainty(mention, table, log_base=config.log_base)
        verdict = REFINE if u > config.beta else KEEP
        (refine if verdict == REFINE else keep).append(mention)
        decisions.append(RoutingDecision(mention=mention, uncertainty=u, routed_to=verdict))
    return RouteResult(keep=keep, refine=refine, decisions=decisions)

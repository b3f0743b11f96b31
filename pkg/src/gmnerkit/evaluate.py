"""GMNER evaluation: triplet precision/recall/F1 with strict IoU matching.

A predicted triplet is correct only when mention span, type, and region all
agree with a gold triplet: spans match exactly, and regions either are both
None or overlap with IoU strictly above 0.5. Duplicate predictions are
deduplicated before counting. A text-only mode ignores regions for
stage-wise NER ablations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .types import AnnotatedSample, BoundingBox, GmnerTriplet

IOU_THRESHOLD = 0.5


class IdMismatchError(ValueError):
    pass


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union


def _regions_match(gold: BoundingBox | None, pred: BoundingBox | None) -> bool:
    if gold is None or pred is None:
        return gold is None and pred is None
    return iou(gold, pred) > IOU_THRESHOLD


def triplet_match(gold: GmnerTriplet, pred: GmnerTriplet,
                  text_only: bool = False) -> bool:
    """All-three conjunction: exact span, same type, matching region."""
    gm, pm = gold.mention, pred.mention
    if (gm.sentence_id, gm.token_start, gm.token_end) != \
            (pm.sentence_id, pm.token_start, pm.token_end):
        return False
    if gm.etype.name != pm.etype.name:
        return False
    if text_only:
        return True
    return _regions_match(gold.region, pred.region)


@dataclass
class TypeStats:
    gold: int = 0
    pred: int = 0
    correct: int = 0

    @property
    def precision(self) -> float:
        return self.correct / self.pred if self.pred else 0.0

    @property
    def recall(self) -> float:
        return self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    gold: int
    pred: int
    correct: int
    per_type: dict[str, TypeStats] = field(default_factory=dict)
    variant: str = ""

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "counts": {"gold": self.gold, "pred": self.pred, "correct": self.correct},
            "per_type": {
                name: {
                    "gold": s.gold, "pred": s.pred, "correct": s.correct,
                    "precision": s.precision, "recall": s.recall, "f1": s.f1,
                }
                for name, s in sorted(self.per_type.items())
            },
        }

    def to_text_table(self) -> str:
        rows = [("type", "gold", "pred", "correct", "P", "R", "F1")]
        for name, s in sorted(self.per_type.items()):
            rows.append((name, str(s.gold), str(s.pred), str(s.correct),
                         f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}"))
        rows.append(("ALL", str(self.gold), str(self.pred), str(self.correct),
                     f"{self.precision:.4f}", f"{self.recall:.4f}", f"{self.f1:.4f}"))
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = []
        for row in rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        return "\n".join(lines)


def _dedup(triplets: Sequence[GmnerTriplet]) -> list[GmnerTriplet]:
    seen = set()
    out = []
    for t in triplets:
        box = t.region.as_list() if t.region is not None else None
        key = (t.mention.sentence_id, t.mention.token_start, t.mention.token_end,
               t.mention.etype.name, tuple(box) if box else None)
        if key in seen:
            continue
        seen.add(key)
        out.append(t)
    return out


def _sort_key(t: GmnerTriplet):
    box = t.region.as_list() if t.region is not None else [-1, -1, -1, -1]
    return (t.mention.token_start, t.mention.token_end, t.mention.etype.name, box)


def score(gold_samples: Sequence[AnnotatedSample],
          predictions: Mapping[str, Sequence[GmnerTriplet]],
          text_only: bool = False, variant: str = "") -> EvalReport:
    """Greedy one-to-one matching per sentence, canonicalized by span order.

    Sentences missing from ``predictions`` count as empty prediction sets;
    prediction ids that do not occur in the gold set are an error.
    """
    gold_ids = {s.sentence.id for s in gold_samples}
    unknown = set(predictions) - gold_ids
    if unknown:
        raise IdMismatchError(f"predictions reference unknown sentences: {sorted(unknown)}")

    report = EvalReport(precision=0.0, recall=0.0, f1=0.0, gold=0, pred=0, correct=0)

    def stats_for(name: str) -> TypeStats:
        return report.per_type.setdefault(name, TypeStats())

    for sample in gold_samples:
        gold = sorted(sample.triplets, key=_sort_key)
        pred = sorted(_dedup(predictions.get(sample.sentence.id, [])), key=_sort_key)
        report.gold += len(gold)
        report.pred += len(pred)
        for t in gold:
            stats_for(t.mention.etype.name).gold += 1
        for t in pred:
            stats_for(t.mention.etype.name).pred += 1
        used = [False] * len(pred)
        for g in gold:
            for i, p in enumerate(pred):
                if used[i]:
                    continue
                if triplet_match(g, p, text_only=text_only):
                    used[i] = True
                    report.correct += 1
                    stats_for(g.mention.etype.name).correct += 1
                    break

    report.precision = report.correct / report.pred if report.pred else 0.0
    report.recall = report.correct / report.gold if report.gold else 0.0
    denom = report.precision + report.recall
    report.f1 = 2 * report.precision * report.recall / denom if denom else 0.0
    report.variant = variant
    return report


def report_to_json(report: EvalReport, extra: dict | None = None) -> str:
    doc = report.to_json_dict()
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"

"""MLLM refinement of uncertain mentions and few-shot visual grounding.

Parse-failure policy differs by stage on purpose: refinement falls back to
confirming the supervised prediction (it carries domain knowledge), while
grounding falls back to None (a wrong box costs more than abstention under
the IoU metric).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .gateway import LlmGateway, image_part, text_part, user_message
from .selector import IclExample
from .types import (
    BoundingBox,
    EntityType,
    MentionSpan,
    Sentence,
    clip_box,
    schema_by_name,
)
from .util import SpanLocationError, extract_json, load_prompt, locate_span, render_template

log = logging.getLogger(__name__)

CONFIRM = "CONFIRM"
CORRECT = "CORRECT"
DELETE = "DELETE"
ADD = "ADD"


@dataclass(frozen=True)
class RefinementOutcome:
    original: MentionSpan | None  # None for ADD verdicts
    verdict: str
    new_mention: MentionSpan | None = None
    rationale: str = ""

    def resolved(self) -> MentionSpan | None:
        """The mention this outcome contributes to the merged output."""
        if self.verdict == DELETE:
            return None
        if self.verdict in (CORRECT, ADD):
            return self.new_mention
        return self.original


@dataclass(frozen=True)
class GroundingResult:
    mention: MentionSpan
    region: BoundingBox | None
    raw_response: str


@dataclass
class RefineStats:
    parse_failures: int = 0
    invalid_verdicts: int = 0
    grounding_abstentions: int = 0


@dataclass(frozen=True)
class SampleContext:
    """What refinement and grounding know about a test sample: no gold."""
    sentence: Sentence
    image_path: str
    image_w: int
    image_h: int


def refine(uncertain: list[MentionSpan], context: SampleContext,
           gateway: LlmGateway, model: str, schema: list[EntityType],
           allow_add: bool = True, prompts_dir: str | Path | None = None,
           stats: RefineStats | None = None) -> list[RefinementOutcome]:
    """One MLLM call covering all uncertain mentions of a sentence."""
    if not uncertain:
        raise ValueError("refine requires at least one uncertain mention")
    stats = stats if stats is not None else RefineStats()
    prompt = render_template(load_prompt("refine", prompts_dir), {
        "sentence": context.sentence.text,
        "schema": ", ".join(t.name for t in schema),
        "mentions": json.dumps(
            [{"mention": m.surface, "type": m.etype.name} for m in uncertain],
            ensure_ascii=True,
        ),
    })
    request = gateway.build_request(
        model,
        (user_message(text_part(prompt), image_part(context.image_path)),),
    )
    reply = gateway.complete(request)
    doc = extract_json(reply)
    if not isinstance(doc, dict):
        stats.parse_failures += 1
        log.warning("refinement reply unparseable for %s; confirming all",
                    context.sentence.id)
        return [RefinementOutcome(original=m, verdict=CONFIRM, rationale=reply)
                for m in uncertain]

    results = doc.get("results")
    by_surface: dict[str, dict] = {}
    if isinstance(results, list):
        for item in results:
            if isinstance(item, dict) and isinstance(item.get("mention"), str):
                by_surface.setdefault(item["mention"], item)

    outcomes = []
    taken: list[MentionSpan] = list(uncertain)
    for mention in uncertain:
        item = by_surface.get(mention.surface)
        outcomes.append(
            _verdict_outcome(mention, item, context, schema, reply, stats)
        )
    if allow_add:
        added = doc.get("added")
        if isinstance(added, list):
            for item in added:
                outcome = _add_outcome(item, context, schema, reply, stats, taken)
                if outcome is not None:
                    taken.append(outcome.new_mention)
                    outcomes.append(outcome)
    return outcomes


def _verdict_outcome(mention: MentionSpan, item: dict | None,
                     context: SampleContext, schema: list[EntityType],
                     reply: str, stats: RefineStats) -> RefinementOutcome:
    if item is None:
        stats.invalid_verdicts += 1
        return RefinementOutcome(original=mention, verdict=CONFIRM, rationale=reply)
    verdict = item.get("verdict")
    if verdict == DELETE:
        return RefinementOutcome(original=mention, verdict=DELETE, rationale=reply)
    if verdict == CORRECT:
        surface = item.get("corrected_mention")
        tname = item.get("corrected_type", mention.etype.name)
        types = schema_by_name(schema)
        if isinstance(surface, str) and tname in types:
            try:
                span = locate_span(context.sentence, surface, types[tname], [])
                return RefinementOutcome(
                    original=mention, verdict=CORRECT, new_mention=span,
                    rationale=reply,
                )
            except SpanLocationError:
                pass
        stats.invalid_verdicts += 1
        log.warning("rejected correction %r for %r; confirming original",
                    item.get("corrected_mention"), mention.surface)
        return RefinementOutcome(original=mention, verdict=CONFIRM, rationale=reply)
    if verdict != CONFIRM:
        stats.invalid_verdicts += 1
    return RefinementOutcome(original=mention, verdict=CONFIRM, rationale=reply)


def _add_outcome(item, context: SampleContext, schema: list[EntityType],
                 reply: str, stats: RefineStats,
                 taken: list[MentionSpan]) -> RefinementOutcome | None:
    if not isinstance(item, dict):
        stats.invalid_verdicts += 1
        return None
    surface, tname = item.get("mention"), item.get("type")
    types = schema_by_name(schema)
    if not isinstance(surface, str) or tname not in types:
        stats.invalid_verdicts += 1
        return None
    try:
        span = locate_span(context.sentence, surface, types[tname], taken)
    except SpanLocationError:
        stats.invalid_verdicts += 1
        return None
    return RefinementOutcome(original=None, verdict=ADD, new_mention=span,
                             rationale=reply)


def merge(confident: list[MentionSpan],
          outcomes: list[RefinementOutcome]) -> list[MentionSpan]:
    """Integrate refinement outcomes with the confident predictions.

    Confident spans always survive untouched; refined spans and additions
    are dropped when they overlap anything already merged. Output is sorted
    by span position with no overlaps remaining.
    """
    merged: list[MentionSpan] = list(confident)

    def try_insert(span: MentionSpan | None) -> None:
        if span is None:
            return
        if any(span.overlaps(existing) for existing in merged):
            return
        if any(span == existing for existing in merged):
            return
        merged.append(span)

    verdicts = [o for o in outcomes if o.verdict != ADD]
    adds = [o for o in outcomes if o.verdict == ADD]
    for outcome in verdicts:
        try_insert(outcome.resolved())
    for outcome in adds:
        try_insert(outcome.resolved())
    return sorted(merged, key=lambda m: (m.sentence_id, m.token_start, m.token_end))


def _render_examples(examples: list[IclExample]) -> str:
    blocks = []
    for ex in examples:
        lines = [f"Example (image {ex.sample.image_w}x{ex.sample.image_h} attached):",
                 f"Sentence: {ex.sample.sentence.text}",
                 "Entities and regions:"]
        for triplet in ex.sample.triplets:
            box = triplet.region.as_list() if triplet.region is not None else None
            lines.append(
                f'- "{triplet.mention.surface}" ({triplet.mention.etype.name}): '
                f"{json.dumps(box)}"
            )
        blocks.append("\n".join(lines))
    if not blocks:
        return "(no examples)"
    return "\n\n".join(blocks)


def ground(entities: list[MentionSpan], context: SampleContext,
           examples: list[IclExample], gateway: LlmGateway, model: str,
           prompts_dir: str | Path | None = None,
           stats: RefineStats | None = None) -> list[GroundingResult]:
    """Ask the MLLM for one region (or null) per entity.

    Example images ride along as extra image parts in retrieval order; the
    query image comes last. Output length always equals the input length.
    """
    stats = stats if stats is not None else RefineStats()
    if not entities:
        return []
    prompt = render_template(load_prompt("ground", prompts_dir), {
        "width": str(context.image_w),
        "height": str(context.image_h),
        "examples": _render_examples(examples),
        "sentence": context.sentence.text,
        "mentions": json.dumps(
            [{"mention": m.surface, "type": m.etype.name} for m in entities],
            ensure_ascii=True,
        ),
    })
    parts = [text_part(prompt)]
    parts.extend(image_part(ex.sample.image_path) for ex in examples)
    parts.append(image_part(context.image_path))
    request = gateway.build_request(model, (user_message(*parts),))
    reply = gateway.complete(request)

    doc = extract_json(reply)
    regions = doc.get("regions") if isinstance(doc, dict) else None
    if not isinstance(regions, list):
        stats.grounding_abstentions += len(entities)
        log.warning("grounding reply unparseable for %s; abstaining",
                    context.sentence.id)
        return [GroundingResult(mention=m, region=None, raw_response=reply)
                for m in entities]

    by_surface: dict[str, list] = {}
    for item in regions:
        if isinstance(item, dict) and isinstance(item.get("mention"), str):
            by_surface.setdefault(item["mention"], []).append(item)

    results = []
    for i, mention in enumerate(entities):
        item = None
        if i < len(regions) and isinstance(regions[i], dict) \
                and regions[i].get("mention") == mention.surface:
            item = regions[i]
        elif by_surface.get(mention.surface):
            item = by_surface[mention.surface].pop(0)
        region = _parse_box(item, context) if item is not None else None
        if region is None and (item is None or item.get("box") is not None):
            stats.grounding_abstentions += 1
        results.append(GroundingResult(mention=mention, region=region,
                                       raw_response=reply))
    return results


def _parse_box(item: dict, context: SampleContext) -> BoundingBox | None:
    box = item.get("box")
    if box is None:
        return None
    if not isinstance(box, list) or len(box) != 4:
        return None
    try:
        coords = [float(v) for v in box]
    except (TypeError, ValueError):
        return None
    return clip_box(*coords, width=context.image_w, height=context.image_h)

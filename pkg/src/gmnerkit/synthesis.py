"""Stage 1: guideline-table maintenance and training-data synthesis.

A guideline table holds one row per entity type: a description plus a
bounded list of negative-sample descriptions distilled from LLM mistakes.
The table is folded over the annotated set sample by sample, then drives
two synthesis strategies: entity-level substitution (swap mention surfaces,
keep structure) and sentence-level paraphrasing (keep mentions verbatim,
rewrite context). LLM output is validated strictly and rejected, never
repaired.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import LlmGateway, text_part, user_message
from .tokenizer import EmptyTextError
from .types import AnnotatedSample, EntityType, MentionSpan, Sentence, schema_by_name
from .util import (
    SpanLocationError,
    extract_json,
    load_prompt,
    locate_entities,
    render_template,
    sentence_from_text,
)

log = logging.getLogger(__name__)

SUBSTITUTION = "SUBSTITUTION"
PARAPHRASE = "PARAPHRASE"
STRATEGIES = (SUBSTITUTION, PARAPHRASE)

MAX_NEGATIVES = 10
LOW_YIELD_THRESHOLD = 0.5


@dataclass(frozen=True)
class GuidelineRow:
    etype: EntityType
    description: str
    negatives: tuple[str, ...] = ()


@dataclass(frozen=True)
class GuidelineTable:
    rows: tuple[GuidelineRow, ...]
    version: int = 0

    @classmethod
    def initial(cls, schema: list[EntityType],
                descriptions: dict[str, str] | None = None) -> "GuidelineTable":
        descriptions = descriptions or {}
        rows = tuple(
            GuidelineRow(
                etype=t,
                description=descriptions.get(t.name, f"Mentions of type {t.name}."),
            )
            for t in schema
        )
        return cls(rows=rows, version=0)

    def row_for(self, type_name: str) -> GuidelineRow | None:
        for row in self.rows:
            if row.etype.name == type_name:
                return row
        return None

    def render(self) -> str:
        """Prompt-facing rendering of the table."""
        lines = []
        for row in self.rows:
            lines.append(f"Type: {row.etype.name}")
            lines.append(f"  Description: {row.description}")
            for neg in row.negatives:
                lines.append(f"  Avoid: {neg}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "version": self.version,
            "rows": [
                {
                    "type": row.etype.name,
                    "description": row.description,
                    "negatives": list(row.negatives),
                }
                for row in self.rows
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict, schema: list[EntityType]) -> "GuidelineTable":
        types = schema_by_name(schema)
        rows = []
        for row in doc["rows"]:
            if row["type"] not in types:
                raise ValueError(f"guideline row type {row['type']!r} not in schema")
            rows.append(GuidelineRow(
                etype=types[row["type"]],
                description=row["description"],
                negatives=tuple(row.get("negatives", [])),
            ))
        return cls(rows=tuple(rows), version=int(doc.get("version", 0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path, schema: list[EntityType]) -> "GuidelineTable":
        return cls.from_json_dict(
            json.loads(Path(path).read_text(encoding="utf-8")), schema
        )


@dataclass(frozen=True)
class SynthesizedSample:
    sentence: Sentence
    entities: tuple[MentionSpan, ...]
    provenance: str  # SUBSTITUTION or PARAPHRASE
    source_id: str


@dataclass
class SynthesisResult:
    accepted: list[SynthesizedSample] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)  # (reason, payload)

    @property
    def low_yield(self) -> bool:
        total = len(self.accepted) + len(self.rejected)
        return total > 0 and len(self.accepted) / total < LOW_YIELD_THRESHOLD


def _format_entities(mentions: list[MentionSpan]) -> str:
    return json.dumps(
        [{"surface": m.surface, "type": m.etype.name} for m in mentions],
        ensure_ascii=True,
    )


def _ask(gateway: LlmGateway, model: str, prompt: str) -> str:
    request = gateway.build_request(model, (user_message(text_part(prompt)),))
    return gateway.complete(request)


def update_guideline(table: GuidelineTable, sample: AnnotatedSample,
                     gateway: LlmGateway, model: str,
                     prompts_dir: str | Path | None = None) -> GuidelineTable:
    """One traversal step: tag the sentence, diff against gold, distill
    negatives from the errors, then refresh descriptions.

    Malformed LLM output leaves the table untouched; gateway failures
    propagate to the caller.
    """
    gold = sample.mentions()
    values = {
        "guideline": table.render(),
        "sentence": sample.sentence.text,
        "entities": _format_entities(gold),
    }
    tag_reply = _ask(gateway, model, render_template(
        load_prompt("guideline_tag", prompts_dir), values
    ))
    predictions = _parse_tag_reply(tag_reply)
    if predictions is None:
        log.warning("guideline tag reply unparseable for %s; table unchanged",
                    sample.sentence.id)
        return table

    rows = {row.etype.name: row for row in table.rows}
    gold_set = {(m.surface, m.etype.name) for m in gold}
    pred_set = set(predictions)
    if pred_set != gold_set:
        neg_values = dict(values)
        neg_values["predictions"] = json.dumps(
            [{"surface": s, "type": t} for s, t in sorted(pred_set)],
            ensure_ascii=True,
        )
        neg_reply = _ask(gateway, model, render_template(
            load_prompt("guideline_negatives", prompts_dir), neg_values
        ))
        additions = _parse_negatives_reply(neg_reply, rows)
        for tname, negs in additions.items():
            row = rows[tname]
            merged = [n for n in row.negatives if n not in negs] + negs
            rows[tname] = GuidelineRow(
                etype=row.etype,
                description=row.description,
                negatives=tuple(merged[-MAX_NEGATIVES:]),
            )

    des_reply = _ask(gateway, model, render_template(
        load_prompt("guideline_description", prompts_dir), values
    ))
    refreshed = _parse_description_reply(des_reply, rows)
    for tname, description in refreshed.items():
        row = rows[tname]
        rows[tname] = GuidelineRow(
            etype=row.etype, description=description, negatives=row.negatives
        )

    new_rows = tuple(rows[row.etype.name] for row in table.rows)
    return GuidelineTable(rows=new_rows, version=table.version + 1)


def _parse_tag_reply(reply: str) -> set[tuple[str, str]] | None:
    doc = extract_json(reply)
    if not isinstance(doc, list):
        return None
    out = set()
    for item in doc:
        if not isinstance(item, dict):
            return None
        surface, tname = item.get("surface"), item.get("type")
        if not isinstance(surface, str) or not isinstance(tname, str):
            return None
        out.add((surface, tname))
    return out


def _parse_negatives_reply(reply: str, rows: dict) -> dict[str, list[str]]:
    doc = extract_json(reply)
    if not isinstance(doc, dict):
        log.warning("negative-description reply unparseable; skipping")
        return {}
    out: dict[str, list[str]] = {}
    for tname, negs in doc.items():
        if tname not in rows or not isinstance(negs, list):
            continue
        cleaned = [n.strip() for n in negs if isinstance(n, str) and n.strip()]
        if cleaned:
            out[tname] = cleaned
    return out


def _parse_description_reply(reply: str, rows: dict) -> dict[str, str]:
    doc = extract_json(reply)
    if not isinstance(doc, dict):
        log.warning("description reply unparseable; skipping")
        return {}
    return {
        tname: text.strip()
        for tname, text in doc.items()
        if tname in rows and isinstance(text, str) and text.strip()
    }


def synthesize(seeds: list[AnnotatedSample], table: GuidelineTable, strategy: str,
               count_per_seed: int, gateway: LlmGateway, model: str,
               schema: list[EntityType],
               existing_texts: set[str] | None = None,
               prompts_dir: str | Path | None = None) -> SynthesisResult:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if count_per_seed < 1:
        raise ValueError("count_per_seed must be >= 1")
    if not table.rows:
        raise ValueError("guideline table is empty")

    template = load_prompt(
        "synth_substitution" if strategy == SUBSTITUTION else "synth_paraphrase",
        prompts_dir,
    )
    seen_texts = {s.sentence.text.strip() for s in seeds}
    if existing_texts:
        seen_texts |= {t.strip() for t in existing_texts}

    result = SynthesisResult()
    tag = "sub" if strategy == SUBSTITUTION else "par"
    for seed in seeds:
        prompt = render_template(template, {
            "guideline": table.render(),
            "sentence": seed.sentence.text,
            "entities": _format_entities(seed.mentions()),
            "count": str(count_per_seed),
        })
        reply = gateway.complete(
            gateway.build_request(model, (user_message(text_part(prompt)),))
        )
        doc = extract_json(reply)
        if not isinstance(doc, list):
            result.rejected.append(("unparseable reply", reply[:200]))
            continue
        for i, item in enumerate(doc):
            sid = f"{seed.sentence.id}/{tag}{i}"
            sample, reason = _build_sample(item, sid, seed, strategy, schema)
            if sample is None:
                result.rejected.append((reason, json.dumps(item, ensure_ascii=True)[:200]))
                continue
            if sample.sentence.text.strip() in seen_texts:
                result.rejected.append(("duplicate", sample.sentence.text[:200]))
                continue
            verdict = validate_synthesized(sample, schema)
            if verdict is not None:
                result.rejected.append((verdict, sample.sentence.text[:200]))
                continue
            seen_texts.add(sample.sentence.text.strip())
            result.accepted.append(sample)
    if result.low_yield:
        log.warning(
            "synthesis yield below %d%%: %d accepted, %d rejected",
            int(LOW_YIELD_THRESHOLD * 100), len(result.accepted), len(result.rejected),
        )
    return result


def _build_sample(item, sid: str, seed: AnnotatedSample, strategy: str,
                  schema: list[EntityType]) -> tuple[SynthesizedSample | None, str]:
    if not isinstance(item, dict) or not isinstance(item.get("text"), str):
        return None, "missing text"
    text = item["text"].strip()
    if not text:
        return None, "empty sentence"
    try:
        sentence = sentence_from_text(sid, text)
    except (EmptyTextError, ValueError):
        return None, "not tokenizable"

    if strategy == PARAPHRASE:
        pairs = [(m.surface, m.etype.name) for m in seed.mentions()]
    else:
        raw = item.get("entities")
        if not isinstance(raw, list):
            return None, "missing entities"
        pairs = []
        for ent in raw:
            if not isinstance(ent, dict) or not isinstance(ent.get("surface"), str) \
                    or not isinstance(ent.get("type"), str):
                return None, "malformed entity"
            pairs.append((ent["surface"], ent["type"]))
        if len(pairs) != len(seed.mentions()):
            return None, "entity count changed"

    try:
        spans = locate_entities(sentence, pairs, schema)
    except SpanLocationError as exc:
        reason = "entity lost" if strategy == PARAPHRASE else str(exc)
        return None, reason

    sample = SynthesizedSample(
        sentence=sentence,
        entities=tuple(spans),
        provenance=strategy,
        source_id=seed.sentence.id,
    )
    if strategy == SUBSTITUTION and not _structure_preserved(seed, sample):
        return None, "structure changed"
    if strategy == PARAPHRASE and not _mentions_preserved(seed, sample):
        return None, "entity lost"
    return sample, ""


def _mentions_preserved(seed: AnnotatedSample, sample: SynthesizedSample) -> bool:
    want = sorted((m.surface, m.etype.name) for m in seed.mentions())
    got = sorted((m.surface, m.etype.name) for m in sample.entities)
    return want == got


def _structure_preserved(seed: AnnotatedSample, sample: SynthesizedSample) -> bool:
    """Tokens outside mention slots must match the seed's, in order."""
    def context_tokens(tokens, mentions):
        covered = set()
        for m in mentions:
            covered.update(range(m.token_start, m.token_end))
        return [t.surface for i, t in enumerate(tokens) if i not in covered]

    return context_tokens(seed.sentence.tokens, seed.mentions()) == \
        context_tokens(sample.sentence.tokens, list(sample.entities))


def validate_synthesized(sample: SynthesizedSample,
                         schema: list[EntityType]) -> str | None:
    """Return a rejection reason, or None when the sample is acceptable."""
    if not sample.sentence.text.strip():
        return "empty sentence"
    types = schema_by_name(schema)
    try:
        tuple(sentence_from_text(sample.sentence.id, sample.sentence.text).tokens)
    except (EmptyTextError, ValueError):
        return "not tokenizable"
    ordered = sorted(sample.entities, key=lambda m: m.token_start)
    for a, b in zip(ordered, ordered[1:]):
        if a.overlaps(b):
            return "overlapping spans"
    for mention in sample.entities:
        if mention.etype.name not in types:
            return "type not in schema"
        try:
            mention.check_against(sample.sentence)
        except ValueError:
            return "surface mismatch"
    return None

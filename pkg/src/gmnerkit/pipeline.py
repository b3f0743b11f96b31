"""Stage orchestration: every stage reads and writes file artifacts, so runs
are resumable and each ablation variant is just a configuration.

Artifact files are JSON-lines with a meta header line carrying the config
hash and seed; a stage refuses input artifacts produced under a different
configuration.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bio, crf, refine as refine_mod, synthesis, uncertainty
from .config import SELECT_DYNAMIC, PipelineConfig
from .dataset import load_dataset
from .embeddings import EmbeddingStore, entity_key, image_key, load_store, token_key
from .evaluate import EvalReport, score
from .gateway import GatewayConfig, LlmGateway, TranscriptCache
from .selector import IclExample, Selector, SelectorQuery
from .types import (
    AnnotatedSample,
    BoundingBox,
    GmnerTriplet,
    MentionSpan,
    Sentence,
    schema_by_name,
)
from .util import sentence_from_text

log = logging.getLogger(__name__)

GUIDELINE_FILE = "guideline.json"
SYNTH_FILE = "synthesized.jsonl"
CHECKPOINT_FILE = "crf_model.bin"
SUPERVISED_FILE = "supervised.jsonl"
ROUTING_FILE = "routing.jsonl"
REFINED_FILE = "refined.jsonl"
SELECTION_FILE = "selection.jsonl"
GROUNDED_FILE = "grounded.jsonl"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"


class StageDependencyError(RuntimeError):
    """A required input artifact is missing; names the artifact."""


class ArtifactMismatchError(RuntimeError):
    """Input artifact was produced under a different configuration."""


def _require_paths(cfg: PipelineConfig, *keys: str, gateway: bool = False) -> None:
    """Fail early with the config field path when a referenced file is absent.

    ``gateway=True`` additionally requires an existing transcript cache in
    REPLAY mode (RECORD and LIVE create it on demand).
    """
    from .config import ConfigError

    keys = keys + (("transcript_cache",) if gateway and cfg.gateway.mode == "REPLAY"
                   else ())
    for key in keys:
        resolved = cfg.path(key)
        if not resolved.exists():
            raise ConfigError(f"paths.{key}: {resolved} does not exist")


def _write_artifact(path: Path, kind: str, cfg: PipelineConfig,
                    records: list[dict], extra_meta: dict | None = None) -> None:
    meta = {"kind": kind, "config_hash": cfg.config_hash, "seed": cfg.seed}
    if extra_meta:
        meta.update(extra_meta)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True, ensure_ascii=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=True) + "\n")


def _read_artifact(path: Path, kind: str, cfg: PipelineConfig) -> tuple[dict, list[dict]]:
    if not path.exists():
        raise StageDependencyError(
            f"missing artifact {path.name!r}; run the producing stage first"
        )
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise StageDependencyError(f"artifact {path.name!r} is empty")
    meta = json.loads(lines[0])
    if meta.get("kind") != kind:
        raise ArtifactMismatchError(
            f"{path.name}: expected kind {kind!r}, found {meta.get('kind')!r}"
        )
    if meta.get("config_hash") != cfg.config_hash:
        raise ArtifactMismatchError(
            f"{path.name}: produced under config {meta.get('config_hash')}, "
            f"current config is {cfg.config_hash}"
        )
    return meta, [json.loads(line) for line in lines[1:]]


def _build_gateway(cfg: PipelineConfig) -> LlmGateway:
    gw = cfg.gateway
    cache = TranscriptCache(cfg.path("transcript_cache"))
    return LlmGateway(
        config=GatewayConfig(
            endpoint=gw.endpoint,
            api_key_env=gw.api_key_env,
            mode=gw.mode,
            retries=gw.retries,
            backoff=gw.backoff,
            timeout=gw.timeout,
            concurrency=gw.concurrency,
            temperature=gw.temperature,
            max_tokens=gw.max_tokens,
        ),
        cache=cache,
    )


def _load_train(cfg: PipelineConfig) -> list[AnnotatedSample]:
    return load_dataset(cfg.path("train_dataset"), schema=cfg.schema())


def _load_test(cfg: PipelineConfig) -> list[AnnotatedSample]:
    return load_dataset(cfg.path("test_dataset"), schema=cfg.schema())


def _span_to_record(span: MentionSpan) -> dict:
    return {
        "token_start": span.token_start,
        "token_end": span.token_end,
        "surface": span.surface,
        "type": span.etype.name,
    }


def _span_from_record(record: dict, sid: str, types: dict) -> MentionSpan:
    return MentionSpan(
        sentence_id=sid,
        token_start=record["token_start"],
        token_end=record["token_end"],
        surface=record["surface"],
        etype=types[record["type"]],
    )


def _char_range(sentence: Sentence, span: MentionSpan) -> tuple[int, int]:
    return (sentence.tokens[span.token_start].char_start,
            sentence.tokens[span.token_end - 1].char_end)


# ---------------------------------------------------------------- stage 1

def run_synthesize(cfg: PipelineConfig) -> Path:
    """Fold the guideline table over the annotated set, then generate
    synthetic training sentences with both strategies."""
    _require_paths(cfg, "train_dataset", gateway=True)
    schema = cfg.schema()
    seeds = _load_train(cfg)
    gateway = _build_gateway(cfg)
    table = synthesis.GuidelineTable.initial(
        schema, cfg.synthesis.initial_descriptions
    )
    for sample in seeds:
        table = synthesis.update_guideline(
            table, sample, gateway, cfg.gateway.llm_model, prompts_dir=cfg.prompts_dir
        )
    guideline_path = cfg.out_path(GUIDELINE_FILE)
    guideline_doc = {
        "kind": "guideline",
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "table": table.to_json_dict(),
    }
    guideline_path.write_text(
        json.dumps(guideline_doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    records = []
    rejected = 0
    existing = {s.sentence.text for s in seeds}
    for strategy in cfg.synthesis.strategies:
        result = synthesis.synthesize(
            seeds, table, strategy, cfg.synthesis.count_per_seed, gateway,
            cfg.gateway.llm_model, schema, existing_texts=set(existing),
            prompts_dir=cfg.prompts_dir,
        )
        rejected += len(result.rejected)
        for sample in result.accepted:
            existing.add(sample.sentence.text)
            entities = []
            for span in sample.entities:
                cs, ce = _char_range(sample.sentence, span)
                entities.append({"char_start": cs, "char_end": ce,
                                 "type": span.etype.name})
            records.append({
                "id": sample.sentence.id,
                "text": sample.sentence.text,
                "entities": entities,
                "provenance": sample.provenance,
                "source_id": sample.source_id,
            })
    path = cfg.out_path(SYNTH_FILE)
    _write_artifact(path, "synthesized", cfg, records,
                    extra_meta={"rejected": rejected})
    return path


def load_synthesized(cfg: PipelineConfig) -> list[tuple[Sentence, list[MentionSpan]]]:
    types = schema_by_name(cfg.schema())
    _, records = _read_artifact(cfg.out_path(SYNTH_FILE), "synthesized", cfg)
    out = []
    for record in records:
        sentence = sentence_from_text(record["id"], record["text"])
        starts = {t.char_start: i for i, t in enumerate(sentence.tokens)}
        ends = {t.char_end: i for i, t in enumerate(sentence.tokens)}
        spans = []
        for ent in record["entities"]:
            spans.append(MentionSpan(
                sentence_id=sentence.id,
                token_start=starts[ent["char_start"]],
                token_end=ends[ent["char_end"]] + 1,
                surface=record["text"][ent["char_start"]:ent["char_end"]],
                etype=types[ent["type"]],
            ))
        out.append((sentence, spans))
    return out


# ---------------------------------------------------------------- training

def _token_matrix(store: EmbeddingStore, sentence: Sentence) -> np.ndarray:
    return np.stack([
        store.get(token_key(sentence.id, i)) for i in range(len(sentence.tokens))
    ])


def run_train(cfg: PipelineConfig) -> Path:
    _require_paths(cfg, "train_dataset", "token_store")
    schema = cfg.schema()
    labels = bio.bio_labels(schema)
    label_ids = {tag: i for i, tag in enumerate(labels)}
    token_store = load_store(cfg.path("token_store"), kind="token")

    pairs: list[tuple[Sentence, list[MentionSpan]]] = [
        (s.sentence, s.mentions()) for s in _load_train(cfg)
    ]
    if cfg.stages.stage1:
        pairs.extend(load_synthesized(cfg))

    dataset = []
    for sentence, spans in pairs:
        emb = _token_matrix(token_store, sentence)
        tags = bio.bio_encode(spans, len(sentence.tokens))
        dataset.append((emb, [label_ids[t] for t in tags]))

    result = crf.train(dataset, labels, cfg.train)
    path = cfg.out_path(CHECKPOINT_FILE)
    crf.save_checkpoint(result.model, path, sidecar={
        "labels": labels,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "train_config": cfg.train.to_dict(),
        "samples": len(dataset),
        "initial_loss": result.epoch_losses[0],
        "final_loss": result.epoch_losses[-1],
    })
    return path


def _load_model(cfg: PipelineConfig) -> crf.CrfModel:
    path = cfg.out_path(CHECKPOINT_FILE)
    if not path.exists():
        raise StageDependencyError(
            f"missing artifact {CHECKPOINT_FILE!r}; run the train stage first"
        )
    model, meta = crf.load_checkpoint(path)
    if meta.get("config_hash") != cfg.config_hash:
        raise ArtifactMismatchError(
            f"{CHECKPOINT_FILE}: produced under config {meta.get('config_hash')}, "
            f"current config is {cfg.config_hash}"
        )
    return model


# ---------------------------------------------------------------- inference

def run_infer(cfg: PipelineConfig) -> Path:
    _require_paths(cfg, "test_dataset", "token_store")
    schema = cfg.schema()
    labels = bio.bio_labels(schema)
    model = _load_model(cfg)
    token_store = load_store(cfg.path("token_store"), kind="token")
    records = []
    for sample in _load_test(cfg):
        emb = _token_matrix(token_store, sample.sentence)
        path_ids, _ = crf.viterbi(model, emb)
        tags = [labels[i] for i in path_ids]
        spans = bio.bio_decode(tags, sample.sentence, schema)
        table = crf.marginals(model, emb)
        records.append({
            "sentence_id": sample.sentence.id,
            "spans": [_span_to_record(s) for s in spans],
            "marginals": [[float(v) for v in row] for row in table.probs],
        })
    path = cfg.out_path(SUPERVISED_FILE)
    _write_artifact(path, "supervised", cfg, records)
    return path


# ---------------------------------------------------------------- stage 2

def run_refine(cfg: PipelineConfig) -> Path:
    if cfg.stages.stage2:
        _require_paths(cfg, "test_dataset", gateway=True)
    types = schema_by_name(cfg.schema())
    _, records = _read_artifact(cfg.out_path(SUPERVISED_FILE), "supervised", cfg)
    refined_path = cfg.out_path(REFINED_FILE)

    if not cfg.stages.stage2:
        out = [{"sentence_id": r["sentence_id"], "spans": r["spans"]}
               for r in records]
        _write_artifact(refined_path, "refined", cfg, out)
        return refined_path

    tests = {s.sentence.id: s for s in _load_test(cfg)}
    predictions: list[MentionSpan] = []
    marginal_tables: dict[str, crf.MarginalTable] = {}
    for record in records:
        sid = record["sentence_id"]
        marginal_tables[sid] = crf.MarginalTable(np.asarray(record["marginals"]))
        predictions.extend(
            _span_from_record(s, sid, types) for s in record["spans"]
        )

    routed = uncertainty.route(predictions, marginal_tables, cfg.router)
    routing_records = [
        {
            "sentence_id": d.mention.sentence_id,
            "span": _span_to_record(d.mention),
            "uncertainty": d.uncertainty,
            "verdict": d.routed_to,
        }
        for d in routed.decisions
    ]
    _write_artifact(cfg.out_path(ROUTING_FILE), "routing", cfg, routing_records)

    gateway = _build_gateway(cfg)
    keep_by_sid: dict[str, list[MentionSpan]] = {r["sentence_id"]: [] for r in records}
    refine_by_sid: dict[str, list[MentionSpan]] = {r["sentence_id"]: [] for r in records}
    for span in routed.keep:
        keep_by_sid[span.sentence_id].append(span)
    for span in routed.refine:
        refine_by_sid[span.sentence_id].append(span)

    stats = refine_mod.RefineStats()
    out = []
    for record in records:
        sid = record["sentence_id"]
        sample = tests[sid]
        uncertain = refine_by_sid[sid]
        confident = keep_by_sid[sid]
        if uncertain:
            context = refine_mod.SampleContext(
                sentence=sample.sentence,
                image_path=sample.image_path,
                image_w=sample.image_w,
                image_h=sample.image_h,
            )
            outcomes = refine_mod.refine(
                uncertain, context, gateway, cfg.gateway.mllm_model,
                cfg.schema(), allow_add=cfg.allow_add,
                prompts_dir=cfg.prompts_dir, stats=stats,
            )
            merged = refine_mod.merge(confident, outcomes)
        else:
            merged = sorted(confident, key=lambda m: m.token_start)
        out.append({"sentence_id": sid, "spans": [_span_to_record(s) for s in merged]})
    _write_artifact(refined_path, "refined", cfg, out, extra_meta={
        "parse_failures": stats.parse_failures,
        "invalid_verdicts": stats.invalid_verdicts,
    })
    return refined_path


# ---------------------------------------------------------------- stage 3

def _build_pool(cfg: PipelineConfig) -> list[IclExample]:
    return [IclExample.from_sample(s) for s in _load_train(cfg)]


def run_select(cfg: PipelineConfig) -> Path:
    if not cfg.stages.stage3:
        raise StageDependencyError("selection requires stages.stage3 = true")
    _require_paths(cfg, "train_dataset", "test_dataset", "sentence_store",
                   "entity_store", "image_store")
    types = schema_by_name(cfg.schema())
    _, records = _read_artifact(cfg.out_path(REFINED_FILE), "refined", cfg)
    tests = {s.sentence.id: s for s in _load_test(cfg)}
    pool = _build_pool(cfg)
    if cfg.selector.k > len(pool):
        from .config import ConfigError
        raise ConfigError(
            f"selector.k: {cfg.selector.k} exceeds the {len(pool)}-example "
            f"candidate pool"
        )
    sentence_store = load_store(cfg.path("sentence_store"), kind="sentence")
    entity_store = load_store(cfg.path("entity_store"), kind="entity")
    image_store = load_store(cfg.path("image_store"), kind="image")
    selector = Selector(pool, sentence_store, entity_store, image_store, cfg.selector)

    out = []
    for record in records:
        sid = record["sentence_id"]
        sample = tests[sid]
        if cfg.selector_mode == SELECT_DYNAMIC:
            spans = [_span_from_record(s, sid, types) for s in record["spans"]]
            query = SelectorQuery(
                sentence_vec=sentence_store.get(sid),
                entities=tuple(
                    (s.etype.name, entity_store.get(entity_key(s.surface)))
                    for s in spans
                ),
                image_vec=image_store.get(image_key(sample.image_path)),
            )
            chosen, scores = selector.select_topk(query)
            score_rows = [
                {
                    "candidate": pool[s.index].sample.sentence.id,
                    "entity": s.entity,
                    "sentence": s.sentence,
                    "image": s.image,
                    "combined": s.combined,
                }
                for s in scores
            ]
        else:
            chosen = selector.select_fixed()
            score_rows = []
        out.append({
            "sentence_id": sid,
            "mode": cfg.selector_mode,
            "selected": [ex.sample.sentence.id for ex in chosen],
            "scores": score_rows,
        })
    path = cfg.out_path(SELECTION_FILE)
    _write_artifact(path, "selection", cfg, out)
    return path


def run_ground(cfg: PipelineConfig) -> Path:
    _require_paths(cfg, "test_dataset", gateway=True)
    if cfg.stages.stage3:
        _require_paths(cfg, "train_dataset")
    types = schema_by_name(cfg.schema())
    _, refined = _read_artifact(cfg.out_path(REFINED_FILE), "refined", cfg)
    tests = {s.sentence.id: s for s in _load_test(cfg)}

    selected_by_sid: dict[str, list[str]] = {}
    if cfg.stages.stage3:
        _, selection = _read_artifact(cfg.out_path(SELECTION_FILE), "selection", cfg)
        selected_by_sid = {r["sentence_id"]: r["selected"] for r in selection}
        pool = {ex.sample.sentence.id: ex for ex in _build_pool(cfg)}
    else:
        pool = {}

    gateway = _build_gateway(cfg)
    stats = refine_mod.RefineStats()
    out = []
    for record in refined:
        sid = record["sentence_id"]
        sample = tests[sid]
        spans = [_span_from_record(s, sid, types) for s in record["spans"]]
        context = refine_mod.SampleContext(
            sentence=sample.sentence,
            image_path=sample.image_path,
            image_w=sample.image_w,
            image_h=sample.image_h,
        )
        examples = [pool[c] for c in selected_by_sid.get(sid, [])]
        results = refine_mod.ground(
            spans, context, examples, gateway, cfg.gateway.mllm_model,
            prompts_dir=cfg.prompts_dir, stats=stats,
        )
        triplets = []
        for res in results:
            entry = _span_to_record(res.mention)
            entry["box"] = res.region.as_list() if res.region is not None else None
            triplets.append(entry)
        out.append({"sentence_id": sid, "triplets": triplets})
    path = cfg.out_path(GROUNDED_FILE)
    _write_artifact(path, "grounded", cfg, out, extra_meta={
        "abstentions": stats.grounding_abstentions,
    })
    return path


# ---------------------------------------------------------------- evaluation

def load_predictions(cfg: PipelineConfig) -> dict[str, list[GmnerTriplet]]:
    types = schema_by_name(cfg.schema())
    _, records = _read_artifact(cfg.out_path(GROUNDED_FILE), "grounded", cfg)
    out: dict[str, list[GmnerTriplet]] = {}
    for record in records:
        sid = record["sentence_id"]
        triplets = []
        for t in record["triplets"]:
            span = _span_from_record(t, sid, types)
            box = t.get("box")
            region = BoundingBox(*box) if box is not None else None
            triplets.append(GmnerTriplet(mention=span, region=region))
        out[sid] = triplets
    return out


def run_eval(cfg: PipelineConfig, variant: str = "") -> EvalReport:
    _require_paths(cfg, "test_dataset")
    gold = _load_test(cfg)
    predictions = load_predictions(cfg)
    report = score(gold, predictions, variant=variant or _variant_name(cfg))
    text_report = score(gold, predictions, text_only=True,
                        variant=report.variant + "/text")
    doc = {
        "kind": "report",
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "gmner": report.to_json_dict(),
        "text_ner": text_report.to_json_dict(),
    }
    cfg.out_path(REPORT_JSON).write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    text = (
        f"variant: {report.variant}\n\nGMNER (span+type+region)\n"
        f"{report.to_text_table()}\n\nText NER (span+type)\n"
        f"{text_report.to_text_table()}\n"
    )
    cfg.out_path(REPORT_TEXT).write_text(text, encoding="utf-8")
    return report


def _variant_name(cfg: PipelineConfig) -> str:
    missing = []
    if not cfg.stages.stage1:
        missing.append("stage1")
    if not cfg.stages.stage2:
        missing.append("stage2")
    if not cfg.stages.stage3:
        missing.append("stage3")
    if cfg.selector_mode != SELECT_DYNAMIC:
        missing.append("mes")
    if not missing:
        return "overall"
    return "wo_" + "+".join(missing)


@dataclass
class RunSummary:
    report: EvalReport
    artifacts: list[str]


def run_all(cfg: PipelineConfig) -> RunSummary:
    artifacts = []
    if cfg.stages.stage1:
        artifacts.append(str(run_synthesize(cfg)))
    artifacts.append(str(run_train(cfg)))
    artifacts.append(str(run_infer(cfg)))
    artifacts.append(str(run_refine(cfg)))
    if cfg.stages.stage3:
        artifacts.append(str(run_select(cfg)))
    artifacts.append(str(run_ground(cfg)))
    report = run_eval(cfg)
    artifacts.append(str(cfg.out_path(REPORT_JSON)))
    return RunSummary(report=report, artifacts=artifacts)

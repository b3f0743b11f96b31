#!/usr/bin/env python3
"""Regenerate the bundled test fixtures.

Builds two fixture sets under tests/fixtures/:

  separable/  10 sentences whose token embeddings carry their label, so CRF
              training must reach train-set F1 = 1.0 quickly.
  e2e/        a 20-sample dataset (10 annotated + 10 test), embedding stores,
              a pipeline config, and a transcript cache recorded against a
              scripted stand-in LLM, covering the full ablation matrix.

The scripted LLM knows the gold annotations and behaves plausibly: it tags
sentences (with a deliberate boundary error on one sample), substitutes and
paraphrases seeds deterministically, corrects flagged mentions toward gold,
and grounds entities with the gold box only when an in-context example of
the same entity type is present. Re-running the script after any prompt or
config change refreshes the cache.

Usage: python scripts/make_fixtures.py
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

from gmnerkit import pipeline
from gmnerkit.config import parse_config
from gmnerkit.embeddings import (
    EmbeddingStore,
    entity_key,
    image_key,
    save_store,
    token_key,
)
from gmnerkit.gateway import GatewayConfig, LlmGateway, TranscriptCache
from gmnerkit.tokenizer import tokenize

FIXTURES = ROOT / "tests" / "fixtures"

TYPES = ["AIRCRAFT", "SHIP", "WEAPON", "PERSON"]

# ------------------------------------------------------------------ datasets

# (id, text words, [(word index, type)], has_region per entity)
TRAIN_ROWS = [
    ("d0", "The F-22 climbed over the ridge .", [(1, "AIRCRAFT", True)]),
    ("d1", "The Nimitz carrier left the harbor early .", [(1, "SHIP", True)]),
    ("d2", "Soldiers carried the M4 through the mud .", [(3, "WEAPON", True)]),
    ("d3", "General Mattis visited the forward base .", [(1, "PERSON", True)]),
    ("d4", "The F-22 escorted the C-130 over the coast .",
     [(1, "AIRCRAFT", True), (4, "AIRCRAFT", True)]),
    ("d5", "The Ticonderoga fired the Harpoon during the drill .",
     [(1, "SHIP", True), (4, "WEAPON", True)]),
    ("d6", "Captain Reyes boarded the Nimitz at noon .",
     [(1, "PERSON", True), (4, "SHIP", True)]),
    ("d7", "The M4 lay beside the empty crate .", [(1, "WEAPON", False)]),
    ("d8", "Captain Ruiz guided the C-130 onto the strip .",
     [(1, "PERSON", True), (4, "AIRCRAFT", True)]),
    ("d9", "Sergeant Cole cleaned the Harpoon launcher .",
     [(1, "PERSON", True), (4, "WEAPON", True)]),
]

TEST_ROWS = [
    ("t0", "The F-22 returned to the ridge .", [(1, "AIRCRAFT", True)]),
    ("t1", "The Nimitz carrier anchored near the pier .", [(1, "SHIP", True)]),
    ("t2", "Soldiers carried the M4 past the gate .", [(3, "WEAPON", True)]),
    ("t3", "General Mattis toured the harbor .", [(1, "PERSON", True)]),
    ("t4", "The F-35 circled the ridge .", [(1, "AIRCRAFT", True)]),
    ("t5", "The Iowa anchored before dawn .", [(1, "SHIP", False)]),
    ("t6", "Captain Reyes signaled the Ticonderoga .",
     [(1, "PERSON", True), (4, "SHIP", True)]),
    ("t7", "The Javelin rested beside the gate .", [(1, "WEAPON", True)]),
    ("t8", "The C-130 landed before dusk .", [(1, "AIRCRAFT", True)]),
    ("t9", "Commander Vega watched the F-35 overhead .",
     [(1, "PERSON", True), (4, "AIRCRAFT", True)]),
]

# Substitution alternates served by the scripted LLM, per type and variant.
ALTERNATES = {
    "AIRCRAFT": ["F-35", "B-52"],
    "SHIP": ["Kidd", "Wasp"],
    "WEAPON": ["M16", "Viper"],
    "PERSON": ["Hale", "Ortiz"],
}

# Test-only surfaces with a deliberately ambiguous type channel: the CRF must
# flag them as uncertain so Stage 2 has real work to do.
FLAT_UNSEEN = {"Iowa": "SHIP", "Javelin": "WEAPON", "Vega": "PERSON"}

# Surfaces that only synthesis introduces, with a misleading channel: without
# Stage 1 training data the CRF stays confidently wrong on them.
MISLEADING = {"F-35": ("AIRCRAFT", "WEAPON")}  # surface -> (gold, decoy type)

TOKEN_DIM = 13  # 5 type-channel dims (O + 4 types) + 8 signature dims
SIDE_DIM = 8    # sentence / entity / image store dim

CHANNEL = {"O": 0, "AIRCRAFT": 1, "SHIP": 2, "WEAPON": 3, "PERSON": 4}


def hash_vec(tag: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.normal(size=dim)


def sample_box(sid: str, k: int) -> list[int]:
    h = int(hashlib.sha256(f"{sid}:{k}".encode()).hexdigest()[:6], 16)
    x0 = 10 + (h % 200)
    y0 = 10 + (h // 7 % 150)
    return [x0, y0, x0 + 180, y0 + 140]


def dataset_records(rows):
    records = []
    for sid, text, entities in rows:
        words = text.split(" ")
        offsets = []
        pos = 0
        for w in words:
            offsets.append((pos, pos + len(w)))
            pos += len(w) + 1
        ents = []
        for k, (idx, tname, has_box) in enumerate(entities):
            cs, ce = offsets[idx]
            box = None
            if has_box:
                x0, y0, x1, y1 = sample_box(sid, k)
                box = {"x_min": x0, "y_min": y0, "x_max": x1, "y_max": y1}
            ents.append({"char_start": cs, "char_end": ce, "type": tname,
                         "box": box})
        records.append({
            "id": sid,
            "text": text,
            "image": {"path": f"images/{sid}.png", "width": 640, "height": 480},
            "entities": ents,
        })
    return records


def write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=True) + "\n")


# ------------------------------------------------- scripted synthesis texts

def substitution_variants(sid, text, entities, count=2):
    out = []
    for i in range(count):
        words = text.split(" ")
        pairs = []
        for idx, tname, _ in entities:
            replacement = ALTERNATES[tname][i % len(ALTERNATES[tname])]
            words[idx] = replacement
            pairs.append({"surface": replacement, "type": tname})
        out.append({"text": " ".join(words), "entities": pairs})
    return out


def paraphrase_variants(sid, text, entities, count=2):
    core = text[:-2] if text.endswith(" .") else text
    core = core[0].lower() + core[1:]
    frames = [
        f"Observers confirmed that {core} that morning .",
        f"It was reported that {core} without incident .",
    ]
    return [{"text": frames[i % len(frames)]} for i in range(count)]


# ------------------------------------------------------------ scripted LLM

class ScriptedLlm:
    """Deterministic stand-in provider driven by prompt markers."""

    def __init__(self, rows):
        self.gold = {}
        for sid, text, entities in rows:
            words = text.split(" ")
            self.gold[text] = {
                "sid": sid,
                "entities": [
                    (words[idx], tname, has_box, k)
                    for k, (idx, tname, has_box) in enumerate(entities)
                ],
            }

    # -- transport interface ------------------------------------------------
    def __call__(self, url, body, headers, timeout):
        payload = json.loads(body)
        prompt = payload["messages"][0]["content"][0]["text"]
        reply = self.reply(prompt)
        return 200, json.dumps(
            {"choices": [{"message": {"content": reply}}]}
        ).encode("utf-8")

    # -- helpers -------------------------------------------------------------
    @staticmethod
    def _after(prompt: str, marker: str) -> str:
        lines = prompt.splitlines()
        for i, line in enumerate(lines):
            if line.strip() == marker:
                return lines[i + 1].strip()
        raise AssertionError(f"marker {marker!r} not found in prompt")

    def _gold_for(self, prompt: str, marker: str = "Sentence:"):
        sentence = self._after(prompt, marker)
        if sentence not in self.gold:
            raise AssertionError(f"no gold for sentence {sentence!r}")
        return sentence, self.gold[sentence]

    def reply(self, prompt: str) -> str:
        if "Identify every entity mention" in prompt:
            return self._tag(prompt)
        if "distill a short negative" in prompt:
            return json.dumps({"WEAPON": [
                "Do not absorb articles or generic nouns around a designation."
            ]})
        if "Study how the gold annotations" in prompt:
            sentence, gold = self._gold_for(prompt, "Annotated sentence:")
            doc = {t: f"Named {t.lower()} mentions as annotated."
                   for t in sorted({e[1] for e in gold["entities"]})}
            return json.dumps(doc)
        if "variants of the seed sentence" in prompt:
            return self._substitute(prompt)
        if "paraphrases of the seed sentence" in prompt:
            return self._paraphrase(prompt)
        if "Predictions flagged as uncertain" in prompt:
            return self._refine(prompt)
        if "Entities to locate" in prompt:
            return self._ground(prompt)
        raise AssertionError(f"unrecognized prompt:\n{prompt[:200]}")

    def _tag(self, prompt: str) -> str:
        sentence, gold = self._gold_for(prompt)
        out = []
        for surface, tname, _, _ in gold["entities"]:
            if gold["sid"] == "d2":
                # Deliberate boundary error: absorb the article, so the
                # guideline fold exercises the negative-description path.
                out.append({"surface": f"the {surface}", "type": tname})
            else:
                out.append({"surface": surface, "type": tname})
        return json.dumps(out)

    def _seed_entities(self, prompt: str, marker: str):
        raw = self._after(prompt, marker)
        return json.loads(raw)

    def _substitute(self, prompt: str) -> str:
        sentence, gold = self._gold_for(prompt, "Seed sentence:")
        entities = [(self._word_index(sentence, s), t, None)
                    for s, t, _, _ in gold["entities"]]
        return json.dumps(substitution_variants(gold["sid"], sentence, entities))

    def _paraphrase(self, prompt: str) -> str:
        sentence, gold = self._gold_for(prompt, "Seed sentence:")
        return json.dumps(paraphrase_variants(gold["sid"], sentence, []))

    @staticmethod
    def _word_index(text: str, surface: str) -> int:
        return text.split(" ").index(surface)

    def _refine(self, prompt: str) -> str:
        sentence, gold = self._gold_for(prompt)
        flagged = json.loads(self._after(prompt, "Predictions flagged as uncertain:"))
        gold_pairs = [(s, t) for s, t, _, _ in gold["entities"]]
        results = []
        covered = set()
        for item in flagged:
            mention, mtype = item["mention"], item["type"]
            if (mention, mtype) in gold_pairs:
                results.append({"mention": mention, "verdict": "CONFIRM"})
                covered.add(mention)
                continue
            target = None
            for s, t in gold_pairs:
                if s == mention or s in mention or mention in s:
                    target = (s, t)
                    break
            if target is not None:
                results.append({
                    "mention": mention, "verdict": "CORRECT",
                    "corrected_mention": target[0], "corrected_type": target[1],
                })
                covered.add(target[0])
            else:
                results.append({"mention": mention, "verdict": "DELETE"})
        added = [
            {"mention": s, "type": t}
            for s, t in gold_pairs
            if s not in covered and not any(s in m["mention"] for m in flagged)
        ]
        doc = {"results": results, "added": added}
        return ("Checked each flagged mention against the sentence and image."
                "\n```json\n" + json.dumps(doc) + "\n```")

    def _ground(self, prompt: str) -> str:
        sentence, gold = self._gold_for(prompt)
        mentions = json.loads(self._after(prompt, "Entities to locate:"))
        example_types = set(re.findall(r'^- ".*" \((\w+)\):', prompt, re.M))
        by_surface = {s: (t, has_box, k) for s, t, has_box, k in gold["entities"]}
        regions = []
        for item in mentions:
            surface = item["mention"]
            if surface not in by_surface:
                regions.append({"mention": surface, "box": None})
                continue
            tname, has_box, k = by_surface[surface]
            if not has_box:
                regions.append({"mention": surface, "box": None})
                continue
            box = sample_box(gold["sid"], k)
            if tname not in example_types:
                # Without a same-type reference example the guess drifts far
                # enough to fail the IoU gate.
                width = box[2] - box[0]
                box = [box[0] + int(width * 0.8), box[1],
                       box[2] + int(width * 0.8), box[3]]
                box[2] = min(box[2], 640)
                if box[2] - box[0] < 2:
                    box = None
            regions.append({"mention": surface, "box": box})
        return ("Compared the target against the reference examples."
                "\n```json\n" + json.dumps({"regions": regions}) + "\n```")


# ----------------------------------------------------------------- stores

def lexicon_channels():
    """surface -> 5-dim type channel, from the fixture's design rules."""
    channel: dict[str, np.ndarray] = {}

    def set_type(surface, tname, strength):
        vec = np.zeros(5)
        vec[CHANNEL[tname]] = strength
        channel[surface] = vec

    for _, text, entities in TRAIN_ROWS:
        words = text.split(" ")
        for idx, tname, _ in entities:
            set_type(words[idx], tname, 2.0)
    for tname, alternates in ALTERNATES.items():
        for surface in alternates:
            if surface in MISLEADING:
                continue
            set_type(surface, tname, 2.0)
    for surface, (_, decoy) in MISLEADING.items():
        set_type(surface, decoy, 1.2)
    for surface, gold_type in FLAT_UNSEEN.items():
        vec = np.zeros(5)
        vec[1:5] = 0.8  # ambiguous across all four entity types
        channel[surface] = vec
    return channel


def token_vector(surface: str, channel: dict[str, np.ndarray]) -> np.ndarray:
    vec = np.zeros(TOKEN_DIM)
    if surface in channel:
        vec[:5] = channel[surface]
    else:
        vec[CHANNEL["O"]] = 2.0
    noise_scale = 0.6 if surface in MISLEADING else 0.1
    vec[5:] = noise_scale * hash_vec(f"tok:{surface}", TOKEN_DIM - 5)
    return vec


def build_token_store(sentences: dict[str, str]) -> EmbeddingStore:
    channel = lexicon_channels()
    store = EmbeddingStore(kind="token", dim=TOKEN_DIM)
    for sid, text in sentences.items():
        for i, tok in enumerate(tokenize(text)):
            store.add(token_key(sid, i), token_vector(tok.surface, channel))
    return store


def sentence_vector(text: str) -> np.ndarray:
    words = [w for w in text.split(" ") if w not in {".", ","}]
    vec = np.zeros(SIDE_DIM)
    for w in words:
        vec += hash_vec(f"word:{w.lower()}", SIDE_DIM)
    return vec / max(len(words), 1)


def image_vector(sid: str, dominant_type: str | None) -> np.ndarray:
    base = hash_vec(f"img:{sid}", SIDE_DIM)
    if dominant_type is None:
        return base
    return 0.75 * hash_vec(f"scene:{dominant_type}", SIDE_DIM) + 0.25 * base


def build_side_stores(rows, extra_entity_surfaces):
    sentence_store = EmbeddingStore(kind="sentence", dim=SIDE_DIM)
    entity_store = EmbeddingStore(kind="entity", dim=SIDE_DIM)
    image_store = EmbeddingStore(kind="image", dim=SIDE_DIM)
    for sid, text, entities in rows:
        sentence_store.add(sid, sentence_vector(text))
        dominant = entities[0][1] if entities else None
        image_store.add(image_key(f"images/{sid}.png"), image_vector(sid, dominant))
    surfaces = set(extra_entity_surfaces)
    for _, text, entities in rows:
        words = text.split(" ")
        surfaces.update(words[idx] for idx, _, _ in entities)
    for tname, alternates in ALTERNATES.items():
        surfaces.update(alternates)
    for surface in sorted(surfaces):
        key = entity_key(surface)
        if key not in entity_store:
            entity_store.add(key, hash_vec(f"ent:{surface}", SIDE_DIM))
    return sentence_store, entity_store, image_store


# -------------------------------------------------------------- separable

def make_separable():
    out_dir = FIXTURES / "separable"
    if out_dir.exists():
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True)
    rng = np.random.default_rng(2024)
    rows = []
    ship_names = [["USS", "Kidd"], ["USS", "Wasp"], ["Nimitz"], ["Iowa"],
                  ["Ticonderoga"]]
    weapon_names = [["M4"], ["Harpoon"], ["MG5"], ["Viper"], ["M16"]]
    for i in range(10):
        ship = ship_names[i % len(ship_names)]
        weapon = weapon_names[(i * 3 + 1) % len(weapon_names)]
        words = ["crew", str(i), "saw"] + ship + ["carrying"] + weapon + ["today"]
        text = " ".join(words)
        ship_start = 3
        ship_end = ship_start + len(ship)
        weapon_start = ship_end + 1
        weapon_end = weapon_start + len(weapon)
        offsets = []
        pos = 0
        for w in words:
            offsets.append((pos, pos + len(w)))
            pos += len(w) + 1
        rows.append({
            "id": f"p{i}",
            "text": text,
            "image": {"path": f"images/p{i}.png", "width": 100, "height": 100},
            "entities": [
                {"char_start": offsets[ship_start][0],
                 "char_end": offsets[ship_end - 1][1], "type": "SHIP",
                 "box": None},
                {"char_start": offsets[weapon_start][0],
                 "char_end": offsets[weapon_end - 1][1], "type": "WEAPON",
                 "box": None},
            ],
        })
    write_jsonl(out_dir / "train.jsonl", rows)

    # Labels: O, B-SHIP, I-SHIP, B-WEAPON, I-WEAPON -> channel dims 0..4.
    label_of = {}
    for row in rows:
        words = row["text"].split(" ")
        offsets = []
        pos = 0
        for w in words:
            offsets.append((pos, pos + len(w)))
            pos += len(w) + 1
        tags = ["O"] * len(words)
        for ent in row["entities"]:
            idxs = [i for i, (a, b) in enumerate(offsets)
                    if a >= ent["char_start"] and b <= ent["char_end"]]
            prefix = "B"
            for i in idxs:
                tags[i] = f"{prefix}-{ent['type']}"
                prefix = "I"
        label_of[row["id"]] = tags

    tag_index = {"O": 0, "B-SHIP": 1, "I-SHIP": 2, "B-WEAPON": 3, "I-WEAPON": 4}
    store = EmbeddingStore(kind="token", dim=5)
    for row in rows:
        for i, tag in enumerate(label_of[row["id"]]):
            vec = np.zeros(5)
            vec[tag_index[tag]] = 2.0
            vec += rng.normal(scale=0.05, size=5)
            store.add(token_key(row["id"], i), vec)
    save_store(store, out_dir / "tokens.emb")
    print(f"separable fixture: {len(rows)} sentences -> {out_dir}")


# ------------------------------------------------------------------- e2e

BASE_CONFIG = {
    "version": 1,
    "seed": 13,
    "entity_types": TYPES,
    "paths": {
        "train_dataset": "train.jsonl",
        "test_dataset": "test.jsonl",
        "token_store": "stores/tokens.emb",
        "sentence_store": "stores/sentences.emb",
        "entity_store": "stores/entities.emb",
        "image_store": "stores/images.emb",
        "transcript_cache": "cache.jsonl",
        "out_dir": "out",
    },
    "stages": {"stage1": True, "stage2": True, "stage3": True},
    "router": {"beta": 0.8},
    "selector": {"delta": 0.6, "lambda1": 0.6, "lambda2": 0.4, "lambda3": 0.2,
                 "k": 3, "mode": "dynamic"},
    "train": {"epochs": 80, "batch_size": 4, "emission_lr": 0.5, "crf_lr": 0.05,
              "weight_decay": 0.0, "shuffle": True},
    "synthesis": {"count_per_seed": 2,
                  "strategies": ["SUBSTITUTION", "PARAPHRASE"]},
    "gateway": {"mode": "REPLAY", "llm_model": "text-llm",
                "mllm_model": "multimodal-llm"},
    "refine": {"allow_add": True},
}

VARIANTS = {
    "overall": [],
    "wo_stage1": ["stages.stage1=false"],
    "wo_stage2": ["stages.stage2=false"],
    "wo_stage3": ["stages.stage3=false"],
    "wo_mes": ["selector.mode=\"fixed\""],
}


def expected_synthesized_sentences():
    """Reproduce the scripted synthesis outside the pipeline, for the stores."""
    out = {}
    for sid, text, entities in TRAIN_ROWS:
        for i, variant in enumerate(substitution_variants(sid, text, entities)):
            out[f"{sid}/sub{i}"] = variant["text"]
        for i, variant in enumerate(paraphrase_variants(sid, text, entities)):
            out[f"{sid}/par{i}"] = variant["text"]
    return out


def run_variant(work: Path, name: str, overrides, mode: str,
                scripted: ScriptedLlm):
    from gmnerkit.config import apply_overrides

    doc = apply_overrides(json.loads(json.dumps(BASE_CONFIG)), overrides + [
        f"gateway.mode=\"{mode}\"",
        "gateway.endpoint=\"http://scripted.invalid/v1/chat\"",
        f"paths.out_dir=\"out_{name}\"",
    ])
    cfg = parse_config(doc, base_dir=work)

    original = pipeline._build_gateway

    def patched(cfg_inner):
        gw = cfg_inner.gateway
        return LlmGateway(
            config=GatewayConfig(endpoint=gw.endpoint, mode=gw.mode,
                                 retries=gw.retries, backoff=0.0,
                                 timeout=gw.timeout,
                                 concurrency=gw.concurrency),
            cache=TranscriptCache(cfg_inner.path("transcript_cache")),
            transport=scripted,
        )

    pipeline._build_gateway = patched
    try:
        summary = pipeline.run_all(cfg)
    finally:
        pipeline._build_gateway = original
    return cfg, summary


def collect_predicted_surfaces(cfg) -> set[str]:
    surfaces = set()
    supervised = cfg.out_path(pipeline.SUPERVISED_FILE)
    with open(supervised, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()][1:]
    for record in lines:
        for span in record["spans"]:
            surfaces.add(span["surface"])
    return surfaces


def make_e2e():
    out_dir = FIXTURES / "e2e"
    if out_dir.exists():
        shutil.rmtree(out_dir)
    (out_dir / "stores").mkdir(parents=True)

    train_records = dataset_records(TRAIN_ROWS)
    test_records = dataset_records(TEST_ROWS)
    write_jsonl(out_dir / "train.jsonl", train_records)
    write_jsonl(out_dir / "test.jsonl", test_records)

    sentences = {sid: text for sid, text, _ in TRAIN_ROWS + TEST_ROWS}
    sentences.update(expected_synthesized_sentences())
    token_store = build_token_store(sentences)
    save_store(token_store, out_dir / "stores" / "tokens.emb")

    scripted = ScriptedLlm(TRAIN_ROWS + TEST_ROWS)

    # Pre-pass: train + infer per training regime to learn which span
    # surfaces the CRF will actually predict, then freeze the entity store.
    predicted: set[str] = set()
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        for item in ["train.jsonl", "test.jsonl"]:
            shutil.copy(out_dir / item, work / item)
        (work / "stores").mkdir()
        shutil.copy(out_dir / "stores" / "tokens.emb", work / "stores" / "tokens.emb")
        # Side stores are not needed for train/infer, but the config
        # references them; create empty placeholders.
        for name, kind in [("sentences.emb", "sentence"), ("entities.emb", "entity"),
                           ("images.emb", "image")]:
            placeholder = EmbeddingStore(kind=kind, dim=SIDE_DIM)
            placeholder.add("_placeholder", np.ones(SIDE_DIM))
            save_store(placeholder, work / "stores" / name)

        from gmnerkit.config import apply_overrides

        for name, overrides in [("pre1", []), ("pre0", ["stages.stage1=false"])]:
            doc = apply_overrides(json.loads(json.dumps(BASE_CONFIG)), overrides + [
                "gateway.mode=\"RECORD\"",
                "gateway.endpoint=\"http://scripted.invalid/v1/chat\"",
                f"paths.out_dir=\"out_{name}\"",
            ])
            cfg = parse_config(doc, base_dir=work)
            original = pipeline._build_gateway
            pipeline._build_gateway = lambda c: LlmGateway(
                config=GatewayConfig(endpoint=c.gateway.endpoint, mode=c.gateway.mode,
                                     backoff=0.0),
                cache=TranscriptCache(c.path("transcript_cache")),
                transport=scripted,
            )
            try:
                if cfg.stages.stage1:
                    pipeline.run_synthesize(cfg)
                pipeline.run_train(cfg)
                pipeline.run_infer(cfg)
            finally:
                pipeline._build_gateway = original
            predicted |= collect_predicted_surfaces(cfg)

    sentence_store, entity_store, image_store = build_side_stores(
        TRAIN_ROWS + TEST_ROWS, predicted
    )
    save_store(sentence_store, out_dir / "stores" / "sentences.emb")
    save_store(entity_store, out_dir / "stores" / "entities.emb")
    save_store(image_store, out_dir / "stores" / "images.emb")

    # Record every ablation variant against the scripted provider. Image
    # parts are read from disk when a live request is built, so dummy image
    # files must exist relative to the cwd during recording; replay mode
    # never opens them.
    reports = {}
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        for item in ["train.jsonl", "test.jsonl"]:
            shutil.copy(out_dir / item, work / item)
        shutil.copytree(out_dir / "stores", work / "stores")
        (work / "images").mkdir()
        for sid, _, _ in TRAIN_ROWS + TEST_ROWS:
            (work / "images" / f"{sid}.png").write_bytes(b"png-fixture-" + sid.encode())
        prev_cwd = Path.cwd()
        os.chdir(work)
        try:
            for name, overrides in VARIANTS.items():
                cfg, summary = run_variant(work, name, overrides, "RECORD", scripted)
                reports[name] = summary.report
                print(f"  {name:10s} P={summary.report.precision:.4f} "
                      f"R={summary.report.recall:.4f} F1={summary.report.f1:.4f}")
        finally:
            os.chdir(prev_cwd)
        shutil.copy(work / "cache.jsonl", out_dir / "cache.jsonl")

        # Meta-assertions: the fixture must actually demonstrate the design.
        _assert_fixture_properties(work, reports)

    config_doc = json.loads(json.dumps(BASE_CONFIG))
    (out_dir / "config.json").write_text(
        json.dumps(config_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"e2e fixture -> {out_dir}")


def _assert_fixture_properties(work: Path, reports) -> None:
    overall = reports["overall"].f1
    for name, report in reports.items():
        if name == "overall":
            continue
        assert overall > report.f1, (
            f"expected overall F1 {overall:.4f} > {name} {report.f1:.4f}"
        )

    routing = work / "out_overall" / pipeline.ROUTING_FILE
    with open(routing, encoding="utf-8") as fh:
        decisions = [json.loads(line) for line in fh if line.strip()][1:]
    verdicts = {d["verdict"] for d in decisions}
    assert "REFINE" in verdicts, "no entity was routed to refinement"
    assert "KEEP" in verdicts, "no entity was kept"

    def spans_by_sid(path):
        with open(path, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()][1:]
        return {
            r["sentence_id"]: {(s["token_start"], s["token_end"], s["type"])
                               for s in r["spans"]}
            for r in records
        }

    supervised = spans_by_sid(work / "out_overall" / pipeline.SUPERVISED_FILE)
    refined = spans_by_sid(work / "out_overall" / pipeline.REFINED_FILE)
    assert supervised != refined, "refinement changed nothing"
    print("  fixture assertions passed")


if __name__ == "__main__":
    make_separable()
    make_e2e()

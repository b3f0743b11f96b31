"""Pipeline configuration: a versioned JSON document plus CLI overrides.

Every run is identified by the hash of its resolved configuration (as
written, before path resolution), which gets embedded into each artifact so
that artifacts from different configurations cannot be mixed.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .crf import TrainConfig
from .selector import SelectorConfig
from .types import EntityType, build_schema
from .uncertainty import RouterConfig

CONFIG_VERSION = 1

SELECT_DYNAMIC = "dynamic"
SELECT_FIXED = "fixed"


class ConfigError(ValueError):
    """Invalid configuration; message carries the offending field path."""


@dataclass
class GatewaySettings:
    mode: str = "REPLAY"
    endpoint: str | None = None
    llm_model: str = "text-llm"
    mllm_model: str = "multimodal-llm"
    temperature: float = 0.0
    max_tokens: int = 1024
    retries: int = 3
    backoff: float = 0.5
    timeout: float = 120.0
    concurrency: int = 4
    api_key_env: str = "GMNER_API_KEY"


@dataclass
class StageSwitches:
    stage1: bool = True
    stage2: bool = True
    stage3: bool = True


@dataclass
class SynthesisSettings:
    count_per_seed: int = 2
    strategies: list[str] = field(default_factory=lambda: ["SUBSTITUTION", "PARAPHRASE"])
    initial_descriptions: dict[str, str] = field(default_factory=dict)


@dataclass
class PipelineConfig:
    seed: int
    entity_types: list[str]
    paths: dict[str, str]
    stages: StageSwitches
    router: RouterConfig
    selector: SelectorConfig
    selector_mode: str
    train: TrainConfig
    synthesis: SynthesisSettings
    gateway: GatewaySettings
    allow_add: bool
    min_f1: float | None
    prompts_dir: str | None
    config_hash: str
    base_dir: Path

    def schema(self) -> list[EntityType]:
        return build_schema(self.entity_types)

    def path(self, name: str) -> Path:
        if name not in self.paths:
            raise ConfigError(f"paths.{name}: missing")
        raw = Path(self.paths[name])
        return raw if raw.is_absolute() else self.base_dir / raw

    def out_path(self, filename: str) -> Path:
        out_dir = self.path("out_dir")
        out_dir.mkdir(parents=True, exist_ok=True)
        return out_dir / filename


_PATH_KEYS = (
    "train_dataset", "test_dataset", "token_store", "sentence_store",
    "entity_store", "image_store", "transcript_cache", "out_dir",
)


def _expect(doc: dict, key: str, kind, path: str, default=None, required=False):
    if key not in doc:
        if required:
            raise ConfigError(f"{path}: missing")
        return default
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(
            f"{path}: expected {getattr(kind, '__name__', kind)}, got "
            f"{type(value).__name__}"
        )
    return value


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.path=value`` overrides; values parse as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return doc


def config_hash_of(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"),
                           ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path, overrides: list[str] | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<config>: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("<config>: expected a JSON object")
    doc = apply_overrides(doc, overrides or [])
    return parse_config(doc, base_dir=path.parent)


def parse_config(doc: dict, base_dir: str | Path = ".") -> PipelineConfig:
    version = _expect(doc, "version", int, "version", default=CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {version}")
    seed = _expect(doc, "seed", int, "seed", required=True)
    entity_types = _expect(doc, "entity_types", list, "entity_types", required=True)
    if not entity_types or not all(isinstance(t, str) for t in entity_types):
        raise ConfigError("entity_types: expected a non-empty list of strings")

    paths_doc = _expect(doc, "paths", dict, "paths", required=True)
    paths: dict[str, str] = {}
    for key in _PATH_KEYS:
        paths[key] = _expect(paths_doc, key, str, f"paths.{key}", required=True)
    extra = set(paths_doc) - set(_PATH_KEYS)
    if extra:
        raise ConfigError(f"paths.{sorted(extra)[0]}: unknown path key")

    stages_doc = _expect(doc, "stages", dict, "stages", default={})
    stages = StageSwitches(
        stage1=_expect(stages_doc, "stage1", bool, "stages.stage1", default=True),
        stage2=_expect(stages_doc, "stage2", bool, "stages.stage2", default=True),
        stage3=_expect(stages_doc, "stage3", bool, "stages.stage3", default=True),
    )

    router_doc = _expect(doc, "router", dict, "router", default={})
    try:
        router = RouterConfig(
            beta=_expect(router_doc, "beta", float, "router.beta", default=0.8),
        )
    except ValueError as exc:
        raise ConfigError(f"router: {exc}") from exc

    sel_doc = _expect(doc, "selector", dict, "selector", default={})
    selector_mode = _expect(sel_doc, "mode", str, "selector.mode",
                            default=SELECT_DYNAMIC)
    if selector_mode not in (SELECT_DYNAMIC, SELECT_FIXED):
        raise ConfigError(f"selector.mode: unknown mode {selector_mode!r}")
    try:
        selector = SelectorConfig(
            delta=_expect(sel_doc, "delta", float, "selector.delta", default=0.6),
            lambda1=_expect(sel_doc, "lambda1", float, "selector.lambda1", default=0.6),
            lambda2=_expect(sel_doc, "lambda2", float, "selector.lambda2", default=0.4),
            lambda3=_expect(sel_doc, "lambda3", float, "selector.lambda3", default=0.2),
            k=_expect(sel_doc, "k", int, "selector.k", default=3),
        )
    except ValueError as exc:
        raise ConfigError(f"selector: {exc}") from exc

    train_doc = _expect(doc, "train", dict, "train", default={})
    train = TrainConfig(
        epochs=_expect(train_doc, "epochs", int, "train.epochs", default=50),
        batch_size=_expect(train_doc, "batch_size", int, "train.batch_size", default=4),
        emission_lr=_expect(train_doc, "emission_lr", float, "train.emission_lr",
                            default=1e-3),
        crf_lr=_expect(train_doc, "crf_lr", float, "train.crf_lr", default=5e-2),
        weight_decay=_expect(train_doc, "weight_decay", float, "train.weight_decay",
                             default=0.0),
        seed=seed,
        shuffle=_expect(train_doc, "shuffle", bool, "train.shuffle", default=True),
    )
    if train.epochs < 1 or train.batch_size < 1:
        raise ConfigError("train: epochs and batch_size must be >= 1")

    synth_doc = _expect(doc, "synthesis", dict, "synthesis", default={})
    synthesis = SynthesisSettings(
        count_per_seed=_expect(synth_doc, "count_per_seed", int,
                               "synthesis.count_per_seed", default=2),
        strategies=_expect(synth_doc, "strategies", list, "synthesis.strategies",
                           default=["SUBSTITUTION", "PARAPHRASE"]),
        initial_descriptions=_expect(synth_doc, "initial_descriptions", dict,
                                     "synthesis.initial_descriptions", default={}),
    )
    for s in synthesis.strategies:
        if s not in ("SUBSTITUTION", "PARAPHRASE"):
            raise ConfigError(f"synthesis.strategies: unknown strategy {s!r}")
    if synthesis.count_per_seed < 1:
        raise ConfigError("synthesis.count_per_seed: must be >= 1")

    gw_doc = _expect(doc, "gateway", dict, "gateway", default={})
    gateway = GatewaySettings(
        mode=_expect(gw_doc, "mode", str, "gateway.mode", default="REPLAY"),
        endpoint=_expect(gw_doc, "endpoint", str, "gateway.endpoint", default=None),
        llm_model=_expect(gw_doc, "llm_model", str, "gateway.llm_model",
                          default="text-llm"),
        mllm_model=_expect(gw_doc, "mllm_model", str, "gateway.mllm_model",
                           default="multimodal-llm"),
        temperature=_expect(gw_doc, "temperature", float, "gateway.temperature",
                            default=0.0),
        max_tokens=_expect(gw_doc, "max_tokens", int, "gateway.max_tokens",
                           default=1024),
        retries=_expect(gw_doc, "retries", int, "gateway.retries", default=3),
        backoff=_expect(gw_doc, "backoff", float, "gateway.backoff", default=0.5),
        timeout=_expect(gw_doc, "timeout", float, "gateway.timeout", default=120.0),
        concurrency=_expect(gw_doc, "concurrency", int, "gateway.concurrency",
                            default=4),
        api_key_env=_expect(gw_doc, "api_key_env", str, "gateway.api_key_env",
                            default="GMNER_API_KEY"),
    )
    if gateway.mode not in ("LIVE", "REPLAY", "RECORD"):
        raise ConfigError(f"gateway.mode: unknown mode {gateway.mode!r}")

    refine_doc = _expect(doc, "refine", dict, "refine", default={})
    allow_add = _expect(refine_doc, "allow_add", bool, "refine.allow_add", default=True)
    eval_doc = _expect(doc, "eval", dict, "eval", default={})
    min_f1 = _expect(eval_doc, "min_f1", float, "eval.min_f1", default=None)
    prompts_dir = _expect(doc, "prompts_dir", str, "prompts_dir", default=None)

    return PipelineConfig(
        seed=seed,
        entity_types=list(entity_types),
        paths=paths,
        stages=stages,
        router=router,
        selector=selector,
        selector_mode=selector_mode,
        train=train,
        synthesis=synthesis,
        gateway=gateway,
        allow_add=allow_add,
        min_f1=min_f1,
        prompts_dir=prompts_dir,
        config_hash=config_hash_of(doc),
        base_dir=Path(base_dir),
    )

"""Embedding store I/O and vector similarity.

Binary store layout (little-endian):

    magic "EMB1" | kind byte | uint32 dim | uint32 count |
    count * [uint16 key length | key UTF-8 bytes | dim * float32]

A JSON-lines fallback is also accepted: an optional header line
``{"kind": ..., "dim": ...}`` followed by ``{"key": ..., "vec": [...]}``
records. Vectors are stored as float32 on disk and promoted to float64 in
memory.

Key scheme shared with the embedding exporter:
  sentence  -> sentence id
  token     -> "<sentence id>#t<token index>"
  entity    -> "e:" + first 16 hex chars of SHA-256 of the mention surface
  image     -> "i:" + first 16 hex chars of SHA-256 of the image path
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
KINDS = ("token", "sentence", "entity", "image")


class EmbeddingError(ValueError):
    pass


class DimMismatchError(EmbeddingError):
    pass


class ZeroNormError(EmbeddingError):
    pass


class MissingKeyError(KeyError):
    pass


def token_key(sentence_id: str, index: int) -> str:
    return f"{sentence_id}#t{index}"


def entity_key(surface: str) -> str:
    return "e:" + hashlib.sha256(surface.encode("utf-8")).hexdigest()[:16]


def image_key(path: str) -> str:
    return "i:" + hashlib.sha256(path.encode("utf-8")).hexdigest()[:16]


@dataclass
class EmbeddingStore:
    kind: str
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EmbeddingError(f"unknown store kind {self.kind!r}")
        if self.dim <= 0:
            raise EmbeddingError(f"dim must be positive, got {self.dim}")

    def add(self, key: str, vec: np.ndarray) -> None:
        if key in self.vectors:
            raise EmbeddingError(f"duplicate key {key!r}")
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (self.dim,):
            raise DimMismatchError(
                f"key {key!r}: expected {self.dim} values, got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise EmbeddingError(f"key {key!r}: non-finite value")
        self.vectors[key] = arr

    def get(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise MissingKeyError(
                f"key {key!r} not found in {self.kind} store"
            ) from None

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


def load_store(path: str | Path, kind: str | None = None) -> EmbeddingStore:
    """Load a store, sniffing binary vs JSON-lines by the magic bytes.

    ``kind`` is required for JSON-lines files without a header line; when
    given for a binary file it must match the header.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        store = _load_binary(path)
    else:
        store = _load_jsonl(path, kind)
    if kind is not None and store.kind != kind:
        raise EmbeddingError(
            f"{path}: expected kind {kind!r}, file declares {store.kind!r}"
        )
    return store


def save_store(store: EmbeddingStore, path: str | Path) -> None:
    """Write the binary format; keys in insertion order, vectors as float32."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", KINDS.index(store.kind)))
        fh.write(struct.pack("<II", store.dim, len(store.vectors)))
        for key, vec in store.vectors.items():
            raw = key.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise EmbeddingError(f"key too long: {key!r}")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def _load_binary(path: Path) -> EmbeddingStore:
    data = path.read_bytes()
    if len(data) < 13:
        raise EmbeddingError(f"{path}: truncated header")
    kind_byte = data[4]
    if kind_byte >= len(KINDS):
        raise EmbeddingError(f"{path}: unknown kind byte {kind_byte}")
    dim, count = struct.unpack_from("<II", data, 5)
    store = EmbeddingStore(kind=KINDS[kind_byte], dim=dim)
    offset = 13
    for _ in range(count):
        if offset + 2 > len(data):
            raise EmbeddingError(f"{path}: truncated record")
        (key_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        key = data[offset:offset + key_len].decode("utf-8")
        offset += key_len
        end = offset + 4 * dim
        if end > len(data):
            raise EmbeddingError(f"{path}: truncated vector for key {key!r}")
        vec = np.frombuffer(data[offset:end], dtype="<f4").astype(np.float64)
        offset = end
        store.add(key, vec)
    return store


def _load_jsonl(path: Path, kind: str | None) -> EmbeddingStore:
    store: EmbeddingStore | None = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if store is None and "key" not in record:
                header_kind = record.get("kind", kind)
                if header_kind is None:
                    raise EmbeddingError(f"{path}: header line missing 'kind'")
                store = EmbeddingStore(kind=header_kind, dim=int(record["dim"]))
                continue
            vec = record.get("vec")
            if not isinstance(vec, list):
                raise EmbeddingError(f"{path}:{line_no}: missing 'vec' array")
            if store is None:
                if kind is None:
                    raise EmbeddingError(
                        f"{path}: no header line; pass the expected store kind"
                    )
                store = EmbeddingStore(kind=kind, dim=len(vec))
            if len(vec) != store.dim:
                raise DimMismatchError(
                    f"{path}:{line_no}: key {record.get('key')!r} has {len(vec)} "
                    f"values, store dim is {store.dim}"
                )
            store.add(str(record["key"]), np.asarray(vec, dtype=np.float64))
    if store is None:
        raise EmbeddingError(f"{path}: empty store file")
    return store


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in float64, clamped to [-1, 1] against rounding.

    Bit-identical inputs score exactly 1.0, so self-similarity never drifts.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatchError(f"dims differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine undefined for zero-norm vector")
    if np.array_equal(a, b):
        return 1.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))

"""The pipeline's external file contracts, reimplemented for this tool.

Everything here mirrors documented interfaces, not pipeline internals:

* tokenization: whitespace split, then leading/trailing ASCII punctuation
  characters detach as single-char tokens (interior punctuation stays);
* store keys: sentence id | "<sid>#t<i>" | "e:" + sha256(surface)[:16] |
  "i:" + sha256(image path)[:16];
* binary store format: magic "EMB1", kind byte, uint32 dim, uint32 count,
  then [uint16 key length, key bytes, dim little-endian float32] records.
"""
from __future__ import annotations

import hashlib
import re
import string
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
KINDS = ("token", "sentence", "entity", "image")

_PUNCT = frozenset(string.punctuation)
_CHUNK = re.compile(r"\S+")


def tokenize_surfaces(text: str) -> list[str]:
    tokens: list[str] = []
    for match in _CHUNK.finditer(text):
        chunk = match.group(0)
        i, j = 0, len(chunk)
        lead = []
        trail = []
        while i < j and chunk[i] in _PUNCT:
            lead.append(chunk[i])
            i += 1
        while j > i and chunk[j - 1] in _PUNCT:
            trail.append(chunk[j - 1])
            j -= 1
        tokens.extend(lead)
        if i < j:
            tokens.append(chunk[i:j])
        tokens.extend(reversed(trail))
    return tokens


def token_key(sentence_id: str, index: int) -> str:
    return f"{sentence_id}#t{index}"


def entity_key(surface: str) -> str:
    return "e:" + hashlib.sha256(surface.encode("utf-8")).hexdigest()[:16]


def image_key(path: str) -> str:
    return "i:" + hashlib.sha256(path.encode("utf-8")).hexdigest()[:16]


def write_store(path: str | Path, kind: str, dim: int,
                records: list[tuple[str, np.ndarray]]) -> int:
    """Write a binary store; returns the record count."""
    if kind not in KINDS:
        raise ValueError(f"unknown store kind {kind!r}")
    seen = set()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", KINDS.index(kind)))
        fh.write(struct.pack("<II", dim, len(records)))
        for key, vec in records:
            if key in seen:
                raise ValueError(f"duplicate key {key!r}")
            seen.add(key)
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise ValueError(
                    f"key {key!r}: vector shape {arr.shape} != dim {dim}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"key {key!r}: non-finite value")
            raw = key.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(arr.tobytes())
    return len(records)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

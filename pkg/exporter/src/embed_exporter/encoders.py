"""Text and image encoders behind string identifiers.

``hash:<dim>`` is a dependency-free deterministic encoder: every input maps
to a fixed pseudo-random vector seeded by its SHA-256 digest. It stands in
for real encoders wherever pinned weights are unavailable, and its outputs
are bit-stable across runs and machines.

``st:<model>`` (sentence-transformers) and ``clip:<model>`` (transformers
CLIP) load real pretrained encoders when the optional dependencies and
weights are present; loading failures surface as EncoderLoadError.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np


class EncoderLoadError(RuntimeError):
    pass


def _hash_vec(tag: str, payload: bytes, dim: int) -> np.ndarray:
    digest = hashlib.sha256(tag.encode("utf-8") + b"\x00" + payload).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.normal(size=dim)


class HashTextEncoder:
    """Deterministic stand-in text encoder."""

    def __init__(self, dim: int):
        if dim < 1:
            raise EncoderLoadError(f"hash encoder dim must be >= 1, got {dim}")
        self.dim = dim

    def encode_sentence(self, text: str) -> np.ndarray:
        return _hash_vec("sent", text.encode("utf-8"), self.dim)

    def encode_tokens(self, text: str, surfaces: list[str]) -> list[np.ndarray]:
        return [_hash_vec("tok", s.encode("utf-8"), self.dim) for s in surfaces]

    def encode_entity(self, surface: str) -> np.ndarray:
        return _hash_vec("ent", surface.encode("utf-8"), self.dim)


class HashImageEncoder:
    """Deterministic stand-in image encoder: hashes the file bytes."""

    def __init__(self, dim: int):
        if dim < 1:
            raise EncoderLoadError(f"hash encoder dim must be >= 1, got {dim}")
        self.dim = dim

    def encode_image(self, path: Path) -> np.ndarray:
        return _hash_vec("img", path.read_bytes(), self.dim)


class SentenceTransformerEncoder:
    """Real text encoder; token vectors mean-pool subwords per token."""

    def __init__(self, model_name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderLoadError(
                "sentence-transformers is not installed; "
                "install the 'encoders' extra"
            ) from exc
        try:
            self.model = SentenceTransformer(model_name)
        except Exception as exc:
            raise EncoderLoadError(f"cannot load {model_name!r}: {exc}") from exc
        self.dim = int(self.model.get_sentence_embedding_dimension())

    def encode_sentence(self, text: str) -> np.ndarray:
        return np.asarray(self.model.encode(text, normalize_embeddings=False),
                          dtype=np.float64)

    def encode_entity(self, surface: str) -> np.ndarray:
        return self.encode_sentence(surface)

    def encode_tokens(self, text: str, surfaces: list[str]) -> list[np.ndarray]:
        # Mean-pool final-layer subword states over each whitespace token's
        # character range, using the tokenizer's offset mapping.
        import torch

        tokenizer = self.model.tokenizer
        encoded = tokenizer(text, return_offsets_mapping=True,
                            return_tensors="pt", truncation=True)
        offsets = encoded.pop("offset_mapping")[0].tolist()
        with torch.no_grad():
            states = self.model[0].auto_model(
                **{k: v for k, v in encoded.items()}
            ).last_hidden_state[0].numpy()

        spans = []
        pos = 0
        for surface in surfaces:
            start = text.index(surface, pos)
            spans.append((start, start + len(surface)))
            pos = start + len(surface)

        out = []
        for start, end in spans:
            rows = [
                states[i] for i, (a, b) in enumerate(offsets)
                if b > a and a < end and b > start
            ]
            if rows:
                out.append(np.mean(rows, axis=0).astype(np.float64))
            else:
                out.append(self.encode_sentence(text[start:end]))
        return out


class ClipImageEncoder:
    """Real image encoder via transformers CLIP."""

    def __init__(self, model_name: str):
        try:
            from PIL import Image  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderLoadError(
                "transformers/pillow are not installed; "
                "install the 'encoders' extra"
            ) from exc
        try:
            self.model = CLIPModel.from_pretrained(model_name)
            self.processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as exc:
            raise EncoderLoadError(f"cannot load {model_name!r}: {exc}") from exc
        self.dim = int(self.model.config.projection_dim)

    def encode_image(self, path: Path) -> np.ndarray:
        import torch
        from PIL import Image

        image = Image.open(path).convert("RGB")
        inputs = self.processor(images=image, return_tensors="pt")
        with torch.no_grad():
            features = self.model.get_image_features(**inputs)
        return features[0].numpy().astype(np.float64)


def load_text_encoder(identifier: str):
    kind, _, arg = identifier.partition(":")
    if kind == "hash":
        return HashTextEncoder(int(arg or 32))
    if kind == "st":
        return SentenceTransformerEncoder(arg)
    raise EncoderLoadError(f"unknown text encoder {identifier!r}")


def load_image_encoder(identifier: str):
    kind, _, arg = identifier.partition(":")
    if kind == "hash":
        return HashImageEncoder(int(arg or 32))
    if kind == "clip":
        return ClipImageEncoder(arg)
    raise EncoderLoadError(f"unknown image encoder {identifier!r}")

"""Run the encoders over a dataset and emit the four embedding stores.

Keys follow the pipeline's documented scheme. Image keys hash the raw path
string from the dataset record; the file itself is read relative to the
dataset's directory. Unreadable images are skipped and listed in the
manifest rather than failing the export.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .encoders import load_image_encoder, load_text_encoder
from .interop import (
    entity_key,
    image_key,
    sha256_file,
    token_key,
    tokenize_surfaces,
    write_store,
)

MANIFEST_NAME = "manifest.json"

STORE_FILES = {
    "token": "tokens.emb",
    "sentence": "sentences.emb",
    "entity": "entities.emb",
    "image": "images.emb",
}


class DatasetFormatError(ValueError):
    pass


@dataclass
class ExportManifest:
    dataset: str
    text_encoder: str
    image_encoder: str
    stores: dict = field(default_factory=dict)
    skipped_images: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "text_encoder": self.text_encoder,
            "image_encoder": self.image_encoder,
            "stores": self.stores,
            "skipped_images": self.skipped_images,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExportManifest":
        return cls(
            dataset=doc["dataset"],
            text_encoder=doc["text_encoder"],
            image_encoder=doc["image_encoder"],
            stores=doc["stores"],
            skipped_images=doc["skipped_images"],
        )


def read_dataset(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{line_no}: {exc}") from exc
            for key in ("text", "image", "entities"):
                if key not in record:
                    raise DatasetFormatError(f"{path}:{line_no}: missing {key!r}")
            record.setdefault("id", f"s{line_no}")
            records.append(record)
    return records


def export(dataset_path: str | Path, text_encoder_id: str,
           image_encoder_id: str, out_dir: str | Path) -> ExportManifest:
    dataset_path = Path(dataset_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = read_dataset(dataset_path)

    text_encoder = load_text_encoder(text_encoder_id)
    image_encoder = load_image_encoder(image_encoder_id)

    token_records = []
    sentence_records = []
    entity_records = []
    image_records = []
    entity_seen = set()
    image_seen = set()
    skipped = []

    for record in records:
        sid = record["id"]
        text = record["text"]
        surfaces = tokenize_surfaces(text)
        sentence_records.append((sid, text_encoder.encode_sentence(text)))
        for i, vec in enumerate(text_encoder.encode_tokens(text, surfaces)):
            token_records.append((token_key(sid, i), vec))
        for ent in record["entities"]:
            surface = text[ent["char_start"]:ent["char_end"]]
            key = entity_key(surface)
            if key in entity_seen:
                continue
            entity_seen.add(key)
            entity_records.append((key, text_encoder.encode_entity(surface)))

        raw_path = record["image"]["path"]
        key = image_key(raw_path)
        if key in image_seen:
            continue
        image_seen.add(key)  # one attempt per distinct path, even on failure
        file_path = Path(raw_path)
        if not file_path.is_absolute():
            file_path = dataset_path.parent / file_path
        try:
            image_records.append((key, image_encoder.encode_image(file_path)))
        except OSError as exc:
            skipped.append({"path": raw_path, "reason": str(exc)})

    manifest = ExportManifest(
        dataset=str(dataset_path),
        text_encoder=text_encoder_id,
        image_encoder=image_encoder_id,
        skipped_images=skipped,
    )
    emitted = {
        "token": (token_records, text_encoder.dim),
        "sentence": (sentence_records, text_encoder.dim),
        "entity": (entity_records, text_encoder.dim),
        "image": (image_records, image_encoder.dim),
    }
    for kind, (store_records, dim) in emitted.items():
        path = out_dir / STORE_FILES[kind]
        count = write_store(path, kind, dim, store_records)
        manifest.stores[kind] = {
            "path": STORE_FILES[kind],  # relative to the manifest
            "dim": dim,
            "count": count,
            "sha256": sha256_file(path),
        }
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return manifest

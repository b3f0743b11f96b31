"""CLI: gmner-export --dataset d.jsonl --text-encoder hash:32
--image-encoder hash:32 --out stores/"""
from __future__ import annotations

import argparse
import sys

from .encoders import EncoderLoadError
from .exporter import DatasetFormatError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmner-export",
        description="Export token/sentence/entity/image embedding stores "
                    "for a GMNER dataset.",
    )
    parser.add_argument("--dataset", required=True, help="dataset JSONL file")
    parser.add_argument("--text-encoder", default="hash:32",
                        help="text encoder id: hash:<dim> or st:<model>")
    parser.add_argument("--image-encoder", default="hash:32",
                        help="image encoder id: hash:<dim> or clip:<model>")
    parser.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = export(args.dataset, args.text_encoder, args.image_encoder,
                          args.out)
    except (EncoderLoadError, DatasetFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for kind, info in sorted(manifest.stores.items()):
        print(f"{kind:9s} {info['count']:5d} records  dim={info['dim']}  "
              f"{info['path']}")
    if manifest.skipped_images:
        print(f"skipped {len(manifest.skipped_images)} unreadable image(s)",
              file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""CLI: `owextract extract --config config.json`."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ExtractorConfig
from .encoders import EncoderError
from .extract import extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="owextract",
        description="Crop and embed detector proposals into interchange files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="run one extraction config")
    p.add_argument("--config", required=True, help="ExtractorConfig JSON path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = extract(ExtractorConfig.from_json(args.config))
    except (ValueError, OSError, EncoderError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    sys.stdout.write(
        json.dumps(
            {
                "proposals": result.proposals,
                "clipped_boxes": result.clipped,
                "embedding_dim": result.dim,
                "proposals_file": str(result.out_proposals),
                "embeddings_file": str(result.out_embeddings),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())

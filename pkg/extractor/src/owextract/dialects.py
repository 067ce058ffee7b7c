"""Per-detector dump dialects.

Detectors export their raw predictions in different schemas; a dialect
parses one schema into the common RawDetection form. Register new dialects
with `register_dialect`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable


@dataclass(frozen=True)
class RawDetection:
    id: str
    image_id: str
    bbox: tuple[float, float, float, float]  # x1, y1, x2, y2 pixels
    objectness: float
    stream: str  # "unknown" | "known"


Parser = Callable[[Path, dict], list[RawDetection]]

_DIALECTS: dict[str, Parser] = {}


def register_dialect(name: str, parser: Parser) -> None:
    _DIALECTS[name] = parser


def parse_dump(path: str | Path, dialect: str, options: dict | None = None) -> list[RawDetection]:
    try:
        parser = _DIALECTS[dialect]
    except KeyError:
        raise ValueError(f"unknown dump dialect {dialect!r}; known: {sorted(_DIALECTS)}") from None
    return parser(Path(path), options or {})


def _parse_interchange(path: Path, options: dict) -> list[RawDetection]:
    """Line-delimited objects already carrying the interchange field names."""
    detections = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            obj = json.loads(raw)
            x1, y1, x2, y2 = obj["bbox"]
            detections.append(
                RawDetection(
                    id=str(obj.get("id", f"d_{lineno:06d}")),
                    image_id=str(obj["image_id"]),
                    bbox=(float(x1), float(y1), float(x2), float(y2)),
                    objectness=float(obj["objectness"]),
                    stream=str(obj.get("stream", "unknown")),
                )
            )
    return detections


def _parse_coco_results(path: Path, options: dict) -> list[RawDetection]:
    """COCO results array: [{image_id, bbox=[x,y,w,h], score, category_id}].

    Predictions whose category_id is listed in options["unknown_category_ids"]
    enter the unknown stream; everything else is a known detection.
    """
    unknown_ids = set(options.get("unknown_category_ids", ()))
    if not unknown_ids:
        raise ValueError("coco-results dialect needs dialect_options.unknown_category_ids")
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    detections = []
    for i, obj in enumerate(entries):
        x, y, w, h = obj["bbox"]
        detections.append(
            RawDetection(
                id=str(obj.get("id", f"d_{i:06d}")),
                image_id=str(obj["image_id"]),
                bbox=(float(x), float(y), float(x) + float(w), float(y) + float(h)),
                objectness=float(obj["score"]),
                stream="unknown" if obj["category_id"] in unknown_ids else "known",
            )
        )
    return detections


register_dialect("interchange", _parse_interchange)
register_dialect("coco-results", _parse_coco_results)

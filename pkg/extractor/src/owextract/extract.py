"""Crop every detector proposal, embed it, and write interchange files.

Output is the consumer toolkit's wire format: proposals.jsonl with
embedding_index set to the proposal's position, and the binary embedding
matrix (magic "DMEM", little-endian u32 version=1, u32 dim, u64 count, then
count*dim float32 row-major).
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import ExtractorConfig
from .dialects import RawDetection, parse_dump
from .encoders import build_encoder

EMBEDDING_MAGIC = b"DMEM"
EMBEDDING_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass(frozen=True)
class ExtractResult:
    proposals: int
    clipped: int
    dim: int
    out_proposals: Path
    out_embeddings: Path


def _clip_box(det: RawDetection, width: int, height: int) -> tuple[float, float, float, float, bool]:
    x1, y1, x2, y2 = det.bbox
    cx1 = min(max(x1, 0.0), float(width))
    cy1 = min(max(y1, 0.0), float(height))
    cx2 = min(max(x2, 0.0), float(width))
    cy2 = min(max(y2, 0.0), float(height))
    clipped = (cx1, cy1, cx2, cy2) != (x1, y1, x2, y2)
    if cx2 <= cx1 or cy2 <= cy1:
        raise ValueError(
            f"proposal '{det.id}' box {det.bbox} lies outside its "
            f"{width}x{height} image"
        )
    return cx1, cy1, cx2, cy2, clipped


def _crop(image: Image.Image, box: tuple[float, float, float, float], policy: str, size: int) -> np.ndarray:
    crop = image.crop((box[0], box[1], box[2], box[3]))
    if policy == "square-pad":
        side = max(crop.size)
        padded = Image.new("RGB", (side, side))
        padded.paste(crop, ((side - crop.width) // 2, (side - crop.height) // 2))
        crop = padded
    resized = crop.resize((size, size), Image.BILINEAR)
    return np.asarray(resized, dtype=np.uint8)


def extract(cfg: ExtractorConfig) -> ExtractResult:
    detections = parse_dump(cfg.dump_path, cfg.dialect, cfg.dialect_options)
    encoder = build_encoder(cfg.encoder)

    images: dict[str, Image.Image] = {}

    def load_image(image_id: str) -> Image.Image:
        if image_id not in images:
            path = cfg.image_path(image_id)
            if not path.exists():
                raise FileNotFoundError(f"missing image for '{image_id}': {path}")
            images[image_id] = Image.open(path).convert("RGB")
        return images[image_id]

    rows: list[np.ndarray] = []
    clipped_count = 0
    batch: list[np.ndarray] = []

    def flush() -> None:
        if batch:
            rows.append(encoder.encode(np.stack(batch)))
            batch.clear()

    for det in detections:
        image = load_image(det.image_id)
        x1, y1, x2, y2, clipped = _clip_box(det, image.width, image.height)
        if clipped:
            clipped_count += 1
            warnings.warn(f"proposal '{det.id}' box clipped to image bounds")
        batch.append(_crop(image, (x1, y1, x2, y2), cfg.crop_policy, encoder.input_size))
        if len(batch) >= cfg.batch_size:
            flush()
    flush()

    matrix = (
        np.concatenate(rows).astype("<f4")
        if rows
        else np.empty((0, encoder.dim), dtype="<f4")
    )
    assert matrix.shape[0] == len(detections)

    out_proposals = Path(cfg.out_proposals)
    out_embeddings = Path(cfg.out_embeddings)
    out_proposals.parent.mkdir(parents=True, exist_ok=True)
    out_embeddings.parent.mkdir(parents=True, exist_ok=True)
    with open(out_proposals, "w", encoding="utf-8") as fh:
        for index, det in enumerate(detections):
            fh.write(
                json.dumps(
                    {
                        "id": det.id,
                        "image_id": det.image_id,
                        "bbox": list(det.bbox),
                        "objectness": det.objectness,
                        "stream": det.stream,
                        "embedding_index": index,
                    }
                )
                + "\n"
            )
    with open(out_embeddings, "wb") as fh:
        fh.write(_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, matrix.shape[1], matrix.shape[0]))
        fh.write(np.ascontiguousarray(matrix).tobytes(order="C"))

    return ExtractResult(
        proposals=len(detections),
        clipped=clipped_count,
        dim=int(matrix.shape[1]),
        out_proposals=out_proposals,
        out_embeddings=out_embeddings,
    )

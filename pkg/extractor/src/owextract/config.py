"""Extraction run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

CROP_POLICIES = ("square-pad", "tight")


@dataclass(frozen=True)
class ExtractorConfig:
    image_root: str
    dump_path: str
    out_proposals: str
    out_embeddings: str
    dialect: str = "interchange"
    dialect_options: dict = field(default_factory=dict)
    encoder: str = "toy:64"
    # square-pad keeps aspect by padding the tight crop to a square before
    # the encoder resize; tight resizes the crop directly
    crop_policy: str = "square-pad"
    batch_size: int = 32
    # maps an image id to a filename under image_root
    image_template: str = "{image_id}.jpg"

    def __post_init__(self) -> None:
        if self.crop_policy not in CROP_POLICIES:
            raise ValueError(f"crop_policy must be one of {CROP_POLICIES}: {self.crop_policy!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1: {self.batch_size}")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExtractorConfig":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def image_path(self, image_id: str) -> Path:
        return Path(self.image_root) / self.image_template.format(image_id=image_id)

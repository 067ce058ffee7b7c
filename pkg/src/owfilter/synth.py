"""Deterministic synthetic datasets with analytically controlled labels.

Boxes are placed on a fixed grid inside a 1000x1000 canvas so every
proposal's IoU against ground truth is exact by construction: positives and
known-as-unknown proposals contain a nested box at IoU 0.6, ambiguous
proposals one at IoU 0.4, and negatives sit in empty cells. Embeddings are
unit-norm perturbations around per-class directions; one scalar spread
controls separability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import BBox, EmbeddingMatrix, GroundTruthBox, ProposalRecord

CANVAS = 1000
CELL = 100
CELLS_PER_IMAGE = (CANVAS // CELL) ** 2

# nested-box widths inside an 80x80 proposal: IoU = width / 80
_PROPOSAL_SIDE = 80
_MATCH_WIDTH = 48  # IoU 0.6 (above the 0.5 match threshold)
_AMB_WIDTH = 32  # IoU 0.4 (between the 0.3 and 0.5 thresholds)


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 32
    n_pos: int = 50
    n_neg: int = 200
    n_known_as_unknown: int = 0
    n_amb: int = 0
    n_known_stream: int = 0
    images: int = 8
    seed: int = 0
    # class directions are drawn from this seed (defaults to `seed`);
    # share it across configs to sample i.i.d. sets from one population
    direction_seed: int | None = None
    spread: float = 0.25
    pos_modes: int = 1
    neg_modes: int = 1
    # uneven positive-mode mass; equal round-robin assignment when omitted
    pos_mode_weights: tuple[float, ...] | None = None
    # fraction of negatives drawn with a much larger spread (diffuse clutter)
    neg_diffuse_fraction: float = 0.0
    neg_diffuse_spread: float = 1.5
    image_prefix: str = "img"
    objectness_range: tuple[float, float] = (0.05, 0.95)
    # optional explicit unit directions, (modes, dim); generated from the
    # seed when omitted
    pos_directions: np.ndarray | None = field(default=None, repr=False)
    neg_directions: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2: {self.dim}")
        for name in ("n_pos", "n_neg", "n_known_as_unknown", "n_amb", "n_known_stream"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.images < 1:
            raise ValueError(f"images must be >= 1: {self.images}")
        if self.pos_modes < 1 or self.neg_modes < 1:
            raise ValueError("mode counts must be >= 1")
        if self.spread < 0.0:
            raise ValueError(f"spread must be >= 0: {self.spread}")
        lo, hi = self.objectness_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"objectness_range must satisfy 0 <= lo <= hi <= 1: {self.objectness_range}")
        if self.pos_mode_weights is not None:
            if len(self.pos_mode_weights) != self.pos_modes:
                raise ValueError(
                    f"pos_mode_weights needs {self.pos_modes} entries, "
                    f"got {len(self.pos_mode_weights)}"
                )
            if any(w <= 0 for w in self.pos_mode_weights):
                raise ValueError("pos_mode_weights must be positive")
        if not (0.0 <= self.neg_diffuse_fraction <= 1.0):
            raise ValueError(f"neg_diffuse_fraction must be in [0, 1]: {self.neg_diffuse_fraction}")
        if self.neg_diffuse_spread < 0.0:
            raise ValueError(f"neg_diffuse_spread must be >= 0: {self.neg_diffuse_spread}")
        for name, modes in (("pos", self.pos_modes), ("neg", self.neg_modes)):
            dirs = getattr(self, f"{name}_directions")
            if dirs is not None:
                dirs = np.atleast_2d(np.asarray(dirs))
                if dirs.shape != (modes, self.dim):
                    raise ValueError(
                        f"{name}_directions must have shape ({modes}, {self.dim}), "
                        f"got {dirs.shape}"
                    )

    @property
    def total(self) -> int:
        return self.n_pos + self.n_neg + self.n_known_as_unknown + self.n_amb + self.n_known_stream

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if "objectness_range" in raw:
            raw["objectness_range"] = tuple(raw["objectness_range"])
        if raw.get("pos_mode_weights") is not None:
            raw["pos_mode_weights"] = tuple(raw["pos_mode_weights"])
        return cls(**raw)

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "n_known_as_unknown": self.n_known_as_unknown,
            "n_amb": self.n_amb,
            "n_known_stream": self.n_known_stream,
            "images": self.images,
            "seed": self.seed,
            "direction_seed": self.direction_seed,
            "spread": self.spread,
            "pos_modes": self.pos_modes,
            "neg_modes": self.neg_modes,
            "pos_mode_weights": None
            if self.pos_mode_weights is None
            else list(self.pos_mode_weights),
            "neg_diffuse_fraction": self.neg_diffuse_fraction,
            "neg_diffuse_spread": self.neg_diffuse_spread,
            "image_prefix": self.image_prefix,
            "objectness_range": list(self.objectness_range),
        }


def _auto_directions(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal directions: pos modes, neg modes, then one each for kau/amb."""
    needed = cfg.pos_modes + cfg.neg_modes + 2
    if needed > cfg.dim:
        raise ValueError(
            f"dim {cfg.dim} too small for {needed} orthogonal class directions"
        )
    basis, _ = np.linalg.qr(rng.standard_normal((cfg.dim, needed)))
    dirs = basis.T
    p = cfg.pos_modes
    n = cfg.neg_modes
    pos = dirs[:p] if cfg.pos_directions is None else _unit_rows(cfg.pos_directions)
    neg = dirs[p : p + n] if cfg.neg_directions is None else _unit_rows(cfg.neg_directions)
    return pos, neg, dirs[p + n], dirs[p + n + 1]


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _sample_embedding(direction: np.ndarray, spread: float, rng: np.random.Generator) -> np.ndarray:
    v = direction + spread * rng.standard_normal(direction.shape[0])
    return v / np.linalg.norm(v)


def generate(
    cfg: SynthConfig,
) -> tuple[list[ProposalRecord], list[GroundTruthBox], EmbeddingMatrix]:
    """Produce (proposals, ground truth, embeddings), deterministic in the seed."""
    per_image = -(-cfg.total // cfg.images)  # ceil
    if per_image > CELLS_PER_IMAGE:
        raise ValueError(
            f"impossible geometry: {cfg.total} boxes over {cfg.images} images "
            f"exceeds {CELLS_PER_IMAGE} grid cells per image"
        )

    rng = np.random.default_rng(cfg.seed)
    dir_seed = cfg.seed if cfg.direction_seed is None else cfg.direction_seed
    pos_dirs, neg_dirs, kau_dir, amb_dir = _auto_directions(
        cfg, np.random.default_rng(dir_seed)
    )

    proposals: list[ProposalRecord] = []
    groundtruth: list[GroundTruthBox] = []
    rows: list[np.ndarray] = []
    next_cell = [0] * cfg.images
    lo, hi = cfg.objectness_range

    def place(global_index: int) -> tuple[str, BBox, float, float]:
        img = global_index % cfg.images
        cell = next_cell[img]
        next_cell[img] += 1
        r, c = divmod(cell, CANVAS // CELL)
        x0 = float(c * CELL)
        y0 = float(r * CELL)
        image_id = f"{cfg.image_prefix}_{img:04d}"
        return image_id, BBox(x0, y0, x0 + _PROPOSAL_SIDE, y0 + _PROPOSAL_SIDE), x0, y0

    def nested(x0: float, y0: float, width: int) -> BBox:
        return BBox(x0, y0, x0 + width, y0 + _PROPOSAL_SIDE)

    mode_p = None
    if cfg.pos_mode_weights is not None:
        mode_p = np.asarray(cfg.pos_mode_weights, dtype=np.float64)
        mode_p = mode_p / mode_p.sum()

    plan = (
        ("pos", cfg.n_pos),
        ("neg", cfg.n_neg),
        ("known_as_unknown", cfg.n_known_as_unknown),
        ("amb", cfg.n_amb),
        ("known_stream", cfg.n_known_stream),
    )
    g = 0
    for kind, count in plan:
        for i in range(count):
            image_id, box, x0, y0 = place(g)
            pid = f"p_{g:06d}"
            objectness = float(rng.uniform(lo, hi))
            if kind == "known_stream":
                groundtruth.append(GroundTruthBox(image_id, box, "known"))
                proposals.append(
                    ProposalRecord(pid, image_id, box, objectness, "known", None)
                )
                g += 1
                continue
            spread = cfg.spread
            if kind == "pos":
                mode = i % len(pos_dirs) if mode_p is None else int(rng.choice(len(pos_dirs), p=mode_p))
                direction = pos_dirs[mode]
                groundtruth.append(
                    GroundTruthBox(image_id, nested(x0, y0, _MATCH_WIDTH), "future")
                )
            elif kind == "neg":
                direction = neg_dirs[i % len(neg_dirs)]
                if cfg.neg_diffuse_fraction > 0.0 and rng.random() < cfg.neg_diffuse_fraction:
                    spread = cfg.neg_diffuse_spread
            elif kind == "known_as_unknown":
                direction = kau_dir
                groundtruth.append(
                    GroundTruthBox(image_id, nested(x0, y0, _MATCH_WIDTH), "known")
                )
            else:  # amb
                direction = amb_dir
                groundtruth.append(
                    GroundTruthBox(image_id, nested(x0, y0, _AMB_WIDTH), "known")
                )
            proposals.append(
                ProposalRecord(pid, image_id, box, objectness, "unknown", len(rows))
            )
            rows.append(_sample_embedding(direction, spread, rng))
            g += 1

    matrix = EmbeddingMatrix(
        np.asarray(rows, dtype=np.float32).reshape(len(rows), cfg.dim)
    )
    return proposals, groundtruth, matrix

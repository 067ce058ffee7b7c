"""IoU computation and priority labeling of unknown-stream proposals."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .datamodel import BBox, GroundTruthBox, LabeledProposal, ProposalRecord

# A proposal matches a ground-truth object at IoU >= MATCH_IOU; below
# BACKGROUND_IOU to everything it is background. In between it is ambiguous.
MATCH_IOU = 0.5
BACKGROUND_IOU = 0.3


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two valid boxes; 0.0 when disjoint."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def max_iou(box: BBox, boxes: Iterable[GroundTruthBox]) -> float:
    """Max IoU of `box` against a set of ground-truth boxes; 0.0 when empty."""
    best = 0.0
    for g in boxes:
        v = iou(box, g.bbox)
        if v > best:
            best = v
    return best


def label_proposal(
    d: ProposalRecord,
    gk: Sequence[GroundTruthBox],
    gu: Sequence[GroundTruthBox],
    match_iou: float = MATCH_IOU,
    background_iou: float = BACKGROUND_IOU,
) -> LabeledProposal:
    """Assign one of the four stream labels by priority.

    Priority: matching a future object wins over matching a known object;
    proposals far from all ground truth are background; the rest are
    ambiguous. `gk`/`gu` must already be restricted to the proposal's image.
    """
    if d.stream != "unknown":
        raise ValueError(f"labeling applies to unknown-stream proposals, got '{d.stream}'")
    miou_u = max_iou(d.bbox, gu)
    miou_k = max_iou(d.bbox, gk)
    if miou_u >= match_iou:
        label = "pos"
    elif miou_k >= match_iou:
        label = "known_as_unknown"
    elif max(miou_u, miou_k) < background_iou:
        label = "neg"
    else:
        label = "amb"
    return LabeledProposal(proposal=d, label=label, max_iou_future=miou_u, max_iou_known=miou_k)


def label_stream(
    proposals: Sequence[ProposalRecord],
    groundtruth: Sequence[GroundTruthBox],
    match_iou: float = MATCH_IOU,
    background_iou: float = BACKGROUND_IOU,
) -> list[LabeledProposal]:
    """Label every unknown-stream proposal against per-image ground truth."""
    gk_by_image: dict[str, list[GroundTruthBox]] = defaultdict(list)
    gu_by_image: dict[str, list[GroundTruthBox]] = defaultdict(list)
    for g in groundtruth:
        (gu_by_image if g.category == "future" else gk_by_image)[g.image_id].append(g)
    return [
        label_proposal(
            p,
            gk_by_image.get(p.image_id, ()),
            gu_by_image.get(p.image_id, ()),
            match_iou,
            background_iou,
        )
        for p in proposals
        if p.stream == "unknown"
    ]


@dataclass(frozen=True)
class StreamDecomposition:
    """Counts and percentages of the four labels over an unknown stream."""

    counts: dict[str, int]
    percentages: dict[str, float] | None
    total: int
    image_count: int

    def to_json(self) -> dict:
        return {
            "total_unknown_predictions": self.total,
            "image_count": self.image_count,
            "counts": dict(self.counts),
            "percentages": None if self.percentages is None else dict(self.percentages),
        }


def decompose(labeled: Sequence[LabeledProposal], image_ids: set[str]) -> StreamDecomposition:
    """Count each label and report its share of the unknown stream."""
    counts = {label: 0 for label in ("pos", "neg", "known_as_unknown", "amb")}
    for lp in labeled:
        counts[lp.label] += 1
    total = len(labeled)
    if total == 0:
        percentages = None
    else:
        percentages = {k: 100.0 * v / total for k, v in counts.items()}
    return StreamDecomposition(
        counts=counts, percentages=percentages, total=total, image_count=len(image_ids)
    )

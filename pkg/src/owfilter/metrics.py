"""Evaluation metrics for raw and filtered unknown streams.

Ratio metrics return None (serialized as null) when their denominator is
empty, distinguishing "perfect" from "undefined".
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import FilterDecision, GroundTruthBox, LabeledProposal, ProposalRecord
from .labeling import MATCH_IOU, iou

OVL_BINS = 100


def _label_counts(labels) -> dict[str, int]:
    counts = {"pos": 0, "neg": 0, "known_as_unknown": 0, "amb": 0}
    for label in labels:
        counts[label] += 1
    return counts


def fupi(retained: Sequence[FilterDecision], image_count: int) -> float:
    """Retained background-type false unknowns per evaluation image."""
    if image_count <= 0:
        raise ValueError(f"image_count must be positive: {image_count}")
    n_neg = sum(1 for d in retained if d.label == "neg")
    return n_neg / image_count


def suppression_gain(
    raw: Sequence[LabeledProposal], retained: Sequence[FilterDecision]
) -> float | None:
    """Fraction of background false unknowns removed; None when raw has none."""
    raw_neg = sum(1 for lp in raw if lp.label == "neg")
    if raw_neg == 0:
        return None
    retained_neg = sum(1 for d in retained if d.label == "neg")
    return 1.0 - retained_neg / raw_neg


def nmh(raw: Sequence[LabeledProposal], retained: Sequence[FilterDecision]) -> float | None:
    """Fraction of positive unknowns wrongly suppressed; None when raw has none."""
    raw_pos = sum(1 for lp in raw if lp.label == "pos")
    if raw_pos == 0:
        return None
    retained_pos = sum(1 for d in retained if d.label == "pos")
    return (raw_pos - retained_pos) / raw_pos


def u_recall(
    retained: Sequence[ProposalRecord], gu: Sequence[GroundTruthBox]
) -> float | None:
    """Fraction of future-category objects covered by a retained prediction.

    A ground-truth box counts as recovered when at least one retained
    prediction in its image overlaps it at IoU >= 0.5. None when `gu` is
    empty (recall is undefined without targets).
    """
    if not gu:
        return None
    by_image: dict[str, list[ProposalRecord]] = defaultdict(list)
    for p in retained:
        by_image[p.image_id].append(p)
    matched = 0
    for g in gu:
        for p in by_image.get(g.image_id, ()):
            if iou(g.bbox, p.bbox) >= MATCH_IOU:
                matched += 1
                break
    return matched / len(gu)


def udp(retained: Sequence[FilterDecision]) -> float | None:
    """Retained positives over retained positives plus retained background.

    Known-as-unknown and ambiguous proposals are excluded from both sides;
    None when no retained proposal is pos or neg.
    """
    n_pos = sum(1 for d in retained if d.label == "pos")
    n_neg = sum(1 for d in retained if d.label == "neg")
    if n_pos + n_neg == 0:
        return None
    return n_pos / (n_pos + n_neg)


def auroc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Probability that a random positive outscores a random negative.

    Rank-sum formulation with ties counted one half. Tied average ranks are
    exact half-integers, so the result equals the O(n^2) pairwise count
    bit for bit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and aligned")
    n = scores.size
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs at least one positive and one negative label")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        # 1-based ranks i+1 .. j+1 share the exact average (i + j + 2) / 2
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    pos_rank_sum = float(ranks[labels].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def overlap_coefficient(
    scores_a: Sequence[float] | np.ndarray,
    scores_b: Sequence[float] | np.ndarray,
    bins: int = OVL_BINS,
) -> float:
    """Histogram overlap of two score samples over their pooled range.

    Both histograms use the same `bins` equal-width bins spanning the pooled
    min-max and are normalized to sum to one. A degenerate pooled range
    (every value identical) returns 1.0 by convention.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("overlap coefficient requires non-empty score sets")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if lo == hi:
        return 1.0
    hist_a, _ = np.histogram(a, bins=bins, range=(lo, hi))
    hist_b, _ = np.histogram(b, bins=bins, range=(lo, hi))
    return float(np.minimum(hist_a / a.size, hist_b / b.size).sum())


@dataclass(frozen=True)
class MetricsReport:
    """Metric suite over one (possibly filtered) unknown stream."""

    fupi: float
    sg: float | None
    nmh: float | None
    u_recall: float | None
    udp: float | None
    raw_counts: dict[str, int]
    retained_counts: dict[str, int]
    image_count: int

    def to_json(self) -> dict:
        return {
            "fupi": self.fupi,
            "suppression_gain": self.sg,
            "nmh": self.nmh,
            "u_recall": self.u_recall,
            "udp": self.udp,
            "raw_counts": dict(self.raw_counts),
            "retained_counts": dict(self.retained_counts),
            "image_count": self.image_count,
        }


def evaluate(
    labeled: Sequence[LabeledProposal],
    decisions: Sequence[FilterDecision],
    gu: Sequence[GroundTruthBox],
    image_count: int,
) -> MetricsReport:
    """Assemble the full report from labeled proposals and their decisions.

    Decisions whose id is not in `labeled` (known-stream bypass records) are
    ignored; metrics describe the unknown stream only.
    """
    by_id = {lp.proposal.id: lp for lp in labeled}
    retained = [d for d in decisions if not d.suppressed and d.id in by_id]
    retained_props = [by_id[d.id].proposal for d in retained]
    return MetricsReport(
        fupi=fupi(retained, image_count),
        sg=suppression_gain(labeled, retained),
        nmh=nmh(labeled, retained),
        u_recall=u_recall(retained_props, gu),
        udp=udp(retained),
        raw_counts=_label_counts(lp.label for lp in labeled),
        retained_counts=_label_counts(d.label for d in retained if d.label is not None),
        image_count=image_count,
    )


def evaluate_raw(
    labeled: Sequence[LabeledProposal],
    gu: Sequence[GroundTruthBox],
    image_count: int,
) -> MetricsReport:
    """Score the unfiltered stream: every unknown proposal counts as retained."""
    decisions = [
        FilterDecision(id=lp.proposal.id, lam=0.0, tau=0.0, suppressed=False, label=lp.label)
        for lp in labeled
    ]
    return evaluate(labeled, decisions, gu, image_count)

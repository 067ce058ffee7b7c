"""Threshold selection under a false-suppression budget, and budget sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .datamodel import EmbeddingMatrix, FilterDecision, GroundTruthBox, LabeledProposal
from .memory import DualMemory, LrtParams, lrt_scores
from .metrics import MetricsReport, evaluate

DEFAULT_ALPHA = 0.10


def calibrate_threshold(scores: Sequence[float] | np.ndarray, alpha: float) -> float:
    """Smallest tau such that at most an `alpha` fraction of `scores` exceed it.

    Returns the m-th smallest score with m = ceil((1 - alpha) * n), computed
    in exact rational arithmetic so boundary cases like alpha * n integral
    never round the wrong way. By construction the number of scores strictly
    above tau is at most floor(alpha * n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot calibrate a threshold from an empty score set")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1): {alpha}")
    n = scores.size
    m = n - math.floor(Fraction(*float(alpha).as_integer_ratio()) * n)
    return float(np.sort(scores)[m - 1])


@dataclass(frozen=True)
class OperatingPoint:
    """One point of the budget sweep: the threshold and its metric snapshot."""

    alpha: float
    tau: float
    report: MetricsReport

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "tau": self.tau, **self.report.to_json()}


def alpha_sweep(
    mem: DualMemory,
    params: LrtParams,
    eval_labeled: Sequence[LabeledProposal],
    embeddings: EmbeddingMatrix,
    gu: Sequence[GroundTruthBox],
    image_count: int,
    alphas: Sequence[float],
    n_threads: int = 1,
) -> list[OperatingPoint]:
    """Calibrate, filter, and evaluate once per budget value.

    Scores are computed once and re-thresholded per alpha, so retained sets
    are nested exactly along the sweep.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("alphas must be non-empty")
    for a in alphas:
        if not (0.0 < a < 1.0):
            raise ValueError(f"alpha must be in (0, 1): {a}")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError(f"alphas must be strictly increasing: {alphas}")

    thr_scores = lrt_scores(mem.threshold_positives, mem, params, n_threads)
    indices = []
    for lp in eval_labeled:
        if lp.proposal.embedding_index is None:
            raise ValueError(f"proposal '{lp.proposal.id}' has no embedding index")
        indices.append(lp.proposal.embedding_index)
    queries = embeddings.unit_rows64[np.asarray(indices, dtype=np.intp)]
    lams = lrt_scores(queries, mem, params, n_threads)

    points = []
    for a in alphas:
        tau = calibrate_threshold(thr_scores, a)
        decisions = [
            FilterDecision(
                id=lp.proposal.id,
                lam=float(lam),
                tau=tau,
                suppressed=bool(lam > tau),
                label=lp.label,
            )
            for lp, lam in zip(eval_labeled, lams)
        ]
        points.append(OperatingPoint(alpha=a, tau=tau, report=evaluate(eval_labeled, decisions, gu, image_count)))
    return points

"""Apply a calibrated threshold to an unknown stream; known stream bypasses."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .datamodel import EmbeddingMatrix, FilterDecision, ProposalRecord
from .memory import DualMemory, LrtParams, lrt_scores


def filter_stream(
    proposals: Sequence[ProposalRecord],
    embeddings: EmbeddingMatrix,
    mem: DualMemory,
    params: LrtParams,
    tau: float,
    labels: Mapping[str, str] | None = None,
    n_threads: int = 1,
) -> list[FilterDecision]:
    """Score every unknown-stream proposal and suppress those with lam > tau.

    Known-stream proposals pass through untouched (never suppressed, no
    score). Output preserves input order. Scores are always computed, even
    for proposals an extreme tau would obviously retain, so a sweep can
    re-threshold without re-scoring.
    """
    unknown_positions = [i for i, p in enumerate(proposals) if p.stream == "unknown"]
    indices = []
    for i in unknown_positions:
        p = proposals[i]
        if p.embedding_index is None:
            raise ValueError(f"unknown-stream proposal '{p.id}' has no embedding index")
        indices.append(p.embedding_index)

    lams = np.empty(0)
    if indices:
        queries = embeddings.unit_rows64[np.asarray(indices, dtype=np.intp)]
        lams = lrt_scores(queries, mem, params, n_threads)

    lam_at = dict(zip(unknown_positions, lams))
    decisions = []
    for i, p in enumerate(proposals):
        label = labels.get(p.id) if labels else None
        if p.stream == "known":
            decisions.append(
                FilterDecision(id=p.id, lam=None, tau=tau, suppressed=False, label=label)
            )
        else:
            lam = float(lam_at[i])
            decisions.append(
                FilterDecision(id=p.id, lam=lam, tau=tau, suppressed=lam > tau, label=label)
            )
    return decisions


def retained_stream(
    proposals: Sequence[ProposalRecord], decisions: Sequence[FilterDecision]
) -> list[ProposalRecord]:
    """Proposals surviving the filter, in input order (known stream intact)."""
    if len(proposals) != len(decisions):
        raise ValueError("proposals and decisions must be aligned")
    out = []
    for p, d in zip(proposals, decisions):
        if p.id != d.id:
            raise ValueError(f"decision order mismatch at proposal '{p.id}' vs '{d.id}'")
        if not d.suppressed:
            out.append(p)
    return out

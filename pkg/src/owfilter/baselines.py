"""Comparison filters: objectness thresholding and prototype compression.

Both emit the same decision records as the k-NN filter. To keep the
invariant ``suppressed == (lam > tau)`` while exposing the prototype rule's
two sub-conditions, prototype decisions encode the negative-similarity
guard in the per-record tau: guard passed -> tau 0.0 (suppress on positive
margin), guard failed -> tau 2.0 (unreachable, since cosines live in
[-1, 1] the margin never exceeds 2 when the guard fails).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datamodel import EmbeddingMatrix, FilterDecision, ProposalRecord
from .memory import DualMemory, _unit64

DEFAULT_K_POS = 16
DEFAULT_K_NEG = 64
DEFAULT_TAU_COS = 0.80


def objectness_filter(
    proposals: Sequence[ProposalRecord],
    threshold: float,
    labels: Mapping[str, str] | None = None,
) -> list[FilterDecision]:
    """Retain unknown proposals with objectness >= threshold; known bypasses.

    Encoded as lam = -objectness against tau = -threshold, so the shared
    decision invariant holds verbatim.
    """
    decisions = []
    for p in proposals:
        label = labels.get(p.id) if labels else None
        if p.stream == "known":
            decisions.append(
                FilterDecision(id=p.id, lam=None, tau=-threshold, suppressed=False, label=label)
            )
        else:
            lam = -p.objectness
            decisions.append(
                FilterDecision(
                    id=p.id, lam=lam, tau=-threshold, suppressed=lam > -threshold, label=label
                )
            )
    return decisions


def kmeans(
    rows: np.ndarray, k: int, seed: int = 0, max_iters: int = 100
) -> np.ndarray:
    """Spherical k-means on unit rows; returns k unit-norm centroids.

    Seeded k-means++ initialization, Lloyd iterations assigning by cosine,
    centroids renormalized after each mean update, empty clusters re-seeded
    from the point farthest from its assigned centroid. Stops when no
    assignment changes or after max_iters.
    """
    rows = _unit64(np.asarray(rows))
    n = rows.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1: {k}")
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} rows")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1: {max_iters}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(rows, k, rng)

    assign = np.full(n, -1, dtype=np.intp)
    for _ in range(max_iters):
        sims = rows @ centroids.T
        new_assign = np.argmax(sims, axis=1)
        best_sim = sims[np.arange(n), new_assign]

        # re-seed empty clusters from the globally farthest point
        used = set()
        for c in range(k):
            if not np.any(new_assign == c):
                far_order = np.argsort(best_sim, kind="stable")
                pick = next(int(i) for i in far_order if int(i) not in used)
                used.add(pick)
                centroids[c] = rows[pick]
                new_assign[pick] = c
                best_sim[pick] = 1.0

        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = rows[assign == c]
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0.0:
                centroids[c] = mean / norm
    return centroids


def _kmeans_pp_init(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    chosen = [int(rng.integers(n))]
    # squared Euclidean distance on the unit sphere is 2 * (1 - cos)
    d2 = np.clip(1.0 - rows @ rows[chosen[0]], 0.0, None)
    d2[chosen[0]] = 0.0
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0.0:
            pick = next(i for i in range(n) if i not in set(chosen))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        chosen.append(pick)
        d2 = np.minimum(d2, np.clip(1.0 - rows @ rows[pick], 0.0, None))
        d2[pick] = 0.0
    return rows[chosen].copy()


def kmeans_objective(rows: np.ndarray, centroids: np.ndarray) -> float:
    """Sum of (1 - cosine) from each row to its best centroid."""
    rows = _unit64(np.asarray(rows))
    sims = rows @ np.asarray(centroids, dtype=np.float64).T
    return float(np.sum(1.0 - sims.max(axis=1)))


@dataclass(frozen=True, eq=False)
class PrototypeMemory:
    """Centroid-compressed memories with a fixed cosine suppression gate."""

    positive_centroids: np.ndarray
    negative_centroids: np.ndarray
    tau_cos: float = DEFAULT_TAU_COS

    def __post_init__(self) -> None:
        for name, arr in (
            ("positive_centroids", self.positive_centroids),
            ("negative_centroids", self.negative_centroids),
        ):
            if arr.ndim != 2 or arr.shape[0] == 0:
                raise ValueError(f"{name} must be a non-empty 2-D array")
        if self.positive_centroids.shape[1] != self.negative_centroids.shape[1]:
            raise ValueError("centroid dims must match")


def build_prototype_memory(
    mem: DualMemory,
    k_pos: int = DEFAULT_K_POS,
    k_neg: int = DEFAULT_K_NEG,
    tau_cos: float = DEFAULT_TAU_COS,
    seed: int = 0,
    max_iters: int = 100,
) -> PrototypeMemory:
    """Compress a dual memory into the published centroid configuration."""
    return PrototypeMemory(
        positive_centroids=kmeans(mem.positive, k_pos, seed=seed, max_iters=max_iters),
        negative_centroids=kmeans(mem.negative, k_neg, seed=seed + 1, max_iters=max_iters),
        tau_cos=tau_cos,
    )


def prototype_filter(
    proposals: Sequence[ProposalRecord],
    embeddings: EmbeddingMatrix,
    proto: PrototypeMemory,
    labels: Mapping[str, str] | None = None,
) -> list[FilterDecision]:
    """Max-cosine dual-threshold rule over the centroid memories.

    Suppress iff max-cos to the negative centroids reaches tau_cos AND
    exceeds the max-cos to the positive centroids (positive guard). See the
    module docstring for how the two sub-conditions map onto (lam, tau).
    """
    decisions = []
    pos_t = np.asarray(proto.positive_centroids, dtype=np.float64).T
    neg_t = np.asarray(proto.negative_centroids, dtype=np.float64).T
    for p in proposals:
        label = labels.get(p.id) if labels else None
        if p.stream == "known":
            decisions.append(
                FilterDecision(id=p.id, lam=None, tau=0.0, suppressed=False, label=label)
            )
            continue
        if p.embedding_index is None:
            raise ValueError(f"unknown-stream proposal '{p.id}' has no embedding index")
        e = embeddings.unit_rows64[p.embedding_index]
        max_neg = float((e @ neg_t).max())
        max_pos = float((e @ pos_t).max())
        lam = max_neg - max_pos
        tau = 0.0 if max_neg >= proto.tau_cos else 2.0
        decisions.append(
            FilterDecision(id=p.id, lam=lam, tau=tau, suppressed=lam > tau, label=label)
        )
    return decisions

"""Dual k-NN memories and the temperature-scaled likelihood-ratio score.

The memories are plain matrices of unit vectors; scores are computed by
exact brute-force cosine search (memories are at most tens of thousands of
rows). All scoring math runs in float64 so results match a naive full-scan
reference to well under 1e-6.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datamodel import (
    EmbeddingMatrix,
    FormatError,
    LabeledProposal,
    read_embedding_block,
    write_embedding_block,
)

MEMORY_FORMAT = "dual-knn-memory"
MEMORY_FORMAT_VERSION = 1

DEFAULT_K = 25
DEFAULT_TEMPERATURE = 0.05
DEFAULT_SPLIT_FRACTION = 0.5


@dataclass(frozen=True)
class LrtParams:
    """Neighbor count and kernel temperature for the log-density score."""

    k: int = DEFAULT_K
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1: {self.k}")
        if not (self.temperature > 0.0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be a positive real: {self.temperature!r}")


@dataclass(frozen=True, eq=False)
class DualMemory:
    """Immutable positive/negative reference memories plus held-out positives.

    `threshold_positives` are disjoint from `positive` by construction and
    reserved for threshold calibration. All rows are float64 unit vectors.
    """

    positive: np.ndarray
    negative: np.ndarray
    threshold_positives: np.ndarray
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, arr in (
            ("positive", self.positive),
            ("negative", self.negative),
            ("threshold_positives", self.threshold_positives),
        ):
            if arr.ndim != 2 or arr.shape[0] == 0:
                raise ValueError(f"{name} memory must be a non-empty 2-D array")
            if arr.shape[1] != self.positive.shape[1]:
                raise ValueError("memory dims must match")
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.positive.shape[1])


def _unit64(rows: np.ndarray) -> np.ndarray:
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", rows, rows))
    if np.any(norms == 0.0):
        raise ValueError("zero-norm embedding row cannot be normalized")
    return rows / norms[:, None]


def build_memory(
    calibration: Sequence[LabeledProposal],
    embeddings: EmbeddingMatrix,
    split_fraction: float = DEFAULT_SPLIT_FRACTION,
    seed: int = 0,
    calibration_id: str = "",
) -> DualMemory:
    """Partition calibration positives and collect background negatives.

    Positives are shuffled deterministically by `seed` and split into a
    memory subset (`split_fraction` of them, at least one row on each side)
    and a disjoint threshold-calibration subset. All `neg` proposals form
    the negative memory. Other labels are ignored.
    """
    if not (0.0 < split_fraction < 1.0):
        raise ValueError(f"split_fraction must be in (0, 1): {split_fraction}")
    pos = [lp for lp in calibration if lp.label == "pos"]
    neg = [lp for lp in calibration if lp.label == "neg"]
    if len(pos) < 2:
        raise ValueError(
            f"need at least 2 positive proposals to form memory and threshold "
            f"subsets, got {len(pos)}"
        )
    if not neg:
        raise ValueError("no negative proposals to build the background memory")

    def gather(items: list[LabeledProposal]) -> np.ndarray:
        indices = []
        for lp in items:
            if lp.proposal.embedding_index is None:
                raise ValueError(f"calibration proposal '{lp.proposal.id}' has no embedding index")
            indices.append(lp.proposal.embedding_index)
        return embeddings.unit_rows64[np.asarray(indices, dtype=np.intp)]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pos))
    n_mem = int(round(split_fraction * len(pos)))
    n_mem = min(max(n_mem, 1), len(pos) - 1)
    mem_rows = gather([pos[i] for i in order[:n_mem]])
    thr_rows = gather([pos[i] for i in order[n_mem:]])
    neg_rows = gather(neg)

    provenance = {
        "calibration_id": calibration_id,
        "split_fraction": float(split_fraction),
        "seed": int(seed),
        "n_positive_memory": int(n_mem),
        "n_threshold_positives": int(len(pos) - n_mem),
        "n_negative_memory": int(len(neg)),
    }
    return DualMemory(
        positive=mem_rows,
        negative=neg_rows,
        threshold_positives=thr_rows,
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def _as_queries(query: np.ndarray) -> np.ndarray:
    q = np.ascontiguousarray(query, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2:
        raise ValueError(f"queries must be 1-D or 2-D, got shape {query.shape}")
    return q


def knn_logdensity_batch(
    queries: np.ndarray, memory: np.ndarray, params: LrtParams
) -> np.ndarray:
    """Temperature-scaled k-NN log-density of each query under `memory`.

    Returns log(sum_i exp(cos(q, n_i) / T)) - log(k') over the k' nearest
    memory rows by cosine similarity, with k' = min(k, |memory|). Computed
    with max-subtraction; exp arguments reach 1/T (20 at defaults, 1000 at
    T=1e-3).
    """
    memory = np.asarray(memory, dtype=np.float64)
    if memory.ndim != 2 or memory.shape[0] == 0:
        raise ValueError("memory must be a non-empty 2-D array")
    q = _as_queries(queries)
    if q.shape[1] != memory.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} != memory dim {memory.shape[1]}")
    sims = q @ memory.T
    n = memory.shape[0]
    k2 = min(params.k, n)
    if k2 < n:
        top = np.partition(sims, n - k2, axis=1)[:, n - k2 :]
    else:
        top = sims
    x = top / params.temperature
    mx = x.max(axis=1)
    out = mx + np.log(np.exp(x - mx[:, None]).sum(axis=1)) - math.log(k2)
    return out


def knn_logdensity(query: np.ndarray, memory: np.ndarray, params: LrtParams) -> float:
    return float(knn_logdensity_batch(_as_queries(query), memory, params)[0])


def top_cosines(query: np.ndarray, memory: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and cosines of the k nearest memory rows, ties by lowest index."""
    memory = np.asarray(memory, dtype=np.float64)
    sims = memory @ np.ascontiguousarray(query, dtype=np.float64)
    k2 = min(k, memory.shape[0])
    idx = np.argsort(-sims, kind="stable")[:k2]
    return idx, sims[idx]


def lrt_scores(
    queries: np.ndarray,
    mem: DualMemory,
    params: LrtParams,
    n_threads: int = 1,
) -> np.ndarray:
    """Log-likelihood-ratio statistic per query; larger = more background-like."""
    q = _as_queries(queries)

    def score(chunk: np.ndarray) -> np.ndarray:
        return knn_logdensity_batch(chunk, mem.negative, params) - knn_logdensity_batch(
            chunk, mem.positive, params
        )

    if n_threads <= 1 or q.shape[0] < 2 * n_threads:
        return score(q)
    chunks = np.array_split(q, n_threads)
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        parts = list(pool.map(score, chunks))
    return np.concatenate(parts)


def lrt_score(query: np.ndarray, mem: DualMemory, params: LrtParams) -> float:
    return float(lrt_scores(_as_queries(query), mem, params)[0])


# ---------------------------------------------------------------------------
# critic fusion
# ---------------------------------------------------------------------------


def fuse_embeddings(a: EmbeddingMatrix, b: EmbeddingMatrix, mode: str) -> EmbeddingMatrix:
    """Fuse two aligned embedding matrices row by row.

    `concat` joins rows and renormalizes; `average` takes the elementwise
    mean (equal dims required) and renormalizes.
    """
    if a.count != b.count:
        raise ValueError(f"row count mismatch: {a.count} vs {b.count}")
    if mode == "concat":
        fused = np.hstack([a.unit_rows64, b.unit_rows64])
    elif mode == "average":
        if a.dim != b.dim:
            raise ValueError(f"average requires equal dims, got {a.dim} and {b.dim}")
        fused = 0.5 * (a.unit_rows64 + b.unit_rows64)
    else:
        raise ValueError(f"mode must be 'concat' or 'average': {mode!r}")
    if fused.size:
        norms = np.sqrt(np.einsum("ij,ij->i", fused, fused))
        if np.any(norms == 0.0):
            i = int(np.argmax(norms == 0.0))
            raise ValueError(f"fused row {i} has zero norm (opposite inputs?)")
        fused = fused / norms[:, None]
    return EmbeddingMatrix(fused.astype(np.float32))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_memory(mem: DualMemory, path: str | Path) -> None:
    """Persist as a JSON header line followed by three binary matrix blocks."""
    header = {
        "format": MEMORY_FORMAT,
        "version": MEMORY_FORMAT_VERSION,
        "dim": mem.dim,
        "counts": {
            "positive": int(mem.positive.shape[0]),
            "negative": int(mem.negative.shape[0]),
            "threshold_positives": int(mem.threshold_positives.shape[0]),
        },
        "provenance": dict(mem.provenance),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for arr in (mem.positive, mem.negative, mem.threshold_positives):
            write_embedding_block(fh, arr.astype(np.float32))


def load_memory(path: str | Path) -> DualMemory:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.readline()
        try:
            header = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed memory header") from exc
        if header.get("format") != MEMORY_FORMAT:
            raise FormatError(f"{path}: not a {MEMORY_FORMAT} file")
        if header.get("version") != MEMORY_FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported memory version {header.get('version')}")
        blocks = [read_embedding_block(fh, where=str(path)) for _ in range(3)]
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    counts = header.get("counts", {})
    for name, arr in zip(("positive", "negative", "threshold_positives"), blocks):
        if counts.get(name) != arr.shape[0]:
            raise FormatError(
                f"{path}: header count {counts.get(name)} != payload rows "
                f"{arr.shape[0]} for {name} memory"
            )
    return DualMemory(
        positive=_unit64(blocks[0]),
        negative=_unit64(blocks[1]),
        threshold_positives=_unit64(blocks[2]),
        provenance=header.get("provenance", {}),
    )

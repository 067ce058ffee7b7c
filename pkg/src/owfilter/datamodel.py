"""Domain types and interchange formats for detector proposal streams.

Three line-delimited JSON record streams (proposals, ground truth, filter
decisions) plus a binary matrix format for embeddings. Embeddings live in a
separate file indexed by ``embedding_index`` because they dominate storage
and benefit from memory mapping.

Binary embedding layout (little-endian, bit-exact):
    magic "DMEM" | u32 version=1 | u32 dim | u64 count | count*dim float32
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

EMBEDDING_MAGIC = b"DMEM"
EMBEDDING_VERSION = 1

# Rows whose L2 norm deviates from 1 by more than this are rejected (the
# export was never normalized); smaller drift is silently renormalized.
NORM_REJECT_TOL = 1e-1
# Rows already within this tolerance are kept bit-identical on load.
NORM_KEEP_TOL = 1e-3

STREAMS = ("unknown", "known")
CATEGORIES = ("known", "future")
LABELS = ("pos", "known_as_unknown", "neg", "amb")


class FormatError(ValueError):
    """An interchange file violates its documented schema."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel corner format (x1, y1, x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"bbox coordinates must be finite: {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate bbox (needs x2 > x1 and y2 > y1): {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def to_list(self) -> list[float]:
        return [float(self.x1), float(self.y1), float(self.x2), float(self.y2)]


@dataclass(frozen=True)
class ProposalRecord:
    """One detector prediction as emitted into a known/unknown stream."""

    id: str
    image_id: str
    bbox: BBox
    objectness: float
    stream: str
    embedding_index: int | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("proposal id must be non-empty")
        if self.stream not in STREAMS:
            raise ValueError(f"stream must be one of {STREAMS}: {self.stream!r}")
        if not (0.0 <= self.objectness <= 1.0):
            raise ValueError(f"objectness out of range [0, 1]: {self.objectness!r}")
        if self.embedding_index is not None and self.embedding_index < 0:
            raise ValueError(f"embedding_index must be >= 0: {self.embedding_index}")


@dataclass(frozen=True)
class GroundTruthBox:
    """Annotated object, tagged by whether its class is currently known."""

    image_id: str
    bbox: BBox
    category: str

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}: {self.category!r}")


@dataclass(frozen=True)
class LabeledProposal:
    """Unknown-stream proposal with its priority label and IoU maxima."""

    proposal: ProposalRecord
    label: str
    max_iou_future: float
    max_iou_known: float

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}: {self.label!r}")


@dataclass(frozen=True)
class FilterDecision:
    """Per-proposal suppression outcome.

    ``lam`` is the log-likelihood-ratio statistic (larger = more
    background-like); it is None for known-stream records, which bypass the
    filter and are never suppressed.
    """

    id: str
    lam: float | None
    tau: float
    suppressed: bool
    label: str | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.tau):
            raise ValueError(f"tau must be finite: {self.tau!r}")
        if self.lam is None:
            if self.suppressed:
                raise ValueError("known-stream decision cannot be suppressed")
        else:
            if not math.isfinite(self.lam):
                raise ValueError(f"lambda must be finite: {self.lam!r}")
            if self.suppressed != (self.lam > self.tau):
                raise ValueError(
                    f"suppressed flag inconsistent with lambda > tau: "
                    f"lam={self.lam!r} tau={self.tau!r} suppressed={self.suppressed}"
                )
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}: {self.label!r}")


class EmbeddingMatrix:
    """Dense matrix of unit-norm float32 embedding rows.

    Rows are validated/renormalized once at construction and immutable
    afterwards, so instances are safe to share across threads.
    """

    def __init__(self, rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.float32)
        if rows.ndim != 2:
            raise ValueError(f"embedding rows must be 2-D, got shape {rows.shape}")
        if rows.shape[1] < 1:
            raise ValueError("embedding dim must be positive")
        rows = _apply_norm_policy(rows)
        if rows.flags.writeable:
            rows.setflags(write=False)
        self._rows = rows
        self._rows64: np.ndarray | None = None

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    @property
    def dim(self) -> int:
        return int(self._rows.shape[1])

    @property
    def count(self) -> int:
        return int(self._rows.shape[0])

    def __len__(self) -> int:
        return self.count

    @property
    def unit_rows64(self) -> np.ndarray:
        """Float64 view with rows renormalized exactly; used for scoring."""
        if self._rows64 is None:
            rows64 = self._rows.astype(np.float64)
            if rows64.size:
                norms = np.sqrt(np.einsum("ij,ij->i", rows64, rows64))
                rows64 /= norms[:, None]
            rows64.setflags(write=False)
            self._rows64 = rows64
        return self._rows64


def _apply_norm_policy(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 0:
        return rows
    if not np.all(np.isfinite(rows)):
        raise FormatError("embedding matrix contains non-finite values")
    norms = np.sqrt(np.einsum("ij,ij->i", rows, rows, dtype=np.float64))
    deviation = np.abs(norms - 1.0)
    if np.any(deviation > NORM_REJECT_TOL):
        i = int(np.argmax(deviation > NORM_REJECT_TOL))
        raise FormatError(
            f"embedding norm {float(norms[i])!r} outside tolerance at row {i} "
            f"(|norm - 1| > {NORM_REJECT_TOL:g}; export not L2-normalized?)"
        )
    drifted = deviation > NORM_KEEP_TOL
    if np.any(drifted):
        fixed = rows.astype(np.float64)
        fixed[drifted] /= norms[drifted, None]
        rows = np.ascontiguousarray(fixed, dtype=np.float32)
    return rows


def check_embedding_indices(
    proposals: Iterable[ProposalRecord], matrix: EmbeddingMatrix
) -> None:
    """Validate that every present embedding_index addresses a matrix row."""
    for p in proposals:
        if p.embedding_index is not None and p.embedding_index >= matrix.count:
            raise FormatError(
                f"proposal '{p.id}' embedding_index {p.embedding_index} out of "
                f"range for matrix with {matrix.count} rows"
            )


# ---------------------------------------------------------------------------
# line-delimited record streams
# ---------------------------------------------------------------------------


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed line ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _require(obj: dict, key: str, path: Path, lineno: int):
    if key not in obj:
        raise FormatError(f"{path}:{lineno}: missing key '{key}'")
    return obj[key]


def _parse_bbox(value, path: Path, lineno: int) -> BBox:
    if not (isinstance(value, list) and len(value) == 4):
        raise FormatError(f"{path}:{lineno}: bbox must be a list [x1, y1, x2, y2]")
    try:
        return BBox(*(float(v) for v in value))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from exc


def load_proposals(path: str | Path) -> list[ProposalRecord]:
    """Load and validate a proposals.jsonl stream, preserving order."""
    path = Path(path)
    records: list[ProposalRecord] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        bbox = _parse_bbox(_require(obj, "bbox", path, lineno), path, lineno)
        raw_index = obj.get("embedding_index")
        try:
            record = ProposalRecord(
                id=str(_require(obj, "id", path, lineno)),
                image_id=str(_require(obj, "image_id", path, lineno)),
                bbox=bbox,
                objectness=float(_require(obj, "objectness", path, lineno)),
                stream=str(_require(obj, "stream", path, lineno)),
                embedding_index=None if raw_index is None else int(raw_index),
            )
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if record.id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate proposal id '{record.id}'")
        seen.add(record.id)
        records.append(record)
    return records


def save_proposals(records: Sequence[ProposalRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj: dict = {
                "id": r.id,
                "image_id": r.image_id,
                "bbox": r.bbox.to_list(),
                "objectness": float(r.objectness),
                "stream": r.stream,
            }
            if r.embedding_index is not None:
                obj["embedding_index"] = r.embedding_index
            fh.write(json.dumps(obj) + "\n")


def load_groundtruth(path: str | Path) -> list[GroundTruthBox]:
    path = Path(path)
    boxes: list[GroundTruthBox] = []
    for lineno, obj in _iter_jsonl(path):
        bbox = _parse_bbox(_require(obj, "bbox", path, lineno), path, lineno)
        try:
            boxes.append(
                GroundTruthBox(
                    image_id=str(_require(obj, "image_id", path, lineno)),
                    bbox=bbox,
                    category=str(_require(obj, "category", path, lineno)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return boxes


def save_groundtruth(boxes: Sequence[GroundTruthBox], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in boxes:
            obj = {"image_id": b.image_id, "bbox": b.bbox.to_list(), "category": b.category}
            fh.write(json.dumps(obj) + "\n")


def load_decisions(path: str | Path) -> list[FilterDecision]:
    path = Path(path)
    decisions: list[FilterDecision] = []
    for lineno, obj in _iter_jsonl(path):
        raw_lam = _require(obj, "lambda", path, lineno)
        try:
            decisions.append(
                FilterDecision(
                    id=str(_require(obj, "id", path, lineno)),
                    lam=None if raw_lam is None else float(raw_lam),
                    tau=float(_require(obj, "tau", path, lineno)),
                    suppressed=bool(_require(obj, "suppressed", path, lineno)),
                    label=obj.get("label"),
                )
            )
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return decisions


def save_decisions(decisions: Sequence[FilterDecision], path: str | Path) -> None:
    """Write decisions.jsonl with a deterministic field order.

    Serialization uses shortest round-trip float repr, so
    save -> load -> save is bit-identical.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for d in decisions:
            obj: dict = {
                "id": d.id,
                "lambda": None if d.lam is None else float(d.lam),
                "tau": float(d.tau),
                "suppressed": d.suppressed,
            }
            if d.label is not None:
                obj["label"] = d.label
            fh.write(json.dumps(obj) + "\n")


def load_labeled(path: str | Path) -> list[LabeledProposal]:
    """Load labeled proposals as written by `save_labeled` (or `decompose --out`)."""
    path = Path(path)
    labeled: list[LabeledProposal] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        bbox = _parse_bbox(_require(obj, "bbox", path, lineno), path, lineno)
        raw_index = obj.get("embedding_index")
        try:
            proposal = ProposalRecord(
                id=str(_require(obj, "id", path, lineno)),
                image_id=str(_require(obj, "image_id", path, lineno)),
                bbox=bbox,
                objectness=float(_require(obj, "objectness", path, lineno)),
                stream=str(obj.get("stream", "unknown")),
                embedding_index=None if raw_index is None else int(raw_index),
            )
            labeled.append(
                LabeledProposal(
                    proposal=proposal,
                    label=str(_require(obj, "label", path, lineno)),
                    max_iou_future=float(_require(obj, "max_iou_future", path, lineno)),
                    max_iou_known=float(_require(obj, "max_iou_known", path, lineno)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if proposal.id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate proposal id '{proposal.id}'")
        seen.add(proposal.id)
    return labeled


def save_labeled(labeled: Sequence[LabeledProposal], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lp in labeled:
            p = lp.proposal
            obj: dict = {
                "id": p.id,
                "image_id": p.image_id,
                "bbox": p.bbox.to_list(),
                "objectness": float(p.objectness),
                "stream": p.stream,
            }
            if p.embedding_index is not None:
                obj["embedding_index"] = p.embedding_index
            obj["label"] = lp.label
            obj["max_iou_future"] = float(lp.max_iou_future)
            obj["max_iou_known"] = float(lp.max_iou_known)
            fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# binary embedding matrix
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, count


def write_embedding_block(fh: BinaryIO, rows: np.ndarray) -> None:
    """Write one header + payload block to an open binary stream."""
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise ValueError(f"embedding rows must be 2-D, got shape {rows.shape}")
    fh.write(_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, rows.shape[1], rows.shape[0]))
    fh.write(rows.tobytes(order="C"))


def read_embedding_block(fh: BinaryIO, where: str = "embedding file") -> np.ndarray:
    """Read exactly one header + payload block from an open binary stream."""
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError(f"{where}: truncated header ({len(head)} of {_HEADER.size} bytes)")
    magic, version, dim, count = _HEADER.unpack(head)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"{where}: bad magic {magic!r} (expected {EMBEDDING_MAGIC!r})")
    if version != EMBEDDING_VERSION:
        raise FormatError(f"{where}: unsupported version {version}")
    if dim == 0:
        raise FormatError(f"{where}: dim must be positive")
    expected = count * dim * 4
    payload = fh.read(expected)
    if len(payload) < expected:
        raise FormatError(
            f"{where}: truncated payload ({len(payload)} of {expected} bytes for "
            f"count={count} dim={dim})"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim)


def load_embeddings(path: str | Path, *, mmap: bool = False) -> EmbeddingMatrix:
    """Load a standalone binary embedding matrix.

    With ``mmap=True`` the payload is memory-mapped read-only; if any row
    needs renormalization the matrix falls back to an in-memory copy.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        if mmap:
            head = fh.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise FormatError(f"{path}: truncated header")
            magic, version, dim, count = _HEADER.unpack(head)
            if magic != EMBEDDING_MAGIC:
                raise FormatError(f"{path}: bad magic {magic!r} (expected {EMBEDDING_MAGIC!r})")
            if version != EMBEDDING_VERSION:
                raise FormatError(f"{path}: unsupported version {version}")
            if dim == 0:
                raise FormatError(f"{path}: dim must be positive")
            size = path.stat().st_size
            expected = _HEADER.size + count * dim * 4
            if size < expected:
                raise FormatError(f"{path}: truncated payload ({size} of {expected} bytes)")
            if size > expected:
                raise FormatError(f"{path}: {size - expected} trailing bytes after payload")
            rows = np.memmap(path, dtype="<f4", mode="r", offset=_HEADER.size, shape=(count, dim))
        else:
            rows = read_embedding_block(fh, where=str(path))
            if fh.read(1):
                raise FormatError(f"{path}: trailing bytes after payload")
    return EmbeddingMatrix(rows)


def save_embeddings(matrix: EmbeddingMatrix | np.ndarray, path: str | Path) -> None:
    rows = matrix.rows if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    with open(path, "wb") as fh:
        write_embedding_block(fh, rows)

"""Linear-probe separability diagnostic with image-level grouped folds.

Measures how well a logistic probe on embeddings separates positive from
background unknown proposals, without ever letting one image's proposals
appear on both sides of a fold.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import EmbeddingMatrix, LabeledProposal
from .metrics import auroc, overlap_coefficient

DEFAULT_FOLDS = 5
DEFAULT_L2 = 1e-4
DEFAULT_ITERS = 1000
DEFAULT_STEP = 0.1


def group_kfold(image_ids: Sequence[str], n_folds: int = DEFAULT_FOLDS, seed: int = 0) -> dict[str, int]:
    """Assign every distinct image id to one fold, round-robin after a seeded shuffle."""
    unique = sorted(set(image_ids))
    if len(unique) < n_folds:
        raise ValueError(f"need at least {n_folds} distinct images, got {len(unique)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unique))
    return {unique[idx]: i % n_folds for i, idx in enumerate(order)}


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |z| and odd-symmetric in z
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    l2: float = DEFAULT_L2,
    iters: int = DEFAULT_ITERS,
    step: float = DEFAULT_STEP,
) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on L2-regularized log-loss.

    Deterministic zero initialization; the penalty (l2/2)*||w||^2 applies to
    the weights only. Returns (weights, bias).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) and y must be (n,)")
    if not (0 < y.sum() < y.size):
        raise ValueError("logistic fit needs both classes in the training set")
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(iters):
        g = _sigmoid(X @ w + b) - y
        w -= step * (X.T @ g / n + l2 * w)
        b -= step * float(g.mean())
    return w, b


def logit_scores(X: np.ndarray, w: np.ndarray, b: float) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) @ w + b


@dataclass(frozen=True)
class ProbeResult:
    """Per-fold AUROCs with pooled out-of-fold logits and their class overlap."""

    fold_aurocs: list[float]
    mean_auroc: float
    std_auroc: float
    logits: np.ndarray
    logit_labels: np.ndarray
    ovl: float
    skipped_folds: list[int]
    fold_of_image: dict[str, int]

    def to_json(self) -> dict:
        return {
            "fold_aurocs": [float(a) for a in self.fold_aurocs],
            "mean_auroc": self.mean_auroc,
            "std_auroc": self.std_auroc,
            "ovl": self.ovl,
            "skipped_folds": list(self.skipped_folds),
        }


def run_probe(
    labeled: Sequence[LabeledProposal],
    embeddings: EmbeddingMatrix,
    seed: int = 0,
    n_folds: int = DEFAULT_FOLDS,
    l2: float = DEFAULT_L2,
    iters: int = DEFAULT_ITERS,
    step: float = DEFAULT_STEP,
) -> ProbeResult:
    """Grouped cross-validated probe on pos-vs-neg proposals.

    Known-as-unknown and ambiguous proposals are excluded. Folds where either
    side of the split is single-class are skipped with a warning; mean and
    std (population) cover the completed folds.
    """
    items = [lp for lp in labeled if lp.label in ("pos", "neg")]
    if not items:
        raise ValueError("no pos/neg proposals to probe")
    indices = []
    for lp in items:
        if lp.proposal.embedding_index is None:
            raise ValueError(f"proposal '{lp.proposal.id}' has no embedding index")
        indices.append(lp.proposal.embedding_index)
    X = embeddings.unit_rows64[np.asarray(indices, dtype=np.intp)]
    y = np.array([1 if lp.label == "pos" else 0 for lp in items])
    if not (0 < y.sum() < y.size):
        raise ValueError("probe needs both pos and neg proposals overall")

    fold_of_image = group_kfold([lp.proposal.image_id for lp in items], n_folds, seed)
    folds = np.array([fold_of_image[lp.proposal.image_id] for lp in items])

    fold_aurocs: list[float] = []
    skipped: list[int] = []
    oof_logits: list[np.ndarray] = []
    oof_labels: list[np.ndarray] = []
    for f in range(n_folds):
        test = folds == f
        train = ~test
        if not test.any() or len(set(y[train])) < 2 or len(set(y[test])) < 2:
            warnings.warn(f"fold {f} skipped: a split side has a single class")
            skipped.append(f)
            continue
        w, b = fit_logistic(X[train], y[train], l2=l2, iters=iters, step=step)
        s = logit_scores(X[test], w, b)
        fold_aurocs.append(auroc(s, y[test]))
        oof_logits.append(s)
        oof_labels.append(y[test])

    if not fold_aurocs:
        raise ValueError("every fold was skipped; not enough class diversity per fold")
    logits = np.concatenate(oof_logits)
    labels = np.concatenate(oof_labels)
    return ProbeResult(
        fold_aurocs=fold_aurocs,
        mean_auroc=float(np.mean(fold_aurocs)),
        std_auroc=float(np.std(fold_aurocs)),
        logits=logits,
        logit_labels=labels,
        ovl=overlap_coefficient(logits[labels == 1], logits[labels == 0]),
        skipped_folds=skipped,
        fold_of_image=fold_of_image,
    )


def objectness_auroc(labeled: Sequence[LabeledProposal]) -> float:
    """Separability of the detector's own objectness score, no fitting needed."""
    items = [lp for lp in labeled if lp.label in ("pos", "neg")]
    return auroc(
        [lp.proposal.objectness for lp in items],
        [1 if lp.label == "pos" else 0 for lp in items],
    )

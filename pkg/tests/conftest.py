"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from owfilter.datamodel import BBox, FilterDecision, GroundTruthBox, ProposalRecord


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def make_proposal(
    pid: str,
    image_id: str = "img_0",
    box: tuple = (0.0, 0.0, 10.0, 10.0),
    objectness: float = 0.5,
    stream: str = "unknown",
    embedding_index: int | None = None,
) -> ProposalRecord:
    return ProposalRecord(
        id=pid,
        image_id=image_id,
        bbox=BBox(*box),
        objectness=objectness,
        stream=stream,
        embedding_index=embedding_index,
    )


def make_gt(
    image_id: str = "img_0",
    box: tuple = (0.0, 0.0, 10.0, 10.0),
    category: str = "future",
) -> GroundTruthBox:
    return GroundTruthBox(image_id=image_id, bbox=BBox(*box), category=category)


def random_decisions(rng: np.random.Generator, n: int) -> list[FilterDecision]:
    decisions = []
    for i in range(n):
        tau = float(rng.normal())
        if rng.random() < 0.2:
            lam = None
            suppressed = False
        else:
            lam = float(rng.normal())
            suppressed = lam > tau
        label = None
        if rng.random() < 0.5:
            label = ["pos", "neg", "known_as_unknown", "amb"][int(rng.integers(4))]
        decisions.append(
            FilterDecision(id=f"d{i}", lam=lam, tau=tau, suppressed=suppressed, label=label)
        )
    return decisions


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)

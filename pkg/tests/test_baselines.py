"""Objectness and prototype baseline filters plus spherical k-means."""

from __future__ import annotations

import numpy as np
import pytest

from owfilter.baselines import (
    PrototypeMemory,
    build_prototype_memory,
    kmeans,
    kmeans_objective,
    objectness_filter,
    prototype_filter,
)
from owfilter.datamodel import EmbeddingMatrix
from owfilter.memory import DualMemory

from conftest import make_proposal, unit_rows


class TestObjectnessFilter:
    def test_zero_threshold_retains_all(self, rng):
        proposals = [
            make_proposal(f"p{i}", objectness=float(rng.random()), embedding_index=i)
            for i in range(10)
        ]
        decisions = objectness_filter(proposals, 0.0)
        assert not any(d.suppressed for d in decisions)

    def test_above_one_suppresses_all_unknowns(self):
        proposals = [
            make_proposal("u", objectness=1.0),
            make_proposal("k", objectness=0.0, stream="known"),
        ]
        decisions = objectness_filter(proposals, 1.0 + 1e-9)
        assert decisions[0].suppressed
        assert not decisions[1].suppressed

    def test_boundary_is_retained(self):
        decisions = objectness_filter([make_proposal("u", objectness=0.6)], 0.6)
        assert not decisions[0].suppressed

    def test_known_stream_bypasses(self):
        proposals = [make_proposal("k", objectness=0.01, stream="known")]
        decisions = objectness_filter(proposals, 0.99)
        assert not decisions[0].suppressed
        assert decisions[0].lam is None


class TestKmeans:
    def test_k_equals_rows(self, rng):
        rows = unit_rows(rng, 6, 8)
        centroids = kmeans(rows, k=6, seed=0)
        got = {tuple(np.round(c, 12)) for c in centroids}
        want = {tuple(np.round(r, 12)) for r in rows}
        assert got == want

    def test_k_one_is_renormalized_mean(self, rng):
        rows = unit_rows(rng, 20, 8)
        centroid = kmeans(rows, k=1, seed=3)[0]
        mean = rows.mean(axis=0)
        np.testing.assert_allclose(centroid, mean / np.linalg.norm(mean), atol=1e-12)

    def test_two_separated_clouds(self, rng):
        d1 = np.zeros(16)
        d1[0] = 1.0
        d2 = np.zeros(16)
        d2[1] = 1.0
        cloud1 = d1 + 0.05 * rng.standard_normal((50, 16))
        cloud2 = d2 + 0.05 * rng.standard_normal((50, 16))
        cloud1 /= np.linalg.norm(cloud1, axis=1, keepdims=True)
        cloud2 /= np.linalg.norm(cloud2, axis=1, keepdims=True)
        rows = np.vstack([cloud1, cloud2])
        centroids = kmeans(rows, k=2, seed=1)
        means = []
        for cloud in (cloud1, cloud2):
            m = cloud.mean(axis=0)
            means.append(m / np.linalg.norm(m))
        # match each analytic mean to its closest centroid
        for m in means:
            err = min(np.linalg.norm(m - c) for c in centroids)
            assert err < 1e-6

    def test_deterministic(self, rng):
        rows = unit_rows(rng, 40, 8)
        a = kmeans(rows, k=5, seed=9)
        b = kmeans(rows, k=5, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_objective_non_increasing(self, rng):
        rows = unit_rows(rng, 120, 8)
        objectives = [
            kmeans_objective(rows, kmeans(rows, k=8, seed=4, max_iters=i))
            for i in range(1, 12)
        ]
        assert all(b <= a + 1e-9 for a, b in zip(objectives, objectives[1:]))

    def test_centroids_unit_norm(self, rng):
        rows = unit_rows(rng, 60, 12)
        centroids = kmeans(rows, k=7, seed=2)
        np.testing.assert_allclose(np.linalg.norm(centroids, axis=1), 1.0, atol=1e-9)

    def test_too_few_rows(self, rng):
        with pytest.raises(ValueError, match="cannot form"):
            kmeans(unit_rows(rng, 3, 4), k=5)


class TestPrototypeFilter:
    def _proto(self):
        pos = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        neg = np.array([[0.0, 1.0, 0.0]])
        return PrototypeMemory(positive_centroids=pos, negative_centroids=neg, tau_cos=0.80)

    def test_positive_centroid_query_retained(self, rng):
        emb = EmbeddingMatrix(np.array([[1.0, 0.0, 0.0]], dtype=np.float32))
        decisions = prototype_filter([make_proposal("p", embedding_index=0)], emb, self._proto())
        assert not decisions[0].suppressed

    def test_negative_centroid_query_suppressed(self):
        emb = EmbeddingMatrix(np.array([[0.0, 1.0, 0.0]], dtype=np.float32))
        decisions = prototype_filter([make_proposal("p", embedding_index=0)], emb, self._proto())
        assert decisions[0].suppressed

    def test_guard_blocks_when_below_tau_cos(self):
        # closer to negatives than positives but below the 0.80 gate
        v = np.array([0.65, 0.75, 0.0])
        v /= np.linalg.norm(v)
        assert float(v[0]) < float(v[1]) < 0.80
        emb = EmbeddingMatrix(v[None, :].astype(np.float32))
        decisions = prototype_filter([make_proposal("p", embedding_index=0)], emb, self._proto())
        assert not decisions[0].suppressed

    def test_known_stream_bypasses(self):
        emb = EmbeddingMatrix(np.array([[0.0, 1.0, 0.0]], dtype=np.float32))
        decisions = prototype_filter(
            [make_proposal("k", stream="known")], emb, self._proto()
        )
        assert not decisions[0].suppressed

    def test_missing_embedding_rejected(self):
        emb = EmbeddingMatrix(np.array([[0.0, 1.0, 0.0]], dtype=np.float32))
        with pytest.raises(ValueError, match="no embedding index"):
            prototype_filter([make_proposal("p")], emb, self._proto())

    def test_no_compression_limit_matches_max_cosine_rule(self, rng):
        """With centroids == memories and the gate below every max-cos, the
        prototype rule equals the max-cosine margin rule the LRT collapses to."""
        pos = unit_rows(rng, 12, 8)
        neg = unit_rows(rng, 18, 8)
        queries = unit_rows(rng, 100, 8)
        proto = PrototypeMemory(
            positive_centroids=pos, negative_centroids=neg, tau_cos=-1.0
        )
        emb = EmbeddingMatrix(queries.astype(np.float32))
        proposals = [make_proposal(f"p{i}", embedding_index=i) for i in range(100)]
        decisions = prototype_filter(proposals, emb, proto)
        q64 = emb.unit_rows64
        max_neg = (q64 @ neg.T).max(axis=1)
        max_pos = (q64 @ pos.T).max(axis=1)
        for d, mn, mp in zip(decisions, max_neg, max_pos):
            assert d.suppressed == bool(mn > mp)

    def test_build_from_dual_memory(self, rng):
        mem = DualMemory(
            positive=unit_rows(rng, 40, 8),
            negative=unit_rows(rng, 100, 8),
            threshold_positives=unit_rows(rng, 5, 8),
        )
        proto = build_prototype_memory(mem, k_pos=16, k_neg=64, seed=0)
        assert proto.positive_centroids.shape == (16, 8)
        assert proto.negative_centroids.shape == (64, 8)
        assert proto.tau_cos == 0.80

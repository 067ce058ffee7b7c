"""Synthetic generator: exact label recovery, determinism, geometry limits."""

from __future__ import annotations

from collections import Counter

import numpy as np
import pytest

from owfilter.datamodel import save_embeddings, save_groundtruth, save_proposals
from owfilter.labeling import label_stream
from owfilter.synth import CELLS_PER_IMAGE, SynthConfig, generate


def test_label_fidelity_exact():
    cfg = SynthConfig(
        dim=16,
        n_pos=17,
        n_neg=23,
        n_known_as_unknown=11,
        n_amb=7,
        n_known_stream=5,
        images=3,
        seed=42,
    )
    proposals, gt, emb = generate(cfg)
    labeled = label_stream(proposals, gt)
    counts = Counter(lp.label for lp in labeled)
    assert counts == {"pos": 17, "neg": 23, "known_as_unknown": 11, "amb": 7}
    assert sum(1 for p in proposals if p.stream == "known") == 5


def test_embeddings_pass_ingestion(tmp_path):
    from owfilter.datamodel import load_embeddings

    cfg = SynthConfig(dim=8, n_pos=10, n_neg=10, images=2, seed=0)
    _, _, emb = generate(cfg)
    path = tmp_path / "emb.bin"
    save_embeddings(emb, path)
    loaded = load_embeddings(path)
    norms = np.linalg.norm(loaded.rows.astype(np.float64), axis=1)
    assert np.max(np.abs(norms - 1.0)) <= 1e-3


def test_deterministic_bit_identical(tmp_path):
    cfg = SynthConfig(dim=12, n_pos=30, n_neg=50, n_amb=5, images=4, seed=11)
    out = []
    for name in ("a", "b"):
        proposals, gt, emb = generate(cfg)
        d = tmp_path / name
        d.mkdir()
        save_proposals(proposals, d / "proposals.jsonl")
        save_groundtruth(gt, d / "groundtruth.jsonl")
        save_embeddings(emb, d / "embeddings.bin")
        out.append(d)
    for fname in ("proposals.jsonl", "groundtruth.jsonl", "embeddings.bin"):
        assert (out[0] / fname).read_bytes() == (out[1] / fname).read_bytes()


def test_impossible_geometry():
    cfg = SynthConfig(dim=8, n_pos=CELLS_PER_IMAGE + 1, n_neg=0, images=1, seed=0)
    with pytest.raises(ValueError, match="impossible geometry"):
        generate(cfg)


def test_embedding_indices_aligned():
    cfg = SynthConfig(dim=8, n_pos=5, n_neg=5, n_known_stream=3, images=2, seed=1)
    proposals, _, emb = generate(cfg)
    unknown = [p for p in proposals if p.stream == "unknown"]
    assert [p.embedding_index for p in unknown] == list(range(len(unknown)))
    assert emb.count == len(unknown)
    assert all(p.embedding_index is None for p in proposals if p.stream == "known")


def test_multimodal_positive_directions():
    cfg = SynthConfig(dim=16, n_pos=40, n_neg=10, images=2, seed=3, spread=0.01, pos_modes=4)
    proposals, _, emb = generate(cfg)
    pos_rows = emb.unit_rows64[:40]
    # consecutive positives cycle through the 4 sub-clusters
    same_mode = pos_rows[0] @ pos_rows[4]
    other_mode = pos_rows[0] @ pos_rows[1]
    assert same_mode > 0.99
    assert other_mode < 0.5


def test_explicit_direction_shape_validated():
    with pytest.raises(ValueError, match="pos_directions"):
        SynthConfig(dim=8, pos_directions=np.ones((2, 8)), pos_modes=3)


def test_image_prefix_partitions_ids():
    cfg_a = SynthConfig(dim=8, n_pos=4, n_neg=4, images=2, seed=0, image_prefix="cal")
    cfg_b = SynthConfig(dim=8, n_pos=4, n_neg=4, images=2, seed=0, image_prefix="ev")
    props_a, gt_a, _ = generate(cfg_a)
    props_b, gt_b, _ = generate(cfg_b)
    ids_a = {p.image_id for p in props_a} | {g.image_id for g in gt_a}
    ids_b = {p.image_id for p in props_b} | {g.image_id for g in gt_b}
    assert not ids_a & ids_b

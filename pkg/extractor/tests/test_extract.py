"""Adapter round-trip: outputs must pass the consumer's ingestion checks."""

from __future__ import annotations

import json

import numpy as np
import pytest
from PIL import Image

from owextract.config import ExtractorConfig
from owextract.dialects import parse_dump
from owextract.encoders import EncoderError, ToyEncoder, build_encoder
from owextract.extract import extract

from owfilter.datamodel import check_embedding_indices, load_embeddings, load_proposals


def paint_image(path, width=64, height=48, seed=0):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    Image.fromarray(pixels, "RGB").save(path)


@pytest.fixture
def fixture_dir(tmp_path):
    """Ten images and a dump of proposals over them, one box out of bounds."""
    images = tmp_path / "images"
    images.mkdir()
    dump = []
    for i in range(10):
        image_id = f"im{i}"
        paint_image(images / f"{image_id}.png", seed=i)
        dump.append(
            {
                "id": f"u{i}",
                "image_id": image_id,
                "bbox": [4.0, 4.0, 36.0, 30.0],
                "objectness": 0.5,
                "stream": "unknown",
            }
        )
        if i % 3 == 0:
            dump.append(
                {
                    "id": f"k{i}",
                    "image_id": image_id,
                    "bbox": [10.0, 8.0, 30.0, 40.0],
                    "objectness": 0.9,
                    "stream": "known",
                }
            )
    # exceeds the right/bottom edges; must be clipped with a warning
    dump.append(
        {
            "id": "edge",
            "image_id": "im0",
            "bbox": [50.0, 30.0, 90.0, 70.0],
            "objectness": 0.4,
            "stream": "unknown",
        }
    )
    dump_path = tmp_path / "dump.jsonl"
    dump_path.write_text("".join(json.dumps(o) + "\n" for o in dump))
    return tmp_path


def make_config(root, **overrides):
    base = dict(
        image_root=str(root / "images"),
        dump_path=str(root / "dump.jsonl"),
        out_proposals=str(root / "out/proposals.jsonl"),
        out_embeddings=str(root / "out/embeddings.bin"),
        encoder="toy:32",
        image_template="{image_id}.png",
    )
    base.update(overrides)
    return ExtractorConfig(**base)


def test_round_trip_passes_primary_ingestion(fixture_dir):
    with pytest.warns(UserWarning, match="clipped"):
        result = extract(make_config(fixture_dir))
    proposals = load_proposals(result.out_proposals)
    matrix = load_embeddings(result.out_embeddings)
    check_embedding_indices(proposals, matrix)
    assert matrix.count == len(proposals) == result.proposals
    assert matrix.dim == 32
    norms = np.linalg.norm(matrix.rows.astype(np.float64), axis=1)
    assert np.max(np.abs(norms - 1.0)) <= 1e-3
    assert [p.embedding_index for p in proposals] == list(range(len(proposals)))


def test_count_alignment_three_on_one_image(tmp_path):
    images = tmp_path / "images"
    images.mkdir()
    paint_image(images / "a.png")
    dump = [
        {"id": f"p{i}", "image_id": "a", "bbox": [i, 0, i + 10, 10], "objectness": 0.5, "stream": "unknown"}
        for i in range(3)
    ]
    (tmp_path / "dump.jsonl").write_text("".join(json.dumps(o) + "\n" for o in dump))
    result = extract(make_config(tmp_path))
    assert result.proposals == 3
    assert load_embeddings(result.out_embeddings).count == 3


def test_missing_image_is_error(fixture_dir):
    dump = {"id": "x", "image_id": "nothere", "bbox": [0, 0, 5, 5], "objectness": 0.1, "stream": "unknown"}
    (fixture_dir / "dump.jsonl").write_text(json.dumps(dump) + "\n")
    with pytest.raises(FileNotFoundError, match="missing image"):
        extract(make_config(fixture_dir))


def test_box_fully_outside_is_error(fixture_dir):
    dump = {"id": "x", "image_id": "im0", "bbox": [100, 100, 120, 120], "objectness": 0.1, "stream": "unknown"}
    (fixture_dir / "dump.jsonl").write_text(json.dumps(dump) + "\n")
    with pytest.raises(ValueError, match="outside"):
        extract(make_config(fixture_dir))


def test_deterministic(fixture_dir):
    with pytest.warns(UserWarning):
        first = extract(make_config(fixture_dir))
    bytes_a = (first.out_proposals.read_bytes(), first.out_embeddings.read_bytes())
    with pytest.warns(UserWarning):
        second = extract(make_config(fixture_dir))
    assert (second.out_proposals.read_bytes(), second.out_embeddings.read_bytes()) == bytes_a


def test_crop_policies_differ_on_non_square_boxes(fixture_dir):
    with pytest.warns(UserWarning):
        pad = extract(make_config(fixture_dir, crop_policy="square-pad"))
    rows_pad = load_embeddings(pad.out_embeddings).rows.copy()
    with pytest.warns(UserWarning):
        tight = extract(make_config(fixture_dir, crop_policy="tight"))
    rows_tight = load_embeddings(tight.out_embeddings).rows
    assert not np.array_equal(rows_pad, rows_tight)


def test_coco_results_dialect(tmp_path):
    entries = [
        {"image_id": 7, "bbox": [2.0, 3.0, 10.0, 5.0], "score": 0.8, "category_id": 81},
        {"image_id": 7, "bbox": [0.0, 0.0, 4.0, 4.0], "score": 0.9, "category_id": 1},
    ]
    path = tmp_path / "results.json"
    path.write_text(json.dumps(entries))
    dets = parse_dump(path, "coco-results", {"unknown_category_ids": [81]})
    assert dets[0].bbox == (2.0, 3.0, 12.0, 8.0)
    assert dets[0].stream == "unknown"
    assert dets[1].stream == "known"
    with pytest.raises(ValueError, match="unknown_category_ids"):
        parse_dump(path, "coco-results", {})


def test_unknown_dialect_and_encoder_errors(tmp_path):
    path = tmp_path / "x.jsonl"
    path.write_text("")
    with pytest.raises(ValueError, match="unknown dump dialect"):
        parse_dump(path, "nope")
    with pytest.raises(EncoderError, match="unknown encoder"):
        build_encoder("nope:1")
    with pytest.raises(EncoderError, match="model id"):
        build_encoder("hf:")


def test_toy_encoder_unit_norm_and_deterministic():
    enc = ToyEncoder(16)
    rng = np.random.default_rng(5)
    batch = rng.integers(0, 256, size=(4, enc.input_size, enc.input_size, 3), dtype=np.uint8)
    a = enc.encode(batch)
    b = ToyEncoder(16).encode(batch)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(np.linalg.norm(a.astype(np.float64), axis=1), 1.0, atol=1e-6)


def test_cli(fixture_dir, capsys):
    from owextract.cli import main

    cfg = make_config(fixture_dir)
    cfg_path = fixture_dir / "config.json"
    cfg_path.write_text(
        json.dumps(
            {
                "image_root": cfg.image_root,
                "dump_path": cfg.dump_path,
                "out_proposals": cfg.out_proposals,
                "out_embeddings": cfg.out_embeddings,
                "encoder": cfg.encoder,
                "image_template": cfg.image_template,
            }
        )
    )
    with pytest.warns(UserWarning):
        assert main(["extract", "--config", str(cfg_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["proposals"] == 15
    assert summary["clipped_boxes"] == 1

"""Command-line interface wiring the pipeline stages to interchange files."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines, calibration, datamodel, filtering, labeling, memory, metrics, pipeline, probe, synth

THREADS_ENV = "OWFILTER_THREADS"


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_inputs(args) -> tuple[list, list, datamodel.EmbeddingMatrix | None]:
    proposals = datamodel.load_proposals(args.proposals)
    groundtruth = (
        datamodel.load_groundtruth(args.groundtruth)
        if getattr(args, "groundtruth", None)
        else []
    )
    embeddings = None
    if getattr(args, "embeddings", None):
        embeddings = datamodel.load_embeddings(args.embeddings)
        datamodel.check_embedding_indices(proposals, embeddings)
    return proposals, groundtruth, embeddings


def _labels_of(proposals, groundtruth) -> dict[str, str]:
    return {
        lp.proposal.id: lp.label for lp in labeling.label_stream(proposals, groundtruth)
    }


def cmd_ingest_check(args) -> int:
    proposals, groundtruth, embeddings = _load_inputs(args)
    summary = {
        "proposals": len(proposals),
        "unknown_stream": sum(1 for p in proposals if p.stream == "unknown"),
        "known_stream": sum(1 for p in proposals if p.stream == "known"),
        "groundtruth": len(groundtruth),
        "future_boxes": sum(1 for g in groundtruth if g.category == "future"),
        "images": len({p.image_id for p in proposals} | {g.image_id for g in groundtruth}),
    }
    if embeddings is not None:
        summary["embedding_rows"] = embeddings.count
        summary["embedding_dim"] = embeddings.dim
    _emit(summary, args.out)
    return 0


def cmd_decompose(args) -> int:
    proposals, groundtruth, _ = _load_inputs(args)
    labeled = labeling.label_stream(proposals, groundtruth)
    image_ids = {p.image_id for p in proposals} | {g.image_id for g in groundtruth}
    report = labeling.decompose(labeled, image_ids)
    if args.out:
        datamodel.save_labeled(labeled, args.out)
    _emit(report.to_json(), None)
    return 0


def cmd_build_memory(args) -> int:
    proposals, groundtruth, embeddings = _load_inputs(args)
    if embeddings is None:
        raise SystemExit("--embeddings is required")
    labeled = labeling.label_stream(proposals, groundtruth)
    mem = memory.build_memory(
        labeled,
        embeddings,
        split_fraction=args.split_fraction,
        seed=args.seed,
        calibration_id=str(args.proposals),
    )
    memory.save_memory(mem, args.out)
    _emit(
        {
            "memory_file": str(args.out),
            "dim": mem.dim,
            "counts": {
                "positive": int(mem.positive.shape[0]),
                "negative": int(mem.negative.shape[0]),
                "threshold_positives": int(mem.threshold_positives.shape[0]),
            },
        },
        None,
    )
    return 0


def _score_summary(scores: np.ndarray) -> dict:
    qs = np.quantile(scores, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {
        "count": int(scores.size),
        "min": float(scores.min()),
        "q05": float(qs[0]),
        "q25": float(qs[1]),
        "median": float(qs[2]),
        "q75": float(qs[3]),
        "q95": float(qs[4]),
        "max": float(scores.max()),
    }


def cmd_calibrate(args) -> int:
    mem = memory.load_memory(args.memory)
    params = memory.LrtParams(k=args.k, temperature=args.temperature)
    scores = memory.lrt_scores(mem.threshold_positives, mem, params, args.threads)
    tau = calibration.calibrate_threshold(scores, args.alpha)
    _emit(
        {"alpha": args.alpha, "tau": tau, "calibration_scores": _score_summary(scores)},
        args.out,
    )
    return 0


def cmd_filter(args) -> int:
    proposals, groundtruth, embeddings = _load_inputs(args)
    if embeddings is None:
        raise SystemExit("--embeddings is required")
    mem = memory.load_memory(args.memory)
    params = memory.LrtParams(k=args.k, temperature=args.temperature)
    if args.tau is not None:
        tau = args.tau
    else:
        scores = memory.lrt_scores(mem.threshold_positives, mem, params, args.threads)
        tau = calibration.calibrate_threshold(scores, args.alpha)
    labels = _labels_of(proposals, groundtruth) if groundtruth else None
    decisions = filtering.filter_stream(
        proposals, embeddings, mem, params, tau, labels=labels, n_threads=args.threads
    )
    datamodel.save_decisions(decisions, args.out)
    suppressed = sum(1 for d in decisions if d.suppressed)
    _emit({"decisions": len(decisions), "suppressed": suppressed, "tau": float(tau)}, None)
    return 0


def cmd_evaluate(args) -> int:
    proposals, groundtruth, _ = _load_inputs(args)
    labeled = labeling.label_stream(proposals, groundtruth)
    gu = [g for g in groundtruth if g.category == "future"]
    image_count = len({p.image_id for p in proposals} | {g.image_id for g in groundtruth})
    if args.raw:
        report = metrics.evaluate_raw(labeled, gu, image_count)
    else:
        if not args.decisions:
            raise SystemExit("--decisions is required unless --raw is set")
        decisions = datamodel.load_decisions(args.decisions)
        report = metrics.evaluate(labeled, decisions, gu, image_count)
    _emit(report.to_json(), args.out)
    return 0


def cmd_sweep(args) -> int:
    proposals, groundtruth, embeddings = _load_inputs(args)
    if embeddings is None:
        raise SystemExit("--embeddings is required")
    mem = memory.load_memory(args.memory)
    params = memory.LrtParams(k=args.k, temperature=args.temperature)
    labeled = labeling.label_stream(proposals, groundtruth)
    gu = [g for g in groundtruth if g.category == "future"]
    image_count = len({p.image_id for p in proposals} | {g.image_id for g in groundtruth})
    alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    points = calibration.alpha_sweep(
        mem, params, labeled, embeddings, gu, image_count, alphas, args.threads
    )
    _emit({"points": [p.to_json() for p in points]}, args.out)
    return 0


def cmd_probe(args) -> int:
    embeddings = datamodel.load_embeddings(args.features)
    labeled = datamodel.load_labeled(args.labels_from)
    datamodel.check_embedding_indices((lp.proposal for lp in labeled), embeddings)
    result = probe.run_probe(
        labeled,
        embeddings,
        seed=args.seed,
        l2=args.l2,
        iters=args.iters,
        step=args.step,
    )
    out = result.to_json()
    out["objectness_auroc"] = probe.objectness_auroc(labeled)
    _emit(out, args.out)
    return 0


def cmd_baseline(args) -> int:
    proposals, groundtruth, embeddings = _load_inputs(args)
    labels = _labels_of(proposals, groundtruth) if groundtruth else None
    if args.method == "objectness":
        decisions = baselines.objectness_filter(proposals, args.threshold, labels=labels)
    else:
        if embeddings is None:
            raise SystemExit("--embeddings is required for the kmeans baseline")
        mem = memory.load_memory(args.memory)
        proto = baselines.build_prototype_memory(
            mem, k_pos=args.k_pos, k_neg=args.k_neg, tau_cos=args.tau, seed=args.seed
        )
        decisions = baselines.prototype_filter(proposals, embeddings, proto, labels=labels)
    datamodel.save_decisions(decisions, args.out)
    suppressed = sum(1 for d in decisions if d.suppressed)
    _emit({"decisions": len(decisions), "suppressed": suppressed}, None)
    return 0


def cmd_fuse(args) -> int:
    a = datamodel.load_embeddings(args.a)
    b = datamodel.load_embeddings(args.b)
    fused = memory.fuse_embeddings(a, b, args.mode)
    datamodel.save_embeddings(fused, args.out)
    _emit({"out": str(args.out), "dim": fused.dim, "count": fused.count}, None)
    return 0


def cmd_synth(args) -> int:
    cfg = synth.SynthConfig.from_json(args.config)
    proposals, groundtruth, matrix = synth.generate(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    datamodel.save_proposals(proposals, out_dir / "proposals.jsonl")
    datamodel.save_groundtruth(groundtruth, out_dir / "groundtruth.jsonl")
    datamodel.save_embeddings(matrix, out_dir / "embeddings.bin")
    with open(out_dir / "synth_config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _emit(
        {
            "out_dir": str(out_dir),
            "proposals": len(proposals),
            "groundtruth": len(groundtruth),
            "embedding_rows": matrix.count,
        },
        None,
    )
    return 0


def cmd_run(args) -> int:
    cfg = pipeline.RunConfig.from_json(args.config)
    if args.threads is not None:
        cfg = replace(cfg, n_threads=args.threads)
    result = pipeline.run_pipeline(cfg)
    sys.stdout.write(pipeline.format_report_table(result) + "\n")
    return 0


def _add_io(parser, groundtruth_required=False, embeddings=True) -> None:
    parser.add_argument("--proposals", required=True, help="proposals.jsonl path")
    parser.add_argument(
        "--groundtruth",
        required=groundtruth_required,
        default=None,
        help="groundtruth.jsonl path",
    )
    if embeddings:
        parser.add_argument("--embeddings", default=None, help="binary embedding matrix path")


def _add_params(parser) -> None:
    parser.add_argument("--k", type=int, default=memory.DEFAULT_K, help="neighbor count")
    parser.add_argument(
        "--temperature", type=float, default=memory.DEFAULT_TEMPERATURE, help="kernel temperature"
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help=f"scoring threads (default from ${THREADS_ENV})",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="owfilter",
        description="Unknown-stream filtering and evaluation for open-world detectors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="validate interchange files")
    _add_io(p)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ingest_check)

    p = sub.add_parser("decompose", help="label the unknown stream and report its makeup")
    _add_io(p, groundtruth_required=True, embeddings=False)
    p.add_argument("--out", default=None, help="optional labeled-proposals output path")
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("build-memory", help="build and persist the dual memory")
    _add_io(p, groundtruth_required=True)
    p.add_argument("--split-fraction", type=float, default=memory.DEFAULT_SPLIT_FRACTION)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="memory file path")
    p.set_defaults(fn=cmd_build_memory)

    p = sub.add_parser("calibrate", help="select the suppression threshold")
    p.add_argument("--memory", required=True)
    p.add_argument("--alpha", type=float, default=calibration.DEFAULT_ALPHA)
    _add_params(p)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("filter", help="apply the filter to a proposal stream")
    _add_io(p)
    p.add_argument("--memory", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--tau", type=float, default=None)
    group.add_argument("--alpha", type=float, default=None)
    _add_params(p)
    p.add_argument("--out", required=True, help="decisions.jsonl output path")
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("evaluate", help="compute the metric suite from decisions")
    _add_io(p, groundtruth_required=True, embeddings=False)
    p.add_argument("--decisions", default=None)
    p.add_argument("--raw", action="store_true", help="score the unfiltered stream")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep", help="operating points over a budget grid")
    _add_io(p, groundtruth_required=True)
    p.add_argument("--memory", required=True)
    p.add_argument("--alphas", required=True, help="comma-separated increasing budgets")
    _add_params(p)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("probe", help="grouped-fold linear probe diagnostic")
    p.add_argument("--features", required=True, help="binary embedding matrix path")
    p.add_argument(
        "--labels-from", required=True, help="labeled proposals (decompose --out)"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l2", type=float, default=probe.DEFAULT_L2)
    p.add_argument("--iters", type=int, default=probe.DEFAULT_ITERS)
    p.add_argument("--step", type=float, default=probe.DEFAULT_STEP)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("baseline", help="comparison filters")
    baseline_sub = p.add_subparsers(dest="method", required=True)

    b = baseline_sub.add_parser("objectness", help="objectness thresholding")
    _add_io(b, embeddings=False)
    b.add_argument("--threshold", type=float, default=0.60)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_baseline)

    b = baseline_sub.add_parser("kmeans", help="centroid prototype filter")
    _add_io(b)
    b.add_argument("--memory", required=True)
    b.add_argument("--k-pos", type=int, default=baselines.DEFAULT_K_POS)
    b.add_argument("--k-neg", type=int, default=baselines.DEFAULT_K_NEG)
    b.add_argument("--tau", type=float, default=baselines.DEFAULT_TAU_COS)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("fuse", help="fuse two aligned embedding matrices")
    p.add_argument("--a", required=True, help="first embedding matrix")
    p.add_argument("--b", required=True, help="second embedding matrix")
    p.add_argument("--mode", choices=["concat", "average"], default="concat")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

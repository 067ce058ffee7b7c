"""End-to-end run: label, build memories, calibrate, filter, evaluate.

Every stage consumes and produces interchange files, so any stage can be
rerun in isolation through the CLI. The calibration and evaluation inputs
must be image-disjoint; sharing even one image id is a hard error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .calibration import DEFAULT_ALPHA, calibrate_threshold
from .datamodel import (
    GroundTruthBox,
    ProposalRecord,
    check_embedding_indices,
    load_embeddings,
    load_groundtruth,
    load_proposals,
    save_decisions,
    save_labeled,
)
from .filtering import filter_stream
from .labeling import label_stream
from .memory import (
    DEFAULT_K,
    DEFAULT_SPLIT_FRACTION,
    DEFAULT_TEMPERATURE,
    LrtParams,
    build_memory,
    lrt_scores,
    save_memory,
)
from .metrics import MetricsReport, evaluate, evaluate_raw


@dataclass(frozen=True)
class RunConfig:
    calibration_proposals: str
    calibration_groundtruth: str
    calibration_embeddings: str
    eval_proposals: str
    eval_groundtruth: str
    eval_embeddings: str
    out_dir: str
    k: int = DEFAULT_K
    temperature: float = DEFAULT_TEMPERATURE
    alpha: float = DEFAULT_ALPHA
    split_fraction: float = DEFAULT_SPLIT_FRACTION
    seed: int = 0
    n_threads: int = 1

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def to_json(self) -> dict:
        return {
            "calibration_proposals": self.calibration_proposals,
            "calibration_groundtruth": self.calibration_groundtruth,
            "calibration_embeddings": self.calibration_embeddings,
            "eval_proposals": self.eval_proposals,
            "eval_groundtruth": self.eval_groundtruth,
            "eval_embeddings": self.eval_embeddings,
            "out_dir": self.out_dir,
            "k": self.k,
            "temperature": self.temperature,
            "alpha": self.alpha,
            "split_fraction": self.split_fraction,
            "seed": self.seed,
            "n_threads": self.n_threads,
        }


@dataclass(frozen=True)
class PipelineResult:
    raw_report: MetricsReport
    filtered_report: MetricsReport
    tau: float
    alpha: float
    out_dir: Path

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "tau": self.tau,
            "raw": self.raw_report.to_json(),
            "filtered": self.filtered_report.to_json(),
        }


def image_ids_of(
    proposals: Sequence[ProposalRecord], groundtruth: Sequence[GroundTruthBox]
) -> set[str]:
    return {p.image_id for p in proposals} | {g.image_id for g in groundtruth}


def check_image_disjoint(calibration: set[str], evaluation: set[str]) -> None:
    shared = calibration & evaluation
    if shared:
        example = sorted(shared)[0]
        raise ValueError(
            f"calibration and evaluation inputs must be image-disjoint; "
            f"{len(shared)} shared image id(s), e.g. '{example}'"
        )


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = LrtParams(k=cfg.k, temperature=cfg.temperature)

    def stage(name: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise RuntimeError(f"stage '{name}' failed: {exc}") from exc

    cal_props = stage("load-calibration", load_proposals, cfg.calibration_proposals)
    cal_gt = stage("load-calibration", load_groundtruth, cfg.calibration_groundtruth)
    cal_emb = stage("load-calibration", load_embeddings, cfg.calibration_embeddings)
    stage("load-calibration", check_embedding_indices, cal_props, cal_emb)

    eval_props = stage("load-evaluation", load_proposals, cfg.eval_proposals)
    eval_gt = stage("load-evaluation", load_groundtruth, cfg.eval_groundtruth)
    eval_emb = stage("load-evaluation", load_embeddings, cfg.eval_embeddings)
    stage("load-evaluation", check_embedding_indices, eval_props, eval_emb)

    check_image_disjoint(
        image_ids_of(cal_props, cal_gt), image_ids_of(eval_props, eval_gt)
    )

    cal_labeled = stage("label-calibration", label_stream, cal_props, cal_gt)
    eval_labeled = stage("label-evaluation", label_stream, eval_props, eval_gt)
    stage("label-calibration", save_labeled, cal_labeled, out_dir / "calibration_labeled.jsonl")
    stage("label-evaluation", save_labeled, eval_labeled, out_dir / "eval_labeled.jsonl")

    mem = stage(
        "build-memory",
        build_memory,
        cal_labeled,
        cal_emb,
        split_fraction=cfg.split_fraction,
        seed=cfg.seed,
        calibration_id=str(cfg.calibration_proposals),
    )
    stage("build-memory", save_memory, mem, out_dir / "memory.bin")

    thr_scores = stage(
        "calibrate", lrt_scores, mem.threshold_positives, mem, params, cfg.n_threads
    )
    tau = stage("calibrate", calibrate_threshold, thr_scores, cfg.alpha)

    labels = {lp.proposal.id: lp.label for lp in eval_labeled}
    decisions = stage(
        "filter",
        filter_stream,
        eval_props,
        eval_emb,
        mem,
        params,
        tau,
        labels=labels,
        n_threads=cfg.n_threads,
    )
    stage("filter", save_decisions, decisions, out_dir / "decisions.jsonl")

    eval_gu = [g for g in eval_gt if g.category == "future"]
    image_count = len({p.image_id for p in eval_props} | {g.image_id for g in eval_gt})
    raw_report = stage("evaluate", evaluate_raw, eval_labeled, eval_gu, image_count)
    filtered_report = stage("evaluate", evaluate, eval_labeled, decisions, eval_gu, image_count)

    result = PipelineResult(
        raw_report=raw_report,
        filtered_report=filtered_report,
        tau=float(tau),
        alpha=cfg.alpha,
        out_dir=out_dir,
    )
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(result.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def format_report_table(result: PipelineResult) -> str:
    """Raw and filtered metrics side by side, one line per stream."""

    def fmt(v: float | None, pct: bool = False) -> str:
        if v is None:
            return "--"
        return f"{100.0 * v:.1f}%" if pct else f"{v:.3f}"

    rows = [
        ("stream", "FUPI", "UDP", "NMH", "U-Recall", "SG"),
        (
            "raw",
            fmt(result.raw_report.fupi),
            fmt(result.raw_report.udp),
            "--",
            fmt(result.raw_report.u_recall),
            "--",
        ),
        (
            "filtered",
            fmt(result.filtered_report.fupi),
            fmt(result.filtered_report.udp),
            fmt(result.filtered_report.nmh, pct=True),
            fmt(result.filtered_report.u_recall),
            fmt(result.filtered_report.sg, pct=True),
        ),
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.append(f"alpha={result.alpha:g}  tau={result.tau:.6g}")
    return "\n".join(lines)

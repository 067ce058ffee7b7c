"""Post-hoc unknown-stream filtering and evaluation for open-world detectors."""

from .datamodel import (
    BBox,
    EmbeddingMatrix,
    FilterDecision,
    FormatError,
    GroundTruthBox,
    LabeledProposal,
    ProposalRecord,
    load_decisions,
    load_embeddings,
    load_groundtruth,
    load_proposals,
    save_decisions,
    save_embeddings,
    save_groundtruth,
    save_proposals,
)
from .labeling import StreamDecomposition, decompose, iou, label_proposal, label_stream
from .memory import (
    DualMemory,
    LrtParams,
    build_memory,
    fuse_embeddings,
    knn_logdensity,
    load_memory,
    lrt_score,
    lrt_scores,
    save_memory,
)
from .calibration import OperatingPoint, alpha_sweep, calibrate_threshold
from .filtering import filter_stream, retained_stream
from .metrics import MetricsReport, auroc, evaluate, overlap_coefficient, u_recall
from .baselines import PrototypeMemory, kmeans, objectness_filter, prototype_filter
from .probe import ProbeResult, fit_logistic, group_kfold, run_probe
from .synth import SynthConfig, generate
from .pipeline import PipelineResult, RunConfig, run_pipeline

__version__ = "0.1.0"

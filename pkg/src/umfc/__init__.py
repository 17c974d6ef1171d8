"""Training-free removal of domain bias from frozen vision-language embeddings.

The toolkit works on precomputed feature matrices only.  Image rows are
recentered on their nearest unlabeled cluster mean and renormalized;
class text rows are shifted by the average cluster-to-center transition
so both sides land in a domain-neutral frame.  Everything runs in three
regimes over the same statistics: fit once and apply, calibrate the test
set on itself, or adapt batch by batch as data streams in.
"""

from .calib import (
    CalibratedTextBank,
    CalibrationState,
    calibrate_bank,
    classify,
    classify_batch,
    compute_text_shifts,
    ifc_calibrate,
    normalize_shift_rows,
    tfc_calibrate,
)
from .clustering import (
    Assignment,
    ClusterModel,
    assign_batch,
    assign_nearest,
    batch_cluster_means,
    inertia,
    kmeans_fit,
)
from .core import (
    DEGENERACY_EPS,
    EmbeddingMatrix,
    Prediction,
    Temperature,
    TextBank,
    cosine_sim,
    l2_normalize,
    l2_normalize_rows,
    mean_rows,
    softmax_temp,
)
from .diagnostics import (
    DirectionTable,
    DomainAccuracyTable,
    Histogram,
    ProbeResult,
    balanced_subsample,
    domain_bias_probe,
    kl_to_uniform,
    per_domain_accuracy,
    prediction_histogram,
    transition_direction_check,
)
from .engine import (
    EngineConfig,
    StreamState,
    apply_state,
    fit_unsupervised,
    run_stream,
    stream_init,
    stream_step,
    transduce,
)
from .errors import (
    AllShiftsDegenerate,
    BadMagic,
    DegenerateFeature,
    DegenerateVector,
    DimensionTooSmall,
    DuplicateName,
    EmptyDomain,
    EmptySelection,
    FormatError,
    LabelCountMismatch,
    MissingLabels,
    NameCountMismatch,
    NonFiniteInput,
    NonFinitePayload,
    TooFewSamples,
    TruncatedPayload,
    UmfcError,
    UnsupportedVersion,
)
from .io import (
    read_embeddings,
    read_embeddings_csv,
    read_names,
    read_text_bank,
    restore_state,
    snapshot_state,
    write_embeddings,
    write_embeddings_csv,
    write_text_bank,
)
from .synth import (
    SyntheticDataset,
    SynthSpec,
    default_benchmark,
    generate_benchmark,
    oracle_transduce,
    oracle_zero_shot,
    pairwise_directions,
)

__version__ = "0.1.0"

__all__ = [
    "AllShiftsDegenerate",
    "Assignment",
    "BadMagic",
    "CalibratedTextBank",
    "CalibrationState",
    "ClusterModel",
    "DEGENERACY_EPS",
    "DegenerateFeature",
    "DegenerateVector",
    "DimensionTooSmall",
    "DirectionTable",
    "DomainAccuracyTable",
    "DuplicateName",
    "EmbeddingMatrix",
    "EmptyDomain",
    "EmptySelection",
    "EngineConfig",
    "FormatError",
    "Histogram",
    "LabelCountMismatch",
    "MissingLabels",
    "NameCountMismatch",
    "NonFiniteInput",
    "NonFinitePayload",
    "Prediction",
    "ProbeResult",
    "StreamState",
    "SynthSpec",
    "SyntheticDataset",
    "Temperature",
    "TextBank",
    "TooFewSamples",
    "TruncatedPayload",
    "UmfcError",
    "UnsupportedVersion",
    "apply_state",
    "assign_batch",
    "assign_nearest",
    "balanced_subsample",
    "batch_cluster_means",
    "calibrate_bank",
    "classify",
    "classify_batch",
    "compute_text_shifts",
    "cosine_sim",
    "default_benchmark",
    "domain_bias_probe",
    "fit_unsupervised",
    "generate_benchmark",
    "ifc_calibrate",
    "inertia",
    "kl_to_uniform",
    "kmeans_fit",
    "l2_normalize",
    "l2_normalize_rows",
    "mean_rows",
    "normalize_shift_rows",
    "oracle_transduce",
    "oracle_zero_shot",
    "pairwise_directions",
    "per_domain_accuracy",
    "prediction_histogram",
    "read_embeddings",
    "read_embeddings_csv",
    "read_names",
    "read_text_bank",
    "restore_state",
    "run_stream",
    "snapshot_state",
    "softmax_temp",
    "stream_init",
    "stream_step",
    "tfc_calibrate",
    "transduce",
    "transition_direction_check",
    "write_embeddings",
    "write_embeddings_csv",
    "write_text_bank",
]

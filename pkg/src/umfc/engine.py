"""Calibration engine: one-shot fitting, transduction, and streaming.

Three ways to use the same math:

* fit_unsupervised - estimate cluster means, the global mean, and text
  shifts from an unlabeled training matrix, then apply them to anything.
* transduce - fit on the evaluation matrix itself and predict it in one
  call.
* stream_init / stream_step - consume batches as they arrive, keeping
  either exact running statistics ("memory" mode) or an exponential
  moving average ("ema" mode), recalibrating the text bank after every
  batch.
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Tuple, Union

import numpy as np

from .calib import (
    CalibratedTextBank,
    CalibrationState,
    calibrate_bank,
    ifc_calibrate,
    normalize_shift_rows,
)
from .calib import classify_batch
from .clustering import (
    Assignment,
    ClusterModel,
    assign_batch,
    assign_nearest,
    batch_cluster_means,
    kmeans_fit,
    _cluster_sums,
)
from .core import (
    DEGENERACY_EPS,
    EmbeddingMatrix,
    Prediction,
    TextBank,
    l2_normalize,
    l2_normalize_rows,
    mean_rows,
)
from .errors import DegenerateVector

__all__ = [
    "EngineConfig",
    "StreamState",
    "fit_unsupervised",
    "apply_state",
    "transduce",
    "stream_init",
    "stream_step",
    "run_stream",
]

MODES = ("memory", "ema")


@dataclass(frozen=True)
class EngineConfig:
    """Knobs shared by every regime.

    clusters is the number of cluster means estimated from images.  tau
    is the softmax temperature (0.01 matches the usual logit scale of
    100 used with contrastive image-text encoders).  eta only matters in
    ema mode.  ema_additive switches the moving average to the raw
    additive update c + eta*c_batch for auditing; it lets prototype
    norms grow without bound, so it is off by default.
    """

    clusters: int = 6
    tau: float = 0.01
    eta: float = 0.1
    mode: str = "memory"
    batch_size: int = 100
    seed: int = 0
    max_iters: int = 100
    tol: float = 1e-4
    normalize_input: bool = True
    normalize_shifts: bool = False
    ema_additive: bool = False

    def __post_init__(self):
        if self.clusters < 1:
            raise ValueError(f"clusters must be >= 1, got {self.clusters}")
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ValueError(f"tau must be finite and > 0, got {self.tau}")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")


@dataclass(frozen=True)
class StreamState:
    """Immutable snapshot of a stream between batches.

    Before enough samples have arrived to place the cluster means, model
    and calib are None and bootstrap_buffer holds what has been seen.
    In memory mode running_sums / running_counts / global_sum are the
    exact accumulators behind the prototypes; ema mode allocates none of
    them.  Invariant (memory mode): every prototype row m with
    running_counts[m] > 0 equals running_sums[m] / running_counts[m].
    """

    model: Optional[ClusterModel] = None
    calib: Optional[CalibrationState] = None
    running_sums: Optional[np.ndarray] = None
    running_counts: Optional[np.ndarray] = None
    global_sum: Optional[np.ndarray] = None
    samples_seen: int = 0
    batches_seen: int = 0
    bootstrap_buffer: Optional[np.ndarray] = None


def _as_rows(data: Union[EmbeddingMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(data, EmbeddingMatrix):
        return data.data
    out = np.asarray(data, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {out.shape}")
    return out


def _predict_rows(
    feats: np.ndarray,
    clusters: np.ndarray,
    cluster_means: np.ndarray,
    bank_data: np.ndarray,
    tau: float,
    extra_flags: tuple = (),
) -> List[Prediction]:
    """Calibrate rows against their assigned cluster mean and classify.

    Rows whose residual collapses (feature sits on the mean) fall back
    to the plain normalized feature and are flagged "degenerate".
    """
    residuals = feats - cluster_means[clusters]
    norms = np.sqrt(np.add.reduce(residuals * residuals, axis=1))
    ok = norms >= DEGENERACY_EPS
    cal = np.empty_like(feats)
    cal[ok] = residuals[ok] / norms[ok, None]
    fallback = np.flatnonzero(~ok)
    for i in fallback:
        cal[i] = l2_normalize(feats[i])
    probs = classify_batch(cal, bank_data, tau)
    pred_labels = np.argmax(probs, axis=1)
    out = []
    bad = set(fallback.tolist())
    for i in range(feats.shape[0]):
        flags = extra_flags + ("degenerate",) if i in bad else extra_flags
        out.append(
            Prediction(
                probs=probs[i],
                label=int(pred_labels[i]),
                cluster=int(clusters[i]),
                flags=flags,
            )
        )
    return out


def _zero_shot_rows(
    feats: np.ndarray, bank_data: np.ndarray, tau: float, flags: tuple
) -> List[Prediction]:
    probs = classify_batch(feats, bank_data, tau)
    pred_labels = np.argmax(probs, axis=1)
    return [
        Prediction(probs=probs[i], label=int(pred_labels[i]), cluster=-1, flags=flags)
        for i in range(feats.shape[0])
    ]


def _bank_shifts(state_shifts: np.ndarray, cfg: EngineConfig) -> np.ndarray:
    if cfg.normalize_shifts:
        return normalize_shift_rows(state_shifts)
    return state_shifts


def _fit(
    x: np.ndarray, bank: TextBank, cfg: EngineConfig
) -> Tuple[CalibrationState, ClusterModel, CalibratedTextBank, Assignment]:
    model, asg = kmeans_fit(x, cfg.clusters, cfg.seed, cfg.max_iters, cfg.tol)
    mu_avg = mean_rows(x)
    state = CalibrationState.from_means(model.centroids, mu_avg)
    cal_bank = calibrate_bank(bank, _bank_shifts(state.text_shifts, cfg))
    return state, model, cal_bank, asg


def fit_unsupervised(
    train: Union[EmbeddingMatrix, np.ndarray], bank: TextBank, cfg: EngineConfig
) -> Tuple[CalibrationState, ClusterModel, CalibratedTextBank]:
    """Estimate calibration statistics from an unlabeled training matrix.

    The global mean is taken over every training row (not over the
    cluster means), so unequal cluster sizes weigh in proportionally.
    """
    x = _as_rows(train)
    if cfg.normalize_input:
        x = l2_normalize_rows(x)
    state, model, cal_bank, _ = _fit(x, bank, cfg)
    return state, model, cal_bank


def apply_state(
    state: CalibrationState,
    model: ClusterModel,
    f: np.ndarray,
    bank: Union[TextBank, CalibratedTextBank],
    tau: float,
    normalize_input: bool = True,
) -> Prediction:
    """Calibrate and classify a single feature against a fitted state.

    bank should already be calibrated (the third output of
    fit_unsupervised); any bank is classified as given.  A feature that
    coincides with its cluster mean cannot be re-expressed as a
    direction, so it falls back to plain normalization and the
    prediction is flagged "degenerate".
    """
    f = np.asarray(f, dtype=np.float64)
    if normalize_input:
        f = l2_normalize(f)
    cluster = assign_nearest(model, f)
    flags = ()
    try:
        f_cal = ifc_calibrate(f, state.cluster_means[cluster])
    except DegenerateVector:
        f_cal = l2_normalize(f)
        flags = ("degenerate",)
    probs = classify_batch(f_cal[None, :], bank.data, tau)[0]
    return Prediction(probs=probs, label=int(np.argmax(probs)), cluster=cluster, flags=flags)


def transduce(
    test: Union[EmbeddingMatrix, np.ndarray], bank: TextBank, cfg: EngineConfig
) -> Tuple[List[Prediction], CalibrationState]:
    """Fit on the evaluation matrix itself, then predict every row of it."""
    x = _as_rows(test)
    if cfg.normalize_input:
        x = l2_normalize_rows(x)
    state, model, cal_bank, asg = _fit(x, bank, cfg)
    preds = _predict_rows(x, asg.labels, state.cluster_means, cal_bank.data, cfg.tau)
    return preds, state


def stream_init(cfg: EngineConfig) -> StreamState:
    """Fresh stream with nothing seen yet."""
    return StreamState()


def _seeded_state(seeds: np.ndarray, cfg: EngineConfig, batches_seen: int) -> StreamState:
    """Stand up a model from the first `clusters` samples of a slow stream.

    Each seed sample becomes its own cluster (and, in memory mode, is
    absorbed into the accumulators as that cluster's first member).  The
    calibration state treats the seeding as a batch where every cluster
    appeared once.
    """
    m = cfg.clusters
    centroids = seeds.copy()
    counts = np.ones(m, dtype=np.int64)
    model = ClusterModel(centroids=centroids, counts=counts)
    if cfg.mode == "memory":
        running_sums = seeds.copy()
        running_counts = counts.copy()
        global_sum = np.sum(seeds, axis=0)
        mu_avg = global_sum / m
    else:
        running_sums = None
        running_counts = None
        global_sum = None
        mu_avg = np.sum(centroids, axis=0) / m
    calib = CalibrationState.from_means(centroids, mu_avg)
    return StreamState(
        model=model,
        calib=calib,
        running_sums=running_sums,
        running_counts=running_counts,
        global_sum=global_sum,
        samples_seen=m,
        batches_seen=batches_seen,
        bootstrap_buffer=None,
    )


def _advance(
    state: StreamState, x: np.ndarray, bank: TextBank, cfg: EngineConfig
) -> Tuple[List[Prediction], StreamState]:
    """One post-bootstrap batch: assign, update statistics, recalibrate, predict."""
    m = cfg.clusters
    labels = assign_batch(state.model, x).labels
    batch_means, batch_counts = batch_cluster_means(x, labels, m)
    present = batch_counts > 0

    if cfg.mode == "memory":
        batch_sums, _ = _cluster_sums(x, labels, m)
        running_sums = state.running_sums + batch_sums
        running_counts = state.running_counts + batch_counts
        prototypes = state.model.centroids.copy()
        nonzero = running_counts > 0
        prototypes[nonzero] = running_sums[nonzero] / running_counts[nonzero, None]
        global_sum = state.global_sum + np.sum(x, axis=0)
        samples_seen = state.samples_seen + x.shape[0]
        mu_avg = global_sum / samples_seen
    else:
        running_sums = None
        running_counts = None
        global_sum = None
        prototypes = state.model.centroids.copy()
        if cfg.ema_additive:
            prototypes[present] = prototypes[present] + cfg.eta * batch_means[present]
        else:
            prototypes[present] = (1.0 - cfg.eta) * prototypes[present] + cfg.eta * batch_means[present]
        samples_seen = state.samples_seen + x.shape[0]
        mu_avg = np.sum(prototypes, axis=0) / m

    # shift rows refresh only for clusters that appeared in this batch;
    # the others keep the value from their last appearance
    if state.calib is not None:
        shifts = state.calib.text_shifts.copy()
    else:
        shifts = np.zeros_like(prototypes)
    shifts[present] = prototypes[present] - mu_avg

    calib = CalibrationState(cluster_means=prototypes, global_mean=mu_avg, text_shifts=shifts)
    cal_bank = calibrate_bank(bank, _bank_shifts(shifts, cfg))
    preds = _predict_rows(x, labels, prototypes, cal_bank.data, cfg.tau)

    counts_total = state.model.counts + batch_counts
    model = ClusterModel(centroids=prototypes, counts=counts_total)
    new_state = replace(
        state,
        model=model,
        calib=calib,
        running_sums=running_sums,
        running_counts=running_counts,
        global_sum=global_sum,
        samples_seen=samples_seen,
        batches_seen=state.batches_seen + 1,
        bootstrap_buffer=None,
    )
    return preds, new_state


def stream_step(
    state: StreamState,
    batch: Union[EmbeddingMatrix, np.ndarray],
    bank: TextBank,
    cfg: EngineConfig,
) -> Tuple[List[Prediction], StreamState]:
    """Consume one batch and return its predictions plus the next state.

    Until a model exists: a first batch with at least `clusters` samples
    is clustered directly; smaller batches are buffered and answered
    with plain zero-shot predictions flagged "uncalibrated".  The first
    `clusters` samples overall become the initial cluster means, and any
    remainder of the completing batch is processed normally.  Buffered
    samples are never re-predicted.
    """
    x = _as_rows(batch)
    if cfg.normalize_input:
        x = l2_normalize_rows(x)

    if state.model is not None:
        return _advance(state, x, bank, cfg)

    # bootstrap path
    if state.bootstrap_buffer is None and x.shape[0] >= cfg.clusters:
        model, _ = kmeans_fit(x, cfg.clusters, cfg.seed, cfg.max_iters, cfg.tol)
        if cfg.mode == "memory":
            d = x.shape[1]
            base = replace(
                state,
                model=model,
                running_sums=np.zeros((cfg.clusters, d)),
                running_counts=np.zeros(cfg.clusters, dtype=np.int64),
                global_sum=np.zeros(d),
            )
        else:
            base = replace(state, model=model)
        base = replace(base, model=ClusterModel(model.centroids, np.zeros(cfg.clusters, dtype=np.int64)))
        return _advance(base, x, bank, cfg)

    buffered = state.bootstrap_buffer
    have = 0 if buffered is None else buffered.shape[0]
    need = cfg.clusters - have
    if x.shape[0] < need:
        # still short: buffer and answer zero-shot
        buf = x.copy() if buffered is None else np.vstack([buffered, x])
        preds = _zero_shot_rows(x, bank.data, cfg.tau, ("uncalibrated",))
        new_state = replace(
            state,
            bootstrap_buffer=buf,
            samples_seen=state.samples_seen + x.shape[0],
            batches_seen=state.batches_seen + 1,
        )
        return preds, new_state

    # this batch completes the bootstrap
    seed_part = x[:need]
    seeds = seed_part if buffered is None else np.vstack([buffered, seed_part])
    preds = _zero_shot_rows(seed_part, bank.data, cfg.tau, ("uncalibrated",))
    seeded = _seeded_state(seeds, cfg, state.batches_seen)
    rest = x[need:]
    if rest.shape[0]:
        rest_preds, new_state = _advance(seeded, rest, bank, cfg)
        # _advance counted the batch; seeding itself does not add one
        preds = preds + rest_preds
    else:
        new_state = replace(seeded, batches_seen=seeded.batches_seen + 1)
    return preds, new_state


def run_stream(
    test: Union[EmbeddingMatrix, np.ndarray],
    bank: TextBank,
    cfg: EngineConfig,
) -> Tuple[List[Prediction], StreamState]:
    """Feed a matrix through stream_step in batch_size slices, in order."""
    x = _as_rows(test)
    state = stream_init(cfg)
    preds: List[Prediction] = []
    for start in range(0, x.shape[0], cfg.batch_size):
        batch_preds, state = stream_step(state, x[start : start + cfg.batch_size], bank, cfg)
        preds.extend(batch_preds)
    return preds, state

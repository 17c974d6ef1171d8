"""Measurement helpers: accuracy breakdowns, bias probes, sanity checks.

Nothing here changes data; these functions only report.  Tables render
to UTF-8 TSV (the probe, which is naturally a probability table, renders
to CSV), one record per row, so output can be piped into anything.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .calib import CalibratedTextBank
from .core import EmbeddingMatrix, Prediction, TextBank, cosine_sim, mean_rows, softmax_temp
from .errors import EmptyDomain, MissingLabels

__all__ = [
    "DomainAccuracyTable",
    "Histogram",
    "ProbeResult",
    "DirectionTable",
    "per_domain_accuracy",
    "prediction_histogram",
    "domain_bias_probe",
    "transition_direction_check",
    "balanced_subsample",
    "kl_to_uniform",
]


def _pred_labels(predictions) -> np.ndarray:
    if len(predictions) and isinstance(predictions[0], Prediction):
        return np.asarray([p.label for p in predictions], dtype=np.int64)
    return np.asarray(predictions, dtype=np.int64)


@dataclass
class DomainAccuracyTable:
    domains: np.ndarray
    correct: np.ndarray
    totals: np.ndarray

    @property
    def accuracies(self) -> np.ndarray:
        return self.correct / self.totals

    def overall(self, micro: bool = False) -> float:
        """Macro (mean of per-domain accuracies) unless micro is requested."""
        if micro:
            return float(self.correct.sum() / self.totals.sum())
        return float(np.mean(self.accuracies))

    def to_tsv(self, micro: bool = False) -> str:
        lines = ["domain\tcorrect\ttotal\taccuracy"]
        for z, c, t, a in zip(self.domains, self.correct, self.totals, self.accuracies):
            lines.append(f"{z}\t{c}\t{t}\t{a:.6f}")
        tag = "micro" if micro else "macro"
        lines.append(f"overall_{tag}\t{self.correct.sum()}\t{self.totals.sum()}\t{self.overall(micro):.6f}")
        return "\n".join(lines) + "\n"


def per_domain_accuracy(
    predictions,
    class_labels: Optional[np.ndarray],
    domain_labels: Optional[np.ndarray],
) -> DomainAccuracyTable:
    """Accuracy per domain id.  Requires complete class and domain labels."""
    pred = _pred_labels(predictions)
    if class_labels is None or domain_labels is None:
        raise MissingLabels("per-domain accuracy needs class and domain labels")
    truth = np.asarray(class_labels, dtype=np.int64)
    dom = np.asarray(domain_labels, dtype=np.int64)
    if truth.shape != pred.shape or dom.shape != pred.shape:
        raise ValueError("predictions and labels have mismatched lengths")
    if (truth < 0).any() or (dom < 0).any():
        raise MissingLabels("some rows are missing a class or domain label")
    domains = np.unique(dom)
    correct = np.zeros(domains.size, dtype=np.int64)
    totals = np.zeros(domains.size, dtype=np.int64)
    for i, z in enumerate(domains):
        sel = dom == z
        totals[i] = int(sel.sum())
        correct[i] = int(np.sum(pred[sel] == truth[sel]))
    return DomainAccuracyTable(domains=domains, correct=correct, totals=totals)


@dataclass
class Histogram:
    counts: np.ndarray

    def top(self, k: Optional[int] = None) -> List[Tuple[int, int]]:
        """(class, count) sorted by count descending, ties by class index."""
        order = sorted(range(self.counts.size), key=lambda c: (-self.counts[c], c))
        if k is not None:
            order = order[:k]
        return [(c, int(self.counts[c])) for c in order]

    def to_tsv(self) -> str:
        lines = ["class\tcount"]
        for c, n in self.top():
            lines.append(f"{c}\t{n}")
        return "\n".join(lines) + "\n"


def prediction_histogram(predictions, n_classes: int) -> Histogram:
    """How often each class was predicted."""
    pred = _pred_labels(predictions)
    if pred.size and (pred.min() < 0 or pred.max() >= n_classes):
        raise ValueError("a predicted label is outside [0, n_classes)")
    return Histogram(counts=np.bincount(pred, minlength=n_classes).astype(np.int64))


@dataclass
class ProbeResult:
    """Per-class domain probability rows plus their mean (the aggregate)."""

    rows: np.ndarray
    aggregate: np.ndarray
    class_names: Sequence[str]

    def to_csv(self) -> str:
        z = self.rows.shape[1]
        header = "class," + ",".join(f"domain_{i}" for i in range(z))
        lines = [header]
        for name, row in zip(self.class_names, self.rows):
            lines.append(name + "," + ",".join(f"{v:.9f}" for v in row))
        lines.append("aggregate," + ",".join(f"{v:.9f}" for v in self.aggregate))
        return "\n".join(lines) + "\n"


def domain_bias_probe(
    bank: Union[TextBank, CalibratedTextBank],
    domain_anchors: np.ndarray,
    tau: float = 1.0,
) -> ProbeResult:
    """Which domain does each class vector lean toward?

    Each bank row is scored by cosine similarity against every domain
    anchor and softmaxed; the aggregate is the mean of the rows, i.e.
    how the bank as a whole distributes its affinity over domains.
    """
    anchors = np.asarray(domain_anchors, dtype=np.float64)
    if anchors.ndim != 2:
        raise ValueError(f"domain anchors must be 2-d, got shape {anchors.shape}")
    k = bank.data.shape[0]
    sims = np.empty((k, anchors.shape[0]))
    for ci in range(k):
        for zi in range(anchors.shape[0]):
            sims[ci, zi] = cosine_sim(bank.data[ci], anchors[zi])
    rows = softmax_temp(sims, tau)
    aggregate = np.sum(rows, axis=0) / k
    return ProbeResult(rows=rows, aggregate=aggregate, class_names=list(bank.names))


def kl_to_uniform(dist: np.ndarray) -> float:
    """KL divergence from a probability vector to the uniform one."""
    p = np.asarray(dist, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("expected a 1-D probability vector")
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] * p.size)))


@dataclass
class DirectionTable:
    """Cosine between measured and reference inter-domain directions."""

    domains: np.ndarray
    cosines: np.ndarray  # square, NaN on the diagonal

    def min_off_diagonal(self) -> float:
        z = self.cosines.shape[0]
        vals = [self.cosines[i, j] for i in range(z) for j in range(z) if i != j]
        return float(np.min(vals))

    def to_tsv(self) -> str:
        lines = ["from_domain\tto_domain\tcosine"]
        z = self.cosines.shape[0]
        for i in range(z):
            for j in range(z):
                if i != j:
                    lines.append(f"{self.domains[j]}\t{self.domains[i]}\t{self.cosines[i, j]:.9f}")
        return "\n".join(lines) + "\n"


def transition_direction_check(
    images: EmbeddingMatrix, reference_directions: np.ndarray
) -> DirectionTable:
    """Compare measured domain-mean differences against references.

    reference_directions is a Z x Z x D table whose [i, j] row is the
    expected unit direction from domain j's mean to domain i's; entry
    [i, j] of the result is the cosine between mean_i - mean_j and that
    reference.  Same-domain entries are skipped (NaN).  Raises
    EmptyDomain when any of the Z domain ids has no samples and
    MissingLabels when the matrix carries no domain labels.
    """
    refs = np.asarray(reference_directions, dtype=np.float64)
    if refs.ndim != 3 or refs.shape[0] != refs.shape[1]:
        raise ValueError(f"expected a Z x Z x D reference table, got shape {refs.shape}")
    z = refs.shape[0]
    if z < 2:
        raise ValueError("need at least 2 domains to compare directions")
    if images.domain_labels is None:
        raise MissingLabels("transition check needs domain labels")
    dom = images.domain_labels
    means = []
    for zi in range(z):
        sel = dom == zi
        if not sel.any():
            raise EmptyDomain(f"domain {zi} has no samples")
        means.append(mean_rows(images.data, sel))
    cos = np.full((z, z), np.nan)
    for i in range(z):
        for j in range(z):
            if i != j:
                cos[i, j] = cosine_sim(means[i] - means[j], refs[i, j])
    return DirectionTable(domains=np.arange(z), cosines=cos)


def balanced_subsample(
    images: EmbeddingMatrix, per_cell: int, seed: int
) -> Tuple[np.ndarray, List[Tuple[int, int, int, int]]]:
    """Pick up to per_cell rows from every (class, domain) cell, seeded.

    Returns sorted row indices plus a shortfall report: one
    (class, domain, available, requested) entry for every cell that
    could not supply the full quota.  Short cells contribute what they
    have; nothing is padded or duplicated.
    """
    if images.class_labels is None or images.domain_labels is None:
        raise MissingLabels("balanced subsampling needs class and domain labels")
    if per_cell < 1:
        raise ValueError(f"per_cell must be >= 1, got {per_cell}")
    rng = np.random.default_rng(seed)
    cls = images.class_labels
    dom = images.domain_labels
    chosen = []
    shortfalls = []
    for c in np.unique(cls):
        for z in np.unique(dom):
            members = np.flatnonzero((cls == c) & (dom == z))
            if members.size < per_cell:
                shortfalls.append((int(c), int(z), int(members.size), per_cell))
                chosen.append(members)
            else:
                pick = rng.choice(members, size=per_cell, replace=False)
                chosen.append(pick)
    idx = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)
    return idx.astype(np.int64), shortfalls

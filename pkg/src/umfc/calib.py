"""Feature and text-bank calibration.

Image side: a feature is re-expressed as the unit direction from its
cluster's mean, which cancels whatever additive component the cluster
shares (the domain's signature).  Text side: each class vector is moved
against every cluster's offset from the global mean and the normalized
results are averaged, which strips per-domain preference from the bank.
"""

import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import DEGENERACY_EPS, Prediction, Temperature, TextBank, _as_tau, softmax_temp
from .errors import AllShiftsDegenerate, DegenerateFeature, DegenerateVector, NonFiniteInput

__all__ = [
    "CalibrationState",
    "CalibratedTextBank",
    "ifc_calibrate",
    "compute_text_shifts",
    "tfc_calibrate",
    "calibrate_bank",
    "normalize_shift_rows",
    "classify",
    "classify_batch",
]


@dataclass(frozen=True)
class CalibrationState:
    """Everything needed to calibrate new features and the text bank.

    For states produced by a one-shot fit, text_shifts is exactly
    cluster_means - global_mean row for row.  Streaming states refresh a
    shift row only on batches where that cluster appears, so rows there
    reflect the global mean as of the cluster's last appearance.
    """

    cluster_means: np.ndarray
    global_mean: np.ndarray
    text_shifts: np.ndarray

    def __post_init__(self):
        cm = np.asarray(self.cluster_means, dtype=np.float64)
        gm = np.asarray(self.global_mean, dtype=np.float64)
        ts = np.asarray(self.text_shifts, dtype=np.float64)
        if cm.ndim != 2:
            raise ValueError(f"cluster_means must be 2-d, got shape {cm.shape}")
        if gm.shape != (cm.shape[1],):
            raise ValueError(f"global_mean shape {gm.shape} does not match dim {cm.shape[1]}")
        if ts.shape != cm.shape:
            raise ValueError(f"text_shifts shape {ts.shape} does not match {cm.shape}")
        for name, a in (("cluster_means", cm), ("global_mean", gm), ("text_shifts", ts)):
            if not np.isfinite(a).all():
                raise NonFiniteInput(f"{name} contains NaN or infinity")
        object.__setattr__(self, "cluster_means", cm)
        object.__setattr__(self, "global_mean", gm)
        object.__setattr__(self, "text_shifts", ts)

    @classmethod
    def from_means(cls, cluster_means: np.ndarray, global_mean: np.ndarray) -> "CalibrationState":
        cm = np.asarray(cluster_means, dtype=np.float64)
        gm = np.asarray(global_mean, dtype=np.float64)
        return cls(cluster_means=cm, global_mean=gm, text_shifts=cm - gm)

    @property
    def m(self) -> int:
        return self.cluster_means.shape[0]


@dataclass
class CalibratedTextBank:
    """Bank rows after text calibration.

    Rows are averages of unit vectors and are deliberately left at
    whatever norm that average has; classification uses cosine
    similarity, which absorbs the row norm.
    """

    names: Sequence[str]
    data: np.ndarray

    def __post_init__(self):
        self.names = [str(s) for s in self.names]
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != len(self.names):
            raise ValueError(
                f"bank shape {self.data.shape} does not match {len(self.names)} names"
            )

    @property
    def k(self) -> int:
        return self.data.shape[0]


def ifc_calibrate(f: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Unit direction from a cluster mean to a feature: (f - mu) / |f - mu|.

    Raises DegenerateFeature when the feature sits on the mean itself.
    """
    f = np.asarray(f, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    residual = f - mu
    # same pairwise reduction as the batched path, so one row gives the
    # same bits alone as inside a batch
    norm = float(np.sqrt(np.add.reduce(residual * residual)))
    if norm < DEGENERACY_EPS:
        raise DegenerateFeature(f"feature coincides with its cluster mean (residual norm {norm:.3e})")
    return residual / norm


def compute_text_shifts(cluster_means: np.ndarray, global_mean: np.ndarray) -> np.ndarray:
    """Per-cluster offset from the global mean, one exact subtraction per row."""
    cm = np.asarray(cluster_means, dtype=np.float64)
    gm = np.asarray(global_mean, dtype=np.float64)
    if cm.ndim != 2 or gm.shape != (cm.shape[1],):
        raise ValueError(f"incompatible shapes {cm.shape} and {gm.shape}")
    return cm - gm


def normalize_shift_rows(shifts: np.ndarray) -> np.ndarray:
    """Unit-normalize shift rows, leaving (near-)zero rows untouched."""
    shifts = np.asarray(shifts, dtype=np.float64)
    norms = np.linalg.norm(shifts, axis=1)
    out = shifts.copy()
    ok = norms >= DEGENERACY_EPS
    out[ok] = shifts[ok] / norms[ok, None]
    return out


def tfc_calibrate(t: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Average of unit vectors (t - shift_i) over all shift rows.

    Terms whose difference has (near-)zero norm are skipped with a
    warning and the divisor shrinks to the kept count; if every term is
    degenerate AllShiftsDegenerate is raised.  Kept terms are summed in
    lexicographic row order, so any permutation of the shift rows yields
    bit-identical output.
    """
    t = np.asarray(t, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.float64)
    if shifts.ndim != 2 or shifts.shape[1] != t.shape[0]:
        raise ValueError(f"shifts shape {shifts.shape} does not match vector dim {t.shape}")
    diffs = t[None, :] - shifts
    norms = np.linalg.norm(diffs, axis=1)
    keep = norms >= DEGENERACY_EPS
    kept = int(keep.sum())
    if kept == 0:
        raise AllShiftsDegenerate("every text-minus-shift term has zero norm")
    if kept < shifts.shape[0]:
        warnings.warn(
            f"skipped {shifts.shape[0] - kept} degenerate calibration term(s); "
            f"averaging the remaining {kept}",
            RuntimeWarning,
            stacklevel=2,
        )
    terms = diffs[keep] / norms[keep, None]
    order = np.lexsort(terms.T[::-1])
    return np.sum(terms[order], axis=0) / kept


def calibrate_bank(
    bank: Union[TextBank, CalibratedTextBank], shifts: np.ndarray
) -> CalibratedTextBank:
    """Apply tfc_calibrate to every row of a text bank."""
    rows = np.stack([tfc_calibrate(bank.data[j], shifts) for j in range(bank.data.shape[0])])
    return CalibratedTextBank(names=list(bank.names), data=rows)


def _cosine_rows(f: np.ndarray, bank_data: np.ndarray) -> np.ndarray:
    fn = float(np.linalg.norm(f))
    bn = np.linalg.norm(bank_data, axis=1)
    if fn < DEGENERACY_EPS or bool(np.any(bn < DEGENERACY_EPS)):
        raise DegenerateVector("cosine similarity of a zero-norm vector is undefined")
    return np.clip((bank_data @ f) / (fn * bn), -1.0, 1.0)


def classify(
    f_cal: np.ndarray,
    bank: Union[TextBank, CalibratedTextBank],
    tau: Union[float, Temperature],
) -> Prediction:
    """Softmax over cosine similarities between one feature and the bank rows."""
    f_cal = np.asarray(f_cal, dtype=np.float64)
    sims = _cosine_rows(f_cal, bank.data)
    probs = softmax_temp(sims, tau)
    return Prediction(probs=probs, label=int(np.argmax(probs)))


def classify_batch(
    feats: np.ndarray,
    bank_data: np.ndarray,
    tau: Union[float, Temperature],
) -> np.ndarray:
    """Probability rows for many features at once; same math as classify."""
    tau = _as_tau(tau)
    feats = np.asarray(feats, dtype=np.float64)
    fn = np.linalg.norm(feats, axis=1)
    bn = np.linalg.norm(bank_data, axis=1)
    if bool(np.any(fn < DEGENERACY_EPS)) or bool(np.any(bn < DEGENERACY_EPS)):
        raise DegenerateVector("cosine similarity of a zero-norm vector is undefined")
    sims = np.clip((feats @ bank_data.T) / np.outer(fn, bn), -1.0, 1.0)
    return softmax_temp(sims, tau)

"""Shared vector math and container types.

Everything downstream (clustering, calibration, the streaming engine) is
built on the handful of operations defined here.  All arithmetic is done
in float64 regardless of how the data was stored on disk; reductions walk
rows in sorted index order so repeated runs produce bit-identical output.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    DegenerateVector,
    EmptySelection,
    NonFiniteInput,
)

__all__ = [
    "EmbeddingMatrix",
    "TextBank",
    "Prediction",
    "Temperature",
    "l2_normalize",
    "l2_normalize_rows",
    "cosine_sim",
    "mean_rows",
    "softmax_temp",
    "DEGENERACY_EPS",
]

# Norms below this are treated as zero everywhere in the package.
DEGENERACY_EPS = 1e-12


@dataclass(frozen=True)
class Temperature:
    """Softmax temperature; must be a strictly positive finite scalar."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not np.isfinite(v) or v <= 0.0:
            raise ValueError(f"temperature must be finite and > 0, got {self.value!r}")
        object.__setattr__(self, "value", v)


def _as_tau(tau: Union[float, Temperature]) -> float:
    if isinstance(tau, Temperature):
        return tau.value
    return Temperature(float(tau)).value


@dataclass
class EmbeddingMatrix:
    """N row vectors with ids and optional integer class/domain labels.

    Rows are stored as float64.  Labels use -1 (or None for the whole
    array) to mean "absent"; lengths must match the row count.
    """

    data: np.ndarray
    ids: Optional[Sequence[str]] = None
    class_labels: Optional[np.ndarray] = None
    domain_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"expected a 2-d array, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise NonFiniteInput("embedding matrix contains NaN or infinity")
        n = self.data.shape[0]
        if self.ids is None:
            self.ids = [str(i) for i in range(n)]
        else:
            self.ids = [str(s) for s in self.ids]
            if len(self.ids) != n:
                raise ValueError(f"{len(self.ids)} ids for {n} rows")
        for name in ("class_labels", "domain_labels"):
            lab = getattr(self, name)
            if lab is not None:
                lab = np.asarray(lab, dtype=np.int64)
                if lab.shape != (n,):
                    raise ValueError(f"{name} has shape {lab.shape}, expected ({n},)")
                setattr(self, name, lab)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class TextBank:
    """One text embedding per class, aligned with a list of class names."""

    names: Sequence[str]
    data: np.ndarray

    def __post_init__(self):
        self.names = [str(s) for s in self.names]
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"expected a 2-d array, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise NonFiniteInput("text bank contains NaN or infinity")
        if len(self.names) != self.data.shape[0]:
            raise ValueError(
                f"{len(self.names)} names for {self.data.shape[0]} text rows"
            )
        if len(self.names) < 2:
            raise ValueError("a text bank needs at least two classes")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class Prediction:
    """Per-sample classification outcome.

    probs sums to 1; label is the argmax with ties broken toward the
    lowest class index; cluster is -1 when no cluster model was involved.
    flags carries markers such as "uncalibrated" or "degenerate".
    """

    probs: np.ndarray
    label: int
    cluster: int = -1
    flags: tuple = ()


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm.

    Raises DegenerateVector when the norm is below 1e-12; normalizing has
    no meaningful direction to preserve there.
    """
    v = np.asarray(v, dtype=np.float64)
    # add.reduce instead of linalg.norm: the same pairwise summation runs
    # whether a row arrives alone or inside a batch, so the two call
    # shapes stay bit-identical
    norm = float(np.sqrt(np.add.reduce(v * v)))
    if norm < DEGENERACY_EPS:
        raise DegenerateVector(f"cannot normalize a vector with norm {norm:.3e}")
    return v / norm


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of a matrix; rejects (near-)zero rows."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.add.reduce(m * m, axis=1))
    bad = np.flatnonzero(norms < DEGENERACY_EPS)
    if bad.size:
        raise DegenerateVector(f"row {bad[0]} has norm {norms[bad[0]]:.3e}")
    return m / norms[:, None]


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding drift."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < DEGENERACY_EPS or nb < DEGENERACY_EPS:
        raise DegenerateVector("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def mean_rows(m: np.ndarray, selector: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean of the selected rows of a matrix.

    The selector may be an index array or a boolean mask; indices are
    deduplicated and sorted before the reduction so any permutation of
    the same selection sums in one canonical order and reproduces the
    same bits.  Raises EmptySelection for an empty selection.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {m.shape}")
    if selector is None:
        if m.shape[0] == 0:
            raise EmptySelection("mean over an empty row selection")
        # full selection is already in canonical ascending order
        return np.sum(m, axis=0) / m.shape[0]
    selector = np.asarray(selector)
    if selector.dtype == bool:
        idx = np.flatnonzero(selector)
    else:
        idx = np.unique(selector.astype(np.int64))
    if idx.size == 0:
        raise EmptySelection("mean over an empty row selection")
    rows = m[idx]
    return np.sum(rows, axis=0) / idx.size


def softmax_temp(logits: np.ndarray, tau: Union[float, Temperature]) -> np.ndarray:
    """Temperature-scaled softmax with max subtraction for stability.

    exp((x - max(x)) / tau) normalized to sum to one.  Subtracting the max
    keeps the largest exponent at zero, so even tau as sharp as 0.01 with
    logits near 1 stays inside float range.
    """
    tau = _as_tau(tau)
    logits = np.asarray(logits, dtype=np.float64)
    shifted = (logits - np.max(logits, axis=-1, keepdims=True)) / tau
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)

"""On-disk formats: embedding files, label sidecars, name lists, snapshots.

Binary container layout (all integers little-endian u32):

    bytes 0-3    magic "UMFC"
    bytes 4-7    container version (currently 1)
    bytes 8-11   count   (rows; or payload byte length for snapshots)
    bytes 12-15  dim     (columns; 1 for snapshots)
    bytes 16-19  payload_kind: 0 image rows, 1 text rows, 2 engine state

Embedding payloads are count*dim little-endian float32 values,
row-major, and nothing else.  Snapshot payloads carry a JSON manifest
followed by raw float64/int64 arrays so accumulators survive at full
precision.  Every write lands in a temp file in the target directory and
is renamed into place, so a partially written file is never visible at
the target path.  Every malformed-input failure raises a typed error
from .errors rather than crashing.
"""

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .calib import CalibrationState
from .clustering import ClusterModel
from .core import EmbeddingMatrix, TextBank
from .engine import EngineConfig, StreamState
from .errors import (
    BadMagic,
    DuplicateName,
    FormatError,
    LabelCountMismatch,
    NameCountMismatch,
    NonFinitePayload,
    TruncatedPayload,
    UnsupportedVersion,
)

__all__ = [
    "MAGIC",
    "VERSION",
    "KIND_IMAGE",
    "KIND_TEXT",
    "KIND_STATE",
    "write_embeddings",
    "read_embeddings",
    "read_embeddings_csv",
    "write_embeddings_csv",
    "write_text_bank",
    "read_text_bank",
    "read_names",
    "snapshot_state",
    "restore_state",
]

MAGIC = b"UMFC"
VERSION = 1
KIND_IMAGE = 0
KIND_TEXT = 1
KIND_STATE = 2
_HEADER = struct.Struct("<4sIIII")


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent) or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _pack_header(count: int, dim: int, kind: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, count, dim, kind)


def _read_header(raw: bytes, path) -> Tuple[int, int, int]:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a UMFC container")
    if len(raw) < _HEADER.size:
        raise TruncatedPayload(f"{path}: header cut short at {len(raw)} bytes")
    _, version, count, dim, kind = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: container version {version}, this build reads {VERSION}")
    return count, dim, kind


def write_embeddings(matrix: EmbeddingMatrix, path, kind: int = KIND_IMAGE) -> None:
    """Write rows as float32 plus, when labels exist, an id/label sidecar."""
    if kind not in (KIND_IMAGE, KIND_TEXT):
        raise ValueError(f"embedding payload kind must be 0 or 1, got {kind}")
    payload = matrix.data.astype("<f4").tobytes()
    _atomic_write(path, _pack_header(matrix.n, matrix.dim, kind) + payload)
    if matrix.class_labels is not None or matrix.domain_labels is not None:
        cls = matrix.class_labels
        dom = matrix.domain_labels
        lines = []
        for i in range(matrix.n):
            c = -1 if cls is None else int(cls[i])
            z = -1 if dom is None else int(dom[i])
            lines.append(f"{matrix.ids[i]}\t{c}\t{z}")
        _atomic_write(str(path) + ".labels", ("\n".join(lines) + "\n").encode("utf-8"))


def _parse_labels(path, n: int):
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != n:
        raise LabelCountMismatch(f"{path}: {len(lines)} label rows for {n} embeddings")
    ids, cls, dom = [], [], []
    for ln, line in enumerate(lines):
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{ln + 1}: expected id<TAB>class<TAB>domain")
        try:
            ids.append(parts[0])
            cls.append(int(parts[1]))
            dom.append(int(parts[2]))
        except ValueError as e:
            raise FormatError(f"{path}:{ln + 1}: {e}") from None
    cls = np.asarray(cls, dtype=np.int64)
    dom = np.asarray(dom, dtype=np.int64)
    return ids, (None if (cls == -1).all() else cls), (None if (dom == -1).all() else dom)


def read_embeddings(path) -> EmbeddingMatrix:
    """Read an embedding container (and its label sidecar if present)."""
    raw = Path(path).read_bytes()
    count, dim, kind = _read_header(raw, path)
    if kind not in (KIND_IMAGE, KIND_TEXT):
        raise FormatError(f"{path}: payload kind {kind} is not an embedding payload")
    expected = count * dim * 4
    body = raw[_HEADER.size :]
    if len(body) != expected:
        raise TruncatedPayload(f"{path}: payload is {len(body)} bytes, header promises {expected}")
    data = np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float64)
    if not np.isfinite(data).all():
        raise NonFinitePayload(f"{path}: payload contains NaN or infinity")
    ids = cls = dom = None
    sidecar = Path(str(path) + ".labels")
    if sidecar.exists():
        ids, cls, dom = _parse_labels(sidecar, count)
    return EmbeddingMatrix(data=data, ids=ids, class_labels=cls, domain_labels=dom)


def read_embeddings_csv(path) -> EmbeddingMatrix:
    """Fallback text reader: rows of id,class,domain,v0,...,vD-1.

    Values are parsed at float32 precision so a CSV and a binary file
    written from the same data decode to identical matrices.
    """
    ids, cls, dom, rows = [], [], [], []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 4:
                raise FormatError(f"{path}:{ln + 1}: expected id,class,domain,v0,...")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise FormatError(f"{path}:{ln + 1}: {len(parts)} fields, expected {width}")
            try:
                ids.append(parts[0])
                cls.append(int(parts[1]))
                dom.append(int(parts[2]))
                rows.append(np.array(parts[3:], dtype="<f4"))
            except ValueError as e:
                raise FormatError(f"{path}:{ln + 1}: {e}") from None
    if not rows:
        return EmbeddingMatrix(data=np.empty((0, 0)))
    data = np.stack(rows).astype(np.float64)
    if not np.isfinite(data).all():
        raise NonFinitePayload(f"{path}: payload contains NaN or infinity")
    cls = np.asarray(cls, dtype=np.int64)
    dom = np.asarray(dom, dtype=np.int64)
    return EmbeddingMatrix(
        data=data,
        ids=ids,
        class_labels=None if (cls == -1).all() else cls,
        domain_labels=None if (dom == -1).all() else dom,
    )


def write_embeddings_csv(matrix: EmbeddingMatrix, path) -> None:
    cls = matrix.class_labels
    dom = matrix.domain_labels
    f4 = matrix.data.astype(np.float32)
    lines = []
    for i in range(matrix.n):
        c = -1 if cls is None else int(cls[i])
        z = -1 if dom is None else int(dom[i])
        vals = ",".join(np.format_float_positional(v, unique=True) for v in f4[i])
        lines.append(f"{matrix.ids[i]},{c},{z},{vals}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_names(path, expected: Optional[int] = None) -> List[str]:
    """Class names, one per line; must be non-empty and unique."""
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if expected is not None and len(lines) != expected:
        raise NameCountMismatch(f"{path}: {len(lines)} names, expected {expected}")
    if any(not name for name in lines):
        raise FormatError(f"{path}: empty class name")
    if len(set(lines)) != len(lines):
        raise DuplicateName(f"{path}: class names are not unique")
    return lines


def write_text_bank(bank: TextBank, path, names_path) -> None:
    mat = EmbeddingMatrix(data=bank.data)
    write_embeddings(mat, path, kind=KIND_TEXT)
    _atomic_write(names_path, ("\n".join(bank.names) + "\n").encode("utf-8"))


def read_text_bank(path, names_path) -> TextBank:
    mat = read_embeddings(path)
    names = read_names(names_path, expected=mat.n)
    return TextBank(names=names, data=mat.data)


# ---------------------------------------------------------------------------
# engine state snapshots

_F8 = "<f8"
_I8 = "<i8"


def _manifest_arrays(state: StreamState):
    """(name, array-or-None, dtype) in serialization order."""
    model = state.model
    calib = state.calib
    return [
        ("centroids", None if model is None else model.centroids, _F8),
        ("counts", None if model is None else model.counts, _I8),
        ("running_sums", state.running_sums, _F8),
        ("running_counts", state.running_counts, _I8),
        ("global_sum", state.global_sum, _F8),
        ("calib_cluster_means", None if calib is None else calib.cluster_means, _F8),
        ("calib_global_mean", None if calib is None else calib.global_mean, _F8),
        ("calib_text_shifts", None if calib is None else calib.text_shifts, _F8),
        ("bootstrap_buffer", state.bootstrap_buffer, _F8),
    ]


def snapshot_state(state: StreamState, cfg: EngineConfig, path) -> None:
    """Persist a stream state plus its config; restoring continues bit-for-bit.

    Cluster inertia history is a fit-time diagnostic and is not carried
    across a snapshot.
    """
    manifest = {
        "config": {
            "clusters": cfg.clusters,
            "tau": cfg.tau,
            "eta": cfg.eta,
            "mode": cfg.mode,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "max_iters": cfg.max_iters,
            "tol": cfg.tol,
            "normalize_input": cfg.normalize_input,
            "normalize_shifts": cfg.normalize_shifts,
            "ema_additive": cfg.ema_additive,
        },
        "samples_seen": state.samples_seen,
        "batches_seen": state.batches_seen,
        "arrays": [],
    }
    blobs = []
    for name, arr, dtype in _manifest_arrays(state):
        if arr is None:
            manifest["arrays"].append([name, None, None])
        else:
            arr = np.asarray(arr)
            manifest["arrays"].append([name, dtype, list(arr.shape)])
            blobs.append(arr.astype(dtype).tobytes())
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    payload = struct.pack("<I", len(head)) + head + b"".join(blobs)
    _atomic_write(path, _pack_header(len(payload), 1, KIND_STATE) + payload)


def restore_state(path) -> Tuple[StreamState, EngineConfig]:
    raw = Path(path).read_bytes()
    count, _, kind = _read_header(raw, path)
    if kind != KIND_STATE:
        raise FormatError(f"{path}: payload kind {kind} is not an engine state")
    body = raw[_HEADER.size :]
    if len(body) != count:
        raise TruncatedPayload(f"{path}: payload is {len(body)} bytes, header promises {count}")
    if len(body) < 4:
        raise TruncatedPayload(f"{path}: snapshot payload too short for its manifest")
    (head_len,) = struct.unpack_from("<I", body)
    if len(body) < 4 + head_len:
        raise TruncatedPayload(f"{path}: manifest cut short")
    try:
        manifest = json.loads(body[4 : 4 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable snapshot manifest: {e}") from None

    try:
        cfg = EngineConfig(**manifest["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: bad config in snapshot: {e}") from None

    offset = 4 + head_len
    arrays = {}
    for entry in manifest.get("arrays", []):
        name, dtype, shape = entry
        if dtype is None:
            arrays[name] = None
            continue
        if dtype not in (_F8, _I8):
            raise FormatError(f"{path}: unknown array dtype {dtype!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = body[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise TruncatedPayload(f"{path}: array {name} cut short")
        arr = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        if dtype == _F8 and not np.isfinite(arr).all():
            raise NonFinitePayload(f"{path}: array {name} contains NaN or infinity")
        arrays[name] = arr
        offset += nbytes
    if offset != len(body):
        raise TruncatedPayload(f"{path}: {len(body) - offset} unexpected trailing bytes")

    try:
        model = None
        if arrays.get("centroids") is not None:
            if arrays.get("counts") is None:
                raise FormatError(f"{path}: snapshot has centroids but no counts")
            model = ClusterModel(centroids=arrays["centroids"], counts=arrays["counts"])
        calib = None
        if arrays.get("calib_cluster_means") is not None:
            calib = CalibrationState(
                cluster_means=arrays["calib_cluster_means"],
                global_mean=arrays["calib_global_mean"],
                text_shifts=arrays["calib_text_shifts"],
            )
    except (ValueError, TypeError) as e:
        raise FormatError(f"{path}: inconsistent snapshot arrays: {e}") from None
    state = StreamState(
        model=model,
        calib=calib,
        running_sums=arrays.get("running_sums"),
        running_counts=arrays.get("running_counts"),
        global_sum=arrays.get("global_sum"),
        samples_seen=int(manifest.get("samples_seen", 0)),
        batches_seen=int(manifest.get("batches_seen", 0)),
        bootstrap_buffer=arrays.get("bootstrap_buffer"),
    )
    return state, cfg

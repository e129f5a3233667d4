"""Feature ingestion and the reduced, variance-balanced feature space.

Raw image descriptors go through ``center -> rotate (PCA) -> permute -> L2
normalize`` before any similarity is computed. The permutation groups
dimensions so that every product-quantizer sub-vector carries roughly the same
share of the total variance.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Iterable, Iterator, Sequence, TextIO

import numpy as np

from ._serial import pack_array, unpack_array
from .errors import (
    DataError,
    DegenerateInputError,
    DimensionMismatchError,
    FormatError,
    InsufficientDataError,
)

VFF_MAGIC = b"VFF1"
_VFF_HEADER = struct.Struct("<4sIQ")


@dataclass(frozen=True)
class FeatureVector:
    id: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DataError(f"feature {self.id!r}: expected a non-empty 1-d vector")
        if not np.all(np.isfinite(values)):
            raise DataError(f"feature {self.id!r}: non-finite value")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureSet:
    """An ordered collection of same-dimension vectors.

    Row order is meaningful: for result sets it is the original relevance
    ranking.
    """

    ids: list[str]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        ids = [str(i) for i in self.ids]
        if data.ndim != 2:
            raise DataError("feature matrix must be 2-d")
        if data.shape[0] != len(ids):
            raise DataError(f"{len(ids)} ids for {data.shape[0]} vectors")
        if data.shape[1] == 0:
            raise DataError("feature dimension must be positive")
        if not np.all(np.isfinite(data)):
            bad = int(np.argwhere(~np.isfinite(data))[0, 0])
            raise DataError(f"non-finite value in vector {ids[bad]!r}")
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DataError(f"duplicate id {dup!r}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_vectors(cls, vectors: Iterable[FeatureVector]) -> "FeatureSet":
        vectors = list(vectors)
        if not vectors:
            raise DataError("empty feature set")
        dims = {v.dim for v in vectors}
        if len(dims) != 1:
            raise DimensionMismatchError(f"mixed dimensions {sorted(dims)}")
        return cls([v.id for v in vectors], np.stack([v.values for v in vectors]))

    @classmethod
    def from_array(cls, data, ids: Sequence[str] | None = None, prefix: str = "") -> "FeatureSet":
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        if ids is None:
            ids = [f"{prefix}{i}" for i in range(data.shape[0])]
        return cls(list(ids), data)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> FeatureVector:
        return FeatureVector(self.ids[i], self.data[i])

    def __iter__(self) -> Iterator[FeatureVector]:
        for i in range(len(self)):
            yield self[i]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def index(self, id: str) -> int:
        return self.ids.index(id)

    def subset(self, indices: Sequence[int]) -> "FeatureSet":
        indices = list(indices)
        return FeatureSet([self.ids[i] for i in indices], self.data[indices])


# --------------------------------------------------------------------------
# I/O


def read_ids(source: str | Path | TextIO) -> list[str]:
    """Read a sidecar id file: one UTF-8 id per line."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    return [line for line in text.splitlines() if line != ""]


def read_vff(source: str | Path | BinaryIO, ids: Sequence[str] | None = None) -> FeatureSet:
    """Decode a ``VFF1`` stream (little-endian float32, row-major)."""
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    else:
        raw = source.read()
    if len(raw) < _VFF_HEADER.size:
        raise FormatError("truncated VFF1 header")
    magic, dim, count = _VFF_HEADER.unpack_from(raw)
    if magic != VFF_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VFF_MAGIC!r}")
    if dim == 0:
        raise FormatError("VFF1 header declares dimension 0")
    payload = raw[_VFF_HEADER.size:]
    row_bytes = 4 * dim
    if len(payload) % row_bytes:
        raise DimensionMismatchError(
            f"payload of {len(payload)} bytes is not a whole number of {dim}-d rows"
        )
    if len(payload) // row_bytes != count:
        raise FormatError(f"header declares {count} rows, payload holds {len(payload) // row_bytes}")
    data = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    if ids is None:
        ids = [str(i) for i in range(count)]
    elif len(ids) != count:
        raise FormatError(f"id file lists {len(ids)} ids for {count} rows")
    return FeatureSet(list(ids), data.astype(np.float64))


def write_vff(features: FeatureSet | np.ndarray, target: str | Path | BinaryIO) -> None:
    data = features.data if isinstance(features, FeatureSet) else np.atleast_2d(features)
    count, dim = data.shape
    blob = _VFF_HEADER.pack(VFF_MAGIC, dim, count) + np.ascontiguousarray(data, dtype="<f4").tobytes()
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(blob)
    else:
        target.write(blob)


def write_ids(ids: Sequence[str], target: str | Path) -> None:
    Path(target).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def read_jsonl(source: str | Path | TextIO) -> FeatureSet:
    if isinstance(source, (str, Path)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = source.read().splitlines()
    ids, rows, dim = [], [], None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rid, vec = rec["id"], rec["vec"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"line {lineno}: malformed record ({exc})") from exc
        if not isinstance(rid, str) or not isinstance(vec, list):
            raise FormatError(f"line {lineno}: expected string id and array vec")
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise DimensionMismatchError(f"line {lineno}: {len(vec)} values, expected {dim}")
        try:
            rows.append(np.asarray(vec, dtype=np.float64))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"line {lineno}: non-numeric value") from exc
        ids.append(rid)
    if not rows:
        raise FormatError("no records")
    return FeatureSet(ids, np.stack(rows))


def write_jsonl(features: FeatureSet, target: str | Path) -> None:
    with open(target, "w", encoding="utf-8") as fh:
        for fid, row in zip(features.ids, features.data):
            fh.write(json.dumps({"id": fid, "vec": row.tolist()}) + "\n")


def ingest_features(source, format: str = "binary", ids: Sequence[str] | None = None) -> FeatureSet:
    """Read a feature stream. ``format`` is ``"binary"`` (VFF1) or ``"json-lines"``."""
    if format == "binary":
        return read_vff(source, ids=ids)
    if format in ("json-lines", "jsonl"):
        return read_jsonl(source)
    raise ValueError(f"unknown feature format {format!r}")


def load_features(path: str | Path, ids_path: str | Path | None = None) -> FeatureSet:
    """Load by file extension; ``.jsonl`` is JSON-lines, anything else VFF1.

    A sidecar ``<path>.ids`` file is picked up automatically when present.
    """
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        return read_jsonl(path)
    if ids_path is None and path.with_suffix(".ids").exists():
        ids_path = path.with_suffix(".ids")
    return read_vff(path, ids=read_ids(ids_path) if ids_path else None)


# --------------------------------------------------------------------------
# normalization, PCA, permutation


def l2_normalize(v: FeatureVector) -> FeatureVector:
    norm = float(np.linalg.norm(v.values))
    if norm == 0.0:
        raise DegenerateInputError(f"cannot normalize zero vector {v.id!r}")
    return FeatureVector(v.id, v.values / norm)


def _normalize_rows(X: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"vector {ids[zero[0]]!r} is zero after projection")
    return X / norms[:, None]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray  # (output_dim, input_dim), orthonormal rows
    variances: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.basis.T

    def inverse_transform(self, Y: np.ndarray) -> np.ndarray:
        return np.asarray(Y) @ self.basis + self.mean

    @classmethod
    def identity(cls, dim: int) -> "PcaModel":
        return cls(np.zeros(dim), np.eye(dim), np.ones(dim))

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "mean": pack_array(self.mean),
            "basis": pack_array(self.basis),
            "variances": pack_array(self.variances),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PcaModel":
        return cls(unpack_array(d["mean"]), unpack_array(d["basis"]), unpack_array(d["variances"]))


def fit_pca(data: FeatureSet | np.ndarray, output_dim: int) -> PcaModel:
    """Principal components of ``data`` by eigendecomposition of the covariance.

    The covariance uses the biased (1/N) estimate, so the mean squared
    reconstruction error equals the sum of the discarded eigenvalues. Each basis
    row is signed so its largest-magnitude entry is positive.
    """
    X = data.data if isinstance(data, FeatureSet) else np.asarray(data, dtype=np.float64)
    n, d = X.shape
    if output_dim < 1 or output_dim > d:
        raise DataError(f"output_dim={output_dim} outside [1, {d}]")
    if n < output_dim:
        raise InsufficientDataError(f"{n} samples cannot support {output_dim} components")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:output_dim]
    basis = evecs[:, order].T.copy()
    variances = np.clip(evals[order], 0.0, None)
    pivot = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(output_dim), pivot])
    basis *= signs[:, None]
    return PcaModel(mean, basis, variances)


@dataclass(frozen=True)
class PermutationPlan:
    """``perm[j]`` is the source dimension placed at output position ``j``."""

    perm: np.ndarray
    num_subvectors: int
    bucket_variance: np.ndarray

    @property
    def dim(self) -> int:
        return self.perm.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X)[..., self.perm]

    @classmethod
    def identity(cls, dim: int, num_subvectors: int = 1) -> "PermutationPlan":
        return cls(np.arange(dim), num_subvectors, np.zeros(num_subvectors))

    def to_dict(self) -> dict[str, Any]:
        return {
            "perm": [int(p) for p in self.perm],
            "num_subvectors": self.num_subvectors,
            "bucket_variance": [float(v) for v in self.bucket_variance],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PermutationPlan":
        perm = np.asarray(d["perm"], dtype=np.int64)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise FormatError("perm is not a bijection")
        return cls(perm, int(d["num_subvectors"]), np.asarray(d["bucket_variance"], dtype=np.float64))


def fit_permutation(variances, M: int) -> PermutationPlan:
    """Balance per-dimension variance across ``M`` equal-size buckets.

    Greedy longest-processing-time: visit dimensions by decreasing variance and
    drop each into the non-full bucket with the smallest running sum (lowest
    bucket index on ties). Bucket ``b`` occupies output positions
    ``[b*d/M, (b+1)*d/M)``, its dimensions kept in ascending source order.
    """
    variances = np.asarray(variances, dtype=np.float64)
    d = variances.shape[0]
    if M < 1 or d % M:
        raise DataError(f"dimension {d} is not divisible by M={M}")
    cap = d // M
    sums = np.zeros(M)
    members: list[list[int]] = [[] for _ in range(M)]
    for dim in np.argsort(-variances, kind="stable"):
        open_buckets = [b for b in range(M) if len(members[b]) < cap]
        b = min(open_buckets, key=lambda k: (sums[k], k))
        members[b].append(int(dim))
        sums[b] += variances[dim]
    perm = np.array([dim for bucket in members for dim in sorted(bucket)], dtype=np.int64)
    return PermutationPlan(perm, M, sums)


def project(v: FeatureVector, pca: PcaModel, plan: PermutationPlan) -> FeatureVector:
    if v.dim != pca.input_dim:
        raise DimensionMismatchError(f"vector {v.id!r} has dim {v.dim}, model expects {pca.input_dim}")
    y = plan.apply(pca.transform(v.values[None, :]))
    return FeatureVector(v.id, _normalize_rows(y, [v.id])[0])


def project_set(features: FeatureSet, pca: PcaModel, plan: PermutationPlan) -> FeatureSet:
    """Batched :func:`project`."""
    if features.dim != pca.input_dim:
        raise DimensionMismatchError(f"features have dim {features.dim}, model expects {pca.input_dim}")
    Y = plan.apply(pca.transform(features.data))
    return FeatureSet(features.ids, _normalize_rows(Y, features.ids))


def pipeline_to_dict(pca: PcaModel, plan: PermutationPlan) -> dict[str, Any]:
    return {"format": "adgrid-pca-v1", "pca": pca.to_dict(), "permutation": plan.to_dict()}


def pipeline_from_dict(d: dict[str, Any]) -> tuple[PcaModel, PermutationPlan]:
    if d.get("format") != "adgrid-pca-v1":
        raise FormatError(f"unexpected model format {d.get('format')!r}")
    pca = PcaModel.from_dict(d["pca"])
    plan = PermutationPlan.from_dict(d["permutation"])
    if plan.dim != pca.output_dim:
        raise FormatError("permutation length does not match PCA output dimension")
    return pca, plan

"""Two-level compact codes: a coarse multi-index plus product-quantized residuals.

A projected vector ``x`` of dimension ``d`` is stored as

* two coarse indices, the nearest centroids of ``x[:d/2]`` and ``x[d/2:]`` in
  two independent vocabularies of ``2**b`` words each, and
* ``M`` one-byte sub-codes quantizing the residual ``x - coarse(x)``, one
  256-word codebook per contiguous block of ``d/M`` dimensions.

The residual codebooks are shared across coarse cells unless ``per_cell`` is
set, in which case well-populated cells get their own.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Iterator, Sequence

import numpy as np

from ._serial import pack_array, unpack_array
from .errors import DataError, DimensionMismatchError, FormatError, InsufficientDataError
from .features import FeatureSet, FeatureVector, PcaModel, PermutationPlan
from .kmeans import KMeansCodebook, exact_sq_dists, fit_kmeans

SUBCODE_WORDS = 256
PER_CELL_MIN_POINTS = SUBCODE_WORDS * 4
VCC_MAGIC = b"VCC1"
_VCC_HEADER = struct.Struct("<4sIBB")


def code_size_bits(M: int, b: int) -> int:
    """Bits per stored image: one byte per sub-vector plus two ``b``-bit coarse indices."""
    return M * 8 + 2 * b


def code_payload_bytes(M: int, b: int) -> int:
    return M + math.ceil(2 * b / 8)


@dataclass(frozen=True)
class CompressedCode:
    coarse_left: int
    coarse_right: int
    sub_codes: tuple[int, ...]

    @property
    def cell(self) -> tuple[int, int]:
        return (self.coarse_left, self.coarse_right)


@dataclass(frozen=True)
class CodeArray:
    """Column-wise storage for many codes; indexing yields :class:`CompressedCode`."""

    left: np.ndarray
    right: np.ndarray
    sub: np.ndarray  # (n, M) uint8
    ids: list[str] | None = None

    def __len__(self) -> int:
        return self.left.shape[0]

    def __getitem__(self, i: int) -> CompressedCode:
        return CompressedCode(int(self.left[i]), int(self.right[i]), tuple(int(c) for c in self.sub[i]))

    def __iter__(self) -> Iterator[CompressedCode]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_codes(cls, codes: Sequence[CompressedCode], ids: Sequence[str] | None = None) -> "CodeArray":
        return cls(
            np.array([c.coarse_left for c in codes], dtype=np.int64),
            np.array([c.coarse_right for c in codes], dtype=np.int64),
            np.array([c.sub_codes for c in codes], dtype=np.uint8).reshape(len(codes), -1),
            list(ids) if ids is not None else None,
        )


@dataclass(frozen=True)
class CoarseQuantizer:
    left: KMeansCodebook
    right: KMeansCodebook
    bits: int


@dataclass(frozen=True)
class PqModel:
    codebooks: np.ndarray  # (M, 256, d/M)

    @property
    def M(self) -> int:
        return self.codebooks.shape[0]

    @property
    def sub_dim(self) -> int:
        return self.codebooks.shape[2]

    def codebook(self, m: int) -> KMeansCodebook:
        return KMeansCodebook(self.codebooks[m])


@dataclass(frozen=True)
class LopqConfig:
    bits: int = 8
    M: int = 16
    per_cell: bool = False
    seed: int = 0
    max_iters: int = 25


@dataclass(frozen=True)
class LopqModel:
    pca: PcaModel
    plan: PermutationPlan
    coarse: CoarseQuantizer
    pq: PqModel
    per_cell: bool = False
    cell_codebooks: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        d = self.dim
        if self.coarse.left.dim + self.coarse.right.dim != d:
            raise DataError("coarse halves do not cover the feature dimension")
        if self.pq.M * self.pq.sub_dim != d:
            raise DataError("sub-codebooks do not cover the feature dimension")
        if self.pca.output_dim != d or self.plan.dim != d:
            raise DataError("PCA/permutation dimension disagrees with the quantizer")

    @property
    def dim(self) -> int:
        return self.coarse.left.dim + self.coarse.right.dim

    @property
    def M(self) -> int:
        return self.pq.M

    @property
    def bits(self) -> int:
        return self.coarse.bits

    def codebooks_for(self, left: int, right: int) -> np.ndarray:
        return self.cell_codebooks.get((left, right), self.pq.codebooks)

    def coarse_vectors(self, left, right) -> np.ndarray:
        return np.concatenate(
            [self.coarse.left.centroids[left], self.coarse.right.centroids[right]], axis=-1
        )

    def roundtrip(self, X: np.ndarray) -> np.ndarray:
        """Reconstruct ``X`` from its own codes (what the compressed store would return)."""
        return reconstruct_batch(encode_batch(X, self), self)


# --------------------------------------------------------------------------
# training


def _split_halves(d: int) -> int:
    if d % 2:
        raise DataError(f"dimension {d} must be even for the two-half coarse quantizer")
    return d // 2


def _train_subcodebooks(R: np.ndarray, M: int, seed: int, max_iters: int) -> np.ndarray:
    n, d = R.shape
    ds = d // M
    books = np.empty((M, SUBCODE_WORDS, ds))
    for m in range(M):
        books[m] = fit_kmeans(R[:, m * ds:(m + 1) * ds], SUBCODE_WORDS, max_iters, seed + m).centroids
    return books


def fit_lopq(
    training: FeatureSet | np.ndarray,
    config: LopqConfig,
    pca: PcaModel | None = None,
    plan: PermutationPlan | None = None,
) -> LopqModel:
    """Train coarse vocabularies on the halves, then sub-codebooks on residuals.

    ``training`` must already live in the projected space; ``pca``/``plan`` are
    stored alongside so the model can project raw features later (identity
    when omitted).
    """
    X = training.data if isinstance(training, FeatureSet) else np.asarray(training, dtype=np.float64)
    n, d = X.shape
    h = _split_halves(d)
    M, b = config.M, config.bits
    if M < 1 or d % M:
        raise DataError(f"dimension {d} is not divisible by M={M}")
    k = 2 ** b
    if n < max(k, SUBCODE_WORDS):
        raise InsufficientDataError(
            f"{n} training vectors; need at least {max(k, SUBCODE_WORDS)} for b={b}, 256-word sub-codebooks"
        )
    seed, iters = config.seed, config.max_iters
    left = fit_kmeans(X[:, :h], k, iters, seed)
    right = fit_kmeans(X[:, h:], k, iters, seed + 1)
    li, ri = left.assign(X[:, :h]), right.assign(X[:, h:])
    R = X - np.concatenate([left.centroids[li], right.centroids[ri]], axis=1)
    shared = _train_subcodebooks(R, M, seed + 2, iters)

    cells: dict[tuple[int, int], np.ndarray] = {}
    if config.per_cell:
        keys = li * k + ri
        uniq, counts = np.unique(keys, return_counts=True)
        for key, cnt in zip(uniq, counts):
            if cnt >= PER_CELL_MIN_POINTS:
                cell = (int(key // k), int(key % k))
                cells[cell] = _train_subcodebooks(R[keys == key], M, seed + 2 + M * (1 + int(key)), iters)

    return LopqModel(
        pca if pca is not None else PcaModel.identity(d),
        plan if plan is not None else PermutationPlan.identity(d, M),
        CoarseQuantizer(left, right, b),
        PqModel(shared),
        config.per_cell,
        cells,
    )


# --------------------------------------------------------------------------
# encoding / decoding


def _check_dim(n: int, model: LopqModel) -> None:
    if n != model.dim:
        raise DimensionMismatchError(f"vector dimension {n}, model expects {model.dim}")


def encode_batch(X, model: LopqModel, ids: Sequence[str] | None = None) -> CodeArray:
    if isinstance(X, FeatureSet):
        ids = X.ids if ids is None else ids
        X = X.data
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_dim(X.shape[1], model)
    h = model.dim // 2
    li = model.coarse.left.assign(X[:, :h])
    ri = model.coarse.right.assign(X[:, h:])
    R = X - model.coarse_vectors(li, ri)
    M, ds = model.M, model.pq.sub_dim
    sub = np.empty((X.shape[0], M), dtype=np.uint8)
    if model.cell_codebooks:
        for i in range(X.shape[0]):
            books = model.codebooks_for(int(li[i]), int(ri[i]))
            for m in range(M):
                sub[i, m] = np.argmin(exact_sq_dists(R[i:i + 1, m * ds:(m + 1) * ds], books[m])[0])
    else:
        for m in range(M):
            sub[:, m] = np.argmin(exact_sq_dists(R[:, m * ds:(m + 1) * ds], model.pq.codebooks[m]), axis=1)
    return CodeArray(li.astype(np.int64), ri.astype(np.int64), sub, list(ids) if ids is not None else None)


def encode(v: FeatureVector | np.ndarray, model: LopqModel) -> CompressedCode:
    values = v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64)
    return encode_batch(values[None, :], model)[0]


def _validate_indices(left, right, sub, model: LopqModel) -> None:
    k = 2 ** model.bits
    left, right, sub = np.asarray(left), np.asarray(right), np.asarray(sub)
    if left.size and (left.min() < 0 or left.max() >= k or right.min() < 0 or right.max() >= k):
        raise DataError(f"coarse index outside [0, {k})")
    if sub.shape[-1] != model.M:
        raise DataError(f"code has {sub.shape[-1]} sub-codes, model uses M={model.M}")
    if sub.size and (sub.min() < 0 or sub.max() >= SUBCODE_WORDS):
        raise DataError("sub-code outside [0, 256)")


def reconstruct_batch(codes: CodeArray, model: LopqModel) -> np.ndarray:
    _validate_indices(codes.left, codes.right, codes.sub, model)
    out = model.coarse_vectors(codes.left, codes.right)
    sub = codes.sub.astype(np.int64)
    for i in range(len(codes)):
        books = model.codebooks_for(int(codes.left[i]), int(codes.right[i]))
        out[i] += books[np.arange(model.M), sub[i]].reshape(-1)
    return out


def reconstruct(code: CompressedCode, model: LopqModel, id: str = "") -> FeatureVector:
    arr = CodeArray.from_codes([code])
    return FeatureVector(id, reconstruct_batch(arr, model)[0])


class AdcTables:
    """Per-query lookup tables for asymmetric distance computation.

    For a coarse cell ``(l, r)`` the table holds, for every sub-vector ``m``
    and sub-word ``j``, the squared distance between the query residual
    ``(q - coarse(l, r))[m]`` and sub-centroid ``j``. Tables are built lazily
    per cell and cached on the instance.
    """

    def __init__(self, query, model: LopqModel):
        q = query.values if isinstance(query, FeatureVector) else np.asarray(query, dtype=np.float64)
        _check_dim(q.shape[0], model)
        self.query = q
        self.model = model
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def table(self, left: int, right: int) -> np.ndarray:
        key = (left, right)
        tab = self._cache.get(key)
        if tab is None:
            model = self.model
            r = (self.query - model.coarse_vectors(left, right)).reshape(model.M, 1, model.pq.sub_dim)
            diff = model.codebooks_for(left, right) - r
            tab = np.einsum("mkd,mkd->mk", diff, diff)
            self._cache[key] = tab
        return tab

    def distance(self, code: CompressedCode) -> float:
        tab = self.table(code.coarse_left, code.coarse_right)
        return float(tab[np.arange(self.model.M), list(code.sub_codes)].sum())


def adc_distance(query, code: CompressedCode, model: LopqModel, tables: AdcTables | None = None) -> float:
    """Squared distance between an uncompressed query and a code's reconstruction."""
    q = query.values if isinstance(query, FeatureVector) else np.asarray(query, dtype=np.float64)
    _check_dim(q.shape[0], model)
    _validate_indices([code.coarse_left], [code.coarse_right], [list(code.sub_codes)], model)
    if tables is not None:
        return tables.distance(code)
    diff = q - reconstruct(code, model).values
    return float(diff @ diff)


def adc_distances(query, codes: CodeArray, model: LopqModel) -> np.ndarray:
    tables = AdcTables(query, model)
    return np.array([tables.distance(c) for c in codes])


# --------------------------------------------------------------------------
# code file (VCC1)


def _coarse_nbytes(b: int) -> int:
    return math.ceil(2 * b / 8)


def pack_code(code: CompressedCode, b: int) -> bytes:
    """One VCC1 record. Coarse indices are MSB-first bit fields, left then right."""
    nb = _coarse_nbytes(b)
    head = b""
    if nb:
        value = ((code.coarse_left << b) | code.coarse_right) << (8 * nb - 2 * b)
        head = value.to_bytes(nb, "big")
    return head + bytes(code.sub_codes)


def unpack_code(record: bytes, M: int, b: int) -> CompressedCode:
    nb = _coarse_nbytes(b)
    value = int.from_bytes(record[:nb], "big") >> (8 * nb - 2 * b) if nb else 0
    mask = (1 << b) - 1
    return CompressedCode(value >> b, value & mask, tuple(record[nb:nb + M]))


def write_codes(codes: CodeArray, M: int, b: int, target: str | Path | BinaryIO) -> None:
    if not 0 <= b <= 255 or not 0 <= M <= 255:
        raise DataError("M and b must each fit in one byte")
    blob = bytearray(_VCC_HEADER.pack(VCC_MAGIC, len(codes), M, b))
    for code in codes:
        blob += pack_code(code, b)
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(bytes(blob))
    else:
        target.write(bytes(blob))


def read_codes(source: str | Path | BinaryIO, ids: Sequence[str] | None = None) -> tuple[CodeArray, int, int]:
    """Returns ``(codes, M, b)``."""
    raw = Path(source).read_bytes() if isinstance(source, (str, Path)) else source.read()
    if len(raw) < _VCC_HEADER.size:
        raise FormatError("truncated VCC1 header")
    magic, count, M, b = _VCC_HEADER.unpack_from(raw)
    if magic != VCC_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VCC_MAGIC!r}")
    rec = code_payload_bytes(M, b)
    body = raw[_VCC_HEADER.size:]
    if len(body) != count * rec:
        raise FormatError(f"expected {count} records of {rec} bytes, got {len(body)} bytes")
    codes = [unpack_code(body[i * rec:(i + 1) * rec], M, b) for i in range(count)]
    if ids is not None and len(ids) != count:
        raise FormatError(f"{len(ids)} ids for {count} codes")
    if not codes:
        return CodeArray(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, M), np.uint8), list(ids or [])), M, b
    return CodeArray.from_codes(codes, ids), M, b


# --------------------------------------------------------------------------
# model serialization


def model_to_dict(model: LopqModel) -> dict[str, Any]:
    return {
        "format": "adgrid-lopq-v1",
        "pca": model.pca.to_dict(),
        "permutation": model.plan.to_dict(),
        "coarse": {
            "bits": model.bits,
            "left": pack_array(model.coarse.left.centroids),
            "right": pack_array(model.coarse.right.centroids),
        },
        "pq": {"M": model.M, "codebooks": pack_array(model.pq.codebooks)},
        "per_cell": model.per_cell,
        "cells": [
            {"left": l, "right": r, "codebooks": pack_array(books)}
            for (l, r), books in sorted(model.cell_codebooks.items())
        ],
    }


def model_from_dict(d: dict[str, Any]) -> LopqModel:
    if d.get("format") != "adgrid-lopq-v1":
        raise FormatError(f"unexpected model format {d.get('format')!r}")
    try:
        coarse = CoarseQuantizer(
            KMeansCodebook(unpack_array(d["coarse"]["left"])),
            KMeansCodebook(unpack_array(d["coarse"]["right"])),
            int(d["coarse"]["bits"]),
        )
        cells = {(int(c["left"]), int(c["right"])): unpack_array(c["codebooks"]) for c in d.get("cells", [])}
        return LopqModel(
            PcaModel.from_dict(d["pca"]),
            PermutationPlan.from_dict(d["permutation"]),
            coarse,
            PqModel(unpack_array(d["pq"]["codebooks"])),
            bool(d.get("per_cell", False)),
            cells,
        )
    except KeyError as exc:
        raise FormatError(f"model file missing field {exc}") from exc

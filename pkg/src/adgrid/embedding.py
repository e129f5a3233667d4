"""2-D projection of a result set (plus its ad) and density clustering of it.

The inputs are at most a few dozen vectors, so t-SNE is the exact O(n^2)
variant and mean shift is a plain flat-kernel implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DataError, DegenerateInputError, InsufficientDataError
from .features import FeatureSet


@dataclass(frozen=True)
class Embedding2D:
    ids: list[str]
    coords: np.ndarray  # (n, 2)
    kl_trace: list[float] = field(default_factory=list)

    @property
    def points(self) -> list[tuple[str, float, float]]:
        return [(i, float(x), float(y)) for i, (x, y) in zip(self.ids, self.coords)]

    def __len__(self) -> int:
        return len(self.ids)

    def index(self, id: str) -> int:
        return self.ids.index(id)

    def subset(self, ids: Sequence[str]) -> "Embedding2D":
        rows = [self.index(i) for i in ids]
        return Embedding2D(list(ids), self.coords[rows], list(self.kl_trace))

    def to_dict(self) -> dict[str, Any]:
        return {
            "points": [{"id": i, "x": x, "y": y} for i, x, y in self.points],
            "kl_trace": [float(v) for v in self.kl_trace],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Embedding2D":
        pts = d["points"]
        return cls([p["id"] for p in pts], np.array([[p["x"], p["y"]] for p in pts], dtype=np.float64).reshape(-1, 2),
                   list(d.get("kl_trace", [])))

    @classmethod
    def from_points(cls, points: Sequence[tuple[str, float, float]]) -> "Embedding2D":
        return cls([p[0] for p in points], np.array([[p[1], p[2]] for p in points], dtype=np.float64).reshape(-1, 2))


@dataclass(frozen=True)
class ClusterAssignment:
    labels: dict[str, int]
    modes: list[tuple[float, float]]
    bandwidth: float

    def members(self, label: int) -> list[str]:
        return [i for i, lab in self.labels.items() if lab == label]

    def sizes(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for lab in self.labels.values():
            out[lab] = out.get(lab, 0) + 1
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": dict(self.labels),
            "modes": [[float(x), float(y)] for x, y in self.modes],
            "bandwidth": float(self.bandwidth),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ClusterAssignment":
        return cls({k: int(v) for k, v in d["labels"].items()}, [tuple(m) for m in d["modes"]], float(d["bandwidth"]))


# --------------------------------------------------------------------------
# t-SNE


def _sq_dists(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _row_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-5, max_tries: int = 50) -> np.ndarray:
    """Conditional Gaussian affinities with each row's precision bisected to the target entropy."""
    n = D.shape[0]
    P = np.zeros((n, n))
    target = np.log(perplexity)
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_tries):
            p = np.exp(-d * beta)
            s = p.sum()
            H = np.log(s) + beta * (d * p).sum() / s
            p /= s
            delta = H - target
            if abs(delta) < tol:
                break
            if delta > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        P[i, np.arange(n) != i] = p
    return P


def _kl(P: np.ndarray, Q: np.ndarray) -> float:
    return float(np.sum(P * np.log(P / Q)))


def default_perplexity(n: int) -> float:
    return float(min(30, (n - 1) // 3))


def tsne_embed(
    vectors: FeatureSet,
    perplexity: float | None = None,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: float = 200.0,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    record_every: int = 50,
) -> Embedding2D:
    """Exact t-SNE to two dimensions.

    Momentum is 0.5 while the affinities are exaggerated and 0.8 afterwards;
    per-coordinate adaptive gains follow the usual delta-bar-delta rule. The
    KL divergence (against the un-exaggerated affinities) is recorded when
    exaggeration ends, every ``record_every`` iterations after that, and at
    the end.
    """
    n = len(vectors)
    if n < 4:
        raise InsufficientDataError(f"t-SNE needs at least 4 points, got {n}")
    if perplexity is None:
        perplexity = default_perplexity(n)
    if not 0 < perplexity <= (n - 1) / 3:
        raise DataError(f"perplexity {perplexity} infeasible for {n} points (max {(n - 1) / 3:.3g})")

    P = _row_affinities(_sq_dists(vectors.data), perplexity)
    P = P + P.T
    P = np.maximum(P / P.sum(), 1e-12)

    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace: list[float] = []

    def kernel(Y):
        num = 1.0 / (1.0 + _sq_dists(Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        return num, Q

    for it in range(iterations):
        num, Q = kernel(Y)
        if it >= exaggeration_iters and (it - exaggeration_iters) % record_every == 0:
            trace.append(_kl(P, Q))
        Pe = P * exaggeration if it < exaggeration_iters else P
        W = (Pe - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        momentum = 0.5 if it < exaggeration_iters else 0.8
        same = (grad > 0) == (update > 0)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)

    trace.append(_kl(P, kernel(Y)[1]))
    return Embedding2D(list(vectors.ids), Y, trace)


# --------------------------------------------------------------------------
# mean shift


def _coords(embedding) -> np.ndarray:
    return embedding.coords if isinstance(embedding, Embedding2D) else np.asarray(embedding, dtype=np.float64)


def estimate_bandwidth(embedding: Embedding2D, fraction: float = 0.1) -> float:
    """``fraction`` of the diagonal of the embedding's bounding box."""
    C = _coords(embedding)
    if C.shape[0] < 2:
        raise InsufficientDataError("bandwidth estimate needs at least 2 points")
    diag = float(np.hypot(*(C.max(axis=0) - C.min(axis=0))))
    if diag == 0.0:
        raise DegenerateInputError("embedding has zero extent")
    return fraction * diag


def mean_shift(embedding: Embedding2D, bandwidth: float, max_iters: int = 300) -> ClusterAssignment:
    """Flat-kernel mean shift seeded at every point.

    A seed stops moving once its step is below ``1e-4 * bandwidth``. Converged
    seeds closer than ``bandwidth / 2`` are linked and each connected group
    becomes one mode; labels are numbered by first occurrence in input order.
    """
    if not bandwidth > 0:
        raise DataError(f"bandwidth must be positive, got {bandwidth}")
    X = _coords(embedding)
    n = X.shape[0]
    S = X.copy()
    active = np.ones(n, dtype=bool)
    tol = 1e-4 * bandwidth
    for _ in range(max_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        within = np.hypot(*(S[idx, None, :] - X[None, :, :]).transpose(2, 0, 1)) <= bandwidth
        new = (within @ X) / within.sum(axis=1, keepdims=True)
        step = np.hypot(*(new - S[idx]).T)
        S[idx] = new
        active[idx[step < tol]] = False

    link = np.hypot(*(S[:, None, :] - S[None, :, :]).transpose(2, 0, 1)) <= bandwidth / 2
    _, comp = connected_components(link, directed=False)
    relabel: dict[int, int] = {}
    for c in comp:
        relabel.setdefault(int(c), len(relabel))
    labels = np.array([relabel[int(c)] for c in comp])
    modes = [tuple(float(v) for v in S[labels == lab].mean(axis=0)) for lab in range(len(relabel))]
    ids = embedding.ids if isinstance(embedding, Embedding2D) else [str(i) for i in range(n)]
    return ClusterAssignment({i: int(lab) for i, lab in zip(ids, labels)}, modes, float(bandwidth))

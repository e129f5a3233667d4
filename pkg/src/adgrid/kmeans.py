"""Seeded k-means used to train every codebook in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError


def sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape ``(len(X), len(C))``.

    Uses the ``|x|^2 - 2x.c + |c|^2`` expansion, fine for training. Encoding
    uses :func:`exact_sq_dists` so near-ties resolve consistently.
    """
    d = (X * X).sum(1)[:, None] - 2.0 * (X @ C.T) + (C * C).sum(1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def exact_sq_dists(X: np.ndarray, C: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty((X.shape[0], C.shape[0]))
    for s in range(0, X.shape[0], chunk):
        diff = X[s:s + chunk, None, :] - C[None, :, :]
        out[s:s + chunk] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


@dataclass(frozen=True)
class KMeansCodebook:
    centroids: np.ndarray  # (k, dim)
    inertia: float = 0.0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def assign(self, X: np.ndarray) -> np.ndarray:
        """Nearest centroid per row, lowest index on ties."""
        return np.argmin(exact_sq_dists(np.atleast_2d(X), self.centroids), axis=1)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = sq_dists(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        np.minimum(closest, sq_dists(X, X[idx:idx + 1])[:, 0], out=closest)
    return X[chosen].copy()


def fit_kmeans(data, k: int, max_iters: int = 25, seed: int = 0) -> KMeansCodebook:
    """Lloyd's algorithm from a k-means++ start.

    Stops at an assignment fixpoint or after ``max_iters`` updates. A cluster
    that goes empty is re-seeded with the point currently farthest from its
    own centroid.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if k < 1 or n < k:
        raise InsufficientDataError(f"k-means needs at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    C = _kmeans_pp(X, k, rng)
    labels = None
    for _ in range(max_iters):
        D = sq_dists(X, C)
        new_labels = np.argmin(D, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            own = D[np.arange(n), labels]
            for j, idx in zip(empty, np.argsort(-own, kind="stable")):
                C[j] = X[idx]
                labels[idx] = j
    D = sq_dists(X, C)
    inertia = float(D.min(axis=1).sum())
    return KMeansCodebook(C, inertia)

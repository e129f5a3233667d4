"""Placing the chosen ad (and the result images) on a rows x cols grid.

Strategies, from least to most disruptive to the original ranking:

``preserve``
    images keep their order; the ad is inserted next to its nearest image.
``local1d``
    the ad goes between its two nearest images; only the second one moves.
``local2d-4`` / ``local2d-8``
    the ad sits at an interior cell surrounded by its 4 or 8 nearest images.
``greedy2d``
    every item snaps to the nearest free cell of a 2-D embedding, ad first.
``clustered``
    clusters of the embedding occupy contiguous runs of a snake-ordered grid.

Cells are ``(row, col)`` tuples; "row-major" tie-breaking means the cell with
the smallest ``row * cols + col`` wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .embedding import ClusterAssignment, Embedding2D
from .errors import DataError, DimensionMismatchError
from .features import FeatureSet, FeatureVector

Cell = tuple[int, int]

STRATEGIES = ("preserve", "local1d", "local2d-4", "local2d-8", "greedy2d", "clustered")

# clockwise starting north
OFFSETS_4: tuple[Cell, ...] = ((-1, 0), (0, 1), (1, 0), (0, -1))
OFFSETS_8: tuple[Cell, ...] = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass
class Grid:
    rows: int
    cols: int
    cells: dict[Cell, str]
    ad_cells: tuple[Cell, ...]

    def __post_init__(self):
        if len(set(self.cells.values())) != len(self.cells):
            raise DataError("an id occupies more than one cell")
        for r, c in self.cells:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise DataError(f"cell {(r, c)} outside a {self.rows}x{self.cols} grid")
        if not self.ad_cells or any(cell not in self.cells for cell in self.ad_cells):
            raise DataError("ad cell is empty")

    @property
    def ad_cell(self) -> Cell:
        return self.ad_cells[0]

    @property
    def ad_ids(self) -> list[str]:
        return [self.cells[c] for c in self.ad_cells]

    def reading_order(self) -> list[str]:
        return [self.cells[cell] for cell in sorted(self.cells)]

    def cell_of(self, id: str) -> Cell:
        for cell, cid in self.cells.items():
            if cid == id:
                return cell
        raise KeyError(id)

    def neighbors(self, cell: Cell, connectivity: int = 4) -> list[str]:
        offsets = OFFSETS_4 if connectivity == 4 else OFFSETS_8
        out = []
        for dr, dc in offsets:
            nb = (cell[0] + dr, cell[1] + dc)
            if nb in self.cells:
                out.append(self.cells[nb])
        return out


@dataclass
class LayoutResult:
    strategy: str
    grid: Grid | None
    clusters: ClusterAssignment | None = None
    rejected: bool = False
    reason: str | None = None
    note: str | None = None

    @classmethod
    def rejection(cls, strategy: str, reason: str, clusters=None) -> "LayoutResult":
        return cls(strategy, None, clusters, True, reason)

    def to_dict(self) -> dict[str, Any]:
        g = self.grid
        ads = set(g.ad_ids) if g else set()
        labels = self.clusters.labels if self.clusters else {}
        cells = []
        if g is not None:
            for (r, c) in sorted(g.cells):
                cid = g.cells[(r, c)]
                entry = {"row": r, "col": c, "id": cid, "is_ad": cid in ads}
                if cid in labels:
                    entry["cluster"] = labels[cid]
                cells.append(entry)
        out = {
            "strategy": self.strategy,
            "rows": g.rows if g else 0,
            "cols": g.cols if g else 0,
            "cells": cells,
            "rejected": self.rejected,
            "reason": self.reason,
        }
        if self.note:
            out["note"] = self.note
        if self.clusters is not None:
            out["clusters"] = self.clusters.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LayoutResult":
        clusters = ClusterAssignment.from_dict(d["clusters"]) if d.get("clusters") else None
        if d.get("rejected"):
            return cls(d["strategy"], None, clusters, True, d.get("reason"), d.get("note"))
        cells = {(int(e["row"]), int(e["col"])): e["id"] for e in d["cells"]}
        ad_cells = tuple((int(e["row"]), int(e["col"])) for e in d["cells"] if e.get("is_ad"))
        return cls(d["strategy"], Grid(int(d["rows"]), int(d["cols"]), cells, ad_cells),
                   clusters, False, d.get("reason"), d.get("note"))


@dataclass(frozen=True)
class ProximityOrder:
    order: list[str]
    distances: list[float] = field(default_factory=list)


# --------------------------------------------------------------------------
# helpers


def _ad_vector(ad) -> FeatureVector:
    return ad.feature if hasattr(ad, "feature") else ad


def _rows_for(count: int, cols: int, rows: int | None = None) -> int:
    if cols < 1:
        raise DataError("cols must be at least 1")
    need = math.ceil(count / cols)
    if rows is None:
        return need
    if rows * cols < count:
        raise DataError(f"{rows}x{cols} grid cannot hold {count} items")
    return rows


def wrap(sequence: Sequence[str], cols: int, ad_ids: Sequence[str], rows: int | None = None) -> Grid:
    """Lay a reading-order sequence out row-major."""
    rows = _rows_for(len(sequence), cols, rows)
    cells = {(k // cols, k % cols): cid for k, cid in enumerate(sequence)}
    pos = {cid: cell for cell, cid in cells.items()}
    return Grid(rows, cols, cells, tuple(pos[a] for a in ad_ids))


def proximity_order(images: FeatureSet, ad) -> ProximityOrder:
    """Image ids sorted by Euclidean distance to the ad, lowest id on ties."""
    v = _ad_vector(ad)
    if len(images) == 0:
        raise DataError("empty image set")
    if v.dim != images.dim:
        raise DimensionMismatchError(f"ad has dim {v.dim}, images have dim {images.dim}")
    dist = np.linalg.norm(images.data - v.values, axis=1)
    order = sorted(range(len(images)), key=lambda i: (dist[i], images.ids[i]))
    return ProximityOrder([images.ids[i] for i in order], [float(dist[i]) for i in order])


def snake_cells(rows: int, cols: int) -> list[Cell]:
    """Boustrophedon order: even rows left to right, odd rows right to left."""
    out = []
    for r in range(rows):
        cs = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        out.extend((r, c) for c in cs)
    return out


# --------------------------------------------------------------------------
# 1-D strategies


def place_preserve_order(images: FeatureSet, ad, cols: int, rows: int | None = None) -> LayoutResult:
    """Insert the ad beside its nearest image without reordering anything.

    The ad goes on the side of whichever original-order neighbour is closer to
    it. With no left neighbour it goes right; with only a left neighbour it
    goes left; an exact tie goes right.
    """
    v = _ad_vector(ad)
    prox = proximity_order(images, v)
    ids = list(images.ids)
    p = ids.index(prox.order[0])
    side = "right"
    if p > 0:
        if p == len(ids) - 1:
            side = "left"
        else:
            dl = np.linalg.norm(images.data[p - 1] - v.values)
            dr = np.linalg.norm(images.data[p + 1] - v.values)
            side = "left" if dl < dr else "right"
    seq = ids[:p] + [v.id] + ids[p:] if side == "left" else ids[:p + 1] + [v.id] + ids[p + 1:]
    return LayoutResult("preserve", wrap(seq, cols, [v.id], rows))


def place_local_1d(images: FeatureSet, ad, cols: int, rows: int | None = None) -> LayoutResult:
    """Put the ad right after its nearest image and pull the second-nearest in after it."""
    v = _ad_vector(ad)
    if len(images) < 2:
        out = place_preserve_order(images, v, cols, rows)
        out.note = "local1d needs at least 2 images; fell back to preserve"
        return out
    first, second = proximity_order(images, v).order[:2]
    seq = [i for i in images.ids if i != second]
    p = seq.index(first)
    seq[p + 1:p + 1] = [v.id, second]
    return LayoutResult("local1d", wrap(seq, cols, [v.id], rows))


# --------------------------------------------------------------------------
# local 2-D


def central_interior_cell(rows: int, cols: int) -> Cell:
    if rows < 3 or cols < 3:
        raise DataError(f"a {rows}x{cols} grid has no interior cell")
    cr, cc = (rows - 1) / 2, (cols - 1) / 2
    interior = [(r, c) for r in range(1, rows - 1) for c in range(1, cols - 1)]
    return min(interior, key=lambda rc: ((rc[0] - cr) ** 2 + (rc[1] - cc) ** 2, rc))


def place_local_2d(
    images: FeatureSet, ad, cols: int, connectivity: int = 4, rows: int | None = None
) -> LayoutResult:
    """Surround the ad with its ``connectivity`` nearest images.

    The ad takes the interior cell nearest the grid centre. Its neighbours,
    clockwise from north, receive the nearest images in order; the rest fill
    the remaining cells row-major in their original order. ``rows`` defaults
    to the smallest count that fits everything, but at least 3.
    """
    if connectivity not in (4, 8):
        raise DataError("connectivity must be 4 or 8")
    v = _ad_vector(ad)
    n = len(images)
    if n < connectivity:
        raise DataError(f"{n} images cannot fill a {connectivity}-neighbourhood")
    if rows is None:
        rows = max(_rows_for(n + 1, cols), 3)
    else:
        _rows_for(n + 1, cols, rows)
    centre = central_interior_cell(rows, cols)
    nearest = proximity_order(images, v).order[:connectivity]
    offsets = OFFSETS_4 if connectivity == 4 else OFFSETS_8
    cells: dict[Cell, str] = {centre: v.id}
    for (dr, dc), cid in zip(offsets, nearest):
        cells[(centre[0] + dr, centre[1] + dc)] = cid
    placed = set(nearest)
    free = [(r, c) for r in range(rows) for c in range(cols) if (r, c) not in cells]
    rest = [i for i in images.ids if i not in placed]
    for cell, cid in zip(free, rest):
        cells[cell] = cid
    return LayoutResult(f"local2d-{connectivity}", Grid(rows, cols, cells, (centre,)))


# --------------------------------------------------------------------------
# embedding-based strategies


def grid_coordinates(embedding: Embedding2D, rows: int, cols: int) -> np.ndarray:
    """Affinely map embedding x to ``[0, cols-1]`` and y to ``[0, rows-1]``; returns (row, col)."""
    C = embedding.coords
    out = np.empty_like(C)
    for axis, size, dst in ((0, cols, 1), (1, rows, 0)):
        lo, hi = C[:, axis].min(), C[:, axis].max()
        if hi > lo:
            out[:, dst] = (C[:, axis] - lo) / (hi - lo) * (size - 1)
        else:
            out[:, dst] = (size - 1) / 2
    return out


def _nearest_free(target: np.ndarray, free: list[Cell]) -> Cell:
    # free is kept in row-major order, so min() resolves ties row-major
    return min(free, key=lambda rc: (rc[0] - target[0]) ** 2 + (rc[1] - target[1]) ** 2)


def _as_ad_list(ad_id) -> list[str]:
    return [ad_id] if isinstance(ad_id, str) else list(ad_id)


def place_greedy_2d(
    embedding: Embedding2D, ad_id: str | Sequence[str], cols: int, rows: int | None = None
) -> LayoutResult:
    """Snap embedded points to grid cells, ad(s) first.

    After the ads, points go in order of increasing embedding distance to the
    nearest ad (input order on ties); each takes the free cell closest to its
    rescaled position.
    """
    ads = _as_ad_list(ad_id)
    n = len(embedding)
    rows = _rows_for(n, cols, rows)
    for a in ads:
        if a not in embedding.ids:
            raise DataError(f"ad {a!r} is not in the embedding")
    G = grid_coordinates(embedding, rows, cols)
    ad_rows = [embedding.index(a) for a in ads]
    d_ad = np.min(np.linalg.norm(embedding.coords[:, None, :] - embedding.coords[ad_rows][None], axis=2), axis=1)
    rest = sorted((i for i in range(n) if i not in ad_rows), key=lambda i: (d_ad[i], i))
    free = [(r, c) for r in range(rows) for c in range(cols)]
    cells: dict[Cell, str] = {}
    for i in ad_rows + rest:
        cell = _nearest_free(G[i], free)
        free.remove(cell)
        cells[cell] = embedding.ids[i]
    pos = {cid: cell for cell, cid in cells.items()}
    return LayoutResult("greedy2d", Grid(rows, cols, cells, tuple(pos[a] for a in ads)))


def place_clustered(
    embedding: Embedding2D, clusters: ClusterAssignment, ad_id: str, cols: int, rows: int | None = None
) -> LayoutResult:
    """Give each cluster a contiguous run of cells along a snake path.

    Larger clusters come first (lower label on ties). Inside a cluster members
    are ordered by distance to its mode; the ad's cluster is ordered by
    distance to the ad instead, so the ad leads its run and its first cluster
    mate lands next to it.
    """
    missing = [i for i in embedding.ids if i not in clusters.labels]
    if missing:
        raise DataError(f"no cluster label for {missing[0]!r}")
    if ad_id not in embedding.ids:
        raise DataError(f"ad {ad_id!r} is not in the embedding")
    n = len(embedding)
    rows = _rows_for(n, cols, rows)
    sizes = clusters.sizes()
    ad_label = clusters.labels[ad_id]
    ad_xy = embedding.coords[embedding.index(ad_id)]
    sequence: list[str] = []
    for lab in sorted(sizes, key=lambda k: (-sizes[k], k)):
        members = [i for i in range(n) if clusters.labels[embedding.ids[i]] == lab]
        anchor = ad_xy if lab == ad_label else np.asarray(clusters.modes[lab])
        dist = np.linalg.norm(embedding.coords[members] - anchor, axis=1)
        ordered = [m for _, m in sorted(zip(dist.tolist(), members))]
        if lab == ad_label:
            ordered.remove(embedding.index(ad_id))
            ordered.insert(0, embedding.index(ad_id))
        sequence.extend(embedding.ids[m] for m in ordered)
    path = snake_cells(rows, cols)
    cells = dict(zip(path, sequence))
    return LayoutResult("clustered", Grid(rows, cols, cells, (path[sequence.index(ad_id)],)), clusters)


# --------------------------------------------------------------------------
# rejection and diversification


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Strict hull vertices (collinear points dropped), counter-clockwise."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64))))
    if len(pts) <= 2:
        return np.array(pts).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def rejection_checks(
    embedding: Embedding2D, clusters: ClusterAssignment, ad_id: str, enable_hull: bool = False
) -> str | None:
    """``"singleton-cluster"``, ``"convex-hull"`` or ``None`` when the ad is acceptable."""
    if ad_id not in clusters.labels or ad_id not in embedding.ids:
        raise DataError(f"ad {ad_id!r} missing from embedding or clusters")
    if clusters.sizes()[clusters.labels[ad_id]] == 1:
        return "singleton-cluster"
    if enable_hull:
        hull = convex_hull(embedding.coords)
        xy = embedding.coords[embedding.index(ad_id)]
        if np.any(np.all(hull == xy, axis=1)):
            return "convex-hull"
    return None


def diversify_by_cluster(images: FeatureSet, clusters: ClusterAssignment, cap: int) -> FeatureSet:
    """Keep at most ``cap`` images per cluster, earliest-ranked first, order preserved."""
    if cap < 1:
        raise DataError("cap must be at least 1")
    seen: dict[int, int] = {}
    keep = []
    for i, fid in enumerate(images.ids):
        if fid not in clusters.labels:
            raise DataError(f"no cluster label for {fid!r}")
        lab = clusters.labels[fid]
        if seen.get(lab, 0) < cap:
            seen[lab] = seen.get(lab, 0) + 1
            keep.append(i)
    return images.subset(keep)

"""Pick the ad that is visually closest to a whole result set.

Two vector-to-set dissimilarities are offered: ``"min"`` (distance to the
closest image) and ``"sum"`` (total distance to every image, the default).
Ties anywhere are broken by the lexicographically lowest id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError, DimensionMismatchError
from .features import FeatureSet, FeatureVector
from .quantizer import CodeArray, CompressedCode, LopqModel, reconstruct_batch

MODES = ("min", "sum")


@dataclass(frozen=True)
class AdCandidate:
    id: str
    feature: FeatureVector
    code: CompressedCode | None = None


@dataclass
class SelectionOutcome:
    mode: str
    chosen: str | None
    ranking: list[tuple[str, float]]
    per_image_nearest_ad: list[tuple[str, str]]
    reciprocal: bool
    selected: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "chosen": self.chosen,
            "reciprocal": self.reciprocal,
            "selected": list(self.selected),
            "ranking": [{"id": i, "dissimilarity": d} for i, d in self.ranking],
            "per_image_nearest_ad": [{"image": i, "ad": a} for i, a in self.per_image_nearest_ad],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SelectionOutcome":
        return cls(
            d["mode"],
            d["chosen"],
            [(r["id"], float(r["dissimilarity"])) for r in d["ranking"]],
            [(p["image"], p["ad"]) for p in d["per_image_nearest_ad"]],
            bool(d["reciprocal"]),
            list(d.get("selected", [])),
        )


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _aggregate(dist: np.ndarray, mode: str) -> np.ndarray:
    return dist.min(axis=1) if mode == "min" else dist.sum(axis=1)


def set_dissimilarity(ad: FeatureVector, images: FeatureSet, mode: str = "sum") -> float:
    _check_mode(mode)
    if len(images) == 0:
        raise DataError("empty image set")
    if ad.dim != images.dim:
        raise DimensionMismatchError(f"ad has dim {ad.dim}, images have dim {images.dim}")
    return float(_aggregate(cdist(ad.values[None, :], images.data), mode)[0])


def as_candidates(ads: FeatureSet | Sequence[AdCandidate]) -> list[AdCandidate]:
    if isinstance(ads, FeatureSet):
        return [AdCandidate(v.id, v) for v in ads]
    return list(ads)


def _order_by_value_then_id(values: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    return np.array(sorted(range(len(ids)), key=lambda i: (values[i], ids[i])), dtype=np.int64)


def _nearest_by_id(dist: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    """Column index of the row-wise minimum, lowest id winning ties."""
    by_id = np.argsort(np.asarray(ids, dtype=object), kind="stable")
    return by_id[np.argmin(dist[:, by_id], axis=1)]


def _effective_images(images: FeatureSet, use_codes: bool, model, image_codes) -> FeatureSet:
    if not use_codes:
        return images
    if model is None:
        raise DataError("use_codes requires a trained model")
    if image_codes is None or len(image_codes) != len(images):
        raise DataError("use_codes requires one code per image")
    return FeatureSet(images.ids, reconstruct_batch(image_codes, model))


def _prepare(ads, images, mode):
    _check_mode(mode)
    cands = as_candidates(ads)
    if not cands:
        raise DataError("no candidate ads")
    if len(images) == 0:
        raise DataError("empty image set")
    A = np.stack([c.feature.values for c in cands])
    if A.shape[1] != images.dim:
        raise DimensionMismatchError(f"ads have dim {A.shape[1]}, images have dim {images.dim}")
    ids = [c.id for c in cands]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate ad id")
    return cands, ids, A


def _reciprocal(chosen_row: int, dist: np.ndarray, ad_ids, image_ids) -> bool:
    img = _nearest_by_id(dist[chosen_row:chosen_row + 1], image_ids)[0]
    back = _nearest_by_id(dist[:, img:img + 1].T, ad_ids)[0]
    return bool(back == chosen_row)


def rank_ads(
    ads: FeatureSet | Sequence[AdCandidate],
    images: FeatureSet,
    mode: str = "sum",
    use_codes: bool = False,
    model: LopqModel | None = None,
    image_codes: CodeArray | None = None,
) -> SelectionOutcome:
    """Sort all ads by dissimilarity to the image set, closest first.

    With ``use_codes`` the image side is replaced by reconstructions of its
    codes; ads always stay uncompressed. The nearest ad of every image comes
    out of the same distance matrix.
    """
    cands, ad_ids, A = _prepare(ads, images, mode)
    eff = _effective_images(images, use_codes, model, image_codes)
    dist = cdist(A, eff.data)
    scores = _aggregate(dist, mode)
    order = _order_by_value_then_id(scores, ad_ids)
    nearest = _nearest_by_id(dist.T, ad_ids)
    ranking = [(ad_ids[i], float(scores[i])) for i in order]
    return SelectionOutcome(
        mode=mode,
        chosen=ranking[0][0],
        ranking=ranking,
        per_image_nearest_ad=[(eff.ids[j], ad_ids[nearest[j]]) for j in range(len(eff))],
        reciprocal=_reciprocal(int(order[0]), dist, ad_ids, eff.ids),
        selected=[ranking[0][0]],
    )


def reciprocity_check(
    chosen: AdCandidate | str,
    ads: FeatureSet | Sequence[AdCandidate],
    images: FeatureSet,
) -> bool:
    """True when the chosen ad and its nearest image are mutual nearest neighbours."""
    cands, ad_ids, A = _prepare(ads, images, "sum")
    cid = chosen if isinstance(chosen, str) else chosen.id
    if cid not in ad_ids:
        raise DataError(f"chosen ad {cid!r} is not in the pool")
    return _reciprocal(ad_ids.index(cid), cdist(A, images.data), ad_ids, images.ids)


def select_ads(
    ads: FeatureSet | Sequence[AdCandidate],
    images: FeatureSet,
    mode: str = "sum",
    k: int = 1,
    require_reciprocity: bool = False,
    use_codes: bool = False,
    model: LopqModel | None = None,
    image_codes: CodeArray | None = None,
) -> SelectionOutcome:
    """Top-``k`` ads; with ``require_reciprocity`` a non-reciprocal winner is rejected.

    Rejection leaves ``chosen`` as ``None`` but still reports the ranking.
    Reciprocity is judged in the same space the ranking used.
    """
    if k < 1:
        raise DataError("k must be at least 1")
    out = rank_ads(ads, images, mode, use_codes, model, image_codes)
    out.ranking = out.ranking[:k]
    out.selected = [i for i, _ in out.ranking]
    if require_reciprocity and not out.reciprocal:
        out.chosen = None
        out.selected = []
    return out

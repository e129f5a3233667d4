"""End-to-end run: project -> (encode) -> select -> embed/cluster -> place."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from ._serial import read_json
from .embedding import ClusterAssignment, Embedding2D, estimate_bandwidth, mean_shift, tsne_embed
from .errors import DataError, FormatError
from .features import FeatureSet, PcaModel, PermutationPlan, load_features, pipeline_from_dict, project_set
from .layout import (
    STRATEGIES,
    LayoutResult,
    diversify_by_cluster,
    place_clustered,
    place_greedy_2d,
    place_local_1d,
    place_local_2d,
    place_preserve_order,
    rejection_checks,
)
from .quantizer import CodeArray, LopqModel, encode_batch, model_from_dict, read_codes, reconstruct_batch
from .selection import MODES, SelectionOutcome, select_ads

EMBEDDING_STRATEGIES = ("greedy2d", "clustered")


@dataclass
class PipelineManifest:
    image_features: str
    ad_features: str
    query_label: str = ""
    topic: str = ""
    image_ids: str | None = None
    ad_ids: str | None = None
    image_codes: str | None = None
    model: str | None = None
    strategy: str = "greedy2d"
    mode: str = "sum"
    cols: int = 6
    rows: int | None = None
    k: int = 1
    reciprocity: bool = False
    use_codes: bool = False
    hull_check: bool = False
    cluster_cap: int | None = None
    exclude_ads: list[str] = field(default_factory=list)
    seed: int = 0
    perplexity: float | None = None
    tsne_iterations: int = 1000
    bandwidth_fraction: float = 0.1
    base_dir: str = "."

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DataError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.mode not in MODES:
            raise DataError(f"unknown mode {self.mode!r}; choose from {MODES}")

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: str | Path = ".") -> "PipelineManifest":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown manifest field(s): {sorted(unknown)}")
        d = dict(d)
        d.setdefault("base_dir", str(base_dir))
        try:
            return cls(**d)
        except TypeError as exc:
            raise FormatError(f"bad manifest: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "PipelineManifest":
        path = Path(path)
        return cls.from_dict(read_json(path), base_dir=path.parent)

    def resolve(self, rel: str | None) -> Path | None:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p


@dataclass
class PipelineResult:
    selection: SelectionOutcome
    layout: LayoutResult
    embedding: Embedding2D | None = None
    query_label: str = ""
    topic: str = ""

    def to_dict(self) -> dict[str, Any]:
        out = {
            "query_label": self.query_label,
            "topic": self.topic,
            "selection": self.selection.to_dict(),
            "layout": self.layout.to_dict(),
        }
        if self.embedding is not None:
            out["embedding"] = self.embedding.to_dict()
        return out


def load_model(path: str | Path | None):
    """Returns ``(pca, plan, lopq_or_None)`` from either model file type."""
    if path is None:
        return None, None, None
    d = read_json(path)
    fmt = d.get("format")
    if fmt == "adgrid-lopq-v1":
        m = model_from_dict(d)
        return m.pca, m.plan, m
    if fmt == "adgrid-pca-v1":
        pca, plan = pipeline_from_dict(d)
        return pca, plan, None
    raise FormatError(f"{path}: unknown model format {fmt!r}")


def _place(strategy, images, ad_vec, ads_placed, embedding, clusters, cols, rows):
    if strategy == "preserve":
        return place_preserve_order(images, ad_vec, cols, rows)
    if strategy == "local1d":
        return place_local_1d(images, ad_vec, cols, rows)
    if strategy.startswith("local2d"):
        return place_local_2d(images, ad_vec, cols, int(strategy[-1]), rows)
    if strategy == "greedy2d":
        out = place_greedy_2d(embedding, ads_placed, cols, rows)
        out.clusters = clusters
        return out
    return place_clustered(embedding, clusters, ad_vec.id, cols, rows)


def run(
    images_raw: FeatureSet,
    ads_raw: FeatureSet,
    pca: PcaModel | None = None,
    plan: PermutationPlan | None = None,
    lopq: LopqModel | None = None,
    *,
    strategy: str = "greedy2d",
    mode: str = "sum",
    cols: int = 6,
    rows: int | None = None,
    k: int = 1,
    reciprocity: bool = False,
    use_codes: bool = False,
    image_codes: CodeArray | None = None,
    hull_check: bool = False,
    cluster_cap: int | None = None,
    exclude_ads: list[str] | tuple[str, ...] = (),
    seed: int = 0,
    perplexity: float | None = None,
    tsne_iterations: int = 1000,
    bandwidth_fraction: float = 0.1,
) -> PipelineResult:
    """Select and place ads for one result set held in memory.

    Without a PCA model the raw features are only L2-normalized. With
    ``use_codes`` the image side is replaced by code reconstructions for every
    later step (selection, embedding and placement); ads are never compressed.
    Rejections come back as a rejected :class:`LayoutResult`, not an exception.
    """
    if strategy not in STRATEGIES:
        raise DataError(f"unknown strategy {strategy!r}")
    pca = pca or PcaModel.identity(images_raw.dim)
    plan = plan or PermutationPlan.identity(pca.output_dim)
    images = project_set(images_raw, pca, plan)
    ads = project_set(ads_raw, pca, plan)
    if exclude_ads:
        keep = [i for i, aid in enumerate(ads.ids) if aid not in set(exclude_ads)]
        if not keep:
            raise DataError("every ad was excluded")
        ads = ads.subset(keep)

    if use_codes:
        if lopq is None:
            raise DataError("use_codes needs a trained LOPQ model")
        if image_codes is None:
            image_codes = encode_batch(images, lopq)
        space = FeatureSet(images.ids, reconstruct_batch(image_codes, lopq))
    else:
        space = images

    sel = select_ads(ads, images, mode, k, reciprocity, use_codes, lopq, image_codes)
    if sel.chosen is None:
        return PipelineResult(sel, LayoutResult.rejection(strategy, "non-reciprocal"))

    ad_vec = ads[ads.index(sel.chosen)]
    note = None
    placed = [sel.chosen]
    if len(sel.selected) > 1:
        if strategy == "greedy2d":
            placed = list(sel.selected)
        else:
            note = f"{strategy} places only the top-ranked ad"

    embedding = clusters = None
    if strategy in EMBEDDING_STRATEGIES:
        joint = FeatureSet(space.ids + placed, np.vstack([space.data] + [ads.data[ads.index(a)] for a in placed]))
        embedding = tsne_embed(joint, perplexity, tsne_iterations, seed)
        clusters = mean_shift(embedding, estimate_bandwidth(embedding, bandwidth_fraction))
        reason = rejection_checks(embedding, clusters, sel.chosen, hull_check)
        if reason is not None:
            return PipelineResult(sel, LayoutResult.rejection(strategy, reason, clusters), embedding)
        if cluster_cap is not None:
            space = diversify_by_cluster(space, clusters, cluster_cap)
            keep_ids = space.ids + placed
            embedding = embedding.subset(keep_ids)
            clusters = ClusterAssignment({i: clusters.labels[i] for i in keep_ids}, clusters.modes, clusters.bandwidth)
    elif cluster_cap is not None:
        note = "cluster_cap applies only to embedding-based strategies"

    layout = _place(strategy, space, ad_vec, placed, embedding, clusters, cols, rows)
    layout.note = layout.note or note
    return PipelineResult(sel, layout, embedding)


def run_pipeline(manifest: PipelineManifest | str | Path) -> PipelineResult:
    if not isinstance(manifest, PipelineManifest):
        manifest = PipelineManifest.load(manifest)
    m = manifest
    images = load_features(m.resolve(m.image_features), m.resolve(m.image_ids))
    ads = load_features(m.resolve(m.ad_features), m.resolve(m.ad_ids))
    pca, plan, lopq = load_model(m.resolve(m.model))
    codes = None
    if m.image_codes:
        codes, M, b = read_codes(m.resolve(m.image_codes))
        if len(codes) != len(images):
            raise DataError(f"{len(codes)} codes for {len(images)} images")
        if lopq is None or M != lopq.M or b != lopq.bits:
            raise DataError("code file does not match the model configuration")
    out = run(
        images, ads, pca, plan, lopq,
        strategy=m.strategy, mode=m.mode, cols=m.cols, rows=m.rows, k=m.k,
        reciprocity=m.reciprocity, use_codes=m.use_codes, image_codes=codes,
        hull_check=m.hull_check, cluster_cap=m.cluster_cap, exclude_ads=m.exclude_ads,
        seed=m.seed, perplexity=m.perplexity, tsne_iterations=m.tsne_iterations,
        bandwidth_fraction=m.bandwidth_fraction,
    )
    out.query_label, out.topic = m.query_label, m.topic
    return out

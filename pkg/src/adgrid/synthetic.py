"""Synthetic ad corpus and result sets, plus the compressed-vs-exact agreement benchmark.

The generator mimics a topical ad inventory: every topic is a Gaussian blob in
raw feature space, ads and result images are drawn from the blobs, and a
separate training corpus (mixed across topics) feeds PCA and codebook
training. Feature variance decays with the dimension index so that PCA and the
variance-balancing permutation have something to do.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ._serial import read_json, write_json
from .errors import DataError, DimensionMismatchError
from .features import FeatureSet, PcaModel, PermutationPlan, project_set, read_ids, read_vff, write_ids, write_vff
from .selection import rank_ads

# ad counts per topic of the reference inventory (150 ads in total)
REFERENCE_ADS_PER_TOPIC = (23, 48, 45, 16, 18)
REFERENCE_TOPICS = ("animals", "cars", "fashion", "movies", "tv")


@dataclass(frozen=True)
class SyntheticConfig:
    topics: int = 5
    ads_per_topic: tuple[int, ...] = REFERENCE_ADS_PER_TOPIC
    images_per_query: int = 24
    queries: int = 100
    d: int = 128
    separation: float = 3.0
    train_size: int = 4000
    seed: int = 0

    def __post_init__(self):
        if not self.separation > 0:
            raise DataError("separation must be positive")
        if self.topics < 1 or len(self.ads_per_topic) != self.topics:
            raise DataError("ads_per_topic needs one count per topic")
        if min(self.ads_per_topic) < 1 or self.images_per_query < 1 or self.queries < 1 or self.d < 1:
            raise DataError("counts and dimension must be positive")


def topic_names(n: int) -> list[str]:
    return list(REFERENCE_TOPICS) if n == len(REFERENCE_TOPICS) else [f"topic{t}" for t in range(n)]


def gen_synthetic(out_dir: str | Path, config: SyntheticConfig = SyntheticConfig()) -> Path:
    """Write a dataset directory and return its path.

    Layout::

        ads.vff / ads.ids          all ads, raw features
        train.vff                  training corpus for PCA and codebooks
        queries/qNNN.vff / .ids    one result set per query
        truth.json                 topic of every ad and query, plus the config
    """
    out = Path(out_dir)
    (out / "queries").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    d = config.d
    scale = 1.0 / np.sqrt(1.0 + np.arange(d) / 16.0)
    offset = np.ones(d)
    centres = offset + config.separation * rng.standard_normal((config.topics, d)) * scale
    names = topic_names(config.topics)

    def draw(topic: int, count: int) -> np.ndarray:
        return centres[topic] + rng.standard_normal((count, d)) * scale

    ad_ids, ad_rows, ad_topics = [], [], {}
    for t, count in enumerate(config.ads_per_topic):
        ad_rows.append(draw(t, count))
        for j in range(count):
            aid = f"{names[t]}-{j:03d}"
            ad_ids.append(aid)
            ad_topics[aid] = names[t]
    write_vff(np.concatenate(ad_rows), out / "ads.vff")
    write_ids(ad_ids, out / "ads.ids")

    train_topics = rng.integers(config.topics, size=config.train_size)
    train = centres[train_topics] + rng.standard_normal((config.train_size, d)) * scale
    write_vff(train, out / "train.vff")

    queries = []
    for q in range(config.queries):
        t = q % config.topics
        qid = f"q{q:03d}"
        write_vff(draw(t, config.images_per_query), out / "queries" / f"{qid}.vff")
        write_ids([f"{qid}-i{j:02d}" for j in range(config.images_per_query)], out / "queries" / f"{qid}.ids")
        queries.append({"id": qid, "topic": names[t], "features": f"queries/{qid}.vff"})

    cfg = asdict(config)
    cfg["ads_per_topic"] = list(config.ads_per_topic)
    write_json({"config": cfg, "topics": names, "ad_topics": ad_topics, "queries": queries}, out / "truth.json")
    return out


@dataclass
class SyntheticDataset:
    root: Path
    ads: FeatureSet
    train: FeatureSet
    queries: list[tuple[str, str, FeatureSet]]  # (query id, topic, raw images)
    ad_topics: dict[str, str]
    topics: list[str]


def load_dataset(root: str | Path) -> SyntheticDataset:
    root = Path(root)
    truth = read_json(root / "truth.json")
    ads = read_vff(root / "ads.vff", read_ids(root / "ads.ids"))
    train = read_vff(root / "train.vff")
    queries = []
    for q in truth["queries"]:
        path = root / q["features"]
        queries.append((q["id"], q["topic"], read_vff(path, read_ids(path.with_suffix(".ids")))))
    return SyntheticDataset(root, ads, train, queries, truth["ad_topics"], truth["topics"])


@dataclass(frozen=True)
class IdentityCodec:
    """Stand-in "compression" whose reconstruction is the input itself."""

    pca: PcaModel
    plan: PermutationPlan

    def roundtrip(self, X: np.ndarray) -> np.ndarray:
        return np.array(X, dtype=np.float64, copy=True)


@dataclass
class AgreementReport:
    per_topic: dict[str, float]
    overall: float
    num_queries: int
    per_query: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_topic": dict(self.per_topic),
            "overall": self.overall,
            "num_queries": self.num_queries,
            "per_query": list(self.per_query),
        }


def eval_agreement(
    dataset: SyntheticDataset | str | Path,
    model,
    queries: int | None = None,
    mode: str = "sum",
) -> AgreementReport:
    """How often the compressed image features pick the same ad as the exact ones.

    ``model`` needs ``pca``, ``plan`` and ``roundtrip(X)``; a trained
    :class:`~adgrid.quantizer.LopqModel` or :class:`IdentityCodec`. Ads stay
    uncompressed in both runs.
    """
    if not isinstance(dataset, SyntheticDataset):
        dataset = load_dataset(dataset)
    if dataset.ads.dim != model.pca.input_dim:
        raise DimensionMismatchError(f"dataset dim {dataset.ads.dim}, model expects {model.pca.input_dim}")
    use = dataset.queries if queries is None else dataset.queries[:queries]
    if not use:
        raise DataError("no queries to evaluate")
    ads = project_set(dataset.ads, model.pca, model.plan)
    hits: dict[str, list[int]] = {t: [] for t in dataset.topics}
    rows = []
    for qid, topic, raw in use:
        images = project_set(raw, model.pca, model.plan)
        exact = rank_ads(ads, images, mode).chosen
        approx = rank_ads(ads, FeatureSet(images.ids, model.roundtrip(images.data)), mode).chosen
        hit = int(exact == approx)
        hits[topic].append(hit)
        rows.append({"query": qid, "topic": topic, "exact": exact, "compressed": approx, "agree": bool(hit)})
    per_topic = {t: float(np.mean(v)) for t, v in hits.items() if v}
    overall = float(np.mean([r["agree"] for r in rows]))
    return AgreementReport(per_topic, overall, len(rows), rows)

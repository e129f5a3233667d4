import json

import numpy as np
import pytest

from adgrid.errors import DataError, DimensionMismatchError, FormatError
from adgrid.features import FeatureSet, fit_pca, fit_permutation, project_set, write_ids, write_vff
from adgrid.pipeline import PipelineManifest, run, run_pipeline
from adgrid.quantizer import LopqConfig, fit_lopq
from adgrid.selection import rank_ads
from adgrid.synthetic import (
    REFERENCE_ADS_PER_TOPIC,
    IdentityCodec,
    SyntheticConfig,
    eval_agreement,
    gen_synthetic,
    load_dataset,
)

SMALL = SyntheticConfig(ads_per_topic=(6, 8, 7, 5, 4), images_per_query=12, queries=10, d=16, train_size=600, seed=3)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    return load_dataset(gen_synthetic(tmp_path_factory.mktemp("syn"), SMALL))


@pytest.fixture(scope="module")
def small_model(small_dataset):
    pca = fit_pca(small_dataset.train, 16)
    plan = fit_permutation(pca.variances, 4)
    return fit_lopq(project_set(small_dataset.train, pca, plan), LopqConfig(bits=3, M=4, seed=0), pca, plan)


# -- generator ------------------------------------------------------------------


def test_reference_corpus_shape():
    assert sum(REFERENCE_ADS_PER_TOPIC) == 150 and len(REFERENCE_ADS_PER_TOPIC) == 5
    assert SyntheticConfig().ads_per_topic == (23, 48, 45, 16, 18)


def test_generator_layout(small_dataset):
    ds = small_dataset
    assert len(ds.ads) == 30 and ds.ads.dim == 16 and len(ds.train) == 600
    assert len(ds.queries) == 10
    assert [t for _, t, _ in ds.queries[:5]] == ds.topics
    assert sum(1 for t in ds.ad_topics.values() if t == "cars") == 8


def test_generator_deterministic(tmp_path):
    a = gen_synthetic(tmp_path / "a", SMALL)
    b = gen_synthetic(tmp_path / "b", SMALL)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


@pytest.mark.parametrize("sep", [0.0, -1.0])
def test_generator_rejects_bad_separation(sep):
    with pytest.raises(DataError):
        SyntheticConfig(separation=sep)


def test_sum_mode_picks_generating_topic(tmp_path):
    ds = load_dataset(gen_synthetic(tmp_path, SyntheticConfig(queries=100, train_size=300, seed=11)))
    hits = [ds.ad_topics[rank_ads(ds.ads, imgs, "sum").chosen] == topic for _, topic, imgs in ds.queries]
    assert np.mean(hits) >= 0.95


# -- agreement ------------------------------------------------------------------


def test_identity_codec_agrees_exactly(small_dataset, small_model):
    rep = eval_agreement(small_dataset, IdentityCodec(small_model.pca, small_model.plan))
    assert rep.overall == 1.0 and rep.num_queries == 10
    assert all(v == 1.0 for v in rep.per_topic.values())


def test_report_consistency(small_dataset, small_model):
    rep = eval_agreement(small_dataset, small_model, queries=7)
    assert rep.num_queries == 7 == len(rep.per_query)
    assert rep.overall == pytest.approx(np.mean([r["agree"] for r in rep.per_query]))
    assert all(0.0 <= v <= 1.0 for v in rep.per_topic.values())
    json.dumps(rep.to_dict())


def test_agreement_dimension_check(small_dataset):
    from adgrid.features import PcaModel, PermutationPlan

    with pytest.raises(DimensionMismatchError):
        eval_agreement(small_dataset, IdentityCodec(PcaModel.identity(8), PermutationPlan.identity(8)))


# -- in-memory run ----------------------------------------------------------------


def test_one_image_one_ad_preserve():
    imgs = FeatureSet.from_array(np.array([[1.0, 2.0]]), ids=["img"])
    ads = FeatureSet.from_array(np.array([[2.0, 1.0]]), ids=["ad"])
    out = run(imgs, ads, strategy="preserve", cols=3)
    g = out.layout.grid
    assert (g.rows, g.cols) == (1, 3) and g.reading_order() == ["img", "ad"]


@pytest.mark.parametrize("strategy", ["preserve", "local1d", "local2d-4", "local2d-8", "greedy2d", "clustered"])
def test_all_strategies_on_a_query(small_dataset, small_model, strategy):
    _, _, imgs = small_dataset.queries[0]
    out = run(imgs, small_dataset.ads, small_model.pca, small_model.plan, small_model,
              strategy=strategy, use_codes=True, cols=5, tsne_iterations=300)
    assert out.selection.chosen is not None
    if out.layout.rejected:
        assert out.layout.reason in ("singleton-cluster", "convex-hull")
    else:
        assert sorted(out.layout.grid.cells.values()) == sorted(imgs.ids + [out.selection.chosen])


def test_reciprocity_rejection_surfaces_as_layout():
    # unit vectors, so projection leaves them alone; a1 wins on sum but i0 is closer to a2
    imgs = FeatureSet.from_array(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), ids=["i0", "i1"])
    t = np.deg2rad(10)
    ads = FeatureSet.from_array(np.array([[0.5 ** 0.5, 0.5 ** 0.5, 0.0], [np.cos(t), -np.sin(t), 0.0]]),
                                ids=["a1", "a2"])
    out = run(imgs, ads, strategy="preserve", reciprocity=True)
    assert out.selection.ranking[0][0] == "a1" and out.selection.chosen is None
    assert out.layout.rejected and out.layout.reason == "non-reciprocal" and out.layout.grid is None
    again = run(imgs, ads, strategy="preserve", reciprocity=True, exclude_ads=["a1"])
    assert again.selection.chosen == "a2" and not again.layout.rejected


def test_exclude_everything():
    imgs = FeatureSet.from_array(np.eye(3))
    with pytest.raises(DataError):
        run(imgs, FeatureSet.from_array(np.eye(3), prefix="a"), exclude_ads=["a0", "a1", "a2"])


def test_cluster_cap_limits_images(small_dataset, small_model):
    _, _, imgs = small_dataset.queries[1]
    out = run(imgs, small_dataset.ads, small_model.pca, small_model.plan, strategy="greedy2d",
              cluster_cap=2, tsne_iterations=300)
    if not out.layout.rejected:
        labels = out.layout.clusters.labels
        placed = [i for i in out.layout.grid.cells.values() if i in imgs.ids]
        for lab in set(labels[i] for i in placed):
            assert sum(labels[i] == lab for i in placed) <= 2


def test_top_k_greedy_places_several_ads(small_dataset, small_model):
    _, _, imgs = small_dataset.queries[2]
    out = run(imgs, small_dataset.ads, small_model.pca, small_model.plan, strategy="greedy2d", k=3,
              tsne_iterations=300)
    if not out.layout.rejected:
        assert out.layout.grid.ad_ids == out.selection.selected and len(out.selection.selected) == 3
    pres = run(imgs, small_dataset.ads, small_model.pca, small_model.plan, strategy="preserve", k=3)
    assert pres.layout.grid.ad_ids == [pres.selection.chosen] and pres.layout.note


# -- manifests ----------------------------------------------------------------------


def _write_manifest(path, **fields):
    path.write_text(json.dumps(fields))
    return path


def test_manifest_run_resolves_relative_paths(tmp_path):
    rng = np.random.default_rng(0)
    write_vff(rng.normal(size=(6, 4)), tmp_path / "imgs.vff")
    write_vff(rng.normal(size=(9, 4)), tmp_path / "ads.vff")
    write_ids([f"ad{k}" for k in range(9)], tmp_path / "ads.ids")
    m = _write_manifest(tmp_path / "m.json", image_features="imgs.vff", ad_features="ads.vff",
                        strategy="local2d-4", cols=3, query_label="red shoes")
    out = run_pipeline(m)
    assert out.query_label == "red shoes"
    assert out.selection.chosen.startswith("ad")
    assert json.loads(json.dumps(out.to_dict()))["layout"]["strategy"] == "local2d-4"


@pytest.mark.parametrize("fields,err", [
    ({"image_features": "a", "ad_features": "b", "bogus": 1}, FormatError),
    ({"image_features": "a", "ad_features": "b", "strategy": "spiral"}, DataError),
    ({"image_features": "a", "ad_features": "b", "mode": "max"}, DataError),
    ({"ad_features": "b"}, FormatError),
])
def test_manifest_validation(fields, err):
    with pytest.raises(err):
        PipelineManifest.from_dict(fields)


def test_use_codes_without_model(tmp_path):
    write_vff(np.eye(4), tmp_path / "i.vff")
    write_vff(np.eye(4), tmp_path / "a.vff")
    m = _write_manifest(tmp_path / "m.json", image_features="i.vff", ad_features="a.vff", use_codes=True)
    with pytest.raises(DataError):
        run_pipeline(m)

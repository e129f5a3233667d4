import io
import itertools
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adgrid.errors import DataError, DegenerateInputError, DimensionMismatchError, FormatError, InsufficientDataError
from adgrid.features import (
    FeatureSet,
    FeatureVector,
    PcaModel,
    PermutationPlan,
    fit_pca,
    fit_permutation,
    ingest_features,
    l2_normalize,
    load_features,
    pipeline_from_dict,
    pipeline_to_dict,
    project,
    project_set,
    read_vff,
    write_ids,
    write_vff,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vff_bytes(dim, count, values):
    return struct.pack("<4sIQ", b"VFF1", dim, count) + struct.pack(f"<{len(values)}f", *values)


# -- ingest ------------------------------------------------------------------


def test_binary_single_row():
    fs = ingest_features(io.BytesIO(vff_bytes(2, 1, [1.0, 2.0])), "binary")
    assert fs.ids == ["0"]
    np.testing.assert_array_equal(fs.data, [[1.0, 2.0]])


def test_jsonl_record():
    fs = ingest_features(io.StringIO('{"id":"a","vec":[0,0,0]}\n'), "json-lines")
    assert fs.ids == ["a"] and fs.dim == 3


def test_binary_row_with_extra_value_is_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        ingest_features(io.BytesIO(vff_bytes(2, 2, [1.0, 2.0, 3.0, 4.0, 5.0])), "binary")


def test_jsonl_dimension_mismatch():
    src = io.StringIO('{"id":"a","vec":[1,2]}\n{"id":"b","vec":[1,2,3]}\n')
    with pytest.raises(DimensionMismatchError):
        ingest_features(src, "json-lines")


@pytest.mark.parametrize(
    "blob",
    [b"VFF", b"XXXX" + b"\0" * 12, vff_bytes(2, 3, [1.0, 2.0])],
    ids=["short-header", "bad-magic", "count-mismatch"],
)
def test_malformed_binary(blob):
    with pytest.raises(FormatError):
        ingest_features(io.BytesIO(blob), "binary")


def test_non_finite_rejected():
    with pytest.raises(DataError):
        ingest_features(io.BytesIO(vff_bytes(2, 1, [1.0, float("nan")])), "binary")
    with pytest.raises(DataError):
        ingest_features(io.StringIO('{"id":"a","vec":[1, Infinity]}\n'), "json-lines")


def test_duplicate_ids_rejected():
    src = io.StringIO('{"id":"a","vec":[1]}\n{"id":"a","vec":[2]}\n')
    with pytest.raises(DataError, match="duplicate"):
        ingest_features(src, "json-lines")


def test_sidecar_ids(tmp_path):
    write_vff(np.eye(3), tmp_path / "x.vff")
    write_ids(["p", "q", "r"], tmp_path / "x.ids")
    assert load_features(tmp_path / "x.vff").ids == ["p", "q", "r"]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=st.floats(-1e6, 1e6, width=32)))
def test_binary_roundtrip_bit_exact(X):
    buf = io.BytesIO()
    write_vff(X, buf)
    buf.seek(0)
    back = read_vff(buf)
    buf2 = io.BytesIO()
    write_vff(back, buf2)
    assert buf.getvalue() == buf2.getvalue()
    np.testing.assert_array_equal(back.data.astype(np.float32), X)


# -- normalization -----------------------------------------------------------


@pytest.mark.parametrize("v,expected", [([3, 4], [0.6, 0.8]), ([1, 0, 0], [1, 0, 0])])
def test_l2_normalize(v, expected):
    np.testing.assert_allclose(l2_normalize(FeatureVector("x", v)).values, expected, atol=1e-15)


def test_l2_normalize_zero():
    with pytest.raises(DegenerateInputError):
        l2_normalize(FeatureVector("z", [0.0, 0.0]))


@given(st.lists(finite, min_size=1, max_size=32).filter(lambda v: np.linalg.norm(v) > 1e-6))
def test_l2_normalize_unit_norm(v):
    assert abs(np.linalg.norm(l2_normalize(FeatureVector("v", v)).values) - 1.0) < 1e-9


# -- PCA ---------------------------------------------------------------------


def test_pca_axis_aligned():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20000, 2)) * [2.0, 1.0]
    pca = fit_pca(X, 1)
    np.testing.assert_allclose(np.abs(pca.basis[0]), [1, 0], atol=0.02)
    assert pca.basis[0, 0] > 0  # sign convention
    assert abs(pca.variances[0] - 4.0) < 0.15


def test_pca_full_rank_reconstructs_exactly():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 6))
    pca = fit_pca(X, 6)
    np.testing.assert_allclose(pca.inverse_transform(pca.transform(X)), X, atol=1e-6)


def test_pca_reconstruction_error_equals_discarded_eigenvalues():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 8)) @ rng.normal(size=(8, 8))
    pca = fit_pca(X, 4)
    mse = np.mean(np.sum((X - pca.inverse_transform(pca.transform(X))) ** 2, axis=1))
    # oracle: eigenvalues of the 1/N covariance, computed independently
    Xc = X - X.mean(0)
    evals = np.sort(np.linalg.eigvalsh(Xc.T @ Xc / len(X)))[::-1]
    assert abs(mse - evals[4:].sum()) < 1e-6


def test_pca_basis_orthonormal_and_sorted():
    rng = np.random.default_rng(3)
    pca = fit_pca(rng.normal(size=(300, 40)) * np.linspace(3, 0.1, 40), 16)
    np.testing.assert_allclose(pca.basis @ pca.basis.T, np.eye(16), atol=1e-6)
    assert np.all(np.diff(pca.variances) <= 0) and np.all(pca.variances >= 0)
    rows = np.arange(16)
    assert np.all(pca.basis[rows, np.argmax(np.abs(pca.basis), axis=1)] > 0)


def test_pca_errors():
    with pytest.raises(InsufficientDataError):
        fit_pca(np.zeros((3, 8)), 4)
    with pytest.raises(DataError):
        fit_pca(np.zeros((30, 4)), 5)


# -- permutation -------------------------------------------------------------


def _bucket_values(plan, variances):
    w = plan.dim // plan.num_subvectors
    return [sorted(variances[plan.perm[b * w:(b + 1) * w]].tolist(), reverse=True) for b in range(plan.num_subvectors)]


def test_permutation_exact_balance():
    v = np.array([4.0, 3, 2, 1])
    plan = fit_permutation(v, 2)
    assert _bucket_values(plan, v) == [[4, 1], [3, 2]]
    np.testing.assert_array_equal(plan.bucket_variance, [5, 5])


def test_permutation_equal_variances():
    plan = fit_permutation(np.ones(16), 4)
    assert np.all(plan.bucket_variance == plan.bucket_variance[0])


def test_permutation_greedy_example_against_exhaustive_search():
    v = np.array([8.0, 5, 4, 2, 2, 1])
    plan = fit_permutation(v, 2)
    # exhaustive: best achievable split of 6 dims into two triples
    best = min(abs(v[list(c)].sum() - (v.sum() - v[list(c)].sum())) for c in itertools.combinations(range(6), 3))
    assert best == 0
    np.testing.assert_array_equal(plan.bucket_variance, [11, 11])
    assert _bucket_values(plan, v) == [[8, 2, 1], [5, 4, 2]]


def test_permutation_not_divisible():
    with pytest.raises(DataError):
        fit_permutation(np.ones(6), 4)


@given(st.integers(1, 8).flatmap(lambda M: st.tuples(
    st.just(M), st.lists(st.floats(0, 100), min_size=M, max_size=M * 6).map(lambda v: v[: len(v) // M * M]))))
def test_permutation_properties(args):
    M, v = args
    v = np.array(v)
    plan = fit_permutation(v, M)
    assert sorted(plan.perm.tolist()) == list(range(len(v)))
    w = len(v) // M
    sums = [v[plan.perm[b * w:(b + 1) * w]].sum() for b in range(M)]
    np.testing.assert_allclose(sums, plan.bucket_variance)
    assert max(sums) - min(sums) <= v.max() + 1e-9


# -- projection --------------------------------------------------------------


def test_project_identity():
    v = FeatureVector("v", np.array([0.6, 0.0, 0.8]))
    out = project(v, PcaModel.identity(3), PermutationPlan.identity(3))
    np.testing.assert_allclose(out.values, v.values, atol=1e-15)


def test_project_mean_is_degenerate():
    rng = np.random.default_rng(4)
    pca = fit_pca(rng.normal(size=(40, 6)), 4)
    with pytest.raises(DegenerateInputError):
        project(FeatureVector("m", pca.mean), pca, fit_permutation(pca.variances, 2))


def test_project_matches_matrix_oracle():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 12))
    pca = fit_pca(X, 8)
    plan = fit_permutation(pca.variances, 4)
    v = rng.normal(size=12)
    P = np.zeros((8, 8))
    P[np.arange(8), plan.perm] = 1.0  # permutation matrix: row j picks source dim perm[j]
    expected = P @ (pca.basis @ (v - pca.mean))
    expected /= np.sqrt(np.sum(expected ** 2))
    np.testing.assert_allclose(project(FeatureVector("v", v), pca, plan).values, expected, atol=1e-6)


def test_project_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        project(FeatureVector("v", [1.0, 2.0]), PcaModel.identity(3), PermutationPlan.identity(3))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_identity_projection_keeps_nearest_neighbour_and_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    pool = rng.normal(size=(10, 5))
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    q = rng.normal(size=5)
    q /= np.linalg.norm(q)
    pca, plan = PcaModel.identity(5), PermutationPlan.identity(5)
    fs = project_set(FeatureSet.from_array(pool), pca, plan)
    pq = project(FeatureVector("q", q), pca, plan)
    assert np.argmin(np.linalg.norm(pool - q, axis=1)) == np.argmin(np.linalg.norm(fs.data - pq.values, axis=1))
    np.testing.assert_allclose(project(pq, pca, plan).values, pq.values, atol=1e-12)


def test_model_json_roundtrip():
    rng = np.random.default_rng(6)
    pca = fit_pca(rng.normal(size=(100, 8)), 8)
    plan = fit_permutation(pca.variances, 4)
    doc = json.loads(json.dumps(pipeline_to_dict(pca, plan)))
    pca2, plan2 = pipeline_from_dict(doc)
    np.testing.assert_array_equal(plan2.perm, plan.perm)
    np.testing.assert_allclose(pca2.basis, pca.basis, atol=1e-6)
    assert pca2.basis.dtype == np.float64

"""
Compressing features into 20-byte codes
=======================================

Result images are stored as short codes: two coarse indices that pick a
cell, plus one byte per sub-vector for the residual. This walk-through trains
a small model, encodes a few vectors and checks that table-based distances
agree with distances to the reconstructions.
"""

import numpy as np

from adgrid import FeatureSet, LopqConfig, fit_lopq, fit_pca, fit_permutation, project_set
from adgrid.quantizer import AdcTables, adc_distance, code_size_bits, encode_batch, pack_code, reconstruct_batch

rng = np.random.default_rng(0)

# %%
# A toy corpus: 8 clusters in 64 dimensions with decaying variance.
centres = rng.normal(size=(8, 64)) * np.linspace(3, 0.3, 64)
raw = FeatureSet.from_array(centres[rng.integers(8, size=3000)] + 0.4 * rng.normal(size=(3000, 64)))

# %%
# PCA rotates onto the principal axes; the permutation then deals the
# variance out over the 8 sub-vectors. Eight clusters give only seven strong
# directions, so one bucket is left with the weak tail.
pca = fit_pca(raw, 64)
plan = fit_permutation(pca.variances, 8)
print("variance per sub-vector:", np.round(plan.bucket_variance, 2))

train = project_set(raw, pca, plan)
model = fit_lopq(train, LopqConfig(bits=6, M=8, seed=0), pca, plan)

# %%
# Every code costs 8 * M + 2 * b bits.
print("bits per code:", code_size_bits(8, 6), "->", len(pack_code(encode_batch(train.data[:1], model)[0], 6)), "bytes")
print("the 128-dim, M=16, b=13 configuration costs", code_size_bits(16, 13), "bits")

# %%
# Reconstruction error relative to the (unit) norm of the projected vectors.
codes = encode_batch(train.data[:500], model)
err = np.linalg.norm(train.data[:500] - reconstruct_batch(codes, model), axis=1)
print(f"median reconstruction error: {np.median(err):.3f}")

# %%
# Asymmetric distances: the query stays exact, the database side is a code.
q = train.data[1234]
tables = AdcTables(q, model)
for code, rec in list(zip(codes, reconstruct_batch(codes, model)))[:3]:
    print(f"adc {adc_distance(q, code, model, tables):.6f}   direct {np.sum((q - rec) ** 2):.6f}")

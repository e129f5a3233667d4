"""
Does compression change the chosen ad?
======================================

For each query the ad is selected twice, once with exact image features and
once with features reconstructed from their codes (ads stay exact). The
agreement rate is reported per topic. The synthetic corpus mirrors the shape
of a 150-ad inventory over five topics.
"""

import tempfile

from adgrid import LopqConfig, fit_lopq, fit_pca, fit_permutation, project_set
from adgrid.synthetic import IdentityCodec, SyntheticConfig, eval_agreement, gen_synthetic, load_dataset

root = gen_synthetic(tempfile.mkdtemp(prefix="adgrid-"), SyntheticConfig(seed=0))
ds = load_dataset(root)
print(f"{len(ds.ads)} ads, {len(ds.queries)} queries, dataset in {root}")

# %%
pca = fit_pca(ds.train, 128)
plan = fit_permutation(pca.variances, 16)
model = fit_lopq(project_set(ds.train, pca, plan), LopqConfig(bits=8, M=16, seed=0), pca, plan)

# %%
report = eval_agreement(ds, model)
for topic, acc in report.per_topic.items():
    print(f"{topic:>8}: {acc:.2f}")
print(f" overall: {report.overall:.2f}")

# %%
# Sanity check: a codec that returns its input agrees every time.
print("lossless:", eval_agreement(ds, IdentityCodec(pca, plan)).overall)

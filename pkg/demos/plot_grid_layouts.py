"""
Placing the ad on the grid
==========================

The same result set laid out with each strategy. Lower-case ids are images,
``AD`` marks the ad. The embedding strategies first project images and ad to
2-D with t-SNE and cluster the projection with mean shift.
"""

import numpy as np

from adgrid import FeatureSet
from adgrid.pipeline import run

rng = np.random.default_rng(3)

# %%
# Three visual themes among 17 result images and a small ad pool close to
# the second theme.
themes = rng.normal(size=(3, 32)) * 2
labels = rng.integers(3, size=17)
images = FeatureSet.from_array(themes[labels] + 0.5 * rng.normal(size=(17, 32)), prefix="img")
ads = FeatureSet.from_array(themes[1] + 0.5 * rng.normal(size=(6, 32)), prefix="ad")


def show(layout):
    g = layout.grid
    for r in range(g.rows):
        row = [g.cells.get((r, c), "") for c in range(g.cols)]
        print("  ".join(("AD" if cid in g.ad_ids else cid.replace("img", "")).rjust(3) for cid in row))


# %%
for strategy in ("preserve", "local1d", "local2d-8", "greedy2d", "clustered"):
    out = run(images, ads, strategy=strategy, cols=6, seed=0)
    print(f"\n{strategy}: ad {out.selection.chosen}")
    if out.layout.rejected:
        print("  rejected:", out.layout.reason)
    else:
        show(out.layout)

# %%
# The clustered layout can also be written out as a static contact sheet.
from adgrid.render import render_html  # noqa: E402

out = run(images, ads, strategy="clustered", cols=6, seed=0)
html = render_html(out.layout, title="clustered layout")
print(f"\ncontact sheet: {len(html)} bytes, {html.count('Sponsored</span>')} sponsored cell")

"""
Choosing the ad for a result page
=================================

An ad can be scored against a set of result images by its closest image
(min) or by the sum of its distances to every image (sum). The two rules can
disagree, and the sum rule favours ads that sit in the middle of the set.
"""

import numpy as np

from adgrid import FeatureSet, rank_ads, select_ads

images = FeatureSet.from_array(np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 5.0]]), ids=["i1", "i2", "i3"])
ads = FeatureSet.from_array(np.array([[0.1, 0.0], [2.0, 1.5]]), ids=["a1", "a2"])

# %%
# ``a1`` almost coincides with ``i1`` and wins under min; ``a2`` is central
# and wins under sum.
for mode in ("min", "sum"):
    out = rank_ads(ads, images, mode)
    print(mode, [(i, round(d, 3)) for i, d in out.ranking])

# %%
# Reciprocity: the winner's nearest image must also pick the winner as its
# nearest ad. Here ``a1`` wins on sum, but ``i0`` prefers ``a2``.
images = FeatureSet.from_array(np.array([[0.0, 0.0], [10.0, 0.0]]), ids=["i0", "i1"])
ads = FeatureSet.from_array(np.array([[5.0, 0.0], [-0.5, 0.0]]), ids=["a1", "a2"])
strict = select_ads(ads, images, "sum", require_reciprocity=True)
print("chosen:", strict.chosen, "reciprocal:", strict.reciprocal)
print("nearest ad per image:", strict.per_image_nearest_ad)

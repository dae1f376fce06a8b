#!/usr/bin/env python3
# Causal modality blinding: drop whole channel groups per sample and thin
# them per point, leaving coordinates untouched and zeros where data is gone.

import numpy as np

from pointforge.modality import blind_per_point, blind_per_sample, unify_features
from pointforge.synthbench import gen_indoor

cloud = gen_indoor(5)
rng = np.random.default_rng(0)

print(f"indoor cloud: {cloud.n} points, all colored, all with normals")
feats = unify_features(cloud)
print(f"unified features: {feats.shape}, nonzero color rows: "
      f"{int((feats[:, 3:6] != 0).any(axis=1).sum())}")

drops = 0
trials = 2000
for _ in range(trials):
    out = blind_per_sample(cloud, 0.3, 0.3, rng)
    drops += not out.has_colors.any()
print(f"\nper-sample color drop rate over {trials} trials: {drops / trials:.3f} "
      f"(target 0.3)")

thinned = blind_per_point(cloud, 0.2, rng)
print(f"per-point survival: colors {thinned.has_colors.mean():.3f}, "
      f"normals {thinned.has_normals.mean():.3f} (target 0.8)")

both = blind_per_point(blind_per_sample(cloud, 1.0, 1.0, rng), 1.0, rng)
feats = unify_features(both)
print(f"\nfully blinded: optional blocks all zero: {not feats[:, 3:].any()}, "
      f"coordinates intact: {np.array_equal(feats[:, :3], cloud.coords)}")

#!/usr/bin/env python3
# A short self-distillation run on a small mixture, then linear probing of
# the frozen features per domain and a PCA feature export.
#
# Takes a couple of minutes on a laptop CPU; scale --steps up for a better
# look at the loss curve.

import tempfile
from pathlib import Path

import numpy as np

from pointforge import distill, synthbench as sb
from pointforge.config import Config

cfg = Config({"encoder.channels": "12,24", "encoder.heads": "2,4",
              "encoder.blocks": "1,1", "distill.prototypes": 64})
rc = distill.run_config(cfg)
samples = sb.make_mixture(4, seed=0)
print(f"training mixture: {len(samples)} clouds, "
      f"{sum(s.cloud.n for s in samples)} points total")

pair = distill.make_views(samples[0], rc.profiles(), rc, np.random.default_rng(9))
init = distill.init_state(rc, seed=0)
print(f"matched-pair cosine at init: {distill.matched_cosine(init, pair):.3f}")

result = distill.train(samples, rc, seed=0, steps=60)
losses = [row["loss"] for row in result.metrics]
print(f"loss: first5 {np.mean(losses[:5]):.3f} -> last5 {np.mean(losses[-5:]):.3f}")
print(f"matched-pair cosine after: "
      f"{distill.matched_cosine(result.state, pair):.3f}")

eval_samples = sb.make_mixture(3, seed=0, split=1)
report = sb.probe_state(result.state, eval_samples, split_seed=0)
for domain in sorted(report):
    m = report[domain]
    print(f"probe {domain:8s} mIoU {m['miou']:.3f}  mAcc {m['macc']:.3f}  "
          f"allAcc {m['allacc']:.3f}")

with tempfile.TemporaryDirectory() as tmp:
    ckpt = Path(tmp) / "ckpt.uenc"
    distill.save_state(result.state, ckpt)
    out = Path(tmp) / "features.ply"
    sampled = sb.featurize_export(ckpt, eval_samples[0].cloud, out)
    print(f"\nPCA feature export: {sampled.n} colored points, "
          f"{out.stat().st_size} bytes of PLY")

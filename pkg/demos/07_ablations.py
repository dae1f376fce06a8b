#!/usr/bin/env python3
# Miniature versions of the three headline comparisons. These use very short
# runs so the script finishes quickly; the acceptance suite runs the full
# pinned-seed versions (see tests/test_acceptance.py, criteria 9-11).

from pointforge import synthbench as sb
from pointforge.config import Config

STEPS, CLOUDS, EVAL = 30, 3, 2

print("grid-size strategies (cross-domain probe quality):")
rows = sb.ablate_grid(Config(), seed=0, steps=STEPS, n_per_domain=CLOUDS,
                      n_eval=EVAL)
for row in rows:
    print(f"  {row['strategy']:14s} {row['domain']:8s} mIoU {row['mIoU']:.3f}")

print("\nmodality blinding (probe trained clean, evaluated without colors):")
rows = sb.ablate_blinding(Config(), seed=0, steps=STEPS, n_per_domain=CLOUDS,
                          n_eval=EVAL)
for row in rows:
    print(f"  {row['strategy']:28s} {row['domain']:8s} mIoU {row['mIoU']:.3f}")

print("\nobject rotation policy (gravity correlation of object features):")
rows = sb.ablate_object_aug(Config(), seed=0, steps=STEPS, n_per_domain=CLOUDS,
                            n_eval=EVAL)
for row in rows:
    print(f"  {row['strategy']:16s} gravity score {row['gravity_score']:.3f} "
          f"(object mIoU {row['mIoU']:.3f})")

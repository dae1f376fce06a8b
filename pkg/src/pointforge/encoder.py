"""Serialized-attention point encoder with rotary positions and exact gradients.

A small hierarchical transformer: an affine embedding of the 9-wide unified
features, then stages of pre-norm blocks (windowed multi-head attention with
rotary-rotated queries/keys, gated feed-forward), factor-2 grid pooling
between stages, and a final projection broadcast back to the finest level.
Everything runs in float64 with a hand-written reverse pass whose gradients
are verified against central finite differences.

Head channels must be divisible by 6: each head splits into three axis blocks
of even dimension for the 3D rotary rotation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError
from .pcdata import FormatError
from .rope import RopeConfig, rope_angles, rotate_pairs
from .serialize import (AXIS_ORDERS, PoolMap, SerializedLayout, broadcast,
                        broadcast_backward, build_layout, build_pool_map,
                        pool_features, pool_features_backward)

LN_EPS = 1e-5
FF_EXPANSION = 4

CHECKPOINT_MAGIC = b"UENC"
CHECKPOINT_VERSION = 1


class EncoderError(RuntimeError):
    """Numerical failure inside a forward pass; message names the layer."""


@dataclass(frozen=True)
class StageConfig:
    channels: int
    heads: int
    blocks: int
    window: int

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


@dataclass(frozen=True)
class EncoderConfig:
    stages: tuple[StageConfig, ...]
    in_channels: int = 9
    pool_factor: int = 2
    rope: RopeConfig = field(default_factory=RopeConfig)

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ConfigError("need at least one stage")
        for i, st in enumerate(self.stages):
            if st.channels % st.heads != 0:
                raise ConfigError(
                    f"stage {i}: channels {st.channels} not divisible by heads {st.heads}")
            if st.head_dim % 6 != 0:
                raise ConfigError(
                    f"stage {i}: head_dim {st.head_dim} not divisible by 6")
            if st.blocks < 1 or st.window < 1:
                raise ConfigError(f"stage {i}: blocks and window must be >= 1")

    @property
    def out_channels(self) -> int:
        return self.stages[-1].channels


def default_config(rope: RopeConfig | None = None) -> EncoderConfig:
    """Smallest two-level shape satisfying the divisible-by-6 constraint."""
    return EncoderConfig(
        stages=(StageConfig(channels=24, heads=4, blocks=2, window=16),
                StageConfig(channels=48, heads=8, blocks=2, window=16)),
        rope=rope if rope is not None else RopeConfig())


def config_from_lists(channels: list[int], heads: list[int], blocks: list[int],
                      window: int, rope: RopeConfig) -> EncoderConfig:
    if not (len(channels) == len(heads) == len(blocks)):
        raise ConfigError("encoder.channels/heads/blocks must have equal lengths")
    stages = tuple(StageConfig(c, h, b, window)
                   for c, h, b in zip(channels, heads, blocks))
    return EncoderConfig(stages=stages, rope=rope)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape, in declaration order (also the checkpoint order)."""
    shapes: dict[str, tuple[int, ...]] = {}
    c_prev = cfg.in_channels
    shapes["embed.W"] = (c_prev, cfg.stages[0].channels)
    shapes["embed.b"] = (cfg.stages[0].channels,)
    c_prev = cfg.stages[0].channels
    for s, st in enumerate(cfg.stages):
        c = st.channels
        if s > 0:
            shapes[f"down{s}.W"] = (c_prev, c)
            shapes[f"down{s}.b"] = (c,)
        for b in range(st.blocks):
            pre = f"s{s}b{b}."
            shapes[pre + "ln1.g"] = (c,)
            shapes[pre + "ln1.b"] = (c,)
            for name in ("Wq", "Wk", "Wv", "Wo"):
                shapes[pre + name] = (c, c)
            for name in ("bq", "bk", "bv", "bo"):
                shapes[pre + name] = (c,)
            shapes[pre + "ln2.g"] = (c,)
            shapes[pre + "ln2.b"] = (c,)
            shapes[pre + "W1"] = (c, FF_EXPANSION * c)
            shapes[pre + "b1"] = (FF_EXPANSION * c,)
            shapes[pre + "W2"] = (FF_EXPANSION * c, c)
            shapes[pre + "b2"] = (c,)
        c_prev = c
    shapes["final.W"] = (c_prev, c_prev)
    shapes["final.b"] = (c_prev,)
    return shapes


def init_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fan-in scaled normal weights, unit norm scales, zero biases/shifts."""
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("g",):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, shape[0] ** -0.5, size=shape)
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# plan: layouts, pool maps, and rotary positions per hierarchy level
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelPlan:
    coords: np.ndarray
    p_hat: np.ndarray                       # coords / canonical_grid
    layouts: dict[str, SerializedLayout]
    grid: float


@dataclass(frozen=True)
class EncoderPlan:
    levels: list[LevelPlan]
    pools: list[PoolMap]
    canonical_grid: float

    @property
    def n_fine(self) -> int:
        return self.levels[0].coords.shape[0]


def block_axis_order(block_index: int) -> str:
    """Blocks alternate the serialization axis order so windows reshuffle."""
    return AXIS_ORDERS[block_index % len(AXIS_ORDERS)]


def build_plan(coords: np.ndarray, cfg: EncoderConfig, canonical_grid: float) -> EncoderPlan:
    coords = np.asarray(coords, dtype=np.float64)
    levels: list[LevelPlan] = []
    pools: list[PoolMap] = []
    cur = coords
    for s, st in enumerate(cfg.stages):
        grid_s = canonical_grid * (cfg.pool_factor ** s)
        orders = sorted({block_axis_order(b) for b in range(st.blocks)})
        layouts = {o: build_layout(cur, grid_s, st.window, o, level=s) for o in orders}
        levels.append(LevelPlan(coords=cur, p_hat=cur / canonical_grid,
                                layouts=layouts, grid=grid_s))
        if s < len(cfg.stages) - 1:
            pm = build_pool_map(cur, grid_s, cfg.pool_factor)
            pools.append(pm)
            cur = pm.coarse_coords
    return EncoderPlan(levels=levels, pools=pools, canonical_grid=canonical_grid)


def shift_plan(plan: EncoderPlan, delta) -> EncoderPlan:
    """Translate every level's positions by delta (meters) while keeping the
    serialization and pooling of the original plan.

    Re-serializing shifted coordinates regroups windows (z-order is not
    translation invariant); holding the layout fixed and offsetting cells
    isolates the positional algebra, whose logits depend only on relative
    positions.
    """
    delta = np.asarray(delta, dtype=np.float64)
    levels = [LevelPlan(coords=lv.coords + delta,
                        p_hat=lv.p_hat + delta / plan.canonical_grid,
                        layouts=lv.layouts, grid=lv.grid)
              for lv in plan.levels]
    return EncoderPlan(levels=levels, pools=plan.pools,
                       canonical_grid=plan.canonical_grid)


# ---------------------------------------------------------------------------
# primitive layers
# ---------------------------------------------------------------------------

def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_bwd(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, dg, db


def _gate_fwd(x):
    s = 1.0 / (1.0 + np.exp(-1.702 * x))
    return x * s, s


def _gate_bwd(dy, x, s):
    return dy * (s + 1.702 * x * s * (1.0 - s))


def _softmax_rows(scores):
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _window_groups(layout: SerializedLayout):
    """Split windows into the full-size batch and the short remainder."""
    n = layout.n
    w = layout.windows[0][1] - layout.windows[0][0] if layout.windows else n
    n_full = (n // w) * w
    return w, n_full


def _to_heads_first(x_s, start, stop, size):
    """(rows, H, D) slice -> (nw, H, size, D) for batched matmul."""
    nw = (stop - start) // size
    return x_s[start:stop].reshape(nw, size, *x_s.shape[1:]).transpose(0, 2, 1, 3)


def _attn_windows_fwd(q_s, k_s, v_s, layout, scale):
    """Windowed attention over sorted arrays; returns output and per-group probs."""
    n = q_s.shape[0]
    w, n_full = _window_groups(layout)
    out = np.empty_like(v_s)
    probs_groups = []
    for start, stop, size in ((0, n_full, w), (n_full, n, n - n_full)):
        if stop <= start:
            probs_groups.append(None)
            continue
        q = _to_heads_first(q_s, start, stop, size)
        k = _to_heads_first(k_s, start, stop, size)
        v = _to_heads_first(v_s, start, stop, size)
        probs = _softmax_rows(q @ k.swapaxes(-1, -2) * scale)
        o = (probs @ v).transpose(0, 2, 1, 3)
        out[start:stop] = o.reshape(stop - start, *v_s.shape[1:])
        probs_groups.append(probs)
    return out, probs_groups


def _attn_windows_bwd(d_out_s, q_s, k_s, v_s, probs_groups, layout, scale):
    n = q_s.shape[0]
    w, n_full = _window_groups(layout)
    dq = np.empty_like(q_s)
    dk = np.empty_like(k_s)
    dv = np.empty_like(v_s)
    for (start, stop, size), probs in zip(((0, n_full, w), (n_full, n, n - n_full)),
                                          probs_groups):
        if stop <= start:
            continue
        do = _to_heads_first(d_out_s, start, stop, size)
        q = _to_heads_first(q_s, start, stop, size)
        k = _to_heads_first(k_s, start, stop, size)
        v = _to_heads_first(v_s, start, stop, size)
        d_probs = do @ v.swapaxes(-1, -2)
        dv_g = probs.swapaxes(-1, -2) @ do
        d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
        dq_g = d_scores @ k * scale
        dk_g = d_scores.swapaxes(-1, -2) @ q * scale
        for dst, g in ((dq, dq_g), (dk, dk_g), (dv, dv_g)):
            dst[start:stop] = g.transpose(0, 2, 1, 3).reshape(stop - start,
                                                              *q_s.shape[1:])
    return dq, dk, dv


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def forward(params: dict[str, np.ndarray], features: np.ndarray, plan: EncoderPlan,
            cfg: EncoderConfig, rope_factors: tuple[np.ndarray, float] | None = None,
            want_tape: bool = False):
    """Encode N x 9 features to N x C_out per-point features at the finest level.

    rope_factors, when given, are the per-cloud (jitter, rescale) perturbation
    of the rotary positions shared by every level and block of this pass.
    Returns (output, tape); the tape is None unless requested.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.in_channels:
        raise EncoderError(f"expected (N, {cfg.in_channels}) features, got {x.shape}")
    if x.shape[0] != plan.n_fine:
        raise EncoderError(f"features rows {x.shape[0]} != plan points {plan.n_fine}")

    tape: dict = {"stages": [], "features": x} if want_tape else None
    x = x @ params["embed.W"] + params["embed.b"]

    for s, st in enumerate(cfg.stages):
        stage_tape = {"blocks": []} if want_tape else None
        if s > 0:
            pm = plan.pools[s - 1]
            pooled = pool_features(x, pm)
            if want_tape:
                stage_tape["pooled_in"] = pooled
            x = pooled @ params[f"down{s}.W"] + params[f"down{s}.b"]

        level = plan.levels[s]
        positions = level.p_hat
        if rope_factors is not None and cfg.rope.enabled:
            j, r = rope_factors
            positions = r * (j * positions)
        angles = (rope_angles(positions, st.head_dim, cfg.rope.base)
                  if cfg.rope.enabled else None)
        if want_tape:
            stage_tape["angles"] = angles

        for b in range(st.blocks):
            pre = f"s{s}b{b}."
            layout = level.layouts[block_axis_order(b)]
            x, block_tape = _block_fwd(x, params, pre, layout, angles, st, want_tape)
            if not np.isfinite(x).all():
                raise EncoderError(f"non-finite activations at stage {s} block {b}")
            if want_tape:
                stage_tape["blocks"].append(block_tape)
        if want_tape:
            tape["stages"].append(stage_tape)

    y = x @ params["final.W"] + params["final.b"]
    if want_tape:
        tape["pre_final"] = x
    for pm in reversed(plan.pools):
        y = broadcast(y, pm)
    return y, tape


def _block_fwd(x, params, pre, layout, angles, st, want_tape):
    c = x.shape[1]
    heads, hd = st.heads, st.head_dim
    h1, ln1_cache = _layernorm_fwd(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
    q = (h1 @ params[pre + "Wq"] + params[pre + "bq"]).reshape(-1, heads, hd)
    k = (h1 @ params[pre + "Wk"] + params[pre + "bk"]).reshape(-1, heads, hd)
    v = (h1 @ params[pre + "Wv"] + params[pre + "bv"]).reshape(-1, heads, hd)
    if angles is not None:
        qr = rotate_pairs(q, angles[:, None, :])
        kr = rotate_pairs(k, angles[:, None, :])
    else:
        qr, kr = q, k
    order = layout.order
    q_s, k_s, v_s = qr[order], kr[order], v[order]
    out_s, probs_groups = _attn_windows_fwd(q_s, k_s, v_s, layout, hd ** -0.5)
    attn = np.empty_like(out_s)
    attn[order] = out_s
    attn_flat = attn.reshape(-1, c)
    proj = attn_flat @ params[pre + "Wo"] + params[pre + "bo"]
    x1 = x + proj

    h2, ln2_cache = _layernorm_fwd(x1, params[pre + "ln2.g"], params[pre + "ln2.b"])
    f1 = h2 @ params[pre + "W1"] + params[pre + "b1"]
    a, gate_s = _gate_fwd(f1)
    ff = a @ params[pre + "W2"] + params[pre + "b2"]
    x2 = x1 + ff

    block_tape = None
    if want_tape:
        block_tape = {"x": x, "h1": h1, "ln1": ln1_cache, "q_s": q_s, "k_s": k_s,
                      "v_s": v_s, "probs": probs_groups, "attn_flat": attn_flat,
                      "x1": x1, "h2": h2, "ln2": ln2_cache, "f1": f1,
                      "gate_s": gate_s, "a": a, "layout": layout, "angles": angles}
    return x2, block_tape


def backward(params: dict[str, np.ndarray], plan: EncoderPlan, cfg: EncoderConfig,
             tape: dict, d_output: np.ndarray):
    """Reverse pass for a taped forward; returns (param grads, input gradient)."""
    grads = zeros_like_params(params)
    dy = np.asarray(d_output, dtype=np.float64)
    for pm in plan.pools:
        dy = broadcast_backward(dy, pm)
    pre_final = tape["pre_final"]
    grads["final.W"] += pre_final.T @ dy
    grads["final.b"] += dy.sum(axis=0)
    dx = dy @ params["final.W"].T

    for s in range(len(cfg.stages) - 1, -1, -1):
        st = cfg.stages[s]
        stage_tape = tape["stages"][s]
        for b in range(st.blocks - 1, -1, -1):
            dx = _block_bwd(dx, params, f"s{s}b{b}.", stage_tape["blocks"][b],
                            st, grads)
        if s > 0:
            pm = plan.pools[s - 1]
            pooled = stage_tape["pooled_in"]
            grads[f"down{s}.W"] += pooled.T @ dx
            grads[f"down{s}.b"] += dx.sum(axis=0)
            dx = pool_features_backward(dx @ params[f"down{s}.W"].T, pm)

    grads["embed.W"] += tape["features"].T @ dx
    grads["embed.b"] += dx.sum(axis=0)
    d_input = dx @ params["embed.W"].T
    return grads, d_input


def _block_bwd(d_x2, params, pre, bt, st, grads):
    c = d_x2.shape[1]
    heads, hd = st.heads, st.head_dim
    layout, angles = bt["layout"], bt["angles"]

    # feed-forward branch
    d_x1 = d_x2.copy()
    d_ff = d_x2
    grads[pre + "W2"] += bt["a"].T @ d_ff
    grads[pre + "b2"] += d_ff.sum(axis=0)
    d_a = d_ff @ params[pre + "W2"].T
    d_f1 = _gate_bwd(d_a, bt["f1"], bt["gate_s"])
    grads[pre + "W1"] += bt["h2"].T @ d_f1
    grads[pre + "b1"] += d_f1.sum(axis=0)
    d_h2 = d_f1 @ params[pre + "W1"].T
    d_ln2_in, dg2, db2 = _layernorm_bwd(d_h2, params[pre + "ln2.g"], bt["ln2"])
    grads[pre + "ln2.g"] += dg2
    grads[pre + "ln2.b"] += db2
    d_x1 += d_ln2_in

    # attention branch
    d_x = d_x1.copy()
    d_proj = d_x1
    grads[pre + "Wo"] += bt["attn_flat"].T @ d_proj
    grads[pre + "bo"] += d_proj.sum(axis=0)
    d_attn = (d_proj @ params[pre + "Wo"].T).reshape(-1, heads, hd)
    d_out_s = d_attn[layout.order]
    dq_s, dk_s, dv_s = _attn_windows_bwd(d_out_s, bt["q_s"], bt["k_s"], bt["v_s"],
                                         bt["probs"], layout, hd ** -0.5)
    n = d_x2.shape[0]
    dqr = np.empty_like(dq_s)
    dkr = np.empty_like(dk_s)
    dv = np.empty_like(dv_s)
    dqr[layout.order] = dq_s
    dkr[layout.order] = dk_s
    dv[layout.order] = dv_s
    if angles is not None:
        dq = rotate_pairs(dqr, -angles[:, None, :])
        dk = rotate_pairs(dkr, -angles[:, None, :])
    else:
        dq, dk = dqr, dkr
    dq, dk, dv = dq.reshape(n, c), dk.reshape(n, c), dv.reshape(n, c)

    h1 = bt["h1"]
    d_h1 = np.zeros_like(h1)
    for name, dmat in (("Wq", dq), ("Wk", dk), ("Wv", dv)):
        grads[pre + name] += h1.T @ dmat
        grads[pre + "b" + name[1]] += dmat.sum(axis=0)
        d_h1 += dmat @ params[pre + name].T
    d_ln1_in, dg1, db1 = _layernorm_bwd(d_h1, params[pre + "ln1.g"], bt["ln1"])
    grads[pre + "ln1.g"] += dg1
    grads[pre + "ln1.b"] += db1
    d_x += d_ln1_in
    return d_x


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, JSON meta, named f32 tensor sections
# ---------------------------------------------------------------------------

def write_checkpoint(path: str | Path, meta: dict,
                     sections: dict[str, dict[str, np.ndarray]]) -> None:
    blob = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob.append(struct.pack("<I", len(meta_bytes)))
    blob.append(meta_bytes)
    blob.append(struct.pack("<I", len(sections)))
    for sec_name, tensors in sections.items():
        name_b = sec_name.encode("utf-8")
        blob.append(struct.pack("<I", len(name_b)))
        blob.append(name_b)
        blob.append(struct.pack("<I", len(tensors)))
        for t_name, arr in tensors.items():
            tn = t_name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            blob.append(struct.pack("<I", len(tn)))
            blob.append(tn)
            blob.append(struct.pack("<B", arr.ndim))
            blob.append(struct.pack(f"<{max(arr.ndim, 1)}I",
                                    *(arr.shape if arr.ndim else (1,))))
            blob.append(arr.tobytes())
    Path(path).write_bytes(b"".join(blob))


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic in checkpoint {path}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError(f"truncated checkpoint at byte {pos} in {path}")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (meta_len,) = take("<I")
    meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n_sections,) = take("<I")
    sections: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(n_sections):
        (name_len,) = take("<I")
        sec_name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (n_tensors,) = take("<I")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (tn_len,) = take("<I")
            t_name = data[pos:pos + tn_len].decode("utf-8")
            pos += tn_len
            (ndim,) = take("<B")
            shape = take(f"<{max(ndim, 1)}I")
            if ndim == 0:
                shape = ()
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
            if arr.size != count:
                raise FormatError(f"truncated tensor {t_name!r} in {path}")
            pos += arr.nbytes
            tensors[t_name] = arr.reshape(shape).astype(np.float64)
        sections[sec_name] = tensors
    return meta, sections

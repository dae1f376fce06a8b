"""Deterministic synthetic multi-domain data plus probing and ablation harnesses.

Three generators stand in for real datasets: composite primitive objects in
the unit ball with arbitrary orientation, gravity-aligned indoor rooms split
into posed frames, and ring-pattern outdoor scans with range-dependent
density. Colors are deliberately label-predictive so that modality-shortcut
effects are measurable at desk scale. Absolute benchmark numbers are not a
target; qualitative orderings under pinned seeds are.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import distill
from .config import Config
from .harmonize import grid_sample, rescale_to_granularity, rotation_matrix
from .pcdata import (COLOR_BIT, NORMAL_BIT, Domain, PointCloud, make_cloud,
                     write_ply)
from .distill import DistillState, Sample

OBJECT_GRID = 0.01
INDOOR_GRID = 0.02
OUTDOOR_GRID = 0.05

LIDAR_RINGS = 64
LIDAR_AZIMUTH_STEP_DEG = 0.35
LIDAR_HEIGHT = 1.8


# ---------------------------------------------------------------------------
# object domain: assembled primitives, surface sampled, arbitrary orientation
# ---------------------------------------------------------------------------

def _sample_box(rng: np.random.Generator, half: np.ndarray, n: int,
                skip_bottom: bool = False):
    """Area-weighted face sampling of an axis-aligned box; normals are the
    six axis directions."""
    hx, hy, hz = half
    # faces: (axis, sign, area)
    faces = [(0, +1), (0, -1), (1, +1), (1, -1), (2, +1), (2, -1)]
    areas = np.array([4 * hy * hz, 4 * hy * hz, 4 * hx * hz, 4 * hx * hz,
                      4 * hx * hy, 4 * hx * hy], dtype=np.float64)
    if skip_bottom:
        areas[5] = 0.0
    pick = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    spans = {0: (1, 2), 1: (0, 2), 2: (0, 1)}
    for f, (axis, sign) in enumerate(faces):
        rows = pick == f
        if not rows.any():
            continue
        a, b = spans[axis]
        pts[rows, axis] = sign * half[axis]
        pts[rows, a] = u[rows, 0] * half[a]
        pts[rows, b] = u[rows, 1] * half[b]
        nrm[rows, axis] = sign
    return pts, nrm


def _sample_cylinder(rng: np.random.Generator, radius: float, half_h: float, n: int):
    """Lateral surface plus caps; lateral normals radial, cap normals axial."""
    lateral = 2 * math.pi * radius * 2 * half_h
    cap = math.pi * radius ** 2
    p_lateral = lateral / (lateral + 2 * cap)
    u = rng.random(n)
    theta = rng.uniform(0.0, 2 * math.pi, n)
    pts = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    on_side = u < p_lateral
    pts[on_side, 0] = radius * np.cos(theta[on_side])
    pts[on_side, 1] = radius * np.sin(theta[on_side])
    pts[on_side, 2] = rng.uniform(-half_h, half_h, int(on_side.sum()))
    nrm[on_side, 0] = np.cos(theta[on_side])
    nrm[on_side, 1] = np.sin(theta[on_side])
    on_cap = ~on_side
    r = radius * np.sqrt(rng.random(int(on_cap.sum())))
    top = rng.random(int(on_cap.sum())) < 0.5
    pts[on_cap, 0] = r * np.cos(theta[on_cap])
    pts[on_cap, 1] = r * np.sin(theta[on_cap])
    pts[on_cap, 2] = np.where(top, half_h, -half_h)
    nrm[on_cap, 2] = np.where(top, 1.0, -1.0)
    return pts, nrm


def _sample_sphere(rng: np.random.Generator, radius: float, n: int):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v, v


def gen_object(seed: int, n_parts: int | None = None,
               kinds: tuple[str, ...] = ("box", "cylinder", "sphere")) -> PointCloud:
    """Composite object: 2-5 primitives, unit-ball normalized, random SO(3) pose.

    Labels are part ids; colors (present with probability 1/2) are drawn per
    part; normals are analytic per primitive before the pose is applied.
    """
    rng = np.random.default_rng(seed)
    if n_parts is None:
        n_parts = int(rng.integers(2, 6))
    n_total = int(rng.integers(1000, 4001))
    weights = rng.uniform(0.5, 1.5, n_parts)
    counts = np.maximum(1, (n_total * weights / weights.sum()).astype(int))

    pts_all, nrm_all, labels = [], [], []
    centers = [np.zeros(3)]
    part_colors = rng.uniform(0.05, 0.95, size=(n_parts, 3))
    for part in range(n_parts):
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "box":
            pts, nrm = _sample_box(rng, rng.uniform(0.1, 0.5, 3), counts[part])
        elif kind == "cylinder":
            pts, nrm = _sample_cylinder(rng, float(rng.uniform(0.1, 0.4)),
                                        float(rng.uniform(0.15, 0.5)), counts[part])
        else:
            pts, nrm = _sample_sphere(rng, float(rng.uniform(0.2, 0.5)), counts[part])
        if part > 0:
            anchor = centers[int(rng.integers(len(centers)))]
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            center = anchor + direction * float(rng.uniform(0.3, 0.8))
        else:
            center = np.zeros(3)
        centers.append(center)
        pts_all.append(pts + center)
        nrm_all.append(nrm)
        labels.append(np.full(counts[part], part, dtype=np.int32))

    coords = np.concatenate(pts_all)
    normals = np.concatenate(nrm_all)
    labels = np.concatenate(labels)
    coords -= coords.mean(axis=0)
    coords /= np.linalg.norm(coords, axis=1).max()

    with_color = bool(rng.random() < 0.5)
    colors = None
    if with_color:
        colors = np.clip(part_colors[labels] + rng.uniform(-0.05, 0.05,
                                                           (coords.shape[0], 3)),
                         0.0, 1.0)
    pose = rotation_matrix(*rng.uniform(-math.pi, math.pi, 3))
    coords = coords @ pose.T
    normals = normals @ pose.T
    return make_cloud(coords, Domain.OBJECT, OBJECT_GRID, colors=colors,
                      normals=normals, labels=labels)


# ---------------------------------------------------------------------------
# indoor domain: gravity-aligned room, overlapping posed frames
# ---------------------------------------------------------------------------

LABEL_FLOOR, LABEL_WALL, LABEL_FURNITURE = 0, 1, 2


def gen_indoor(seed: int) -> PointCloud:
    return gen_indoor_sample(seed).cloud


def gen_indoor_sample(seed: int) -> Sample:
    """Floor + four walls + boxes, sampled once and split into 2-4 overlapping
    frames with known rigid (yaw + translation) sensor poses.

    The frame union, mapped back through the poses, is the room sampling
    itself, so aggregation is exact by construction.
    """
    rng = np.random.default_rng(seed)
    lx, ly = rng.uniform(5.0, 10.0, 2)
    hz = float(rng.uniform(2.5, 3.2))
    n_total = int(rng.integers(2500, 5001))
    n_boxes = int(rng.integers(3, 9))

    floor_area = lx * ly
    wall_area = 2 * (lx + ly) * hz
    boxes = []
    box_area = 0.0
    for _ in range(n_boxes):
        sx, sy = rng.uniform(0.4, 1.5, 2)
        sz = float(rng.uniform(0.4, 1.2))
        cx = float(rng.uniform(sx / 2, lx - sx / 2))
        cy = float(rng.uniform(sy / 2, ly - sy / 2))
        boxes.append((np.array([cx, cy, sz / 2]), np.array([sx / 2, sy / 2, sz / 2])))
        # furniture is oversampled relative to bare area: close-range scan bias
        box_area += 3.0 * (2 * (sx * sz + sy * sz) + sx * sy)
    total_area = floor_area + wall_area + box_area
    n_floor = max(1, int(n_total * floor_area / total_area))
    n_wall = max(1, int(n_total * wall_area / total_area))

    pts, nrm, lab, col = [], [], [], []
    f = rng.uniform(0.0, 1.0, (n_floor, 2)) * [lx, ly]
    pts.append(np.column_stack([f, np.zeros(n_floor)]))
    nrm.append(np.tile([0.0, 0.0, 1.0], (n_floor, 1)))
    lab.append(np.full(n_floor, LABEL_FLOOR, dtype=np.int32))
    col.append(np.clip(rng.normal(0.45, 0.03, (n_floor, 3)), 0, 1))

    lengths = np.array([lx, lx, ly, ly])
    picks = rng.choice(4, size=n_wall, p=lengths / lengths.sum())
    along = rng.uniform(0.0, 1.0, n_wall)
    height = rng.uniform(0.0, hz, n_wall)
    w_pts = np.zeros((n_wall, 3))
    w_nrm = np.zeros((n_wall, 3))
    for wall, (axis, fixed, normal) in enumerate(
            [(0, 0.0, [0.0, 1.0, 0.0]), (0, ly, [0.0, -1.0, 0.0]),
             (1, 0.0, [1.0, 0.0, 0.0]), (1, lx, [-1.0, 0.0, 0.0])]):
        rows = picks == wall
        w_pts[rows, axis] = along[rows] * (lx if axis == 0 else ly)
        w_pts[rows, 1 - axis] = fixed
        w_pts[rows, 2] = height[rows]
        w_nrm[rows] = normal
    pts.append(w_pts)
    nrm.append(w_nrm)
    lab.append(np.full(n_wall, LABEL_WALL, dtype=np.int32))
    col.append(np.clip(rng.normal(0.88, 0.03, (n_wall, 3)), 0, 1))

    n_rest = max(n_boxes, n_total - n_floor - n_wall)
    per_box = np.maximum(1, np.full(n_boxes, n_rest // n_boxes))
    for (center, half), nb in zip(boxes, per_box):
        bp, bn = _sample_box(rng, half, int(nb), skip_bottom=True)
        pts.append(bp + center)
        nrm.append(bn)
        lab.append(np.full(int(nb), LABEL_FURNITURE, dtype=np.int32))
        hue = rng.uniform(0.1, 0.9, 3)
        col.append(np.clip(hue + rng.normal(0, 0.03, (int(nb), 3)), 0, 1))

    coords = np.concatenate(pts)
    normals = np.concatenate(nrm)
    labels = np.concatenate(lab)
    colors = np.concatenate(col)
    room = make_cloud(coords, Domain.INDOOR, INDOOR_GRID, colors=colors,
                      normals=normals, labels=labels)

    # overlapping x-slabs -> frames in sensor-local coordinates
    n_frames = int(rng.integers(2, 5))
    edges = np.linspace(0.0, lx, n_frames + 1)
    overlap = 0.15 * lx / n_frames
    frames, poses, origins = [], [], []
    for k in range(n_frames):
        lo = max(0.0, edges[k] - overlap)
        hi = min(lx, edges[k + 1] + overlap)
        idx = np.flatnonzero((coords[:, 0] >= lo) & (coords[:, 0] <= hi))
        yaw = float(rng.uniform(-math.pi, math.pi))
        rot = rotation_matrix(yaw, 0.0, 0.0)
        t = np.array([rng.uniform(0, lx), rng.uniform(0, ly), LIDAR_HEIGHT])
        pose = np.eye(4)
        pose[:3, :3] = rot
        pose[:3, 3] = t
        local = (coords[idx] - t) @ rot  # rot.T applied from the right
        frame = PointCloud(coords=local, colors=colors[idx],
                           normals=normals[idx] @ rot, mask=room.mask[idx],
                           domain=Domain.INDOOR, native_grid=INDOOR_GRID,
                           labels=labels[idx])
        frames.append(frame)
        poses.append(pose)
        origins.append(idx.astype(np.int64))
    return Sample(cloud=room, frames=tuple(frames), poses=tuple(poses),
                  origins=tuple(origins), name=f"indoor-{seed}")


# ---------------------------------------------------------------------------
# outdoor domain: concentric LiDAR rings over ground and box vehicles
# ---------------------------------------------------------------------------

def ring_radii(extent: float, sensor_height: float = LIDAR_HEIGHT,
               n_rings: int = LIDAR_RINGS) -> np.ndarray:
    """Ground-intersection radii of the beam fan: strictly increasing, from
    2 m out to just inside the extent."""
    r_min, r_max = 2.0, 0.48 * extent
    phi_hi = math.atan2(sensor_height, r_min)
    phi_lo = math.atan2(sensor_height, r_max)
    phis = np.exp(np.linspace(math.log(phi_hi), math.log(phi_lo), n_rings))
    return sensor_height / np.tan(phis)


def gen_outdoor(seed: int, max_points: int = 6000) -> PointCloud:
    """Ring-sampled ground plane with box vehicles; no colors, labels
    {ground, vehicle}, normals oriented toward the sensor.

    The full ray grid (64 rings x 0.35 degree azimuth) is cast and then
    uniformly subsampled to max_points, which preserves the range-density
    profile of the scan pattern.
    """
    rng = np.random.default_rng(seed)
    extent = float(rng.uniform(50.0, 100.0))
    radii = ring_radii(extent)
    azimuths = np.deg2rad(np.arange(0.0, 360.0, LIDAR_AZIMUTH_STEP_DEG))
    sensor = np.array([0.0, 0.0, LIDAR_HEIGHT])

    n_veh = int(rng.integers(2, 7))
    vehicles = []
    for _ in range(n_veh):
        half = np.array([rng.uniform(1.75, 2.75), rng.uniform(0.8, 1.05),
                         rng.uniform(0.7, 0.9)])
        ring = rng.uniform(6.0, 0.35 * extent)
        ang = rng.uniform(0.0, 2 * math.pi)
        center = np.array([ring * math.cos(ang), ring * math.sin(ang), half[2]])
        yaw = float(rng.uniform(-math.pi, math.pi))
        vehicles.append((center, half, yaw))

    rr, aa = np.meshgrid(radii, azimuths, indexing="ij")
    ground_hits = np.stack([rr * np.cos(aa), rr * np.sin(aa),
                            np.zeros_like(rr)], axis=-1).reshape(-1, 3)
    dirs = ground_hits - sensor
    t_ground = np.linalg.norm(dirs, axis=1)
    dirs = dirs / t_ground[:, None]

    best_t = t_ground.copy()
    hit_pts = ground_hits.copy()
    hit_nrm = np.tile([0.0, 0.0, 1.0], (dirs.shape[0], 1))
    hit_lab = np.zeros(dirs.shape[0], dtype=np.int32)
    for center, half, yaw in vehicles:
        rot = rotation_matrix(yaw, 0.0, 0.0)
        o = (sensor - center) @ rot        # into box frame
        d = dirs @ rot
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o) / d
            t2 = (half - o) / d
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        t_enter = tmin.max(axis=1)
        t_exit = tmax.min(axis=1)
        enter_axis = tmin.argmax(axis=1)
        ok = (t_enter <= t_exit) & (t_enter > 1e-6) & (t_enter < best_t)
        rows = np.flatnonzero(ok)
        if rows.size == 0:
            continue
        local = o + t_enter[rows, None] * d[rows]
        normal_local = np.zeros((rows.size, 3))
        ax = enter_axis[rows]
        normal_local[np.arange(rows.size), ax] = np.sign(local[np.arange(rows.size), ax])
        world_n = normal_local @ rot.T
        pts = sensor + t_enter[rows, None] * dirs[rows]
        flip = ((sensor - pts) * world_n).sum(axis=1) < 0
        world_n[flip] *= -1.0
        best_t[rows] = t_enter[rows]
        hit_pts[rows] = pts
        hit_nrm[rows] = world_n
        hit_lab[rows] = 1

    if hit_pts.shape[0] > max_points:
        keep = rng.choice(hit_pts.shape[0], size=max_points, replace=False)
        keep.sort()
        hit_pts, hit_nrm, hit_lab = hit_pts[keep], hit_nrm[keep], hit_lab[keep]
    return make_cloud(hit_pts, Domain.OUTDOOR, OUTDOOR_GRID, colors=None,
                      normals=hit_nrm, labels=hit_lab)


# ---------------------------------------------------------------------------
# mixtures
# ---------------------------------------------------------------------------

def domain_seed(seed: int, domain: Domain, index: int, split: int = 0) -> int:
    ss = np.random.SeedSequence((seed, domain.code, index, split))
    return int(ss.generate_state(1)[0])


def make_sample(domain: Domain, seed: int) -> Sample:
    if domain is Domain.OBJECT:
        return Sample(cloud=gen_object(seed), name=f"object-{seed}")
    if domain is Domain.INDOOR:
        return gen_indoor_sample(seed)
    return Sample(cloud=gen_outdoor(seed), name=f"outdoor-{seed}")


def make_mixture(n_per_domain: int, seed: int, split: int = 0) -> list[Sample]:
    """Round-robin object/indoor/outdoor mixture, fully seed-determined."""
    samples = []
    for i in range(n_per_domain):
        for domain in (Domain.OBJECT, Domain.INDOOR, Domain.OUTDOOR):
            samples.append(make_sample(domain, domain_seed(seed, domain, i, split)))
    return samples


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------

def linear_probe(features: np.ndarray, labels: np.ndarray, split_seed: int,
                 epochs: int = 100, lr: float = 0.1,
                 eval_features: np.ndarray | None = None) -> dict:
    """Single affine + softmax head on frozen features, full-batch Adam,
    70/30 split; reports per-class IoU, mIoU, mAcc, allAcc on the held-out 30%.

    eval_features, when given, replaces the held-out rows at prediction time
    (same points, degraded inputs): the probe is fit once on standard
    features and evaluated under the shifted ones.
    """
    feats = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes, y = np.unique(labels, return_inverse=True)
    k = classes.size
    n = feats.shape[0]
    rng = np.random.default_rng(split_seed)
    perm = rng.permutation(n)
    n_train = int(round(0.7 * n))
    tr, ev = perm[:n_train], perm[n_train:]

    mu = feats[tr].mean(axis=0)
    sd = feats[tr].std(axis=0)
    sd[sd == 0] = 1.0
    x_tr = (feats[tr] - mu) / sd
    eval_src = feats if eval_features is None else np.asarray(eval_features,
                                                              dtype=np.float64)
    x_ev = (eval_src[ev] - mu) / sd
    y_tr, y_ev = y[tr], y[ev]

    d = feats.shape[1]
    w = np.zeros((d, k))
    b = np.zeros(k)
    m_w = np.zeros_like(w); v_w = np.zeros_like(w)
    m_b = np.zeros_like(b); v_b = np.zeros_like(b)
    onehot = np.eye(k)[y_tr]
    for t in range(1, epochs + 1):
        logits = x_tr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / x_tr.shape[0]
        gw = x_tr.T @ g
        gb = g.sum(axis=0)
        for grad, mom, var, target in ((gw, m_w, v_w, w), (gb, m_b, v_b, b)):
            mom *= 0.9; mom += 0.1 * grad
            var *= 0.999; var += 0.001 * grad * grad
            m_hat = mom / (1 - 0.9 ** t)
            v_hat = var / (1 - 0.999 ** t)
            target -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)

    pred = (x_ev @ w + b).argmax(axis=1)
    per_class_iou: dict = {}
    ious, recalls = [], []
    for c in range(k):
        tp = int(((pred == c) & (y_ev == c)).sum())
        fp = int(((pred == c) & (y_ev != c)).sum())
        fn = int(((pred != c) & (y_ev == c)).sum())
        if tp + fp + fn > 0:
            iou = tp / (tp + fp + fn)
            per_class_iou[int(classes[c])] = iou
            ious.append(iou)
        if tp + fn > 0:
            recalls.append(tp / (tp + fn))
    return {"per_class_iou": per_class_iou,
            "miou": float(np.mean(ious)) if ious else 0.0,
            "macc": float(np.mean(recalls)) if recalls else 0.0,
            "allacc": float((pred == y_ev).mean())}


# ---------------------------------------------------------------------------
# gravity probe and feature extraction
# ---------------------------------------------------------------------------

def gravity_probe(features: np.ndarray, coords: np.ndarray) -> float:
    """|Pearson correlation| between the first feature principal component
    and the z coordinate. Sign of the component is irrelevant."""
    f = np.asarray(features, dtype=np.float64)
    z = np.asarray(coords, dtype=np.float64)[:, 2]
    fc = f - f.mean(axis=0)
    if not fc.any() or z.std() == 0:
        return 0.0
    _, _, vt = np.linalg.svd(fc, full_matrices=False)
    proj = fc @ vt[0]
    if proj.std() == 0:
        return 0.0
    corr = np.corrcoef(proj, z)[0, 1]
    return float(abs(corr))


def _force_drop(pc: PointCloud, drop_color: bool, drop_normal: bool) -> PointCloud:
    if not (drop_color or drop_normal):
        return pc
    colors, normals, mask = pc.colors.copy(), pc.normals.copy(), pc.mask.copy()
    if drop_color:
        colors[:] = 0.0
        mask &= ~np.uint8(COLOR_BIT)
    if drop_normal:
        normals[:] = 0.0
        mask &= ~np.uint8(NORMAL_BIT)
    return pc.with_(colors=colors, normals=normals, mask=mask)


def eval_features(state: DistillState, pc: PointCloud, drop_color: bool = False,
                  drop_normal: bool = False) -> tuple[np.ndarray, PointCloud]:
    """Deterministic evaluation path: optional forced blinding, strategy
    harmonization, min-index grid sampling, student encoder features."""
    rc = state.rc
    pc = _force_drop(pc, drop_color, drop_normal)
    if rc.strategy == "fixed_rescale":
        pc = rescale_to_granularity(pc, rc.canonical_grid)
        grid = rc.canonical_grid
    else:
        grid = pc.native_grid
    sampled, _ = grid_sample(pc, grid, rng=None)
    view = distill.View(cloud=sampled, origin=np.arange(sampled.n))
    feats, _, _ = distill.encode_view(state.student, view, rc, rng=None)
    return feats, sampled


def probe_state(state: DistillState, samples: list[Sample], split_seed: int,
                drop_color: bool = False, drop_normal: bool = False) -> dict[str, dict]:
    """Per-domain linear probing of frozen features over labeled eval clouds.

    Forced modality dropping applies to the held-out points only: the probe
    is fit on the model's standard features and must survive the shift, which
    is what pretrain-time blinding buys.
    """
    rc = state.rc
    buckets: dict[Domain, list] = {d: [] for d in Domain}
    for sample in samples:
        feats, sampled = eval_features(state, sample.cloud)
        if sampled.labels is None:
            continue
        if drop_color or drop_normal:
            dropped, _ = eval_features(state, sample.cloud, drop_color, drop_normal)
        else:
            dropped = feats
        buckets[sampled.domain].append((feats, dropped, sampled.labels))
    report: dict[str, dict] = {}
    forcing = drop_color or drop_normal
    for domain, items in buckets.items():
        if not items:
            continue
        feats = np.concatenate([f for f, _, _ in items])
        labels = np.concatenate([l for _, _, l in items])
        dropped = np.concatenate([d for _, d, _ in items]) if forcing else None
        report[domain.value] = linear_probe(
            feats, labels, split_seed, epochs=rc.probe_epochs, lr=rc.probe_lr,
            eval_features=dropped)
    return report


def mean_gravity_score(state: DistillState, samples: list[Sample]) -> float:
    """Average gravity correlation of encoder features over object clouds."""
    scores = []
    for sample in samples:
        if sample.cloud.domain is not Domain.OBJECT:
            continue
        feats, sampled = eval_features(state, sample.cloud)
        scores.append(gravity_probe(feats, sampled.coords))
    return float(np.mean(scores)) if scores else float("nan")


# ---------------------------------------------------------------------------
# pretrain + probe pipelines and ablation harnesses
# ---------------------------------------------------------------------------

def pretrain_run(cfg: Config, seed: int, steps: int, n_per_domain: int,
                 csv_path=None) -> distill.TrainResult:
    rc = distill.run_config(cfg)
    samples = make_mixture(n_per_domain, seed, split=0)
    return distill.train(samples, rc, seed, steps, csv_path=csv_path)


def eval_mixture(cfg_seed: int, n_per_domain: int) -> list[Sample]:
    return make_mixture(n_per_domain, cfg_seed, split=1)


REPORT_HEADER = "strategy,domain,mIoU,mAcc,allAcc"


def ablate_grid(cfg: Config, seed: int, steps: int, n_per_domain: int,
                n_eval: int, strategies=("origin", "jitter", "fixed_rescale")) -> list[dict]:
    """Pretrain+probe once per harmonization strategy with shared seeds.

    Only harmonize.strategy differs between runs; data, initialization, and
    view randomness share the same seed streams.
    """
    rows = []
    eval_samples = eval_mixture(seed, n_eval)
    for strategy in strategies:
        run_cfg = cfg.copy()
        run_cfg.set("harmonize.strategy", strategy)
        result = pretrain_run(run_cfg, seed, steps, n_per_domain)
        report = probe_state(result.state, eval_samples, split_seed=seed)
        for domain, metrics in sorted(report.items()):
            rows.append({"strategy": strategy, "domain": domain,
                         "mIoU": metrics["miou"], "mAcc": metrics["macc"],
                         "allAcc": metrics["allacc"]})
    return rows


def ablate_rope(cfg: Config, seed: int, steps: int, n_per_domain: int,
                n_eval: int) -> list[dict]:
    rows = []
    eval_samples = eval_mixture(seed, n_eval)
    for label, enabled in (("rope_on", True), ("rope_off", False)):
        run_cfg = cfg.copy()
        run_cfg.set("rope.enabled", enabled)
        result = pretrain_run(run_cfg, seed, steps, n_per_domain)
        report = probe_state(result.state, eval_samples, split_seed=seed)
        for domain, metrics in sorted(report.items()):
            rows.append({"strategy": label, "domain": domain,
                         "mIoU": metrics["miou"], "mAcc": metrics["macc"],
                         "allAcc": metrics["allacc"]})
    return rows


def ablate_blinding(cfg: Config, seed: int, steps: int, n_per_domain: int,
                    n_eval: int) -> list[dict]:
    """Blinding at loading vs off, each probed with and without colors.

    The comparison pins stronger drop rates than the training defaults so the
    robustness contrast is well expressed within a desk-scale step budget.
    """
    rows = []
    eval_samples = eval_mixture(seed, n_eval)
    for label, stage in (("blind_at_loading", "at_loading"), ("blind_off", "off")):
        run_cfg = cfg.copy()
        run_cfg.set("modality.stage", stage)
        run_cfg.set("modality.color_drop", 0.5)
        run_cfg.set("modality.normal_drop", 0.5)
        run_cfg.set("modality.point_drop", 0.3)
        result = pretrain_run(run_cfg, seed, steps, n_per_domain)
        for tag, drop in (("with_color", False), ("drop_color", True)):
            report = probe_state(result.state, eval_samples, split_seed=seed,
                                 drop_color=drop)
            for domain, metrics in sorted(report.items()):
                rows.append({"strategy": f"{label}/{tag}", "domain": domain,
                             "mIoU": metrics["miou"], "mAcc": metrics["macc"],
                             "allAcc": metrics["allacc"]})
    return rows


def ablate_object_aug(cfg: Config, seed: int, steps: int, n_per_domain: int,
                      n_eval: int) -> list[dict]:
    """Full SO(3) object rotations vs scene-mild ones; reports the gravity
    correlation of object features alongside probe quality."""
    rows = []
    eval_samples = eval_mixture(seed, n_eval)
    for label in ("so3", "mild"):
        run_cfg = cfg.copy()
        run_cfg.set("aug.object_rotation", label)
        result = pretrain_run(run_cfg, seed, steps, n_per_domain)
        gravity = mean_gravity_score(result.state, eval_samples)
        report = probe_state(result.state, eval_samples, split_seed=seed)
        obj = report.get("object", {"miou": 0.0, "macc": 0.0, "allacc": 0.0})
        rows.append({"strategy": f"object_rot_{label}", "domain": "object",
                     "mIoU": obj["miou"], "mAcc": obj["macc"],
                     "allAcc": obj["allacc"], "gravity_score": gravity})
    return rows


def report_csv(rows: list[dict]) -> str:
    """Render ablation rows; extra columns append after the standard ones."""
    extra = sorted({k for row in rows for k in row}
                   - {"strategy", "domain", "mIoU", "mAcc", "allAcc"})
    header = REPORT_HEADER + ("," + ",".join(extra) if extra else "")
    lines = [header]
    for row in rows:
        cells = [str(row["strategy"]), str(row["domain"]),
                 f"{row['mIoU']:.6f}", f"{row['mAcc']:.6f}", f"{row['allAcc']:.6f}"]
        cells += [f"{row[k]:.6f}" if isinstance(row.get(k), float) else str(row.get(k, ""))
                  for k in extra]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# feature export
# ---------------------------------------------------------------------------

def featurize_export(checkpoint: str | Path, pc: PointCloud,
                     out_path: str | Path) -> PointCloud:
    """PCA-color encoder features and write them as a binary PLY.

    Constant features map to uniform gray (0.5, 0.5, 0.5); the output vertex
    count is the finest-level point count after evaluation sampling.
    """
    state = distill.load_state(checkpoint)
    feats, sampled = eval_features(state, pc)
    centered = feats - feats.mean(axis=0)
    if not centered.any():
        rgb01 = np.full((sampled.n, 3), 0.5)
    else:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        proj = centered @ vt[:3].T
        if proj.shape[1] < 3:
            proj = np.pad(proj, ((0, 0), (0, 3 - proj.shape[1])))
        lo, hi = proj.min(axis=0), proj.max(axis=0)
        span = hi - lo
        rgb01 = np.where(span > 0, (proj - lo) / np.where(span == 0, 1, span), 0.5)
    rgb = np.clip(np.rint(rgb01 * 255.0), 0, 255).astype(np.uint8)
    write_ply(sampled, out_path, color_u8=rgb)
    return sampled

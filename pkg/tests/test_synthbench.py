"""Generators, probes, and export against counting/geometry oracles."""

import math

import numpy as np

from pointforge import pcdata, synthbench as sb
from pointforge.distill import run_config, init_state, save_state
from pointforge.config import Config
from pointforge.pcdata import Domain, clouds_equal, read_ply
from pointforge.harmonize import frame_aggregate


def test_generators_deterministic_and_valid():
    for gen, seeds in ((sb.gen_object, (0, 5)), (sb.gen_indoor, (1, 6)),
                       (sb.gen_outdoor, (2, 7))):
        for seed in seeds:
            a = gen(seed)
            b = gen(seed)
            assert clouds_equal(a, b)
            assert pcdata.validate(a) == []


def test_object_single_sphere_degenerate():
    pc = sb.gen_object(3, n_parts=1, kinds=("sphere",))
    assert np.unique(pc.labels).tolist() == [0]
    # normals are radial about the (posed) sphere center within 1e-3
    center = pc.coords.mean(axis=0)
    radial = pc.coords - center
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    dots = (radial * pc.normals).sum(axis=1)
    assert np.abs(dots - 1.0).max() < 1e-3


def test_object_box_prepose_normals_axis_aligned():
    rng = np.random.default_rng(4)
    pts, nrm = sb._sample_box(rng, np.array([0.3, 0.2, 0.1]), 500)
    # each normal is one of the six axis directions
    assert ((np.abs(nrm) == 1.0).sum(axis=1) == 1).all()
    assert (np.linalg.norm(nrm, axis=1) == 1.0).all()
    # points sit on the face their normal names
    axis = np.abs(nrm).argmax(axis=1)
    sign = np.sign(nrm[np.arange(500), axis])
    half = np.array([0.3, 0.2, 0.1])
    np.testing.assert_allclose(pts[np.arange(500), axis], sign * half[axis],
                               atol=1e-12)


def test_object_in_unit_ball_with_labels():
    pc = sb.gen_object(11)
    assert np.linalg.norm(pc.coords, axis=1).max() <= 1.0 + 1e-9
    assert pc.labels is not None and pc.domain is Domain.OBJECT
    assert pc.native_grid == sb.OBJECT_GRID


def test_indoor_floor_flat_and_classes_present():
    pc = sb.gen_indoor(8)
    floor = pc.coords[pc.labels == sb.LABEL_FLOOR]
    assert np.abs(floor[:, 2]).max() < 1e-6
    hist = np.bincount(pc.labels, minlength=3)
    assert (hist > 0).all()
    assert pc.has_colors.all() and pc.has_normals.all()


def test_indoor_frame_union_matches_room():
    sample = sb.gen_indoor_sample(9)
    union = frame_aggregate(list(sample.frames), list(sample.poses))
    room = sample.cloud

    def hausdorff(a, b):
        # max over a of min distance to b, in chunks to bound memory
        worst = 0.0
        for start in range(0, a.shape[0], 512):
            d = np.linalg.norm(a[start:start + 512, None] - b[None], axis=-1)
            worst = max(worst, float(d.min(axis=1).max()))
        return worst

    assert hausdorff(union.coords, room.coords) < 0.1
    assert hausdorff(room.coords, union.coords) < 0.1
    # origins map frame points to their exact source rows
    for frame, pose, origin in zip(sample.frames, sample.poses, sample.origins):
        posed = frame.coords @ pose[:3, :3].T + pose[:3, 3]
        np.testing.assert_allclose(posed, room.coords[origin], atol=1e-9)


def test_outdoor_no_color_and_labels():
    pc = sb.gen_outdoor(12)
    assert not pc.has_colors.any()
    assert not pc.colors.any()
    assert set(np.unique(pc.labels)) <= {0, 1}
    assert pc.native_grid == sb.OUTDOOR_GRID


def test_outdoor_ring_radii_strictly_increasing():
    radii = sb.ring_radii(80.0)
    assert radii.shape == (sb.LIDAR_RINGS,)
    assert (np.diff(radii) > 0).all()


def test_outdoor_density_falls_with_range():
    # counting oracle: ground-area density within 10 m vs beyond 40 m
    pc = sb.gen_outdoor(40, max_points=20000)
    r = np.linalg.norm(pc.coords[:, :2], axis=1)
    r_max = r.max()
    assert r_max > 40.0, "seed must give an extent beyond 40 m"
    near = (r < 10.0).sum() / (math.pi * 10.0 ** 2)
    far_area = math.pi * (r_max ** 2 - 40.0 ** 2)
    far = (r > 40.0).sum() / far_area
    assert near >= 4.0 * far


def test_probe_one_hot_features_perfect():
    rng = np.random.default_rng(13)
    labels = rng.integers(0, 3, 600)
    feats = np.eye(3)[labels]
    out = sb.linear_probe(feats, labels, split_seed=0)
    assert out["miou"] == 1.0
    assert out["allacc"] == 1.0


def test_probe_random_features_chance_level():
    # 3 balanced classes: accuracy stays in the simulated chance band
    rng = np.random.default_rng(14)
    labels = np.repeat([0, 1, 2], 400)
    accs = []
    for seed in range(3):
        feats = rng.normal(size=(1200, 8))
        accs.append(sb.linear_probe(feats, labels, split_seed=seed)["allacc"])
    assert all(0.28 <= a <= 0.39 for a in accs)


def test_probe_duplicate_columns_equivalent():
    rng = np.random.default_rng(15)
    labels = rng.integers(0, 4, 800)
    feats = rng.normal(size=(800, 6)) + np.eye(4)[labels] @ rng.normal(size=(4, 6))
    base = sb.linear_probe(feats, labels, split_seed=1)
    doubled = sb.linear_probe(np.hstack([feats, feats]), labels, split_seed=1)
    assert abs(base["miou"] - doubled["miou"]) < 1e-3


def test_gravity_probe_z_feature_is_one():
    rng = np.random.default_rng(16)
    coords = rng.normal(size=(500, 3))
    feats = np.tile(coords[:, 2:3], (1, 5))
    assert abs(sb.gravity_probe(feats, coords) - 1.0) < 1e-9


def test_gravity_probe_z_independent_feature_small():
    rng = np.random.default_rng(17)
    coords = rng.normal(size=(1000, 3))
    feats = np.column_stack([coords[:, 0], coords[:, 0] ** 2])
    assert sb.gravity_probe(feats, coords) < 0.1


def test_gravity_probe_sign_invariant():
    rng = np.random.default_rng(18)
    coords = rng.normal(size=(400, 3))
    feats = rng.normal(size=(400, 6)) + coords[:, 2:3]
    assert abs(sb.gravity_probe(feats, coords)
               - sb.gravity_probe(-feats, coords)) < 1e-9


def test_gravity_probe_constant_features_zero():
    coords = np.random.default_rng(19).normal(size=(100, 3))
    assert sb.gravity_probe(np.ones((100, 4)), coords) == 0.0


def _tiny_state(tmp_path, seed=0):
    cfg = Config({"encoder.channels": "6", "encoder.heads": "1",
                  "encoder.blocks": "1", "encoder.window": 8,
                  "distill.prototypes": 8})
    rc = run_config(cfg)
    state = init_state(rc, seed)
    path = tmp_path / "ckpt.uenc"
    save_state(state, path)
    return path


def test_featurize_export_roundtrip(tmp_path):
    path = _tiny_state(tmp_path)
    pc = sb.gen_object(20)
    out = tmp_path / "colored.ply"
    sampled = sb.featurize_export(path, pc, out)
    back = read_ply(out)
    assert back.n == sampled.n
    assert back.has_colors.all()


def test_featurize_constant_features_gray(tmp_path):
    cfg = Config({"encoder.channels": "6", "encoder.heads": "1",
                  "encoder.blocks": "1", "encoder.window": 8,
                  "distill.prototypes": 8})
    rc = run_config(cfg)
    state = init_state(rc, 0)
    # zero parameters produce identical features at every point
    for k in state.student:
        state.student[k] = np.zeros_like(state.student[k])
    path = tmp_path / "zero.uenc"
    save_state(state, path)
    out = tmp_path / "gray.ply"
    sb.featurize_export(path, sb.gen_object(21), out)
    back = read_ply(out)
    expect = np.full(3, round(0.5 * 255) / 255.0)
    np.testing.assert_allclose(back.colors, np.tile(expect, (back.n, 1)),
                               atol=1e-9)


def test_mixture_composition_and_determinism():
    a = sb.make_mixture(2, seed=5)
    b = sb.make_mixture(2, seed=5)
    assert len(a) == 6
    assert [s.cloud.domain for s in a] == [Domain.OBJECT, Domain.INDOOR,
                                           Domain.OUTDOOR] * 2
    for x, y in zip(a, b):
        assert clouds_equal(x.cloud, y.cloud)
    # train and eval splits differ
    c = sb.make_mixture(2, seed=5, split=1)
    assert not clouds_equal(a[0].cloud, c[0].cloud)


def test_report_csv_layout():
    rows = [{"strategy": "origin", "domain": "indoor", "mIoU": 0.5,
             "mAcc": 0.6, "allAcc": 0.7}]
    text = sb.report_csv(rows)
    assert text.splitlines()[0] == "strategy,domain,mIoU,mAcc,allAcc"
    assert text.endswith("\n")
    assert "origin,indoor,0.500000,0.600000,0.700000" in text


def test_grid_ablation_configs_differ_only_in_harmonization():
    base = Config()
    snapshots = []
    for strategy in ("origin", "jitter", "fixed_rescale"):
        cfg = base.copy()
        cfg.set("harmonize.strategy", strategy)
        snapshots.append(cfg.snapshot())
    keys_that_differ = {k for k in snapshots[0]
                        if len({str(s[k]) for s in snapshots}) > 1}
    assert keys_that_differ == {"harmonize.strategy"}

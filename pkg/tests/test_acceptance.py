"""Acceptance suite: every criterion asserted at its stated tolerance.

Run with `pytest -s tests/test_acceptance.py` to see one PASS line per
criterion. The training-based criteria (08-11) share the pinned-seed
configuration of the ablation harnesses and stay within their wall-clock
budgets on a laptop-class CPU.
"""

import math
import time

import numpy as np
import pytest

from pointforge import distill, encoder as enc, synthbench as sb
from pointforge.cli import main
from pointforge.config import Config, ConfigError
from pointforge.harmonize import grid_sample, rescale_to_granularity
from pointforge.modality import blind_per_point, blind_per_sample, unify_features
from pointforge.pcdata import Domain
from pointforge.rope import RopeConfig, rope3d
from pointforge.serialize import morton_encode


def report(number: int, text: str, t0: float | None = None):
    elapsed = f" [{time.time() - t0:.1f}s]" if t0 is not None else ""
    print(f"ACCEPTANCE {number:02d} PASS {text}{elapsed}")


# -- 01: rotary algebra ------------------------------------------------------

def test_01_rope_algebra_suite():
    t0 = time.time()
    cfg = RopeConfig(head_dim=12)
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        q = rng.normal(size=12)
        k = rng.normal(size=12)
        pi = rng.uniform(-100, 100, 3)
        pj = rng.uniform(-100, 100, 3)
        c = rng.uniform(-100, 100, 3)
        rq = rope3d(q, pi, cfg)
        rk = rope3d(k, pj, cfg)
        # norm preservation
        assert abs(np.linalg.norm(rq) - np.linalg.norm(q)) < 1e-6
        # relative-position identity
        assert abs(rq @ rk - rope3d(q, pi - pj, cfg) @ k) < 1e-6
        # translation invariance of the rotated inner product
        moved = rope3d(q, pi + c, cfg) @ rope3d(k, pj + c, cfg)
        assert abs(rq @ rk - moved) < 1e-6
    elapsed = time.time() - t0
    assert elapsed < 5.0
    report(1, "rope norm/relative/translation identities, 1000 trials @1e-6", t0)


# -- 02: divisible-by-6 guard ------------------------------------------------

def test_02_head_dim_divisibility_guard():
    t0 = time.time()
    with pytest.raises(ConfigError):
        enc.EncoderConfig(stages=(enc.StageConfig(channels=16, heads=2,
                                                  blocks=1, window=8),))
    enc.EncoderConfig(stages=(enc.StageConfig(channels=24, heads=4,
                                              blocks=1, window=8),))
    enc.EncoderConfig(stages=(enc.StageConfig(channels=36, heads=3,
                                              blocks=1, window=8),))
    report(2, "head_dim % 6 != 0 rejected; divisible configs construct", t0)


# -- 03: finite-difference gradient check ------------------------------------

def test_03_gradient_check_toy_encoder():
    t0 = time.time()
    cfg = enc.EncoderConfig(
        stages=(enc.StageConfig(channels=6, heads=1, blocks=1, window=8),),
        rope=RopeConfig(head_dim=6))
    rng = np.random.default_rng(7)
    coords = rng.uniform(-0.2, 0.2, (12, 3))
    feats = rng.normal(size=(12, 9))
    plan = enc.build_plan(coords, cfg, 0.02)
    params = enc.init_params(cfg, rng)
    probe = rng.normal(size=(12, cfg.out_channels))

    def loss():
        return float((enc.forward(params, feats, plan, cfg)[0] * probe).sum())

    _, tape = enc.forward(params, feats, plan, cfg, want_tape=True)
    grads, _ = enc.backward(params, plan, cfg, tape, probe)
    h = 1e-5
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8))
    elapsed = time.time() - t0
    assert worst < 1e-4
    assert elapsed < 60.0
    report(3, f"analytic vs central differences, max rel err {worst:.2e}", t0)


# -- 04: partition equivalence -----------------------------------------------

def test_04_partition_equivalence_100_clouds_per_domain():
    t0 = time.time()
    canonical = 0.02
    gens = {Domain.OBJECT: sb.gen_object, Domain.INDOOR: sb.gen_indoor,
            Domain.OUTDOOR: lambda s: sb.gen_outdoor(s, max_points=2000)}
    for domain, gen in gens.items():
        for i in range(100):
            pc = gen(90_000 + 97 * i)
            _, gm_native = grid_sample(pc, pc.native_grid)
            rescaled = rescale_to_granularity(pc, canonical)
            _, gm_canon = grid_sample(rescaled, canonical)
            assert gm_native.partition() == gm_canon.partition(), \
                f"partition mismatch: {domain} seed {90_000 + 97 * i}"
    report(4, "rescale+fixed-grid partition == native partition, 300 clouds", t0)


# -- 05: blinding statistics ---------------------------------------------------

def test_05_blinding_statistics():
    t0 = time.time()
    rng = np.random.default_rng(11)
    n = 50_000
    colors = rng.uniform(0, 1, (n, 3))
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    from pointforge.pcdata import make_cloud
    pc = make_cloud(rng.normal(size=(n, 3)), Domain.INDOOR, 0.02,
                    colors=colors, normals=normals)

    def band(p, trials):
        half = 2.5758 * math.sqrt(p * (1 - p) / trials)
        return p - half, p + half

    # per-sample rate over 10k seeded trials
    small = pc.take(np.arange(8))
    gen = np.random.default_rng(12)
    hits = sum(not blind_per_sample(small, 0.3, 0.3, gen).has_colors.any()
               for _ in range(10_000))
    lo, hi = band(0.3, 10_000)
    assert lo < hits / 10_000 < hi

    # per-point rate on one large cloud
    out = blind_per_point(pc, 0.2, np.random.default_rng(13))
    lo, hi = band(0.2, n)
    assert lo < 1.0 - out.has_colors.mean() < hi
    assert lo < 1.0 - out.has_normals.mean() < hi

    # blinded blocks exactly zero; coordinates untouched
    both = blind_per_point(blind_per_sample(pc, 1.0, 1.0, gen), 1.0, gen)
    feats = unify_features(both)
    assert not feats[:, 3:].any()
    np.testing.assert_array_equal(feats[:, :3], pc.coords)
    report(5, "per-sample/per-point rates inside 99% binomial bands", t0)


# -- 06: Morton oracle ---------------------------------------------------------

def test_06_morton_exhaustive_oracle():
    t0 = time.time()
    from test_serialize import brute_force_interleave
    cells = np.array([(x, y, z) for x in range(8) for y in range(8)
                      for z in range(8)], dtype=np.int64)
    for order in ("xyz", "yxz"):
        codes = morton_encode(cells, order)
        expect = np.array([brute_force_interleave(tuple(c), order)
                           for c in cells], dtype=np.uint64)
        np.testing.assert_array_equal(codes, expect)
        assert np.unique(codes).size == 512
    report(6, "8x8x8 exhaustive match with brute-force interleaver, both orders", t0)


# -- 07: EMA exactness ---------------------------------------------------------

def test_07_ema_exactness():
    t0 = time.time()
    cfg = Config({"encoder.channels": "6", "encoder.heads": "1",
                  "encoder.blocks": "1", "encoder.window": 8,
                  "distill.prototypes": 8})
    rc = distill.run_config(cfg)
    rng = np.random.default_rng(14)
    for m in (0.0, 0.5, 1.0):
        state = distill.init_state(rc, seed=3)
        for k in state.student:
            state.student[k] = rng.normal(size=state.student[k].shape)
        teacher_before = {k: v.copy() for k, v in state.teacher.items()}
        distill.ema_update(state, m)
        for k in state.teacher:
            expect = m * teacher_before[k] + (1.0 - m) * state.student[k]
            np.testing.assert_array_equal(state.teacher[k], expect)
    report(7, "teacher = m*t + (1-m)*s exact, m in {0, 0.5, 1}", t0)


# -- shared fixtures for the training criteria ---------------------------------

ABLATE_ARGS = ["--seed", "0", "--steps", "200", "--clouds", "6",
               "--eval-clouds", "4"]


def _csv_rows(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


# -- 08: training sanity -------------------------------------------------------

def test_08_training_sanity_60_cloud_mixture():
    t0 = time.time()
    rc = distill.run_config(Config())
    samples = sb.make_mixture(20, seed=0)          # 60 clouds
    assert len(samples) == 60

    eval_pair = distill.make_views(samples[1], rc.profiles(), rc,
                                   np.random.default_rng(999))
    init = distill.init_state(rc, seed=0)
    cos_before = distill.matched_cosine(init, eval_pair)

    result = distill.train(samples, rc, seed=0, steps=200)
    losses = np.array([row["loss"] for row in result.metrics])
    smoothed_head = losses[:20].mean()
    smoothed_tail = losses[-20:].mean()
    cos_after = distill.matched_cosine(result.state, eval_pair)

    elapsed = time.time() - t0
    assert smoothed_tail < smoothed_head, (smoothed_head, smoothed_tail)
    assert cos_after > cos_before, (cos_before, cos_after)
    assert elapsed < 600.0
    report(8, f"loss {smoothed_head:.3f}->{smoothed_tail:.3f}, "
              f"cosine {cos_before:.3f}->{cos_after:.3f}", t0)


# -- 09: grid-strategy ordering ------------------------------------------------

def test_09_grid_strategy_ordering(tmp_path):
    t0 = time.time()
    out = tmp_path / "grid.csv"
    assert main(["ablate", "--what", "grid", "--out", str(out)] + ABLATE_ARGS) == 0
    rows = _csv_rows(out)
    means = {}
    for row in rows:
        means.setdefault(row["strategy"], []).append(float(row["mIoU"]))
    fixed = np.mean(means["fixed_rescale"])
    origin = np.mean(means["origin"])
    elapsed = time.time() - t0
    assert {"origin", "jitter", "fixed_rescale"} == set(means)
    assert fixed >= origin, (fixed, origin)
    assert elapsed < 1800.0
    report(9, f"fixed_rescale mean mIoU {fixed:.4f} >= origin {origin:.4f}", t0)


# -- 10: blinding robustness ordering -------------------------------------------

def test_10_blinding_robustness_ordering(tmp_path):
    t0 = time.time()
    out = tmp_path / "blinding.csv"
    assert main(["ablate", "--what", "blinding", "--out", str(out)]
                + ABLATE_ARGS) == 0
    rows = _csv_rows(out)
    loss = {}
    for row in rows:
        model, condition = row["strategy"].split("/")
        loss.setdefault(model, {}).setdefault(condition, []).append(
            float(row["mIoU"]))
    drops = {model: np.mean(cond["with_color"]) - np.mean(cond["drop_color"])
             for model, cond in loss.items()}
    elapsed = time.time() - t0
    assert drops["blind_at_loading"] < drops["blind_off"], drops
    assert elapsed < 1800.0
    report(10, f"mIoU drop at_loading {drops['blind_at_loading']:.4f} < "
               f"off {drops['blind_off']:.4f}", t0)


# -- 11: gravity correlation ordering -------------------------------------------

def test_11_gravity_ordering(tmp_path):
    t0 = time.time()
    out = tmp_path / "objaug.csv"
    assert main(["ablate", "--what", "object-aug", "--out", str(out)]
                + ABLATE_ARGS) == 0
    rows = _csv_rows(out)
    scores = {row["strategy"]: float(row["gravity_score"]) for row in rows}
    elapsed = time.time() - t0
    assert scores["object_rot_so3"] < scores["object_rot_mild"], scores
    assert elapsed < 1800.0
    report(11, f"gravity score so3 {scores['object_rot_so3']:.4f} < "
               f"mild {scores['object_rot_mild']:.4f}", t0)


# -- 12: command determinism ----------------------------------------------------

TINY_CFG = """
encoder.channels = 6
encoder.heads = 1
encoder.blocks = 1
encoder.window = 8
distill.prototypes = 8
distill.n_local = 1
"""


def test_12_command_determinism(tmp_path, capsys):
    t0 = time.time()
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CFG)

    def tree_bytes(root):
        return {p.relative_to(root).as_posix(): p.read_bytes()
                for p in sorted(root.rglob("*")) if p.is_file()}

    outputs = []
    for run_id in ("one", "two"):
        root = tmp_path / run_id
        data = root / "data"
        assert main(["synth", "--domain", "mixture", "--count", "3",
                     "--seed", "5", "--out", str(data)]) == 0
        run_dir = root / "run"
        assert main(["pretrain", "--config", str(cfg), "--data", str(data),
                     "--steps", "2", "--seed", "5", "--out", str(run_dir)]) == 0
        capsys.readouterr()
        assert main(["probe", "--checkpoint", str(run_dir / "checkpoint.uenc"),
                     "--data", str(data)]) == 0
        probe_out = capsys.readouterr().out
        assert main(["ablate", "--what", "rope", "--config", str(cfg),
                     "--seed", "5", "--steps", "1", "--clouds", "1",
                     "--eval-clouds", "1",
                     "--out", str(root / "ablate.csv")]) == 0
        src = data / "cloud_00000.upc"
        assert main(["featurize", "--checkpoint", str(run_dir / "checkpoint.uenc"),
                     "--in", str(src), "--out", str(root / "vis.ply")]) == 0
        outputs.append((tree_bytes(data), tree_bytes(run_dir), probe_out,
                        (root / "ablate.csv").read_bytes(),
                        (root / "vis.ply").read_bytes()))
    assert outputs[0] == outputs[1]
    report(12, "synth/pretrain/probe/ablate/featurize byte-identical reruns", t0)

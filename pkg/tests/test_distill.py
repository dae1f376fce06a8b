"""Views, correspondences, prototype loss, EMA updates, training loop."""

import math

import numpy as np
import pytest

from pointforge import distill
from pointforge.config import Config, ConfigError
from pointforge.distill import (NoCorrespondencesError, Sample,
                                View, ViewPair, ema_update, init_state,
                                make_views, matched_cosine,
                                prototype_cross_entropy, run_config, train)
from pointforge.harmonize import DomainProfile
from pointforge.pcdata import Domain, make_cloud
from pointforge.synthbench import gen_indoor_sample, gen_object, make_mixture


def small_cfg(**overrides) -> Config:
    cfg = Config({"encoder.channels": "6,12", "encoder.heads": "1,2",
                  "encoder.blocks": "1,1", "encoder.window": 8,
                  "distill.prototypes": 16, "distill.n_local": 1})
    for k, v in overrides.items():
        cfg.set(k, v)
    return cfg


def zero_profiles():
    return {d: DomainProfile(domain=d, yaw_range=0.0, roll_pitch_range=0.0,
                             scale_jitter=0.0, native_grid=g)
            for d, g in ((Domain.OBJECT, 0.01), (Domain.INDOOR, 0.02),
                         (Domain.OUTDOOR, 0.05))}


def _fine_cloud(rng, n=60):
    # one point per voxel at grid 0.02 so sampling keeps every point
    cells = rng.choice(20 ** 3, size=n, replace=False)
    coords = np.column_stack([cells % 20, cells // 20 % 20, cells // 400])
    coords = coords * 0.02 + 0.01
    return make_cloud(coords, Domain.INDOOR, 0.02,
                      colors=rng.uniform(0, 1, (n, 3)))


def test_ce_identical_distributions_equals_entropy():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(5, 8))
    tau = 0.5
    loss, _ = prototype_cross_entropy(logits, logits, np.zeros(8), tau, tau)
    p = np.exp(logits / tau - np.log(np.exp(logits / tau).sum(axis=1,
                                                              keepdims=True)))
    entropy = float(-(p * np.log(p)).sum(axis=1).mean())
    assert abs(loss - entropy) < 1e-9


def test_ce_one_hot_teacher_uniform_student_is_log2():
    teacher = np.array([[1000.0, 0.0]])
    student = np.array([[0.0, 0.0]])
    loss, _ = prototype_cross_entropy(teacher, student, np.zeros(2), 0.04, 0.1)
    assert abs(loss - math.log(2.0)) < 1e-12


def test_ce_invariant_to_student_logit_shift():
    rng = np.random.default_rng(1)
    teacher = rng.normal(size=(7, 9))
    student = rng.normal(size=(7, 9))
    base, _ = prototype_cross_entropy(teacher, student, np.zeros(9), 0.04, 0.1)
    shifted, _ = prototype_cross_entropy(teacher, student + 123.4, np.zeros(9),
                                         0.04, 0.1)
    assert abs(base - shifted) < 1e-9


def test_ce_gradient_matches_fd():
    rng = np.random.default_rng(2)
    teacher = rng.normal(size=(4, 6))
    student = rng.normal(size=(4, 6))
    center = rng.normal(size=6) * 0.1
    _, grad = prototype_cross_entropy(teacher, student, center, 0.04, 0.1)
    h = 1e-6
    for idx in [(0, 0), (2, 3), (3, 5)]:
        orig = student[idx]
        student[idx] = orig + h
        up, _ = prototype_cross_entropy(teacher, student, center, 0.04, 0.1)
        student[idx] = orig - h
        down, _ = prototype_cross_entropy(teacher, student, center, 0.04, 0.1)
        student[idx] = orig
        fd = (up - down) / (2 * h)
        assert abs(fd - grad[idx]) < 1e-6


def test_ce_empty_rejected():
    with pytest.raises(NoCorrespondencesError, match="no correspondences"):
        prototype_cross_entropy(np.zeros((0, 4)), np.zeros((0, 4)),
                                np.zeros(4), 0.04, 0.1)


def test_tau_ordering_enforced():
    with pytest.raises(ConfigError, match="temperature"):
        run_config(small_cfg(**{"distill.tau_teacher": 0.2}))


def test_ema_exact_edge_cases():
    rc = run_config(small_cfg())
    state = init_state(rc, seed=0)
    rng = np.random.default_rng(3)
    for k in state.student:
        state.student[k] = rng.normal(size=state.student[k].shape)
    for m in (0.0, 0.5, 1.0):
        before_t = {k: v.copy() for k, v in state.teacher.items()}
        ema_update(state, m)
        for k in state.teacher:
            expect = m * before_t[k] + (1.0 - m) * state.student[k]
            np.testing.assert_array_equal(state.teacher[k], expect)
    # m=0 makes teacher equal student exactly
    ema_update(state, 0.0)
    for k in state.teacher:
        np.testing.assert_array_equal(state.teacher[k], state.student[k])


def test_ema_center_update():
    rc = run_config(small_cfg())
    state = init_state(rc, seed=0)
    proj = np.ones((4, rc.prototypes)) * 2.0
    ema_update(state, 1.0, teacher_projections=proj)
    np.testing.assert_array_equal(state.center,
                                  (1 - rc.center_momentum) * 2.0
                                  * np.ones(rc.prototypes))


def test_views_bijection_without_masking_or_locals():
    rc = run_config(small_cfg(**{"distill.mask_ratio": 0.0,
                                 "distill.n_local": 0,
                                 "harmonize.strategy": "origin",
                                 "modality.stage": "off",
                                 "aug.scale_shift": False}))
    rng = np.random.default_rng(4)
    sample = Sample(cloud=_fine_cloud(rng))
    pair = make_views(sample, zero_profiles(), rc, np.random.default_rng(5))
    corr = pair.student_masked.corr
    # every student point matches, every teacher point is hit exactly once
    assert (corr >= 0).all()
    assert np.unique(corr).size == corr.size == pair.teacher.cloud.n
    for i, j in enumerate(corr):
        assert pair.student_masked.origin[i] == pair.teacher.origin[j]


def test_views_full_mask_ratio_flags_everything():
    rc = run_config(small_cfg(**{"distill.mask_ratio": 1.0,
                                 "distill.n_local": 0}))
    rng = np.random.default_rng(6)
    sample = Sample(cloud=_fine_cloud(rng))
    pair = make_views(sample, zero_profiles(), rc, np.random.default_rng(7))
    assert pair.student_masked.masked.all()


def test_views_mask_fraction_within_one_patch():
    rc = run_config(small_cfg(**{"distill.mask_ratio": 0.4,
                                 "distill.mask_patch": 8,
                                 "distill.n_local": 0}))
    rng = np.random.default_rng(8)
    sample = Sample(cloud=_fine_cloud(rng, n=120))
    pair = make_views(sample, zero_profiles(), rc, np.random.default_rng(9))
    n = pair.student_masked.cloud.n
    frac = pair.student_masked.masked.mean()
    assert abs(frac - 0.4) <= 8 / n + 1e-9


def test_local_view_covering_crop_matches_survivors():
    rc = run_config(small_cfg(**{"distill.n_local": 1,
                                 "distill.local_radius": 1.0,
                                 "distill.mask_ratio": 0.0,
                                 "harmonize.strategy": "origin",
                                 "modality.stage": "off",
                                 "aug.scale_shift": False}))
    rng = np.random.default_rng(10)
    sample = Sample(cloud=_fine_cloud(rng))
    pair = make_views(sample, zero_profiles(), rc, np.random.default_rng(11))
    local = pair.student_locals[0]
    matched_teacher = set(local.corr[local.corr >= 0].tolist())
    survivors = {j for j, src in enumerate(pair.teacher.origin)
                 if src in set(local.origin.tolist())}
    assert matched_teacher == survivors


def test_correspondences_point_at_same_source(seed=12):
    rc = run_config(small_cfg())
    sample = gen_indoor_sample(seed)
    pair = make_views(sample, rc.profiles(), rc, np.random.default_rng(13))
    for view in (pair.student_masked, *pair.student_locals):
        sel = view.corr >= 0
        np.testing.assert_array_equal(view.origin[sel],
                                      pair.teacher.origin[view.corr[sel]])


def test_no_correspondences_raises():
    rc = run_config(small_cfg(**{"distill.n_local": 0}))
    state = init_state(rc, seed=0)
    rng = np.random.default_rng(14)
    cloud = _fine_cloud(rng, n=20)
    view = View(cloud=cloud, origin=np.arange(20),
                corr=np.full(20, -1, dtype=np.int64),
                masked=np.ones(20, dtype=bool))
    pair = ViewPair(teacher=View(cloud=cloud, origin=np.arange(20)),
                    student_masked=view, student_locals=())
    with pytest.raises(NoCorrespondencesError):
        distill.distill_loss(state, pair)


def test_no_gradient_reaches_teacher():
    rc = run_config(small_cfg())
    state = init_state(rc, seed=1)
    sample = Sample(cloud=gen_object(3))
    pair = make_views(sample, rc.profiles(), rc, np.random.default_rng(15))
    before = {k: v.copy() for k, v in state.teacher.items()}
    center_before = state.center.copy()
    loss, grads, _ = distill.distill_loss(state, pair, want_grads=True)
    assert math.isfinite(loss)
    for k, v in state.teacher.items():
        np.testing.assert_array_equal(v, before[k])
    np.testing.assert_array_equal(state.center, center_before)
    assert set(grads) == set(state.student)


def test_train_decreases_loss_and_is_deterministic(tmp_path):
    cfg = small_cfg()
    rc = run_config(cfg)
    samples = make_mixture(1, seed=21)
    a = train(samples, rc, seed=2, steps=8, csv_path=tmp_path / "a.csv")
    b = train(samples, run_config(cfg), seed=2, steps=8,
              csv_path=tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.csv_text.splitlines()[0] == "step,loss,pairs,teacher_entropy,lr"
    assert len(a.metrics) == 8


def test_train_frozen_teacher_with_unit_momentum():
    cfg = small_cfg(**{"distill.momentum": 1.0})
    rc = run_config(cfg)
    state = init_state(rc, seed=3)
    init_teacher = {k: v.copy() for k, v in state.teacher.items()}
    samples = make_mixture(1, seed=22)
    train(samples, rc, seed=3, steps=4, state=state)
    for k, v in state.teacher.items():
        np.testing.assert_array_equal(v, init_teacher[k])
    # student moved
    assert any(not np.array_equal(state.student[k], init_teacher[k])
               for k in state.student)


def test_checkpoint_roundtrip(tmp_path):
    rc = run_config(small_cfg())
    state = init_state(rc, seed=4)
    path = tmp_path / "state.uenc"
    distill.save_state(state, path)
    back = distill.load_state(path)
    assert back.rc.strategy == rc.strategy
    assert back.rc.prototypes == rc.prototypes
    assert list(back.student) == list(state.student)
    distill.save_state(back, tmp_path / "state2.uenc")
    assert (tmp_path / "state.uenc").read_bytes() == \
        (tmp_path / "state2.uenc").read_bytes()


def test_matched_cosine_finite():
    rc = run_config(small_cfg())
    state = init_state(rc, seed=5)
    sample = Sample(cloud=gen_object(9))
    pair = make_views(sample, rc.profiles(), rc, np.random.default_rng(16))
    value = matched_cosine(state, pair)
    assert -1.0 <= value <= 1.0


def test_step_rng_reproducible():
    a = distill.step_rng(7, 3, 1).random(4)
    b = distill.step_rng(7, 3, 1).random(4)
    c = distill.step_rng(7, 3, 2).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_empty_dataset_rejected():
    rc = run_config(small_cfg())
    with pytest.raises(ValueError, match="empty"):
        train([], rc, seed=0, steps=1)


def test_nonfinite_loss_aborts_with_step_number():
    rc = run_config(small_cfg())
    state = init_state(rc, seed=6)
    state.student[distill.HEAD_B][:] = np.inf
    samples = [Sample(cloud=gen_object(2))]
    with np.errstate(invalid="ignore"):
        with pytest.raises(distill.TrainingDiverged, match="step 0"):
            train(samples, rc, seed=6, steps=1, state=state)


def test_blinding_stage_placement():
    # with certain drop: at_masked_views blinds only the masked global view,
    # at_local_views only the crops; the teacher keeps its channels either way
    rng_seed = 30
    base = dict(small_cfg().snapshot())
    for stage, masked_blind, local_blind in (("masked", True, False),
                                             ("local", False, True)):
        cfg = Config(base)
        cfg.update({"modality.stage": stage, "modality.color_drop": 1.0,
                    "modality.normal_drop": 1.0, "modality.point_drop": 0.0,
                    "distill.n_local": 1})
        rc = run_config(cfg)
        sample = gen_indoor_sample(rng_seed)
        pair = make_views(sample, rc.profiles(), rc, np.random.default_rng(31))
        assert pair.teacher.cloud.has_colors.any()
        assert pair.student_masked.cloud.has_colors.any() != masked_blind
        assert pair.student_locals[0].cloud.has_colors.any() != local_blind

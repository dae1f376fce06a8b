"""Teacher-student self-distillation over asymmetric cross-domain views.

Each sample yields a teacher view (global, unmasked, multi-frame aggregated
when frames exist, never rotated) and student views (a patch-masked global
view plus spatial crops) built with independent rescale, rotation, and
scale/shift draws. Correspondences link a student point to the teacher point
that came from the same source point; the student matches the teacher's
centered, sharpened prototype distribution at matched positions. The teacher
is an exponential moving average of the student and receives no gradients.

Prototype count, temperatures, momenta, and mask sizes are stand-in values
chosen for stability at desk scale; they live in config, not in stone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from .config import Config, ConfigError
from .harmonize import (DomainProfile, augment_rotate, augment_scale_shift,
                        default_profile, frame_aggregate, grid_sample,
                        rescale_to_granularity, sample_rescale_factor)
from .modality import (BlindingStage, blind_per_point, blind_per_sample,
                       blinding_stage, unify_features)
from .pcdata import COLOR_BIT, NORMAL_BIT, Domain, PointCloud
from .rope import RopeConfig, sample_perturb_factors
from .serialize import build_layout


class DegenerateSampleError(RuntimeError):
    """Local crop kept too few points after the configured retries."""


class NoCorrespondencesError(RuntimeError):
    """No student point matched any teacher point; loss is undefined."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss; message names the failing step."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a pretraining run needs, resolved from dotted-key config."""

    canonical_grid: float
    strategy: str                  # origin | jitter | fixed_rescale
    encoder: enc.EncoderConfig
    blinding: BlindingStage
    color_drop: float
    normal_drop: float
    point_drop: float
    prototypes: int
    tau_student: float
    tau_teacher: float
    momentum: float
    center_momentum: float
    mask_ratio: float
    mask_patch: int
    n_local: int
    local_radius: float
    object_rotation: str
    use_frames: bool
    scale_shift: bool
    lr: float
    weight_decay: float
    clip_norm: float
    probe_epochs: int
    probe_lr: float
    raw: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.strategy not in ("origin", "jitter", "fixed_rescale"):
            raise ConfigError(f"unknown harmonize.strategy: {self.strategy!r}")
        if not self.tau_teacher < self.tau_student:
            raise ConfigError("teacher temperature must be below student temperature")

    def profiles(self) -> dict[Domain, DomainProfile]:
        return {d: default_profile(d, object_rotation=self.object_rotation)
                for d in Domain}


def run_config(cfg: Config | None = None) -> RunConfig:
    cfg = cfg if cfg is not None else Config()
    rope = RopeConfig(base=float(cfg.get("rope.base")),
                      head_dim=6,
                      jitter_degree=float(cfg.get("rope.jitter_degree")),
                      scaling_degree=float(cfg.get("rope.scaling_degree")),
                      enabled=bool(cfg.get("rope.enabled")),
                      perturb=bool(cfg.get("rope.perturb")))
    encoder_cfg = enc.config_from_lists(cfg.int_list("encoder.channels"),
                                        cfg.int_list("encoder.heads"),
                                        cfg.int_list("encoder.blocks"),
                                        int(cfg.get("encoder.window")), rope)
    return RunConfig(
        canonical_grid=float(cfg.get("data.canonical_grid")),
        strategy=str(cfg.get("harmonize.strategy")),
        encoder=encoder_cfg,
        blinding=blinding_stage(cfg),
        color_drop=float(cfg.get("modality.color_drop")),
        normal_drop=float(cfg.get("modality.normal_drop")),
        point_drop=float(cfg.get("modality.point_drop")),
        prototypes=int(cfg.get("distill.prototypes")),
        tau_student=float(cfg.get("distill.tau_student")),
        tau_teacher=float(cfg.get("distill.tau_teacher")),
        momentum=float(cfg.get("distill.momentum")),
        center_momentum=float(cfg.get("distill.center_momentum")),
        mask_ratio=float(cfg.get("distill.mask_ratio")),
        mask_patch=int(cfg.get("distill.mask_patch")),
        n_local=int(cfg.get("distill.n_local")),
        local_radius=float(cfg.get("distill.local_radius")),
        object_rotation=str(cfg.get("aug.object_rotation")),
        use_frames=bool(cfg.get("aug.frame_aggregate")),
        scale_shift=bool(cfg.get("aug.scale_shift")),
        lr=float(cfg.get("train.lr")),
        weight_decay=float(cfg.get("train.weight_decay")),
        clip_norm=float(cfg.get("train.clip_norm")),
        probe_epochs=int(cfg.get("probe.epochs")),
        probe_lr=float(cfg.get("probe.lr")),
        raw=cfg.snapshot())


# ---------------------------------------------------------------------------
# samples and views
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    """A training cloud, optionally split into posed frames for aggregation.

    origins map each frame's rows back into the source sampling so that
    correspondences can be traced across independently sampled views.
    """

    cloud: PointCloud
    frames: tuple[PointCloud, ...] | None = None
    poses: tuple[np.ndarray, ...] | None = None
    origins: tuple[np.ndarray, ...] | None = None
    name: str = ""


@dataclass(frozen=True)
class View:
    cloud: PointCloud
    origin: np.ndarray                # (n,) source indices
    corr: np.ndarray | None = None    # (n,) teacher row or -1
    masked: np.ndarray | None = None  # (n,) bool, masked global view only


@dataclass(frozen=True)
class ViewPair:
    teacher: View
    student_masked: View
    student_locals: tuple[View, ...]


def _apply_loading_blindness(pc: PointCloud, origin: np.ndarray,
                             drop_sample: tuple[bool, bool],
                             drop_points: np.ndarray) -> PointCloud:
    """Re-apply per-source blinding decisions to any view of the sample."""
    drop_c = np.full(pc.n, drop_sample[0]) | drop_points[origin, 0]
    drop_n = np.full(pc.n, drop_sample[1]) | drop_points[origin, 1]
    colors, normals, mask = pc.colors.copy(), pc.normals.copy(), pc.mask.copy()
    colors[drop_c] = 0.0
    mask[drop_c] &= ~np.uint8(COLOR_BIT)
    normals[drop_n] = 0.0
    mask[drop_n] &= ~np.uint8(NORMAL_BIT)
    return pc.with_(colors=colors, normals=normals, mask=mask)


def _blind_view(pc: PointCloud, rc: RunConfig, rng: np.random.Generator) -> PointCloud:
    pc = blind_per_sample(pc, rc.color_drop, rc.normal_drop, rng)
    return blind_per_point(pc, rc.point_drop, rng)


def _prepare_view(base: PointCloud, origin: np.ndarray, profile: DomainProfile,
                  rc: RunConfig, rng: np.random.Generator, augment: bool):
    """Harmonize (per strategy), augment (students only), then grid sample."""
    if rc.strategy == "fixed_rescale":
        if augment:
            f = sample_rescale_factor(base, rng, rc.canonical_grid)
            pc = base.with_(coords=base.coords * f, native_grid=rc.canonical_grid)
        else:
            pc = rescale_to_granularity(base, rc.canonical_grid)
        grid = rc.canonical_grid
    elif rc.strategy == "jitter":
        pc = base
        grid = base.native_grid * float(rng.uniform(0.8, 1.2))
    else:  # origin
        pc = base
        grid = base.native_grid
    if augment:
        pc, _ = augment_rotate(pc, profile, rng)
        if rc.scale_shift:
            pc, _ = augment_scale_shift(pc, profile, rng, shift_bound=2.0 * grid)
    sampled, gm = grid_sample(pc, grid, rng)
    return sampled, origin[gm.representative_of_cell], grid


def _match(student_origin: np.ndarray, teacher_origin: np.ndarray) -> np.ndarray:
    """Student row -> first teacher row with the same source index, else -1."""
    order = np.argsort(teacher_origin, kind="stable")
    sorted_t = teacher_origin[order]
    pos = np.searchsorted(sorted_t, student_origin)
    pos = np.clip(pos, 0, len(sorted_t) - 1)
    hit = sorted_t[pos] == student_origin
    corr = np.where(hit, order[pos], -1).astype(np.int64)
    return corr


def make_views(sample: Sample, profiles: dict[Domain, DomainProfile], rc: RunConfig,
               rng: np.random.Generator) -> ViewPair:
    """Build one teacher view and the student views with correspondences."""
    profile = profiles[sample.cloud.domain]
    if rc.use_frames and sample.frames:
        teacher_base = frame_aggregate(list(sample.frames), list(sample.poses))
        teacher_origin = np.concatenate(sample.origins)
        pick = int(rng.integers(len(sample.frames)))
        pose = np.asarray(sample.poses[pick])
        frame = sample.frames[pick]
        student_base = frame.with_(coords=frame.coords @ pose[:3, :3].T + pose[:3, 3],
                                   normals=frame.normals @ pose[:3, :3].T)
        student_origin = np.asarray(sample.origins[pick])
    else:
        teacher_base = student_base = sample.cloud
        teacher_origin = student_origin = np.arange(sample.cloud.n, dtype=np.int64)

    n_source = int(max(teacher_origin.max(), student_origin.max())) + 1
    if rc.blinding is BlindingStage.AT_LOADING:
        drop_sample = (bool(rng.random() < rc.color_drop),
                       bool(rng.random() < rc.normal_drop))
        drop_points = rng.random((n_source, 2)) < rc.point_drop
        teacher_base = _apply_loading_blindness(teacher_base, teacher_origin,
                                                drop_sample, drop_points)
        student_base = _apply_loading_blindness(student_base, student_origin,
                                                drop_sample, drop_points)

    t_pc, t_origin, _ = _prepare_view(teacher_base, teacher_origin, profile, rc, rng,
                                      augment=False)
    teacher = View(cloud=t_pc, origin=t_origin)

    s_pc, s_origin, s_grid = _prepare_view(student_base, student_origin, profile, rc, rng,
                                           augment=True)
    if rc.blinding is BlindingStage.AT_MASKED_VIEWS:
        s_pc = _blind_view(s_pc, rc, rng)
    masked = _mask_patches(s_pc, s_grid, rc, rng)
    student_masked = View(cloud=s_pc, origin=s_origin,
                          corr=_match(s_origin, t_origin), masked=masked)

    locals_: list[View] = []
    for _ in range(rc.n_local):
        locals_.append(_local_view(student_base, student_origin, profile, rc, rng,
                                   t_origin))
    return ViewPair(teacher=teacher, student_masked=student_masked,
                    student_locals=tuple(locals_))


def _mask_patches(pc: PointCloud, grid: float, rc: RunConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """Mark a mask_ratio fraction of Morton-contiguous patches."""
    layout = build_layout(pc.coords, grid, rc.mask_patch, "xyz")
    n_patches = len(layout.windows)
    n_drop = int(round(rc.mask_ratio * n_patches))
    masked = np.zeros(pc.n, dtype=bool)
    if n_drop > 0:
        chosen = rng.choice(n_patches, size=n_drop, replace=False)
        for w in chosen:
            start, end = layout.windows[int(w)]
            masked[layout.order[start:end]] = True
    return masked


def _local_view(base: PointCloud, origin: np.ndarray, profile: DomainProfile,
                rc: RunConfig, rng: np.random.Generator,
                teacher_origin: np.ndarray, min_points: int = 8,
                retries: int = 10) -> View:
    for _ in range(retries + 1):
        pc, view_origin, s_grid = _prepare_view(base, origin, profile, rc, rng,
                                                augment=True)
        center = pc.coords[int(rng.integers(pc.n))]
        radius = rc.local_radius * float(
            np.linalg.norm(pc.coords - center, axis=1).max())
        keep = np.flatnonzero(np.linalg.norm(pc.coords - center, axis=1) <= radius)
        if keep.size < min_points:
            continue
        crop = pc.take(keep)
        if rc.blinding is BlindingStage.AT_LOCAL_VIEWS:
            crop = _blind_view(crop, rc, rng)
        crop_origin = view_origin[keep]
        return View(cloud=crop, origin=crop_origin,
                    corr=_match(crop_origin, teacher_origin))
    raise DegenerateSampleError(
        f"local crop below {min_points} points after {retries} retries")


# ---------------------------------------------------------------------------
# state, loss, EMA
# ---------------------------------------------------------------------------

HEAD_W, HEAD_B, MASK_EMBED = "head.W", "head.b", "mask_embed"


@dataclass
class DistillState:
    rc: RunConfig
    student: dict[str, np.ndarray]   # encoder params + head.W/head.b/mask_embed
    teacher: dict[str, np.ndarray]   # EMA mirror of student
    center: np.ndarray               # (K,) prototype centering statistics


def init_state(rc: RunConfig, seed: int) -> DistillState:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    student = enc.init_params(rc.encoder, rng)
    c_out = rc.encoder.out_channels
    head = rng.normal(0.0, 1.0, size=(c_out, rc.prototypes))
    student[HEAD_W] = head / np.linalg.norm(head, axis=0, keepdims=True)
    student[HEAD_B] = np.zeros(rc.prototypes)
    student[MASK_EMBED] = np.zeros(6)
    teacher = {k: v.copy() for k, v in student.items()}
    return DistillState(rc=rc, student=student, teacher=teacher,
                        center=np.zeros(rc.prototypes))


def project_head(params: dict[str, np.ndarray], feats: np.ndarray):
    """Prototype logits of l2-normalized features: cosine-bounded scores.

    Returns (logits, normalized features, row norms) for the backward pass.
    """
    norms = np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12)
    f_hat = feats / norms
    return f_hat @ params[HEAD_W] + params[HEAD_B], f_hat, norms


def project_head_backward(d_logits, params, f_hat, norms, feats_grads_out):
    """Accumulate head gradients; return gradient w.r.t. raw features."""
    feats_grads_out[HEAD_W] += f_hat.T @ d_logits
    feats_grads_out[HEAD_B] += d_logits.sum(axis=0)
    d_fhat = d_logits @ params[HEAD_W].T
    return (d_fhat - f_hat * (d_fhat * f_hat).sum(axis=1, keepdims=True)) / norms


def _encoder_only(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v for k, v in params.items() if k not in (HEAD_W, HEAD_B, MASK_EMBED)}


def encode_view(params: dict[str, np.ndarray], view: View, rc: RunConfig,
                rng: np.random.Generator | None = None, want_tape: bool = False):
    """Unified features (mask tokens included) -> encoder -> per-point features.

    Masked points keep coordinates, get zeroed color/normal blocks, and add
    the learned mask embedding. rng draws fresh rotary perturbation factors.
    """
    feats = unify_features(view.cloud)
    if view.masked is not None and view.masked.any():
        feats[view.masked, 3:] = 0.0
        feats[view.masked, 3:] += params[MASK_EMBED]
    plan = enc.build_plan(view.cloud.coords, rc.encoder, rc.canonical_grid)
    factors = None
    if rng is not None and rc.encoder.rope.perturb and rc.encoder.rope.enabled:
        factors = sample_perturb_factors(rc.encoder.rope.jitter_degree,
                                         rc.encoder.rope.scaling_degree, rng)
    feats_out, tape = enc.forward(_encoder_only(params), feats, plan, rc.encoder,
                                  rope_factors=factors, want_tape=want_tape)
    return feats_out, plan, tape


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def prototype_cross_entropy(teacher_logits: np.ndarray, student_logits: np.ndarray,
                            center: np.ndarray, tau_teacher: float,
                            tau_student: float):
    """Mean CE between centered/sharpened teacher rows and student rows.

    Returns (loss, d_student_logits); nothing flows back to the teacher side.
    """
    if teacher_logits.shape[0] == 0:
        raise NoCorrespondencesError("no correspondences")
    p_t = np.exp(_log_softmax((teacher_logits - center) / tau_teacher))
    log_q = _log_softmax(student_logits / tau_student)
    n = teacher_logits.shape[0]
    loss = float(-(p_t * log_q).sum() / n)
    d_student = (np.exp(log_q) - p_t) / (tau_student * n)
    return loss, d_student


def teacher_entropy(probs: np.ndarray) -> float:
    safe = np.clip(probs, 1e-300, None)
    return float(-(probs * np.log(safe)).sum(axis=1).mean())


def distill_loss(state: DistillState, pair: ViewPair,
                 rng: np.random.Generator | None = None,
                 want_grads: bool = False):
    """Cross-view prototype distillation loss over matched pairs.

    The masked global view contributes only masked positions; local views
    contribute every matched position. Returns (loss, grads, metrics); grads
    is None unless requested.
    """
    rc = state.rc
    t_feats, _, _ = encode_view(state.teacher, pair.teacher, rc, rng=None)
    t_proj, _, _ = project_head(state.teacher, t_feats)
    p_all = np.exp(_log_softmax((t_proj - state.center) / rc.tau_teacher))

    views = [("masked", pair.student_masked)] + [("local", v) for v in pair.student_locals]
    selections = []
    for kind, view in views:
        sel = view.corr >= 0
        if kind == "masked" and view.masked is not None:
            sel = sel & view.masked
        selections.append(np.flatnonzero(sel))
    total_pairs = int(sum(s.size for s in selections))
    if total_pairs == 0:
        raise NoCorrespondencesError("no correspondences")

    grads = {k: np.zeros_like(v) for k, v in state.student.items()} if want_grads else None
    loss_sum = 0.0
    for (kind, view), sel in zip(views, selections):
        if sel.size == 0:
            continue
        feats, plan, tape = encode_view(state.student, view, rc, rng=rng,
                                        want_tape=want_grads)
        logits, f_hat, norms = project_head(state.student, feats)
        p_t = p_all[view.corr[sel]]
        log_q = _log_softmax(logits[sel] / rc.tau_student)
        loss_sum += float(-(p_t * log_q).sum())
        if not want_grads:
            continue
        d_logits = np.zeros_like(logits)
        d_logits[sel] = (np.exp(log_q) - p_t) / (rc.tau_student * total_pairs)
        d_feats = project_head_backward(d_logits, state.student, f_hat, norms, grads)
        g_enc, d_input = enc.backward(_encoder_only(state.student), plan, rc.encoder,
                                      tape, d_feats)
        for k, g in g_enc.items():
            grads[k] += g
        if view.masked is not None and view.masked.any():
            grads[MASK_EMBED] += d_input[view.masked, 3:].sum(axis=0)
    loss = loss_sum / total_pairs
    metrics = {"pairs": total_pairs, "teacher_entropy": teacher_entropy(p_all),
               "teacher_proj": t_proj}
    return loss, grads, metrics


def matched_cosine(state: DistillState, pair: ViewPair) -> float:
    """Mean cosine similarity of matched teacher/student encoder features."""
    rc = state.rc
    t_feats, _, _ = encode_view(state.teacher, pair.teacher, rc)
    sims = []
    for view in (pair.student_masked, *pair.student_locals):
        sel = np.flatnonzero(view.corr >= 0)
        if sel.size == 0:
            continue
        s_feats, _, _ = encode_view(state.student, view, rc)
        a = s_feats[sel]
        b = t_feats[view.corr[sel]]
        num = (a * b).sum(axis=1)
        den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        sims.append(num / np.maximum(den, 1e-12))
    return float(np.concatenate(sims).mean()) if sims else float("nan")


def ema_update(state: DistillState, m: float,
               teacher_projections: np.ndarray | None = None) -> DistillState:
    """teacher <- m*teacher + (1-m)*student, exact elementwise arithmetic.

    When a batch of teacher projections is supplied, the center moves toward
    their mean with the configured center momentum.
    """
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {m}")
    for k in state.teacher:
        state.teacher[k] = m * state.teacher[k] + (1.0 - m) * state.student[k]
    if teacher_projections is not None:
        c_m = state.rc.center_momentum
        state.center = c_m * state.center + (1.0 - c_m) * teacher_projections.mean(axis=0)
    return state


# ---------------------------------------------------------------------------
# optimizer and training loop
# ---------------------------------------------------------------------------

def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adamw_step(params, grads, m_state, v_state, step, lr, betas=(0.9, 0.999),
               eps=1e-8, weight_decay=0.01):
    """Decoupled-weight-decay adaptive-moment update, in place."""
    b1, b2 = betas
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    for k, g in grads.items():
        m_state[k] = b1 * m_state[k] + (1.0 - b1) * g
        v_state[k] = b2 * v_state[k] + (1.0 - b2) * g * g
        m_hat = m_state[k] / bc1
        v_hat = v_state[k] / bc2
        params[k] -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * params[k])


def cosine_lr(base_lr: float, step: int, total: int) -> float:
    if total <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / (total - 1)))


METRICS_HEADER = "step,loss,pairs,teacher_entropy,lr"


def step_rng(seed: int, sample_id: int, epoch: int) -> np.random.Generator:
    """Deterministic per-(sample, epoch) stream, independent of worker order."""
    return np.random.default_rng(np.random.SeedSequence((seed, sample_id, epoch)))


@dataclass
class TrainResult:
    state: DistillState
    metrics: list[dict]
    csv_text: str


def train(dataset: list[Sample], rc: RunConfig, seed: int, steps: int,
          csv_path: str | Path | None = None,
          state: DistillState | None = None) -> TrainResult:
    """Run the distillation loop; deterministic given (dataset, rc, seed, steps)."""
    if not dataset:
        raise ValueError("dataset is empty")
    if state is None:
        state = init_state(rc, seed)
    profiles = rc.profiles()
    m_state = {k: np.zeros_like(v) for k, v in state.student.items()}
    v_state = {k: np.zeros_like(v) for k, v in state.student.items()}
    rows: list[dict] = []
    lines = [METRICS_HEADER]
    for step in range(steps):
        sample_id = step % len(dataset)
        epoch = step // len(dataset)
        rng = step_rng(seed, sample_id, epoch)
        try:
            pair = make_views(dataset[sample_id], profiles, rc, rng)
            loss, grads, metrics = distill_loss(state, pair, rng=rng, want_grads=True)
        except (DegenerateSampleError, NoCorrespondencesError):
            continue
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        lr = cosine_lr(rc.lr, step, steps)
        clip_global_norm(grads, rc.clip_norm)
        adamw_step(state.student, grads, m_state, v_state, step + 1, lr,
                   weight_decay=rc.weight_decay)
        ema_update(state, rc.momentum, teacher_projections=metrics["teacher_proj"])
        row = {"step": step, "loss": loss, "pairs": metrics["pairs"],
               "teacher_entropy": metrics["teacher_entropy"], "lr": lr}
        rows.append(row)
        lines.append(f"{step},{loss:.10g},{metrics['pairs']},"
                     f"{metrics['teacher_entropy']:.10g},{lr:.10g}")
    csv_text = "\n".join(lines) + "\n"
    if csv_path is not None:
        Path(csv_path).write_text(csv_text, newline="\n")
    return TrainResult(state=state, metrics=rows, csv_text=csv_text)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_state(state: DistillState, path: str | Path) -> None:
    meta = {"kind": "distill", "config": {k: v for k, v in state.rc.raw.items()}}
    enc.write_checkpoint(path, meta, {
        "student": state.student,
        "teacher": state.teacher,
        "center": {"center": state.center},
    })


def load_state(path: str | Path) -> DistillState:
    meta, sections = enc.read_checkpoint(path)
    if meta.get("kind") != "distill":
        raise ConfigError(f"checkpoint {path} is not a training state")
    rc = run_config(Config(meta["config"]))
    return DistillState(rc=rc, student=sections["student"],
                        teacher=sections["teacher"],
                        center=sections["center"]["center"])

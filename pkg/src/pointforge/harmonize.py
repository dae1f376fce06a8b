"""Granularity alignment, voxel-grid sampling, and domain-conditioned augmentation.

Joint multi-domain training breaks when each dataset keeps its own grid size:
the same operator then covers centimeters in one domain and meters in another.
The fix is to rescale coordinates so every cloud shares one perceptual
granularity; rescaling by (canonical / native) leaves the voxel partition
unchanged by construction, which the tests check exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pcdata import Domain, PointCloud

CANONICAL_GRID = 0.02

# Scenes keep their gravity alignment (full yaw, mild roll/pitch); objects
# have no preferred orientation and get independent full-range rotations on
# all three axes. Scale jitter is ±10% for scenes and ±50% for objects.
SCENE_ROLL_PITCH = math.pi / 64
SCENE_SCALE_JITTER = 0.10
OBJECT_SCALE_JITTER = 0.50


@dataclass(frozen=True)
class DomainProfile:
    """Per-domain augmentation and granularity policy."""

    domain: Domain
    yaw_range: float                 # radians, rotation about z
    roll_pitch_range: float          # radians, rotations about x and y
    scale_jitter: float              # fraction, s ~ U[1-j, 1+j]
    color_drop_prob: float = 0.3
    normal_drop_prob: float = 0.3
    per_point_drop_prob: float = 0.2
    native_grid: float = CANONICAL_GRID

    def __post_init__(self):
        for name in ("color_drop_prob", "normal_drop_prob", "per_point_drop_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.yaw_range < 0 or self.roll_pitch_range < 0:
            raise ValueError("rotation ranges must be nonnegative")


def default_profile(domain: Domain, object_rotation: str = "so3") -> DomainProfile:
    """Stock augmentation policy per domain.

    object_rotation="mild" applies the scene-level rotation policy to objects,
    which is the weakened setting used by the orientation ablation.
    """
    if domain is Domain.OBJECT:
        if object_rotation == "so3":
            rp = math.pi
        elif object_rotation == "mild":
            rp = SCENE_ROLL_PITCH
        else:
            raise ValueError(f"unknown object_rotation {object_rotation!r}")
        return DomainProfile(domain, yaw_range=math.pi, roll_pitch_range=rp,
                             scale_jitter=OBJECT_SCALE_JITTER, native_grid=0.01)
    grid = 0.02 if domain is Domain.INDOOR else 0.05
    return DomainProfile(domain, yaw_range=math.pi, roll_pitch_range=SCENE_ROLL_PITCH,
                         scale_jitter=SCENE_SCALE_JITTER, native_grid=grid)


@dataclass(frozen=True)
class GridMap:
    """Voxel membership record from grid sampling.

    cells are compacted ids 0..M-1 in lexicographic voxel order;
    representatives index the source cloud and belong to their own cell.
    """

    cell_of_point: np.ndarray            # (N,) int64 compacted cell id
    representative_of_cell: np.ndarray   # (M,) int64 source index
    member_lists: list[np.ndarray]       # cell id -> source indices
    cells: np.ndarray                    # (M, 3) int64 voxel coordinates

    @property
    def n_cells(self) -> int:
        return self.representative_of_cell.shape[0]

    def partition(self) -> set[frozenset]:
        """The induced partition of source indices as a set of sets."""
        return {frozenset(m.tolist()) for m in self.member_lists}


@dataclass(frozen=True)
class AugmentRecord:
    rotation: np.ndarray    # (3, 3) orthonormal, det +1
    scale: float
    shift: np.ndarray       # (3,)
    frame_count: int = 1


def rescale_to_granularity(pc: PointCloud, canonical_grid: float) -> PointCloud:
    """Rescale coordinates so the cloud's grid cell maps onto the canonical cell.

    coords' = coords * (canonical / native); the voxel partition at
    canonical_grid over coords' equals the partition at native_grid over coords.
    """
    if not canonical_grid > 0:
        raise ValueError(f"canonical_grid must be positive, got {canonical_grid}")
    if not pc.native_grid > 0:
        raise ValueError(f"native_grid must be positive, got {pc.native_grid}")
    factor = canonical_grid / pc.native_grid
    return pc.with_(coords=pc.coords * factor, native_grid=canonical_grid)


def sample_rescale_factor(pc: PointCloud, rng: np.random.Generator,
                          canonical_grid: float = CANONICAL_GRID,
                          jitter_fraction: float | None = None) -> float:
    """Draw a rescale factor (canonical/native) * u, u ~ U[1-j, 1+j].

    The jitter default is 0.10 for scenes and 0.50 for objects, exposing the
    encoder to a band of effective granularities around the canonical one.
    """
    if jitter_fraction is None:
        jitter_fraction = (OBJECT_SCALE_JITTER if pc.domain is Domain.OBJECT
                           else SCENE_SCALE_JITTER)
    if not 0.0 <= jitter_fraction < 1.0:
        raise ValueError(f"jitter_fraction must be in [0, 1), got {jitter_fraction}")
    nominal = canonical_grid / pc.native_grid
    if jitter_fraction == 0.0:
        return nominal
    u = rng.uniform(1.0 - jitter_fraction, 1.0 + jitter_fraction)
    return nominal * float(u)


def voxel_cells(coords: np.ndarray, grid: float) -> np.ndarray:
    """floor(coords / grid) as int64 voxel coordinates."""
    if not grid > 0:
        raise ValueError(f"grid must be positive, got {grid}")
    return np.floor(coords / grid).astype(np.int64)


def grid_sample(pc: PointCloud, grid: float,
                rng: np.random.Generator | None = None) -> tuple[PointCloud, GridMap]:
    """Keep one representative point per occupied voxel.

    Representatives are a uniform-random member when an rng is given
    (training) and the minimum source index otherwise (evaluation, fully
    deterministic). The GridMap records full membership for correspondence
    tracking across independently sampled views.
    """
    cells = voxel_cells(pc.coords, grid)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1).astype(np.int64)
    m = uniq.shape[0]
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=m)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    member_lists = [order[offsets[c]:offsets[c + 1]] for c in range(m)]
    if rng is None:
        picks = np.zeros(m, dtype=np.int64)
    else:
        picks = rng.integers(0, counts)
    reps = np.array([member_lists[c][picks[c]] for c in range(m)], dtype=np.int64)
    gm = GridMap(cell_of_point=inverse, representative_of_cell=reps,
                 member_lists=member_lists, cells=uniq)
    return pc.take(reps).with_(native_grid=grid), gm


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cz, sz = math.cos(yaw), math.sin(yaw)
    cy, sy = math.cos(pitch), math.sin(pitch)
    cx, sx = math.cos(roll), math.sin(roll)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


def augment_rotate(pc: PointCloud, profile: DomainProfile,
                   rng: np.random.Generator) -> tuple[PointCloud, AugmentRecord]:
    """Rotate coordinates and normals by a profile-conditioned random rotation.

    Draw order is fixed (yaw, roll, pitch) so runs are seed-reproducible.
    """
    if profile.domain is not pc.domain:
        raise ValueError(f"profile domain {profile.domain} != cloud domain {pc.domain}")
    yaw = float(rng.uniform(-profile.yaw_range, profile.yaw_range)) if profile.yaw_range else 0.0
    rp = profile.roll_pitch_range
    roll = float(rng.uniform(-rp, rp)) if rp else 0.0
    pitch = float(rng.uniform(-rp, rp)) if rp else 0.0
    rot = rotation_matrix(yaw, pitch, roll)
    out = pc.with_(coords=pc.coords @ rot.T, normals=pc.normals @ rot.T)
    return out, AugmentRecord(rotation=rot, scale=1.0, shift=np.zeros(3))


def augment_scale_shift(pc: PointCloud, profile: DomainProfile, rng: np.random.Generator,
                        shift_bound: float | None = None) -> tuple[PointCloud, AugmentRecord]:
    """coords' = s * coords + t with s ~ U[1-j, 1+j] and |t|_inf <= shift_bound.

    The default shift bound is two grid cells; unbounded shifts would make
    serialization-locality checks meaningless.
    """
    j = profile.scale_jitter
    s = float(rng.uniform(1.0 - j, 1.0 + j)) if j > 0 else 1.0
    if shift_bound is None:
        shift_bound = 2.0 * pc.native_grid
    t = rng.uniform(-shift_bound, shift_bound, size=3) if shift_bound > 0 else np.zeros(3)
    out = pc.with_(coords=pc.coords * s + t)
    return out, AugmentRecord(rotation=np.eye(3), scale=s, shift=np.asarray(t, dtype=np.float64))


def frame_aggregate(frames: list[PointCloud], poses: list[np.ndarray]) -> PointCloud:
    """Transform each frame into the common frame by its rigid pose and concatenate."""
    if len(frames) != len(poses):
        raise ValueError(f"{len(frames)} frames but {len(poses)} poses")
    if not frames:
        raise ValueError("need at least one frame")
    domain, grid = frames[0].domain, frames[0].native_grid
    want_labels = all(f.labels is not None for f in frames)
    if any(f.labels is not None for f in frames) and not want_labels:
        raise ValueError("labels present in some frames but not all")
    coords, colors, normals, masks, labels = [], [], [], [], []
    for f, pose in zip(frames, poses):
        pose = np.asarray(pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise ValueError(f"pose must be 4x4, got {pose.shape}")
        rot, t = pose[:3, :3], pose[:3, 3]
        if (np.abs(rot @ rot.T - np.eye(3)).max() > 1e-6
                or abs(np.linalg.det(rot) - 1.0) > 1e-6):
            raise ValueError("pose rotation block is not rigid")
        if f.domain is not domain or f.native_grid != grid:
            raise ValueError("frames disagree on domain or native_grid")
        coords.append(f.coords @ rot.T + t)
        normals.append(f.normals @ rot.T)
        colors.append(f.colors)
        masks.append(f.mask)
        if want_labels:
            labels.append(f.labels)
    return PointCloud(coords=np.concatenate(coords), colors=np.concatenate(colors),
                      normals=np.concatenate(normals), mask=np.concatenate(masks),
                      domain=domain, native_grid=grid,
                      labels=np.concatenate(labels) if want_labels else None)

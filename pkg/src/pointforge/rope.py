"""3D rotary positional embedding on granularity-aligned coordinates.

Positions are coordinates divided by the canonical grid, so one position unit
is one voxel cell in every domain. A head vector splits into three contiguous
blocks and each block is rotated by 1D rotary phases driven by one coordinate
axis; inner products of rotated queries and keys then depend only on relative
positions. An optional train-time perturbation multiplies positions by an
axis-wise log-uniform jitter and an isotropic log-uniform rescale, drawn once
per cloud, so the encoder cannot bind semantics to one fixed axis scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ConfigError

DEFAULT_BASE = 10.0


@dataclass(frozen=True)
class RopeConfig:
    base: float = DEFAULT_BASE
    head_dim: int = 6
    jitter_degree: float = 1.2    # gamma, axis-wise multiplicative jitter bound
    scaling_degree: float = 1.2   # eta, isotropic multiplicative rescale bound
    enabled: bool = True
    perturb: bool = False         # train-only coordinate perturbation

    def __post_init__(self):
        if self.head_dim % 6 != 0:
            raise ConfigError(f"head_dim must be divisible by 6, got {self.head_dim}")
        if not self.base > 0:
            raise ConfigError(f"base must be positive, got {self.base}")
        if not (self.jitter_degree > 1.0 and self.scaling_degree > 1.0):
            raise ConfigError("jitter_degree and scaling_degree must be > 1")


@dataclass(frozen=True)
class RopeCoords:
    """Canonical grid-unit positions and their perturbed variant.

    With perturbation off the two are the same array.
    """

    p_hat: np.ndarray   # (N, 3) coords / canonical_grid
    p_rj: np.ndarray    # (N, 3) perturbed positions fed to the rotation


def sample_perturb_factors(gamma: float, eta: float,
                           rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One (jitter vector, rescale scalar) draw per cloud.

    j = exp(eps_j), eps_j ~ U(-log gamma, log gamma)^3
    r = exp(eps_s), eps_s ~ U(-log eta,   log eta)
    """
    if not (gamma > 1.0 and eta > 1.0):
        raise ValueError("gamma and eta must be > 1")
    eps_j = rng.uniform(-math.log(gamma), math.log(gamma), size=3)
    eps_s = rng.uniform(-math.log(eta), math.log(eta))
    return np.exp(eps_j), float(math.exp(eps_s))


def perturb_coords(p_hat: np.ndarray, gamma: float, eta: float,
                   rng: np.random.Generator) -> np.ndarray:
    """p_rj = r * (j elementwise* p_hat), factors shared by every point of the cloud."""
    j, r = sample_perturb_factors(gamma, eta, rng)
    return r * (j * np.asarray(p_hat, dtype=np.float64))


def make_rope_coords(coords: np.ndarray, canonical_grid: float, cfg: RopeConfig,
                     rng: np.random.Generator | None = None,
                     factors: tuple[np.ndarray, float] | None = None) -> RopeCoords:
    """Positions in cell units, optionally perturbed with given or fresh factors."""
    p_hat = np.asarray(coords, dtype=np.float64) / canonical_grid
    if not cfg.perturb:
        return RopeCoords(p_hat=p_hat, p_rj=p_hat)
    if factors is None:
        if rng is None:
            raise ValueError("perturbation requires an rng or precomputed factors")
        factors = sample_perturb_factors(cfg.jitter_degree, cfg.scaling_degree, rng)
    j, r = factors
    return RopeCoords(p_hat=p_hat, p_rj=r * (j * p_hat))


def _axis_freqs(base: float, d_axis: int) -> np.ndarray:
    k = np.arange(d_axis // 2, dtype=np.float64)
    return base ** (-2.0 * k / d_axis)


def rope_angles(positions: np.ndarray, head_dim: int, base: float) -> np.ndarray:
    """Rotation angles (..., head_dim/2): three per-axis blocks of d_axis/2 phases.

    Pair k of axis block b rotates by positions[..., b] * base^(-2k / d_axis).
    """
    if head_dim % 6 != 0:
        raise ConfigError(f"head_dim must be divisible by 6, got {head_dim}")
    p = np.asarray(positions, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValueError(f"positions must end in 3 components, got shape {p.shape}")
    freqs = _axis_freqs(base, head_dim // 3)
    # (..., 3, d_axis/2) -> (..., head_dim/2) with axis blocks contiguous
    ang = p[..., :, None] * freqs
    return ang.reshape(*p.shape[:-1], head_dim // 2)


def rotate_pairs(v: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate consecutive (even, odd) component pairs of v by the given angles."""
    shape = v.shape
    pairs = v.reshape(*shape[:-1], shape[-1] // 2, 2)
    c, s = np.cos(angles), np.sin(angles)
    even = pairs[..., 0] * c - pairs[..., 1] * s
    odd = pairs[..., 0] * s + pairs[..., 1] * c
    return np.stack([even, odd], axis=-1).reshape(shape)


def rope1d(v: np.ndarray, p, base: float = DEFAULT_BASE) -> np.ndarray:
    """1D rotary embedding: pair k of v rotates by p * base^(-2k/d)."""
    v = np.asarray(v, dtype=np.float64)
    d = v.shape[-1]
    if d % 2 != 0:
        raise ValueError(f"rope1d needs an even dimension, got {d}")
    p = np.asarray(p, dtype=np.float64)
    angles = p[..., None] * _axis_freqs(base, d)
    return rotate_pairs(v, angles)


def rope3d(v: np.ndarray, p: np.ndarray, cfg: RopeConfig) -> np.ndarray:
    """Split v into three contiguous blocks and rope1d each with one axis of p.

    Identity when cfg.enabled is false.
    """
    v = np.asarray(v, dtype=np.float64)
    d = v.shape[-1]
    if d != cfg.head_dim:
        raise ConfigError(f"vector dim {d} != configured head_dim {cfg.head_dim}")
    if not cfg.enabled:
        return v.copy()
    p = np.asarray(p, dtype=np.float64)
    return rotate_pairs(v, rope_angles(p, d, cfg.base))

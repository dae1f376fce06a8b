"""Unified modality interface and causal blinding of optional channels.

Every cloud is presented to the encoder as a fixed 9-wide feature row
[coords | colors | normals] with exact zeros standing in for whatever is
absent. Blinding deliberately knocks out color/normal groups during
pretraining (whole-sample and per-point) so the encoder cannot treat
modality availability as a domain cue. Coordinates are never blinded.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .config import ConfigError
from .pcdata import COLOR_BIT, NORMAL_BIT, PointCloud


class BlindingStage(Enum):
    AT_LOADING = "at_loading"
    AT_MASKED_VIEWS = "at_masked_views"
    AT_LOCAL_VIEWS = "at_local_views"
    OFF = "off"


_STAGE_ALIASES = {
    "at_loading": BlindingStage.AT_LOADING, "loading": BlindingStage.AT_LOADING,
    "at_masked_views": BlindingStage.AT_MASKED_VIEWS, "masked": BlindingStage.AT_MASKED_VIEWS,
    "at_local_views": BlindingStage.AT_LOCAL_VIEWS, "local": BlindingStage.AT_LOCAL_VIEWS,
    "off": BlindingStage.OFF,
}


def blinding_stage(config) -> BlindingStage:
    """Resolve where the trainer applies blinding; defaults to at_loading."""
    name = config.get("modality.stage") if hasattr(config, "get") else config
    if name is None:
        return BlindingStage.AT_LOADING
    key = str(name).strip().lower()
    if key not in _STAGE_ALIASES:
        raise ConfigError(f"unknown blinding stage: {name!r}")
    return _STAGE_ALIASES[key]


def unify_features(pc: PointCloud) -> np.ndarray:
    """N x 9 matrix [coords | colors | normals]; absent blocks are exact zeros."""
    return np.hstack([pc.coords, pc.colors, pc.normals])


def _clear(pc: PointCloud, drop_color: np.ndarray, drop_normal: np.ndarray) -> PointCloud:
    colors, normals, mask = pc.colors.copy(), pc.normals.copy(), pc.mask.copy()
    colors[drop_color] = 0.0
    mask[drop_color] &= ~np.uint8(COLOR_BIT)
    normals[drop_normal] = 0.0
    mask[drop_normal] &= ~np.uint8(NORMAL_BIT)
    return pc.with_(colors=colors, normals=normals, mask=mask)


def blind_per_sample(pc: PointCloud, color_p: float, normal_p: float,
                     rng: np.random.Generator) -> PointCloud:
    """Drop whole modality groups: with prob color_p every color row is zeroed
    and all color bits cleared; independently for normals.

    Draw order is color then normal, one uniform each, so a fixed rng stream
    yields identical decisions regardless of which channels are present.
    """
    for name, p in (("color_p", color_p), ("normal_p", normal_p)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {p}")
    drop_c = bool(rng.random() < color_p)
    drop_n = bool(rng.random() < normal_p)
    if not (drop_c or drop_n):
        return pc
    n = pc.n
    return _clear(pc,
                  np.full(n, drop_c, dtype=bool),
                  np.full(n, drop_n, dtype=bool))


def blind_per_point(pc: PointCloud, rate: float, rng: np.random.Generator) -> PointCloud:
    """Independently clear each present modality at each point with probability rate."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    if rate == 0.0:
        return pc
    u = rng.random((pc.n, 2))
    return _clear(pc,
                  pc.has_colors & (u[:, 0] < rate),
                  pc.has_normals & (u[:, 1] < rate))

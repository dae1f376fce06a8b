"""Space-filling-curve serialization, attention windows, and grid pooling.

Points are ordered by 63-bit Morton (z-order) codes over biased 21-bit voxel
coordinates; contiguous runs of the sorted order form the attention windows.
Two axis interleavings (xyz and yxz) stand in for the order-shuffling that
serialized attention alternates between blocks. Pooling groups voxels under a
coarser grid with mean aggregation, which keeps an exact linear adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BIAS = 1 << 20  # signed cells shifted to unsigned; outdoor clouds go negative
AXIS_ORDERS = ("xyz", "yxz")

_U = np.uint64


def _spread_bits(v: np.ndarray) -> np.ndarray:
    """Spread 21 low bits so consecutive bits land 3 apart (bit i -> bit 3i)."""
    x = v.astype(np.uint64) & _U(0x1FFFFF)
    x = (x | (x << _U(32))) & _U(0x1F00000000FFFF)
    x = (x | (x << _U(16))) & _U(0x1F0000FF0000FF)
    x = (x | (x << _U(8))) & _U(0x100F00F00F00F00F)
    x = (x | (x << _U(4))) & _U(0x10C30C30C30C30C3)
    x = (x | (x << _U(2))) & _U(0x1249249249249249)
    return x


def morton_encode(cell: np.ndarray, axis_order: str = "xyz") -> np.ndarray:
    """Interleave biased 21-bit voxel coordinates into a u64 z-order code.

    axis_order names which component occupies the least-significant interleave
    slot first: "xyz" puts x bits at positions 3k, y at 3k+1, z at 3k+2;
    "yxz" swaps the x and y slots. Codes are strictly monotone in each
    component when the others are held fixed.
    """
    if axis_order not in AXIS_ORDERS:
        raise ValueError(f"axis_order must be one of {AXIS_ORDERS}, got {axis_order!r}")
    cells = np.asarray(cell, dtype=np.int64)
    squeeze = cells.ndim == 1
    cells = np.atleast_2d(cells)
    if cells.shape[-1] != 3:
        raise ValueError(f"cells must have 3 components, got shape {cells.shape}")
    if np.abs(cells).max(initial=0) >= BIAS:
        bad = int(np.abs(cells).max())
        raise ValueError(f"cell component magnitude {bad} out of range (< 2^20)")
    biased = (cells + BIAS).astype(np.uint64)
    x, y, z = biased[..., 0], biased[..., 1], biased[..., 2]
    slot0, slot1 = (x, y) if axis_order == "xyz" else (y, x)
    code = _spread_bits(slot0) | (_spread_bits(slot1) << _U(1)) | (_spread_bits(z) << _U(2))
    return code[0] if squeeze else code


@dataclass(frozen=True)
class SerializedLayout:
    """Sorted serialization of one level: codes, permutations, and windows."""

    codes: np.ndarray               # (N,) uint64
    order: np.ndarray               # (N,) int64, codes[order] nondecreasing
    inverse: np.ndarray             # (N,) int64, order[inverse] == arange(N)
    windows: list[tuple[int, int]]  # [start, end) ranges over the sorted order
    level: int = 0
    axis_order: str = "xyz"

    @property
    def n(self) -> int:
        return self.codes.shape[0]


def build_layout(coords: np.ndarray, grid: float, window: int,
                 axis_order: str = "xyz", level: int = 0) -> SerializedLayout:
    """Voxelize at `grid`, sort by Morton code (stable), cut windows of size <= window."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if not grid > 0:
        raise ValueError(f"grid must be positive, got {grid}")
    cells = np.floor(np.asarray(coords, dtype=np.float64) / grid).astype(np.int64)
    codes = morton_encode(cells, axis_order)
    order = np.argsort(codes, kind="stable").astype(np.int64)
    n = codes.shape[0]
    inverse = np.empty(n, dtype=np.int64)
    inverse[order] = np.arange(n, dtype=np.int64)
    windows = [(s, min(s + window, n)) for s in range(0, n, window)]
    return SerializedLayout(codes=codes, order=order, inverse=inverse,
                            windows=windows, level=level, axis_order=axis_order)


@dataclass(frozen=True)
class PoolMap:
    """Fine-to-coarse assignment from merging voxels under a coarser grid."""

    parent_of: np.ndarray          # (N_fine,) int64 coarse index
    children_of: list[np.ndarray]  # coarse index -> fine indices
    coarse_coords: np.ndarray      # (M, 3) float64 mean member coordinates
    counts: np.ndarray             # (M,) int64 member counts

    @property
    def n_coarse(self) -> int:
        return self.coarse_coords.shape[0]


def build_pool_map(coords: np.ndarray, grid: float, factor: int = 2) -> PoolMap:
    """Group points by floor(voxel_cell / factor); coarse coords are member means."""
    if int(factor) != factor or factor < 2:
        raise ValueError(f"factor must be an integer >= 2, got {factor}")
    cells = np.floor(np.asarray(coords, dtype=np.float64) / grid).astype(np.int64)
    coarse_cells = np.floor_divide(cells, int(factor))
    uniq, inverse = np.unique(coarse_cells, axis=0, return_inverse=True)
    parent = inverse.reshape(-1).astype(np.int64)
    m = uniq.shape[0]
    order = np.argsort(parent, kind="stable")
    counts = np.bincount(parent, minlength=m).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    children = [order[offsets[c]:offsets[c + 1]] for c in range(m)]
    sums = np.zeros((m, 3))
    np.add.at(sums, parent, np.asarray(coords, dtype=np.float64))
    return PoolMap(parent_of=parent, children_of=children,
                   coarse_coords=sums / counts[:, None], counts=counts)


def pool_features(features: np.ndarray, pool_map: PoolMap) -> np.ndarray:
    """Mean of member features per coarse point."""
    m = pool_map.n_coarse
    out = np.zeros((m, features.shape[1]), dtype=features.dtype)
    np.add.at(out, pool_map.parent_of, features)
    return out / pool_map.counts[:, None]


def pool_features_backward(grad_coarse: np.ndarray, pool_map: PoolMap) -> np.ndarray:
    """Adjoint of pool_features: each fine point gets its parent's gradient / count."""
    return (grad_coarse / pool_map.counts[:, None])[pool_map.parent_of]


def broadcast(coarse_features: np.ndarray, pool_map: PoolMap) -> np.ndarray:
    """Assign each fine point its parent's feature."""
    return coarse_features[pool_map.parent_of]


def broadcast_backward(grad_fine: np.ndarray, pool_map: PoolMap) -> np.ndarray:
    """Adjoint of broadcast: sum fine gradients into their parents."""
    out = np.zeros((pool_map.n_coarse, grad_fine.shape[1]), dtype=grad_fine.dtype)
    np.add.at(out, pool_map.parent_of, grad_fine)
    return out


def grid_pool(coords: np.ndarray, features: np.ndarray, grid: float,
              factor: int = 2) -> tuple[np.ndarray, np.ndarray, PoolMap]:
    """Coarsen one hierarchy level: mean coordinates, mean features, and the map."""
    pm = build_pool_map(coords, grid, factor)
    return pm.coarse_coords, pool_features(features, pm), pm

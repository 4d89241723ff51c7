"""
Morton (Z-order) keys over a scene's bounding box: 21 bits per axis,
x at bit 3k, y at 3k+1, z at 3k+2.
"""

import logging

import numpy as np

from .scene import GaussianScene

logger = logging.getLogger(__name__)

BITS = 21
LEVELS = 1 << BITS

# (shift, mask) steps that spread the low 21 bits of a value to every third bit
_SPLIT_STEPS = (
    (32, 0x001F00000000FFFF),
    (16, 0x001F0000FF0000FF),
    (8, 0x100F00F00F00F00F),
    (4, 0x10C30C30C30C30C3),
    (2, 0x1249249249249249),
)


def split3(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.uint64) & np.uint64(LEVELS - 1)
    for shift, mask in _SPLIT_STEPS:
        v = (v | (v << np.uint64(shift))) & np.uint64(mask)
    return v


def compact3(codes) -> np.ndarray:
    v = np.asarray(codes, dtype=np.uint64) & np.uint64(0x1249249249249249)
    v = (v ^ (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v ^ (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v ^ (v >> np.uint64(8))) & np.uint64(0x001F0000FF0000FF)
    v = (v ^ (v >> np.uint64(16))) & np.uint64(0x001F00000000FFFF)
    v = (v ^ (v >> np.uint64(32))) & np.uint64(LEVELS - 1)
    return v


def interleave(qx, qy, qz) -> np.ndarray:
    """Morton code of already quantized integer coordinates"""
    return split3(qx) | (split3(qy) << np.uint64(1)) | (split3(qz) << np.uint64(2))


def quantize_positions(positions: np.ndarray, aabb_min, aabb_max) -> np.ndarray:
    """Per-axis cell index in [0, 2^21 - 1]; a zero-extent axis maps to 0"""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    lo = np.asarray(aabb_min, dtype=np.float64)
    hi = np.asarray(aabb_max, dtype=np.float64)
    extent = hi - lo
    safe = np.where(extent > 0, extent, 1.0)
    cells = np.floor((positions - lo) / safe * LEVELS)
    cells = np.where(extent > 0, cells, 0.0)
    return np.clip(cells, 0, LEVELS - 1).astype(np.uint64)


def morton_key(position, aabb) -> int:
    """63-bit key of one position; aabb is (min, max)"""
    q = quantize_positions(np.asarray(position, dtype=np.float64).reshape(1, 3), aabb[0], aabb[1])[0]
    return int(interleave(q[0], q[1], q[2]))


def morton_keys(positions: np.ndarray, aabb_min, aabb_max) -> np.ndarray:
    q = quantize_positions(positions, aabb_min, aabb_max)
    return interleave(q[:, 0], q[:, 1], q[:, 2])


def morton_sort(scene: GaussianScene):
    """Rows stably sorted by Morton key over the scene AABB; returns (scene, permutation)"""
    if scene.count == 0:
        return scene.copy(), np.zeros(0, dtype=np.int64)
    lo, hi = scene.aabb()
    keys = morton_keys(scene.positions, lo, hi)
    perm = np.argsort(keys, kind="stable").astype(np.int64)
    return scene.take(perm), perm

"""
Per-channel uniform scalar quantizers with grids stored as 32-bit floats.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteInputError


@dataclass
class QuantGrid:
    """Per-channel [min, max] grid with 2^bits levels; bounds are float32-representable"""
    mins: np.ndarray
    maxs: np.ndarray
    bits: int

    def __post_init__(self):
        if self.bits not in (8, 16):
            raise ValueError(f"bit depth must be 8 or 16, got {self.bits}")
        self.mins = np.asarray(self.mins, dtype=np.float32).astype(np.float64).reshape(-1)
        self.maxs = np.asarray(self.maxs, dtype=np.float32).astype(np.float64).reshape(-1)

    @property
    def channels(self) -> int:
        return int(self.mins.shape[0])

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1

    @property
    def degenerate(self) -> np.ndarray:
        return ~(self.maxs > self.mins)

    def step(self) -> np.ndarray:
        return (self.maxs - self.mins) / self.levels


def _outward_f32(values: np.ndarray, direction: float) -> np.ndarray:
    rounded = values.astype(np.float32)
    wrong = (rounded.astype(np.float64) > values) if direction < 0 else (rounded.astype(np.float64) < values)
    return np.where(wrong, np.nextafter(rounded, np.float32(direction * np.inf)), rounded)


def fit_grid(values: np.ndarray, bits: int) -> QuantGrid:
    """Grid spanning each column's range, bounds rounded outward to float32"""
    values = np.asarray(values, dtype=np.float64)
    values = values.reshape(values.shape[0], -1)
    if not np.all(np.isfinite(values)):
        raise NonFiniteInputError()
    if values.shape[0] == 0:
        zeros = np.zeros(values.shape[1])
        return QuantGrid(zeros, zeros, bits)
    return QuantGrid(_outward_f32(values.min(axis=0), -1.0), _outward_f32(values.max(axis=0), 1.0), bits)


def quantize(values: np.ndarray, grid: QuantGrid) -> np.ndarray:
    """q = floor((v - min) / (max - min) * (2^b - 1) + 0.5), clamped; degenerate channels give 0"""
    values = np.asarray(values, dtype=np.float64)
    values = values.reshape(values.shape[0], -1) if values.ndim > 1 else values.reshape(-1, 1)
    if not np.all(np.isfinite(values)):
        raise NonFiniteInputError()
    extent = grid.maxs - grid.mins
    safe = np.where(grid.degenerate, 1.0, extent)
    t = (values - grid.mins) / safe * grid.levels
    q = np.clip(np.floor(t + 0.5), 0, grid.levels)
    q[:, grid.degenerate] = 0
    return q.astype(np.int64)


def dequantize(indices: np.ndarray, grid: QuantGrid) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.float64)
    indices = indices.reshape(indices.shape[0], -1) if indices.ndim > 1 else indices.reshape(-1, 1)
    return grid.mins + indices * grid.step()

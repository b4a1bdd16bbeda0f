"""Uniform frequency grids and their DFT-dual spatial grids.

The transform convention used throughout the package is

    f_hat(z) = int exp(-i z.x) f(x) dx,
    f(x)     = (2 pi)^-d int exp(i z.x) f_hat(z) dz,

discretised on a symmetric odd-sized grid so that both directions are exact
DFTs of each other.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class FrequencyGrid:
    """Symmetric uniform grid {-z_max, ..., z_max}^d with m points per axis."""

    z_max: float
    m: int
    d: int = 1

    def __post_init__(self):
        if self.m < 3 or self.m % 2 == 0:
            raise ValueError(f"m must be odd and >= 3, got {self.m}")
        if not self.z_max > 0:
            raise ValueError(f"z_max must be positive, got {self.z_max}")
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @classmethod
    def default(cls, d: int = 1) -> "FrequencyGrid":
        if d == 1:
            return cls(128.0, 513, 1)
        return cls(48.0, 129, d)

    @property
    def dz(self) -> float:
        return 2.0 * self.z_max / (self.m - 1)

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.d

    @cached_property
    def axis(self) -> np.ndarray:
        c = (self.m - 1) // 2
        return (np.arange(self.m) - c) * self.dz

    @cached_property
    def points(self) -> np.ndarray:
        """Grid points as an array of shape (m**d, d), C order."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @cached_property
    def norm2(self) -> np.ndarray:
        """|z|^2 on the grid, shaped like the grid."""
        return np.sum(self.points**2, axis=1).reshape(self.shape)

    @property
    def cell(self) -> float:
        return self.dz**self.d

    @property
    def dx(self) -> float:
        return 2.0 * np.pi / (self.m * self.dz)

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.dz

    @cached_property
    def x_axis(self) -> np.ndarray:
        c = (self.m - 1) // 2
        return (np.arange(self.m) - c) * self.dx

    @cached_property
    def x_points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.x_axis] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def index_of(self, z) -> tuple:
        """Grid index of an exact grid frequency; raises if z is off-grid."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.shape != (self.d,):
            raise ValueError(f"expected a {self.d}-vector, got shape {z.shape}")
        c = (self.m - 1) // 2
        k = z / self.dz
        kr = np.rint(k)
        if np.any(np.abs(k - kr) > 1e-9) or np.any(np.abs(kr) > c):
            raise ValueError(f"frequency {z} is not a point of the grid")
        return tuple(int(v) + c for v in kr)


def to_space(grid: FrequencyGrid, values: np.ndarray) -> np.ndarray:
    """(2 pi)^-d sum_z values(z) exp(i z.x) dz^d on the dual spatial grid."""
    values = np.asarray(values).reshape(grid.shape)
    axes = tuple(range(grid.d))
    out = np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(values, axes=axes), axes=axes), axes=axes)
    scale = (grid.m * grid.dz / (2.0 * np.pi)) ** grid.d
    return out * scale


def to_frequency(grid: FrequencyGrid, field: np.ndarray) -> np.ndarray:
    """sum_x field(x) exp(-i z.x) dx^d on the grid frequencies."""
    field = np.asarray(field).reshape(grid.shape)
    axes = tuple(range(grid.d))
    out = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(field, axes=axes), axes=axes), axes=axes)
    return out * grid.dx**grid.d


def time_grid(T: float, n: int) -> np.ndarray:
    return np.linspace(0.0, T, n + 1)

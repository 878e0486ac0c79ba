"""Geometry-aware 3D volumes.

Arrays are indexed ``values[x, y, z]`` with shape ``grid.matrix``; the linear
layout used for files and flat views is x fastest
(``index = x + Mx * (y + My * z)``), i.e. Fortran order.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from pydantic import field_validator

from modip import settings
from modip.errors import ConfigError, GridMismatchError, NumericalError
from modip.models.common import FrozenModel

Triple = tuple[float, float, float]

DTYPES = {"f32": np.float32, "f64": np.float64}


def working_dtype(precision: str | None = None) -> np.dtype:
    return np.dtype(DTYPES[precision or settings.PRECISION])


def precision_of(dtype) -> str:
    return "f32" if np.dtype(dtype) == np.float32 else "f64"


class GridSpec(FrozenModel):
    matrix: tuple[int, int, int]
    voxel_mm: Triple = (1.0, 1.0, 1.0)
    b0_dir: Triple = (0.0, 0.0, 1.0)

    @field_validator("matrix")
    @classmethod
    def _matrix_min_size(cls, value):
        if any(m < 2 for m in value):
            raise ValueError(f"all matrix entries must be >= 2, got {value}")
        return value

    @field_validator("voxel_mm")
    @classmethod
    def _positive_voxels(cls, value):
        if not all(math.isfinite(v) and v > 0 for v in value):
            raise ValueError(f"voxel sizes must be positive, got {value}")
        return value

    @field_validator("b0_dir")
    @classmethod
    def _unit_b0(cls, value):
        norm = math.sqrt(sum(p * p for p in value))
        if not math.isfinite(norm) or norm == 0:
            raise ValueError(f"b0_dir must be a non-zero finite vector, got {value}")
        # already-unit vectors are kept bit-exact so file round-trips are stable
        if abs(norm - 1.0) <= 4 * np.finfo(np.float64).eps:
            return tuple(float(p) for p in value)
        return tuple(p / norm for p in value)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.matrix

    @property
    def n_voxels(self) -> int:
        return math.prod(self.matrix)

    def with_geometry(self, voxel_mm: Triple | None = None, b0_dir: Triple | None = None):
        return GridSpec(
            matrix=self.matrix,
            voxel_mm=voxel_mm or self.voxel_mm,
            b0_dir=b0_dir or self.b0_dir,
        )

    def linear_index(self, x: int, y: int, z: int) -> int:
        mx, my, _ = self.matrix
        return x + mx * (y + my * z)


def ensure_same_grid(what: str, *items):
    first = items[0].grid
    for item in items[1:]:
        if item.grid != first:
            raise GridMismatchError(what, first, item.grid)
    return first


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """Real-valued volume (ppm for fields and susceptibility, unitless for masks).

    Operations never mutate ``values``; every result is a new volume.
    """

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ConfigError(
                f"value shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if self.values.dtype not in (np.float32, np.float64):
            raise ConfigError(f"unsupported element type {self.values.dtype}")

    @classmethod
    def zeros(cls, grid: GridSpec, dtype=None):
        return cls(grid, np.zeros(grid.shape, dtype=dtype or working_dtype()))

    @classmethod
    def full(cls, grid: GridSpec, value: float, dtype=None):
        return cls(grid, np.full(grid.shape, value, dtype=dtype or working_dtype()))

    @classmethod
    def from_flat(cls, grid: GridSpec, flat, dtype=None):
        """Build from x-fastest linear data"""
        flat = np.asarray(flat, dtype=dtype or working_dtype())
        if flat.size != grid.n_voxels:
            raise ConfigError(
                f"expected {grid.n_voxels} values for {grid.matrix}, got {flat.size}"
            )
        return cls(grid, flat.reshape(grid.shape, order="F"))

    def flat(self) -> np.ndarray:
        return self.values.ravel(order="F")

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def ensure_finite(self, what: str = "volume"):
        if not np.all(np.isfinite(self.values)):
            raise NumericalError(f"{what} contains non-finite values")
        return self

    def with_values(self, values: np.ndarray) -> "ScalarVolume":
        return ScalarVolume(self.grid, values)

    def astype(self, dtype) -> "ScalarVolume":
        return ScalarVolume(self.grid, self.values.astype(dtype, copy=False))

    def _other(self, other):
        if isinstance(other, ScalarVolume):
            ensure_same_grid("volume arithmetic", self, other)
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._other(other))

    def __sub__(self, other):
        return self.with_values(self.values - self._other(other))

    def __mul__(self, other):
        return self.with_values(self.values * self._other(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


class Mask(ScalarVolume):
    """Binary region: values exactly 0 or 1, at least one voxel set."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all((self.values == 0) | (self.values == 1)):
            raise ConfigError("mask values must be exactly 0 or 1")
        if not np.any(self.values == 1):
            raise ConfigError("mask is empty")

    @classmethod
    def ones(cls, grid: GridSpec, dtype=None):
        return cls(grid, np.ones(grid.shape, dtype=dtype or working_dtype()))

    @classmethod
    def from_volume(cls, volume: ScalarVolume) -> "Mask":
        return cls(volume.grid, volume.values)

    @classmethod
    def from_bool(cls, grid: GridSpec, selected: np.ndarray, dtype=None) -> "Mask":
        return cls(grid, selected.astype(dtype or working_dtype()))

    @cached_property
    def count(self) -> int:
        return int(np.count_nonzero(self.values))

    @property
    def selected(self) -> np.ndarray:
        return self.values != 0


@dataclass(frozen=True, eq=False)
class ComplexSpectrum:
    """DFT of a volume in unshifted bin order."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ConfigError(
                f"spectrum shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def __mul__(self, other):
        return ComplexSpectrum(self.grid, self.values * other)

    __rmul__ = __mul__

    def mirrored(self) -> np.ndarray:
        """Values at -k mod M for every bin"""
        return np.roll(np.flip(self.values), shift=1, axis=(0, 1, 2))

    def is_hermitian(self, rtol: float = 1e-10) -> bool:
        scale = max(float(np.max(np.abs(self.values))), np.finfo(np.float64).tiny)
        return bool(np.max(np.abs(self.values - np.conj(self.mirrored()))) <= rtol * scale)

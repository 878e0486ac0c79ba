"""Deterministic digital phantoms and field synthesis"""

import logging

import numpy as np

from modip.errors import ConfigError
from modip.models.configs import CuboidSpec, LesionSpec
from modip.models.volume import GridSpec, Mask, ScalarVolume, Triple, working_dtype
from modip.services.dipole import apply_A, build_kernel
from modip.utils.rng import PortableRandom

logger = logging.getLogger("modip.phantom")

DEFAULT_NOISE_FRACTION = 0.05


def cuboid_phantom(spec: CuboidSpec, dtype=None) -> ScalarVolume:
    """Random axis-aligned cuboids painted over a zero background.

    Per cuboid the draws are: three side lengths, three corner indices, one
    susceptibility. Cuboids reaching past the FOV are clipped; later cuboids
    overwrite earlier ones.
    """
    grid = spec.grid
    values = np.zeros(grid.shape, dtype=dtype or working_dtype())
    rng = PortableRandom(spec.seed)
    lo, hi = spec.side_range
    for _ in range(spec.count):
        sides = rng.integers(lo, hi, 3)
        corner = [int(rng.integers(0, m - 1)) for m in grid.matrix]
        chi = rng.uniform(*spec.chi_range)
        x, y, z = corner
        sx, sy, sz = (int(s) for s in sides)
        values[x : x + sx, y : y + sy, z : z + sz] = chi
    logger.debug(f"Painted {spec.count} cuboids on {grid.matrix} (seed={spec.seed})")
    return ScalarVolume(grid, values)


def _lesion_selection(grid: GridSpec, spec: LesionSpec) -> np.ndarray:
    axes = [
        (np.arange(m) - c) * v
        for m, c, v in zip(grid.matrix, spec.center, grid.voxel_mm, strict=True)
    ]
    dx, dy, dz = np.meshgrid(*axes, indexing="ij")
    inside = dx**2 + dy**2 + dz**2 <= spec.radius_mm**2
    if not inside.any():
        raise ConfigError(
            f"lesion at {spec.center} with radius {spec.radius_mm} mm misses the FOV"
        )
    return inside


def lesion_mask(grid: GridSpec, spec: LesionSpec) -> Mask:
    return Mask.from_bool(grid, _lesion_selection(grid, spec))


def add_lesion(chi: ScalarVolume, spec: LesionSpec) -> ScalarVolume:
    """Fill a sphere (physical distance of voxel centres) with N(mean, std^2) draws"""
    inside = _lesion_selection(chi.grid, spec)
    count = int(inside.sum())
    draws = PortableRandom(spec.seed).normal(spec.mean_ppm, spec.std_ppm, count)
    flat = chi.flat().copy()
    # draws are assigned in x-fastest voxel order
    flat[inside.ravel(order="F")] = draws
    return ScalarVolume.from_flat(chi.grid, flat, dtype=chi.dtype)


def regrid(volume: ScalarVolume, voxel_mm: Triple | None = None, b0_dir=None):
    """Relabel voxel size and B0 direction without resampling"""
    return ScalarVolume(volume.grid.with_geometry(voxel_mm, b0_dir), volume.values)


def noise_std_for(
    field: ScalarVolume, mask: Mask | None = None, fraction=DEFAULT_NOISE_FRACTION
) -> float:
    values = field.values[mask.selected] if mask is not None else field.values
    return fraction * float(np.std(values))


def simulate_field(chi: ScalarVolume, noise_std: float, seed: int) -> ScalarVolume:
    """phi = A chi + N(0, noise_std^2), using the geometry carried by chi.grid"""
    if noise_std < 0:
        raise ConfigError(f"noise_std must be >= 0, got {noise_std}")
    chi.ensure_finite("susceptibility")
    phi = apply_A(chi, build_kernel(chi.grid, chi.dtype))
    if noise_std == 0:
        return phi
    noise = PortableRandom(seed).normal(0.0, noise_std, chi.grid.n_voxels)
    return phi + ScalarVolume.from_flat(chi.grid, noise, dtype=chi.dtype)

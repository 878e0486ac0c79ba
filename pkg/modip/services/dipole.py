"""Unit dipole kernel and the forward field model A = F^-1 D F"""

import logging
from dataclasses import dataclass, field

import numpy as np
from cachetools import LRUCache, cached

from modip import settings
from modip.models.volume import (
    GridSpec,
    Mask,
    ScalarVolume,
    ensure_same_grid,
    working_dtype,
)
from modip.services.fourier import fft3, ifft3_real

logger = logging.getLogger("modip.dipole")


@dataclass(frozen=True, eq=False)
class DipoleKernel:
    grid: GridSpec
    d: np.ndarray = field(repr=False)

    def as_volume(self) -> ScalarVolume:
        return ScalarVolume(self.grid, self.d.copy())


def kspace_coordinates(grid: GridSpec):
    """Per-axis k coordinates s(j, M) / (M * v) in unshifted bin order"""
    return [
        np.fft.fftfreq(m, d=v) for m, v in zip(grid.matrix, grid.voxel_mm, strict=True)
    ]


def _mirror(values: np.ndarray) -> np.ndarray:
    return np.roll(np.flip(values), shift=1, axis=(0, 1, 2))


@cached(
    LRUCache(maxsize=max(1, settings.KERNEL_CACHE_SIZE)),
    key=lambda grid, dtype=None: (grid, np.dtype(dtype or working_dtype()).str),
)
def build_kernel(grid: GridSpec, dtype=None) -> DipoleKernel:
    """d = 1/3 - (p.k)^2 / |k|^2 with d(0,0,0) = 0.

    For even matrix sizes the Nyquist bins of an oblique field are not mirror
    images of themselves; the kernel is averaged with d(-k mod M) there so it
    stays even and A stays self-adjoint with real output.
    """
    kx, ky, kz = np.meshgrid(*kspace_coordinates(grid), indexing="ij")
    px, py, pz = grid.b0_dir
    k2 = kx**2 + ky**2 + kz**2
    k2[0, 0, 0] = 1.0
    d = 1.0 / 3.0 - (px * kx + py * ky + pz * kz) ** 2 / k2
    d[0, 0, 0] = 0.0
    d = 0.5 * (d + _mirror(d))
    d = d.astype(dtype or working_dtype())
    d.flags.writeable = False
    logger.debug(f"Built dipole kernel for {grid.matrix} voxel={grid.voxel_mm}")
    return DipoleKernel(grid, d)


def apply_A(chi: ScalarVolume, kern: DipoleKernel) -> ScalarVolume:
    """Field of a susceptibility distribution (circular convolution)"""
    ensure_same_grid("apply_A", chi, kern)
    return ifft3_real(fft3(chi) * kern.d)


def fidelity_residual(
    chi: ScalarVolume, phi: ScalarVolume, kern: DipoleKernel, mask: Mask
) -> ScalarVolume:
    ensure_same_grid("fidelity", chi, phi, kern, mask)
    return (apply_A(chi, kern) - phi) * mask


def fidelity_value(
    chi: ScalarVolume, phi: ScalarVolume, kern: DipoleKernel, mask: Mask
) -> float:
    """||mask * (A chi - phi)||_2^2"""
    r = fidelity_residual(chi, phi, kern, mask).values
    return float(np.dot(r.ravel(), r.ravel()))


def fidelity_gradient(
    chi: ScalarVolume, phi: ScalarVolume, kern: DipoleKernel, mask: Mask
) -> ScalarVolume:
    """2 A (mask * (A chi - phi)); A is self-adjoint and mask is idempotent"""
    return apply_A(fidelity_residual(chi, phi, kern, mask), kern) * 2.0

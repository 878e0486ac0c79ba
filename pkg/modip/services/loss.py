"""Outer loss: masked MAE of the field residual plus MAE of its Laplacian."""

import numpy as np

from modip.errors import ConfigError, NumericalError
from modip.models.reports import LossReport
from modip.models.volume import Mask, ScalarVolume, ensure_same_grid
from modip.services.dipole import DipoleKernel, apply_A


def laplacian(v: ScalarVolume) -> ScalarVolume:
    """7-point stencil scaled by voxel size, zero outside the FOV (self-adjoint)"""
    padded = np.pad(v.values, 1)
    center = padded[1:-1, 1:-1, 1:-1]
    out = np.zeros_like(v.values)
    hx, hy, hz = v.grid.voxel_mm
    out += (padded[2:, 1:-1, 1:-1] - 2 * center + padded[:-2, 1:-1, 1:-1]) / hx**2
    out += (padded[1:-1, 2:, 1:-1] - 2 * center + padded[1:-1, :-2, 1:-1]) / hy**2
    out += (padded[1:-1, 1:-1, 2:] - 2 * center + padded[1:-1, 1:-1, :-2]) / hz**2
    return v.with_values(out)


def _residuals(chi_n, phi, kern, mask):
    ensure_same_grid("outer loss", chi_n, phi, kern, mask)
    if not np.any(mask.selected):
        raise ConfigError("outer loss needs a non-empty mask")
    field = apply_A(chi_n, kern)
    r = (field - phi) * mask
    s = (laplacian(field) - laplacian(phi)) * mask
    return r, s


def _report(r: ScalarVolume, s: ScalarVolume, count: int) -> LossReport:
    fidelity = float(np.abs(r.values).sum()) / count
    lap = float(np.abs(s.values).sum()) / count
    if not (np.isfinite(fidelity) and np.isfinite(lap)):
        raise NumericalError(f"non-finite loss (fidelity={fidelity}, laplacian={lap})")
    return LossReport(fidelity_mae=fidelity, laplacian_mae=lap, total=fidelity + lap)


def outer_loss(
    chi_n: ScalarVolume, phi: ScalarVolume, kern: DipoleKernel, mask: Mask
) -> LossReport:
    r, s = _residuals(chi_n, phi, kern, mask)
    return _report(r, s, mask.count)


def outer_loss_and_grad(
    chi_n: ScalarVolume, phi: ScalarVolume, kern: DipoleKernel, mask: Mask
) -> tuple[LossReport, ScalarVolume]:
    """Loss report and subgradient w.r.t. chi_n, sharing one A chi_n.

    grad = (1/N) A (mask sign(r) + Lap(mask sign(s))) with sign(0) = 0
    """
    r, s = _residuals(chi_n, phi, kern, mask)
    count = mask.count
    sign_r = r.with_values(np.sign(r.values)) * mask
    sign_s = s.with_values(np.sign(s.values)) * mask
    grad = apply_A(sign_r + laplacian(sign_s), kern) * (1.0 / count)
    return _report(r, s, count), grad


def outer_loss_grad(
    chi_n: ScalarVolume, phi: ScalarVolume, kern: DipoleKernel, mask: Mask
) -> ScalarVolume:
    return outer_loss_and_grad(chi_n, phi, kern, mask)[1]

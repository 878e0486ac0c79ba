"""Data Fidelity Optimization: the unrolled gradient-descent refinement.

Each step  chi <- chi - alpha * 2 A M (A chi - phi)  is affine in chi with the
self-adjoint linear part  L = I - 2 alpha A M A, so the Jacobian of n steps is
L^n = (L^n)^T and its vector-Jacobian product needs no stored iterates.
"""

import logging
from typing import Iterator

from modip.models.configs import DfoConfig
from modip.models.volume import Mask, ScalarVolume, ensure_same_grid
from modip.services.dipole import DipoleKernel, apply_A, fidelity_gradient

logger = logging.getLogger("modip.dfo")


def dfo_step(
    chi: ScalarVolume,
    phi: ScalarVolume,
    kern: DipoleKernel,
    mask: Mask,
    alpha: float,
) -> ScalarVolume:
    return chi - fidelity_gradient(chi, phi, kern, mask) * alpha


def dfo_iterates(
    chi0: ScalarVolume,
    phi: ScalarVolume,
    kern: DipoleKernel,
    mask: Mask,
    cfg: DfoConfig,
) -> Iterator[ScalarVolume]:
    """Yield chi_1 ... chi_n"""
    ensure_same_grid("dfo", chi0, phi, kern, mask)
    chi = chi0
    for _ in range(cfg.n_steps):
        chi = dfo_step(chi, phi, kern, mask, cfg.alpha)
        yield chi


def dfo_run(
    chi0: ScalarVolume,
    phi: ScalarVolume,
    kern: DipoleKernel,
    mask: Mask,
    cfg: DfoConfig,
) -> ScalarVolume:
    ensure_same_grid("dfo", chi0, phi, kern, mask)
    chi = chi0
    for chi in dfo_iterates(chi0, phi, kern, mask, cfg):
        pass
    return chi


def dfo_vjp(
    g: ScalarVolume, kern: DipoleKernel, mask: Mask, cfg: DfoConfig
) -> ScalarVolume:
    """(d chi_n / d chi_0)^T g = L^n g"""
    ensure_same_grid("dfo_vjp", g, kern, mask)
    for _ in range(cfg.n_steps):
        g = g - apply_A(apply_A(g, kern) * mask, kern) * (2.0 * cfg.alpha)
    return g

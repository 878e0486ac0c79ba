"""Finite-difference self-checks of every hand-derived gradient.

Each suite compares an analytic gradient with central differences on a small
random double-precision instance and reports the global relative error
``max |analytic - numeric| / max |numeric|`` over the probed coordinates.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from pydantic import Field

from modip.models.common import FrozenModel
from modip.models.configs import DfoConfig, NetworkConfig
from modip.models.volume import GridSpec, Mask, ScalarVolume
from modip.services import network
from modip.services.dfo import dfo_run, dfo_vjp
from modip.services.dipole import (
    DipoleKernel,
    apply_A,
    build_kernel,
    fidelity_gradient,
    fidelity_value,
)
from modip.services.fourier import dot
from modip.services.loss import outer_loss, outer_loss_grad
from modip.utils.rng import PortableRandom

logger = logging.getLogger("modip.gradcheck")

FIDELITY_TOL = 1e-6
DFO_VJP_TOL = 1e-5
OUTER_LOSS_TOL = 1e-5
NETWORK_TOL = 1e-4
NETWORK_STEP = 1e-5

# oblique on purpose, so the Nyquist handling of the kernel is exercised
CHECK_B0 = (0.2, 0.3, 0.9)
CHECK_VOXEL = (1.0, 1.0, 1.5)


class CheckResult(FrozenModel):
    name: str
    max_rel_error: float
    threshold: float
    probes: int
    skipped: int = 0
    # relative error of each parameter tensor, scaled by its own largest gradient
    per_tensor: dict[str, float] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.threshold)


@dataclass(frozen=True)
class CheckInstance:
    grid: GridSpec
    chi: ScalarVolume
    phi: ScalarVolume
    mask: Mask
    kern: DipoleKernel
    seed: int


def make_instance(size: int = 8, seed: int = 0) -> CheckInstance:
    grid = GridSpec(matrix=(size, size, size), voxel_mm=CHECK_VOXEL, b0_dir=CHECK_B0)
    rng = PortableRandom(seed)
    kern = build_kernel(grid, np.float64)
    chi = ScalarVolume(grid, rng.normal(0.0, 1.0, grid.shape))
    truth = ScalarVolume(grid, rng.normal(0.0, 1.0, grid.shape))
    noise = ScalarVolume(grid, rng.normal(0.0, 0.1, grid.shape))
    phi = apply_A(truth, kern) + noise
    selected = rng.random(grid.shape) < 0.7
    selected[0, 0, 0] = True
    mask = Mask.from_bool(grid, selected, np.float64)
    return CheckInstance(grid, chi, phi, mask, kern, seed)


def sample_indices(total: int, probes: int | None, seed: int) -> np.ndarray:
    """All indices, or ``probes`` distinct ones in increasing order"""
    if probes is None or probes >= total:
        return np.arange(total)
    order = np.argsort(PortableRandom(seed).random(total), kind="stable")
    return np.sort(order[:probes])


def central_differences(
    fn: Callable[[np.ndarray], float], x: np.ndarray, indices: np.ndarray, h: float
) -> np.ndarray:
    """(fn(x + h e_i) - fn(x - h e_i)) / 2h for each flat (C-order) index i"""
    probe = np.array(x, dtype=np.float64, copy=True)
    flat = probe.reshape(-1)
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        original = flat[i]
        flat[i] = original + h
        plus = fn(probe)
        flat[i] = original - h
        minus = fn(probe)
        flat[i] = original
        out[k] = (plus - minus) / (2.0 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), np.finfo(np.float64).tiny)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _result(
    name, analytic, numeric, threshold, skipped=0, per_tensor=None
) -> CheckResult:
    result = CheckResult(
        name=name,
        max_rel_error=relative_error(analytic, numeric),
        threshold=threshold,
        probes=len(numeric),
        skipped=skipped,
        per_tensor=per_tensor or {},
    )
    for tensor, error in result.per_tensor.items():
        logger.debug(f"{name}: {tensor} max relative error {error:.3e}")
    logger.info(
        f"{name}: max relative error {result.max_rel_error:.3e} "
        f"(threshold {threshold:g}, {result.probes} probes) "
        f"{'ok' if result.passed else 'FAILED'}"
    )
    return result


def check_fidelity_gradient(inst: CheckInstance, probes: int | None = None):
    def fidelity(values):
        chi = inst.chi.with_values(values)
        return fidelity_value(chi, inst.phi, inst.kern, inst.mask)

    indices = sample_indices(inst.grid.n_voxels, probes, inst.seed)
    analytic = fidelity_gradient(inst.chi, inst.phi, inst.kern, inst.mask).values
    numeric = central_differences(fidelity, inst.chi.values, indices, h=1e-3)
    return _result(
        "fidelity_gradient", analytic.reshape(-1)[indices], numeric, FIDELITY_TOL
    )


def check_dfo_vjp(
    inst: CheckInstance, cfg: DfoConfig | None = None, probes: int | None = None
):
    """u . chi_n(chi_0) differentiated by central differences against L^n u"""
    cfg = cfg or DfoConfig(alpha=1.2, n_steps=5)
    u = ScalarVolume(
        inst.grid, PortableRandom(inst.seed + 1).normal(size=inst.grid.shape)
    )

    def projected(values):
        chi0 = inst.chi.with_values(values)
        return dot(u, dfo_run(chi0, inst.phi, inst.kern, inst.mask, cfg))

    indices = sample_indices(inst.grid.n_voxels, probes, inst.seed)
    analytic = dfo_vjp(u, inst.kern, inst.mask, cfg).values
    numeric = central_differences(projected, inst.chi.values, indices, h=1e-3)
    return _result("dfo_vjp", analytic.reshape(-1)[indices], numeric, DFO_VJP_TOL)


def check_outer_loss_grad(inst: CheckInstance, probes: int | None = None):
    # the loss is piecewise linear; a small step keeps every residual sign fixed
    def total(values):
        chin = inst.chi.with_values(values)
        return outer_loss(chin, inst.phi, inst.kern, inst.mask).total

    indices = sample_indices(inst.grid.n_voxels, probes, inst.seed)
    analytic = outer_loss_grad(inst.chi, inst.phi, inst.kern, inst.mask).values
    numeric = central_differences(total, inst.chi.values, indices, h=1e-7)
    return _result(
        "outer_loss_grad", analytic.reshape(-1)[indices], numeric, OUTER_LOSS_TOL
    )


def _activation_pattern(cache: network.ForwardCache) -> list[np.ndarray]:
    return [block.active for block in cache.blocks.values()] + list(cache.pools)


def _same_pattern(left: list[np.ndarray], right: list[np.ndarray]) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(left, right, strict=True))


def check_network_gradient(
    inst: CheckInstance,
    cfg: NetworkConfig | None = None,
    probes: int | None = None,
    h: float = NETWORK_STEP,
):
    """Gradient of sum(w * f(x)) w.r.t. every parameter tensor.

    Probes whose +-h evaluations switch a ReLU or a max-pool winner straddle
    a kink and are skipped.
    """
    cfg = cfg or NetworkConfig(depth=1, base_channels=2, seed=inst.seed)
    rng = PortableRandom(inst.seed + 2)
    x = ScalarVolume(inst.grid, rng.normal(size=inst.grid.shape))
    w = ScalarVolume(inst.grid, rng.normal(size=inst.grid.shape))
    params = network.init_params(cfg, np.float64)
    # non-trivial biases, scales and shifts
    for name, tensor in params.items():
        if not name.endswith(".weight"):
            params[name] = tensor + rng.normal(0.0, 0.1, tensor.shape)

    _, cache = network.forward(x, params, cfg)
    pattern = _activation_pattern(cache)
    grads = network.backward(w, cache, params, cfg)

    analytic, numeric, skipped = [], [], 0
    per_tensor = {}
    for name, tensor in params.items():
        first = len(numeric)
        trial = params.copy()
        flat = trial[name].reshape(-1)
        for i in sample_indices(tensor.size, probes, inst.seed):
            original = flat[i]
            sides = []
            for value in (original + h, original - h):
                flat[i] = value
                out, side_cache = network.forward(x, trial, cfg)
                sides.append((dot(w, out), _activation_pattern(side_cache)))
            flat[i] = original
            if not all(_same_pattern(pattern, side) for _, side in sides):
                skipped += 1
                continue
            numeric.append((sides[0][0] - sides[1][0]) / (2.0 * h))
            analytic.append(grads[name].reshape(-1)[i])
        if len(numeric) > first:
            per_tensor[name] = relative_error(
                np.asarray(analytic[first:]), np.asarray(numeric[first:])
            )
    if skipped:
        logger.debug(f"network_gradient: skipped {skipped} probes at kinks")
    return _result(
        "network_gradient",
        np.asarray(analytic),
        np.asarray(numeric),
        NETWORK_TOL,
        skipped,
        per_tensor,
    )


def run_all(
    size: int = 8,
    base_channels: int = 2,
    seed: int = 0,
    probes: int | None = None,
) -> list[CheckResult]:
    inst = make_instance(size, seed)
    return [
        check_fidelity_gradient(inst, probes),
        check_dfo_vjp(inst, probes=probes),
        check_outer_loss_grad(inst, probes),
        check_network_gradient(
            inst, NetworkConfig(depth=1, base_channels=base_channels, seed=seed), probes
        ),
    ]

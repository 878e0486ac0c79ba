"""Reconstruction loop in three modes.

modip  network output chi_0 refined by n DFO steps; the loss on chi_n is
       back-propagated through the DFO steps and the network
dip    the same loop with n = 0
dfo    no network: one DFO step per iteration starting from chi = 0
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

from modip import settings
from modip.errors import DivergenceError, NumericalError
from modip.models.configs import InputKind, ReconConfig
from modip.models.reports import IterationRecord, LossReport
from modip.models.volume import Mask, ScalarVolume, ensure_same_grid
from modip.services import network
from modip.services.adam import AdamState, adam_step
from modip.services.dfo import dfo_run, dfo_step, dfo_vjp
from modip.services.dipole import DipoleKernel, build_kernel, fidelity_value
from modip.services.loss import outer_loss_and_grad
from modip.services.metrics import nrmse
from modip.utils import PortableRandom, humanize_milliseconds, time_it

logger = logging.getLogger("modip.recon")

NOISE_INPUT_STREAM = 0x5EED


@dataclass(frozen=True)
class Snapshot:
    iteration: int
    chin: ScalarVolume
    chi0: ScalarVolume | None = None


@dataclass
class ReconState:
    config: ReconConfig
    chi0: ScalarVolume | None = None
    chin: ScalarVolume | None = None
    iteration: int = 0
    history: list[IterationRecord] = field(default_factory=list)
    snapshots: dict[int, Snapshot] = field(default_factory=dict)
    params: network.ParameterSet | None = None
    stop_reason: str = ""

    @property
    def losses(self) -> list[float]:
        return [record.loss.total for record in self.history]

    @property
    def best_iteration(self) -> int | None:
        """Iteration with the minimal logged loss"""
        if not self.history:
            return None
        return min(self.history, key=lambda r: r.loss.total).iteration


SnapshotCallback = Callable[[Snapshot], None]


def network_input(phi: ScalarVolume, cfg: ReconConfig) -> ScalarVolume:
    """Raw local field (ppm), or seeded unit Gaussian noise"""
    if cfg.input_kind == InputKind.field:
        return phi
    rng = PortableRandom(cfg.seed ^ NOISE_INPUT_STREAM)
    return ScalarVolume.from_flat(
        phi.grid, rng.normal(0.0, 1.0, phi.grid.n_voxels), dtype=phi.dtype
    )


def _stop_on_tolerance(cfg: ReconConfig, losses: list[float]) -> bool:
    if cfg.stop_rel_tol is None or len(losses) < 2:
        return False
    previous, current = losses[-2], losses[-1]
    if previous == 0:
        return current == 0
    return abs(current - previous) / previous < cfg.stop_rel_tol


class Reconstructor:
    """Runs one reconstruction; holds the mutable loop state."""

    def __init__(
        self,
        phi: ScalarVolume,
        mask: Mask,
        cfg: ReconConfig,
        truth: ScalarVolume | None = None,
        params: network.ParameterSet | None = None,
        on_snapshot: SnapshotCallback | None = None,
    ):
        ensure_same_grid("reconstruct", phi, mask)
        if truth is not None:
            ensure_same_grid("reconstruct truth", phi, truth)
        self.phi = phi.ensure_finite("local field")
        self.mask = mask
        self.cfg = cfg
        self.truth = truth
        self.on_snapshot = on_snapshot
        self.kern: DipoleKernel = build_kernel(phi.grid, phi.dtype)
        self.state = ReconState(config=cfg)
        if cfg.uses_network:
            network.check_divisible(phi.grid.shape, cfg.network)
            self.inputs = network_input(phi, cfg)
            self.params = params or network.init_params(cfg.network, phi.dtype)
            network.check_params(self.params, cfg.network)
            self.adam = AdamState.create(self.params, cfg.adam)
        else:
            self.chi = ScalarVolume.zeros(phi.grid, phi.dtype)

    def _network_iteration(self) -> tuple[dict, ScalarVolume, ScalarVolume]:
        cfg = self.cfg
        chi0, cache = network.forward(self.inputs, self.params, cfg.network)
        chin = dfo_run(chi0, self.phi, self.kern, self.mask, cfg.dfo)
        report, grad_chin = outer_loss_and_grad(chin, self.phi, self.kern, self.mask)
        if cfg.stop_grad_dfo:
            grad_chi0 = grad_chin
        else:
            grad_chi0 = dfo_vjp(grad_chin, self.kern, self.mask, cfg.dfo)
        grads = network.backward(grad_chi0, cache, self.params, cfg.network)
        lr = self.adam.effective_lr()
        self.params, self.adam = adam_step(self.params, grads, self.adam)
        record = dict(
            loss=report,
            fidelity_chi0=fidelity_value(chi0, self.phi, self.kern, self.mask),
            fidelity_chin=fidelity_value(chin, self.phi, self.kern, self.mask),
            lr=lr,
        )
        return record, chi0, chin

    def _dfo_iteration(self) -> tuple[dict, None, ScalarVolume]:
        self.chi = dfo_step(self.chi, self.phi, self.kern, self.mask, self.cfg.dfo.alpha)
        fidelity = fidelity_value(self.chi, self.phi, self.kern, self.mask)
        record = dict(loss=LossReport.fidelity_only(fidelity), fidelity_chin=fidelity)
        return record, None, self.chi

    def step(self) -> IterationRecord:
        iteration = self.state.iteration + 1
        start = time.perf_counter()
        try:
            if self.cfg.uses_network:
                values, chi0, chin = self._network_iteration()
            else:
                values, chi0, chin = self._dfo_iteration()
        except NumericalError as e:
            losses = self.state.losses
            raise DivergenceError(iteration, losses[-1] if losses else float("nan")) from e
        wall_ms = (time.perf_counter() - start) * 1000.0
        if self.truth is not None:
            values["nrmse"] = nrmse(chin, self.truth, self.mask)
        record = IterationRecord(iteration=iteration, wall_ms=wall_ms, **values)

        state = self.state
        state.iteration = iteration
        state.chi0, state.chin = chi0, chin
        state.history.append(record)
        if iteration in self.cfg.snapshot_iters:
            snapshot = Snapshot(iteration, chin, chi0)
            state.snapshots[iteration] = snapshot
            if self.on_snapshot:
                self.on_snapshot(snapshot)
        self._log(record)
        return record

    def _log(self, record: IterationRecord):
        message = (
            f"iter {record.iteration}/{self.cfg.max_iters} "
            f"loss={record.loss.total:.6g} "
            f"(fid={record.loss.fidelity_mae:.4g}, lap={record.loss.laplacian_mae:.4g})"
        )
        if record.lr is not None:
            message += f" lr={record.lr:.3g}"
        if record.nrmse is not None:
            message += f" nrmse={record.nrmse:.4f}"
        message += f" {humanize_milliseconds(record.wall_ms)}"
        if record.iteration % settings.LOG_EVERY == 0 or record.iteration == 1:
            logger.info(message)
        else:
            logger.debug(message)

    @time_it
    def run(self) -> tuple[ScalarVolume, ReconState]:
        cfg = self.cfg
        logger.info(
            f"Reconstructing {self.phi.grid.matrix} in {cfg.mode.value} mode "
            f"(alpha={cfg.dfo.alpha}, n={cfg.dfo.n_steps}, iters={cfg.max_iters})"
        )
        state = self.state
        state.stop_reason = "max_iters"
        while state.iteration < cfg.max_iters:
            self.step()
            if _stop_on_tolerance(cfg, state.losses):
                state.stop_reason = "stop_rel_tol"
                break
        if cfg.uses_network:
            state.params = self.params
        total_ms = sum(record.wall_ms for record in state.history)
        logger.info(
            f"Finished after {state.iteration} iterations ({state.stop_reason}) in "
            f"{humanize_milliseconds(total_ms)}; minimal loss at iteration "
            f"{state.best_iteration}"
        )
        return state.chin, state


def reconstruct(
    phi: ScalarVolume,
    mask: Mask,
    cfg: ReconConfig,
    truth: ScalarVolume | None = None,
    params: network.ParameterSet | None = None,
    on_snapshot: SnapshotCallback | None = None,
) -> tuple[ScalarVolume, ReconState]:
    return Reconstructor(phi, mask, cfg, truth, params, on_snapshot).run()

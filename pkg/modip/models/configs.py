"""Validated configuration records"""

from enum import Enum
from typing import Any

from pydantic import Field, field_validator, model_validator

from modip.models.common import FrozenModel
from modip.models.volume import GridSpec

DFO_ALPHA_BOUND = 2.25  # 2 / (8/9): inverse half spectral norm of the DFO Hessian
DEFAULT_STOP_REL_TOL = 1e-5
DEFAULT_SNAPSHOTS = (10, 20, 50, 100, 200)


class Mode(str, Enum):
    modip = "modip"
    dip = "dip"
    dfo = "dfo"


class InputKind(str, Enum):
    field = "field"
    noise = "noise"


class DfoConfig(FrozenModel):
    alpha: float = 1.2
    n_steps: int = Field(default=10, ge=0)

    @field_validator("alpha")
    @classmethod
    def _stable_alpha(cls, value):
        if not 0 < value < DFO_ALPHA_BOUND:
            raise ValueError(
                f"alpha={value} violates the DFO stability bound "
                f"0 < alpha < {DFO_ALPHA_BOUND}"
            )
        return value


class NetworkConfig(FrozenModel):
    depth: int = Field(default=1, ge=1)
    base_channels: int = Field(default=32, ge=1)
    seed: int = 0
    norm_enabled: bool = True

    @property
    def divisor(self) -> int:
        return 2**self.depth


class AdamConfig(FrozenModel):
    base_lr: float = Field(default=5e-4, gt=0)
    decay: float = Field(default=0.8, gt=0, le=1)
    decay_every: int = Field(default=50, ge=1)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)


class ReconConfig(FrozenModel):
    mode: Mode = Mode.modip
    input_kind: InputKind = InputKind.field
    max_iters: int = Field(default=200, ge=1)
    stop_rel_tol: float | None = Field(default=None, gt=0)
    snapshot_iters: tuple[int, ...] = DEFAULT_SNAPSHOTS
    network: NetworkConfig = NetworkConfig()
    dfo: DfoConfig = DfoConfig()
    adam: AdamConfig = AdamConfig()
    seed: int = 0
    stop_grad_dfo: bool = False

    @model_validator(mode="before")
    @classmethod
    def _dip_has_no_dfo(cls, data: Any):
        if not isinstance(data, dict) or Mode(data.get("mode", Mode.modip)) != Mode.dip:
            return data
        dfo = data.get("dfo")
        if dfo is None:
            return {**data, "dfo": {"n_steps": 0}}
        if isinstance(dfo, dict) and "n_steps" not in dfo:
            return {**data, "dfo": {**dfo, "n_steps": 0}}
        n_steps = dfo.n_steps if isinstance(dfo, DfoConfig) else dfo["n_steps"]
        if n_steps != 0:
            raise ValueError(
                f"dip mode runs without DFO steps (n_steps must be 0, got {n_steps})"
            )
        return data

    @field_validator("snapshot_iters")
    @classmethod
    def _positive_snapshots(cls, value):
        if any(i < 1 for i in value):
            raise ValueError(f"snapshot iterations must be >= 1, got {value}")
        return tuple(sorted(set(value)))

    @property
    def uses_network(self) -> bool:
        return self.mode != Mode.dfo


class CuboidSpec(FrozenModel):
    count: int = Field(default=800, ge=0)
    side_range: tuple[int, int] = (1, 64)
    chi_range: tuple[float, float] = (-0.02, 0.02)
    grid: GridSpec = GridSpec(matrix=(128, 128, 128))
    seed: int = 0

    @model_validator(mode="after")
    def _ranges_fit(self):
        lo, hi = self.side_range
        if not 1 <= lo <= hi <= min(self.grid.matrix):
            raise ValueError(
                f"side_range {self.side_range} must lie within [1, {min(self.grid.matrix)}]"
            )
        if self.chi_range[0] > self.chi_range[1]:
            raise ValueError(f"chi_range {self.chi_range} is not ordered")
        return self


class LesionSpec(FrozenModel):
    center: tuple[int, int, int]
    radius_mm: float = Field(default=2.0, gt=0)
    mean_ppm: float = 0.8
    std_ppm: float = Field(default=0.05, ge=0)
    seed: int = 0

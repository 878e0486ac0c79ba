"""Loss, iteration and evaluation records"""

from pydantic import Field, model_validator

from modip.models.common import FrozenModel


class LossReport(FrozenModel):
    fidelity_mae: float = Field(ge=0)
    laplacian_mae: float = Field(ge=0)
    total: float = Field(ge=0)

    @model_validator(mode="after")
    def _total_is_sum(self):
        if self.total != self.fidelity_mae + self.laplacian_mae:
            raise ValueError("total must equal fidelity_mae + laplacian_mae")
        return self

    @classmethod
    def fidelity_only(cls, value: float) -> "LossReport":
        """The objective of plain gradient descent: the squared L2 fidelity"""
        return cls(fidelity_mae=value, laplacian_mae=0.0, total=value)


class IterationRecord(FrozenModel):
    iteration: int
    loss: LossReport
    fidelity_chi0: float | None = None  # L2 fidelity of the network output
    fidelity_chin: float  # L2 fidelity of the refined estimate
    lr: float | None = None
    wall_ms: float
    nrmse: float | None = None


class RegionStats(FrozenModel):
    name: str
    nrmse: float = Field(ge=0)
    mean_ppm: float
    std_ppm: float = Field(ge=0)
    count: int = Field(gt=0)


class RegionReport(FrozenModel):
    regions: tuple[RegionStats, ...]

    def by_name(self, name: str) -> RegionStats:
        for region in self.regions:
            if region.name == name:
                return region
        raise KeyError(name)

"""Run manifests: everything needed to re-create a run exactly"""

import platform

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import scipy
from pydantic import Field

import modip
from modip import settings
from modip.models.common import FrozenModel
from modip.models.configs import ReconConfig
from modip.models.volume import GridSpec, Triple
from modip.services.metrics import NRMSE_DEFINITION
from modip.utils.rng import PRNG_IDENTITY

MANIFEST_NAME = "manifest.json"

CONVENTIONS = {
    "fft": "forward unscaled, inverse scaled by 1/(Mx*My*Mz), unshifted bins",
    "dipole_dc": "D(0,0,0) = 0",
    "dipole_nyquist": "kernel averaged with its mirror d(-k mod M)",
    "boundary": "periodic (circular convolution), no zero padding",
    "mask": "fidelity, loss and gradients restricted to the mask (all-ones if omitted)",
    "loss": "mean |.| over masked voxels, unit weights",
    "laplacian": "7-point stencil / voxel_mm^2, zero (Dirichlet) padding",
    "nrmse": NRMSE_DEFINITION,
    "layout": "x-fastest",
}


def get_version() -> str:
    """Read version from pyproject.toml, falling back to the installed metadata"""
    pyproject = settings.PROJECT_PATH / "pyproject.toml"
    if pyproject.is_file():
        with open(pyproject, "rb") as f:
            return tomllib.load(f)["project"]["version"]
    try:
        return metadata.version("modip")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return modip.__version__


class Environment(FrozenModel):
    python: str = Field(default_factory=platform.python_version)
    numpy: str = np.__version__
    scipy: str = scipy.__version__
    precision: str = Field(default_factory=lambda: settings.PRECISION)
    threads: int = Field(default_factory=lambda: settings.THREADS)
    prng: str = PRNG_IDENTITY


class Manifest(FrozenModel):
    software: str = "modip"
    version: str = Field(default_factory=get_version)
    command: str
    environment: Environment = Field(default_factory=Environment)
    grid: GridSpec | None = None
    b0_raw: Triple | None = None
    recon: ReconConfig | None = None
    inputs: dict[str, str] = {}
    outputs: dict[str, str] = {}
    options: dict[str, Any] = {}
    results: dict[str, Any] = {}
    conventions: dict[str, str] = CONVENTIONS

    def serialize(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def parse(cls, text: str) -> "Manifest":
        return cls.model_validate_json(text)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.serialize() + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        return cls.parse(Path(path).read_text(encoding="utf-8"))


def run_manifest(
    command: str,
    config: ReconConfig | None = None,
    environment: Environment | None = None,
    **fields,
) -> Manifest:
    return Manifest(
        command=command,
        recon=config,
        environment=environment or Environment(),
        **fields,
    )


def manifest_path_for(output: str | Path) -> Path:
    """Manifest next to a file output, or inside a directory output"""
    output = Path(output)
    if output.suffix:
        return output.with_name(f"{output.stem}.{MANIFEST_NAME}")
    return output / MANIFEST_NAME

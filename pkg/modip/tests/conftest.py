"""Test configuration and fixtures for the modip test suite."""

import itertools
import os
import pathlib
import sys

import numpy as np
import pytest

PROJECT_DIR = pathlib.Path(__file__).resolve().parents[2]
if str(PROJECT_DIR) not in sys.path:
    sys.path.insert(0, str(PROJECT_DIR))

# Set test environment before importing package modules
os.environ["MODIP_PRECISION"] = "f64"
os.environ["MODIP_THREADS"] = "1"
os.environ["MODIP_LOG_EVERY"] = "1"

from modip import settings  # noqa: E402
from modip.models.volume import GridSpec, Mask, ScalarVolume  # noqa: E402
from modip.services.dipole import apply_A, build_kernel  # noqa: E402

OBLIQUE_B0 = (0.5, 0.5, 0.71)


@pytest.fixture(autouse=True)
def restore_settings(monkeypatch):
    """Commands may override precision and threads; undo it after each test."""
    monkeypatch.setattr(settings, "PRECISION", settings.PRECISION)
    monkeypatch.setattr(settings, "THREADS", settings.THREADS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid8():
    return GridSpec(matrix=(8, 8, 8))


@pytest.fixture
def oblique_grid():
    """Anisotropic voxels and a tilted field, as in the oblique simulation."""
    return GridSpec(matrix=(8, 8, 8), voxel_mm=(1.0, 1.0, 2.0), b0_dir=OBLIQUE_B0)


@pytest.fixture
def random_volume(rng):
    def _make(grid: GridSpec, scale: float = 1.0) -> ScalarVolume:
        return ScalarVolume(grid, scale * rng.standard_normal(grid.shape))

    return _make


@pytest.fixture
def random_mask(rng):
    def _make(grid: GridSpec, fraction: float = 0.7) -> Mask:
        selected = rng.random(grid.shape) < fraction
        selected[0, 0, 0] = True
        return Mask.from_bool(grid, selected, np.float64)

    return _make


@pytest.fixture
def problem(oblique_grid, random_volume, random_mask):
    """A small noisy field-inversion instance: (chi, phi, kernel, mask)."""
    kern = build_kernel(oblique_grid, np.float64)
    truth = random_volume(oblique_grid)
    phi = apply_A(truth, kern) + random_volume(oblique_grid, 0.05)
    return truth, phi, kern, random_mask(oblique_grid)


def direct_conv(x, weight, bias):
    """Same-size zero-padded convolution as an explicit sum over every output"""
    c_out, _, k, _, _ = weight.shape
    pad = k // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    _, nx, ny, nz = x.shape
    out = np.zeros((c_out, nx, ny, nz))
    for o, px, py, pz in itertools.product(
        range(c_out), range(nx), range(ny), range(nz)
    ):
        patch = padded[:, px : px + k, py : py + k, pz : pz + k]
        out[o, px, py, pz] = bias[o] + np.sum(weight[o] * patch)
    return out


@pytest.fixture
def conv_oracle():
    return direct_conv

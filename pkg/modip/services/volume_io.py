"""File formats: QVOL1 volumes, loss tables, PGM slices and parameter files.

A volume is a text header (``name.qvol``) plus a raw little-endian payload
(``name.raw`` by default) in x-fastest order::

    QVOL1
    matrix = 64 64 64
    voxel_mm = 1.0 1.0 2.0
    b0_dir = 0.5 0.5 0.71
    element_type = f64
    layout = x-fastest
    units = ppm
    data = chi.raw
"""

import csv
import logging
import os
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from modip.errors import ConfigError, VolumeFormatError
from modip.models.reports import IterationRecord
from modip.models.volume import GridSpec, ScalarVolume
from modip.services.network import ParameterSet

logger = logging.getLogger("modip.io")

MAGIC = "QVOL1"
LAYOUT = "x-fastest"
ELEMENT_TYPES = {"f32": "<f4", "f64": "<f8"}
LOSS_COLUMNS = ["iter", "fidelity_mae", "laplacian_mae", "total", "wall_ms"]


def _format_numbers(values) -> str:
    return " ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def write_volume(
    volume: ScalarVolume,
    path: str | Path,
    element_type: str | None = None,
    units: str = "ppm",
) -> Path:
    path = Path(path)
    if element_type is None:
        element_type = "f32" if volume.dtype == np.float32 else "f64"
    if element_type not in ELEMENT_TYPES:
        raise ConfigError(f"unknown element type {element_type!r}")
    data_path = path.with_suffix(".raw")
    grid = volume.grid
    header = [
        MAGIC,
        f"matrix = {_format_numbers(grid.matrix)}",
        f"voxel_mm = {_format_numbers(grid.voxel_mm)}",
        f"b0_dir = {_format_numbers(grid.b0_dir)}",
        f"element_type = {element_type}",
        f"layout = {LAYOUT}",
        f"units = {units}",
        f"data = {data_path.name}",
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = volume.flat().astype(ELEMENT_TYPES[element_type])
    tmp = data_path.with_suffix(".raw.tmp")
    payload.tofile(tmp)
    os.replace(tmp, data_path)
    path.write_text("\n".join(header) + "\n", encoding="utf-8")
    logger.debug(f"Wrote {grid.matrix} {element_type} volume to {path}")
    return path


def read_header(path: str | Path) -> dict[str, str]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise VolumeFormatError(f"{path}: missing {MAGIC} magic line")
    header = {}
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VolumeFormatError(f"{path}:{number}: expected 'key = value'")
        header[key.strip()] = value.strip()
    missing = {"matrix", "voxel_mm", "b0_dir", "element_type", "data"} - header.keys()
    if missing:
        raise VolumeFormatError(f"{path}: missing header fields {sorted(missing)}")
    return header


def read_volume(path: str | Path) -> ScalarVolume:
    path = Path(path)
    header = read_header(path)
    try:
        grid = GridSpec(
            matrix=tuple(int(v) for v in header["matrix"].split()),
            voxel_mm=tuple(float(v) for v in header["voxel_mm"].split()),
            b0_dir=tuple(float(v) for v in header["b0_dir"].split()),
        )
    except ValueError as e:
        raise VolumeFormatError(f"{path}: invalid geometry: {e}") from e
    if header.get("layout", LAYOUT) != LAYOUT:
        raise VolumeFormatError(f"{path}: unsupported layout {header['layout']!r}")
    element_type = header["element_type"]
    if element_type not in ELEMENT_TYPES:
        raise VolumeFormatError(f"{path}: unknown element type {element_type!r}")
    data_path = path.parent / header["data"]
    payload = np.fromfile(data_path, dtype=ELEMENT_TYPES[element_type])
    if payload.size != grid.n_voxels:
        raise VolumeFormatError(
            f"{data_path}: expected {grid.n_voxels} values, found {payload.size}"
        )
    volume = ScalarVolume.from_flat(
        grid, payload, dtype=np.float32 if element_type == "f32" else np.float64
    )
    return volume.ensure_finite(str(path))


def write_losses_csv(
    history: Iterable[IterationRecord], path: str | Path, with_nrmse: bool = False
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = LOSS_COLUMNS + (["nrmse"] if with_nrmse else [])
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter=",")
        writer.writerow(columns)
        for record in history:
            row = [
                record.iteration,
                repr(record.loss.fidelity_mae),
                repr(record.loss.laplacian_mae),
                repr(record.loss.total),
                f"{record.wall_ms:.3f}",
            ]
            if with_nrmse:
                row.append("" if record.nrmse is None else repr(record.nrmse))
            writer.writerow(row)
    return path


def render_slice(
    vol: ScalarVolume, axis: int, index: int, window: tuple[float, float]
) -> np.ndarray:
    """8-bit grayscale slice: clamp to [lo, hi], map linearly, round half up.

    Image rows run along the higher remaining axis, columns along the lower one.
    """
    if axis not in (0, 1, 2):
        raise ConfigError(f"axis must be 0, 1 or 2, got {axis}")
    size = vol.grid.matrix[axis]
    if not 0 <= index < size:
        raise ConfigError(f"slice index {index} outside [0, {size - 1}] on axis {axis}")
    lo, hi = window
    if not hi > lo:
        raise ConfigError(f"window {window} must satisfy lo < hi")
    plane = np.take(vol.values, index, axis=axis).astype(np.float64)
    scaled = (np.clip(plane, lo, hi) - lo) / (hi - lo) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8).T


def write_pgm(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PPM")
    return path


def write_params(params: ParameterSet, path: str | Path) -> Path:
    """Flat little-endian f64 payload plus a ``.txt`` manifest of name, shape, offset"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines, offset = [], 0
    for name, tensor in params.items():
        shape = "x".join(str(s) for s in tensor.shape)
        lines.append(f"{name} {shape} {offset}")
        offset += tensor.size
    params.flat().astype("<f8").tofile(path)
    Path(f"{path}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _param_entry(path: Path, lineno: int, line: str) -> tuple[str, tuple[int, ...], int]:
    fields = line.split()
    if len(fields) != 3:
        raise VolumeFormatError(f"{path}.txt:{lineno}: expected 'name shape offset'")
    name, shape, offset = fields
    bad_entry = f"{path}.txt:{lineno}: bad shape or offset in {line!r}"
    try:
        dims = tuple(int(s) for s in shape.split("x"))
        start = int(offset)
    except ValueError:
        raise VolumeFormatError(bad_entry) from None
    if start < 0 or any(d <= 0 for d in dims):
        raise VolumeFormatError(bad_entry)
    return name, dims, start


def read_params(path: str | Path, dtype=np.float64) -> ParameterSet:
    path = Path(path)
    payload = np.fromfile(path, dtype="<f8")
    params = ParameterSet()
    end = 0
    lines = Path(f"{path}.txt").read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        name, dims, start = _param_entry(path, lineno, line)
        if name in params:
            raise VolumeFormatError(f"{path}.txt:{lineno}: duplicate tensor {name}")
        size = int(np.prod(dims))
        if start + size > payload.size:
            raise VolumeFormatError(f"{path}: truncated payload for {name}")
        params[name] = payload[start : start + size].reshape(dims).astype(dtype)
        end = max(end, start + size)
    if end != payload.size:
        raise VolumeFormatError(
            f"{path}: payload holds {payload.size} values, manifest describes {end}"
        )
    return params

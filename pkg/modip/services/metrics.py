"""Quantitative evaluation over regions of interest"""

import numpy as np

from modip.errors import ConfigError
from modip.models.reports import RegionReport, RegionStats
from modip.models.volume import Mask, ScalarVolume, ensure_same_grid

# masked L2 norm of the truth; recorded in run manifests
NRMSE_DEFINITION = "||region*(pred-truth)||_2 / ||region*truth||_2"


def nrmse(pred: ScalarVolume, truth: ScalarVolume, region: Mask) -> float:
    ensure_same_grid("nrmse", pred, truth, region)
    selected = region.selected
    reference = np.linalg.norm(truth.values[selected])
    if reference == 0:
        raise ConfigError("nrmse is undefined: truth is all zero inside the region")
    return float(np.linalg.norm(pred.values[selected] - truth.values[selected]) / reference)


def roi_stats(vol: ScalarVolume, region: Mask) -> tuple[float, float, int]:
    """Population mean, std and voxel count inside the region"""
    ensure_same_grid("roi_stats", vol, region)
    values = vol.values[region.selected]
    if values.size == 0:
        raise ConfigError("roi_stats needs a non-empty region")
    return float(values.mean()), float(values.std()), int(values.size)


def table_regions(mask: Mask, lesion: Mask | None = None) -> dict[str, Mask]:
    """Whole-mask region, plus lesion and non-lesion regions when a lesion is given"""
    regions = {"whole": mask}
    if lesion is not None:
        ensure_same_grid("regions", mask, lesion)
        inside = mask.selected & lesion.selected
        outside = mask.selected & ~lesion.selected
        if inside.any():
            regions["lesion"] = Mask.from_bool(mask.grid, inside, mask.dtype)
        if outside.any():
            regions["non-lesion"] = Mask.from_bool(mask.grid, outside, mask.dtype)
    return regions


def region_report(
    pred: ScalarVolume, truth: ScalarVolume, regions: dict[str, Mask]
) -> RegionReport:
    stats = []
    for name, region in regions.items():
        mean, std, count = roi_stats(pred, region)
        stats.append(
            RegionStats(
                name=name,
                nrmse=nrmse(pred, truth, region),
                mean_ppm=mean,
                std_ppm=std,
                count=count,
            )
        )
    return RegionReport(regions=tuple(stats))

"""
Kinetic Atlas Detection
=======================
Per-region statistics of the slope and intercept maps, the two-rule
tumour-candidate decision and the coefficient-of-variation confidence maps.

A region is a candidate when its mean slope is positive and its mean
intercept is above b_threshold. Low β (std / mean) means a homogeneous,
higher-risk region; the risk maps render β = 0 in blue.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional

import numpy as np
from matplotlib import colormaps

from .errors import DimensionMismatchError
from .model import ParameterMaps
from .watershed import Partition

DEFAULT_B_THRESHOLD = 800.0
BETA_A_CLAMP = 5.0
BETA_B_CLAMP = 1.0
BACKGROUND_PERCENTILE = 5.0
RISK_COLORMAP = "jet"


@dataclass(frozen=True)
class RegionStats:
    count: np.ndarray
    mean_a: np.ndarray
    std_a: np.ndarray
    mean_b: np.ndarray
    std_b: np.ndarray
    beta_a: np.ndarray
    beta_b: np.ndarray
    detected: np.ndarray
    mean_intensity: Optional[np.ndarray] = None

    @property
    def regions(self) -> int:
        return self.count.shape[0]


def _beta(std: np.ndarray, mean: np.ndarray) -> np.ndarray:
    out = np.full(mean.shape, np.inf)
    positive = mean > 0
    out[positive] = std[positive] / mean[positive]
    return out


def _region_moments(values: np.ndarray, labels: np.ndarray, count: np.ndarray):
    sums = np.bincount(labels, weights=values, minlength=count.shape[0])
    mean = np.divide(sums, count, out=np.zeros_like(sums), where=count > 0)
    centred = values - mean[labels]
    var = np.bincount(labels, weights=centred * centred, minlength=count.shape[0])
    var = np.divide(var, count, out=np.zeros_like(var), where=count > 0)
    return mean, np.sqrt(var)


def region_stats(params: ParameterMaps, seg: Partition, intensity: Optional[np.ndarray] = None) -> RegionStats:
    """Population mean and std of a and b in every region, and their β."""
    if params.shape != seg.labels.shape:
        raise DimensionMismatchError(f"parameter maps {params.shape} vs segmentation {seg.labels.shape}")
    labels = seg.labels.ravel()
    count = np.bincount(labels, minlength=seg.regions).astype(np.int64)
    mean_a, std_a = _region_moments(params.a.ravel(), labels, count)
    mean_b, std_b = _region_moments(params.b.ravel(), labels, count)
    mean_intensity = None
    if intensity is not None:
        if np.shape(intensity) != seg.labels.shape:
            raise DimensionMismatchError("intensity raster does not match the segmentation")
        mean_intensity, _ = _region_moments(np.asarray(intensity, dtype=np.float64).ravel(), labels, count)
    return RegionStats(
        count=count,
        mean_a=mean_a,
        std_a=std_a,
        mean_b=mean_b,
        std_b=std_b,
        beta_a=_beta(std_a, mean_a),
        beta_b=_beta(std_b, mean_b),
        detected=np.zeros(seg.regions, dtype=bool),
        mean_intensity=mean_intensity,
    )


def background_floor(intensity: np.ndarray, percentile: float = BACKGROUND_PERCENTILE) -> float:
    return float(np.percentile(np.asarray(intensity, dtype=np.float64), percentile))


def detect_regions(stats: RegionStats, b_threshold: float = DEFAULT_B_THRESHOLD,
                   floor: Optional[float] = None) -> RegionStats:
    """
    Flag regions with mean(a) > 0 and mean(b) > b_threshold.

    With a floor, regions whose mean last-channel intensity is below it are
    never flagged (background suppression; off unless a floor is given).
    """
    detected = (stats.mean_a > 0) & (stats.mean_b > b_threshold)
    if floor is not None and stats.mean_intensity is not None:
        detected &= stats.mean_intensity >= floor
    logging.info(f"{int(detected.sum())} of {stats.regions} regions detected (b > {b_threshold})")
    return replace(stats, detected=detected)


@dataclass(frozen=True)
class ConfidenceMaps:
    beta_a: np.ndarray
    beta_b: np.ndarray
    risk_a: np.ndarray   # RGB uint8
    risk_b: np.ndarray


def render_risk(values: np.ndarray, clamp: float) -> np.ndarray:
    """Blue at 0, red at clamp, through the risk colormap."""
    lut = colormaps[RISK_COLORMAP]
    rgba = lut(np.clip(values / clamp, 0.0, 1.0))
    return (rgba[..., :3] * 255.0 + 0.5).astype(np.uint8)


def confidence_maps(stats: RegionStats, seg: Partition) -> ConfidenceMaps:
    beta_a = np.clip(stats.beta_a, 0.0, BETA_A_CLAMP)[seg.labels]
    beta_b = np.clip(stats.beta_b, 0.0, BETA_B_CLAMP)[seg.labels]
    return ConfidenceMaps(
        beta_a=beta_a,
        beta_b=beta_b,
        risk_a=render_risk(beta_a, BETA_A_CLAMP),
        risk_b=render_risk(beta_b, BETA_B_CLAMP),
    )


def _json_number(value: float) -> Any:
    value = float(value)
    if np.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def stats_report(stats: RegionStats) -> List[Dict[str, Any]]:
    """One JSON-ready record per region."""
    return [
        {
            "id": region,
            "area": int(stats.count[region]),
            "mean_a": _json_number(stats.mean_a[region]),
            "std_a": _json_number(stats.std_a[region]),
            "mean_b": _json_number(stats.mean_b[region]),
            "std_b": _json_number(stats.std_b[region]),
            "beta_a": _json_number(stats.beta_a[region]),
            "beta_b": _json_number(stats.beta_b[region]),
            "detected": bool(stats.detected[region]),
        }
        for region in range(stats.regions)
    ]

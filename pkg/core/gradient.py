"""
Kinetic Atlas Gradients
=======================
Scalar morphological gradient and metric-based gradients of multichannel
images.

Every metric is an embedding followed by the Euclidean distance:
- euclidean: identity
- chi_squared: row profile u / Σu scaled by sqrt(S / f_.j)
- mahalanobis(Σ): whitening by the Cholesky factor of Σ
- inverse_variance(σ): division by σ per channel
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import DegenerateMarginError, DimensionMismatchError, ParameterError
from .morphology import StructuringElement, dilate, erode, gaussian_filter, leveling, square
from .raster import HyperImage

LEVELING_WINDOW = 11
LEVELING_SIGMA = 2.5


class Metric(Enum):
    EUCLIDEAN = "euclidean"
    CHI_SQUARED = "chi_squared"
    MAHALANOBIS = "mahalanobis"
    INVERSE_VARIANCE = "inverse_variance"


@dataclass(frozen=True)
class ImageMarginals:
    """Column sums f_.j and grand total S of an image."""
    col_sums: np.ndarray
    total: float

    @classmethod
    def from_image(cls, img: HyperImage) -> "ImageMarginals":
        col_sums = img.table.sum(axis=0)
        return cls(col_sums=col_sums, total=float(col_sums.sum()))


@dataclass(frozen=True)
class MetricKind:
    kind: Metric
    covariance: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None

    @classmethod
    def euclidean(cls) -> "MetricKind":
        return cls(Metric.EUCLIDEAN)

    @classmethod
    def chi_squared(cls) -> "MetricKind":
        return cls(Metric.CHI_SQUARED)

    @classmethod
    def mahalanobis(cls, covariance: np.ndarray) -> "MetricKind":
        covariance = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
        if covariance.shape[0] != covariance.shape[1] or not np.allclose(covariance, covariance.T):
            raise ParameterError("Mahalanobis covariance must be square and symmetric")
        try:
            linalg.cholesky(covariance, lower=True)
        except linalg.LinAlgError as exc:
            raise ParameterError(f"Mahalanobis covariance is not positive definite: {exc}")
        return cls(Metric.MAHALANOBIS, covariance=covariance)

    @classmethod
    def inverse_variance(cls, sigma: np.ndarray) -> "MetricKind":
        sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
        if np.any(sigma <= 0):
            raise ParameterError("inverse-variance metric needs σ > 0 on every channel")
        return cls(Metric.INVERSE_VARIANCE, sigma=sigma)

    @classmethod
    def parse(cls, name: str, img: Optional[HyperImage] = None) -> "MetricKind":
        """Metric from its name; data-driven parameters are estimated from img."""
        kind = Metric(name)
        if kind is Metric.EUCLIDEAN:
            return cls.euclidean()
        if kind is Metric.CHI_SQUARED:
            return cls.chi_squared()
        if img is None:
            raise ParameterError(f"metric {name} needs an image to estimate its parameters")
        if kind is Metric.INVERSE_VARIANCE:
            return cls.inverse_variance(channel_sigma(img))
        return cls.mahalanobis(np.atleast_2d(np.cov(img.table, rowvar=False)))

    def embed(self, spectra: np.ndarray, stats: Optional[ImageMarginals] = None) -> np.ndarray:
        """Map spectra (last axis = channels) so the metric becomes Euclidean."""
        spectra = np.asarray(spectra, dtype=np.float64)
        if self.kind is Metric.EUCLIDEAN:
            return spectra
        if self.kind is Metric.INVERSE_VARIANCE:
            self._check_length(self.sigma.shape[0], spectra)
            return spectra / self.sigma
        if self.kind is Metric.MAHALANOBIS:
            self._check_length(self.covariance.shape[0], spectra)
            lower = linalg.cholesky(self.covariance, lower=True)
            flat = spectra.reshape(-1, spectra.shape[-1])
            white = linalg.solve_triangular(lower, flat.T, lower=True).T
            return white.reshape(spectra.shape)
        if stats is None:
            raise ParameterError("chi-squared metric needs the image marginals")
        self._check_length(stats.col_sums.shape[0], spectra)
        if np.any(stats.col_sums <= 0):
            raise DegenerateMarginError("chi-squared metric needs positive channel sums")
        row_sums = spectra.sum(axis=-1, keepdims=True)
        if np.any(row_sums <= 0):
            raise DegenerateMarginError("chi-squared distance undefined for a zero row sum")
        return spectra / row_sums * np.sqrt(stats.total / stats.col_sums)

    @staticmethod
    def _check_length(expected: int, spectra: np.ndarray) -> None:
        if spectra.shape[-1] != expected:
            raise DimensionMismatchError(f"spectra have {spectra.shape[-1]} channels, metric expects {expected}")


def channel_sigma(img: HyperImage) -> np.ndarray:
    """Per-channel standard deviation, floored to keep the metric defined."""
    sigma = img.table.std(axis=0)
    floor = max(float(sigma.max()) * 1e-12, 1e-300)
    return np.maximum(sigma, floor)


def pixel_distance(u: np.ndarray, v: np.ndarray, metric: MetricKind,
                   stats: Optional[ImageMarginals] = None) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if u.shape != v.shape:
        raise DimensionMismatchError(f"spectra differ in length: {u.shape} vs {v.shape}")
    diff = metric.embed(u, stats) - metric.embed(v, stats)
    return float(np.sqrt(np.sum(diff * diff)))


@dataclass(frozen=True)
class GradientMap:
    values: np.ndarray
    normalized: bool = False


def morph_gradient(ch: np.ndarray, se: StructuringElement = None) -> GradientMap:
    se = se or square(3)
    return GradientMap(dilate(ch, se) - erode(ch, se))


def vector_gradient(img: HyperImage, metric: MetricKind = None, se: StructuringElement = None) -> GradientMap:
    """
    Max minus min of the distances between a pixel and its neighbours.

    The neighbourhood is B(x) without x, clamped to the domain: out-of-domain
    neighbours are skipped rather than replicated.
    """
    metric = metric or MetricKind.euclidean()
    se = se or square(3)
    stats = ImageMarginals.from_image(img) if metric.kind is Metric.CHI_SQUARED else None
    embedded = metric.embed(img.cube, stats)
    height, width = img.shape
    high = np.full((height, width), -np.inf)
    low = np.full((height, width), np.inf)
    for dy, dx in sorted(se.offsets):
        if dy == 0 and dx == 0:
            continue
        ys = slice(max(0, -dy), height - max(0, dy))
        xs = slice(max(0, -dx), width - max(0, dx))
        ns = slice(max(0, dy), height - max(0, -dy))
        nx = slice(max(0, dx), width - max(0, -dx))
        diff = embedded[ys, xs, :] - embedded[ns, nx, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        high[ys, xs] = np.maximum(high[ys, xs], dist)
        low[ys, xs] = np.minimum(low[ys, xs], dist)
    values = np.where(np.isfinite(high), high - low, 0.0)
    return GradientMap(values)


def level_channels(img: HyperImage, window: int = LEVELING_WINDOW, sigma: float = LEVELING_SIGMA) -> HyperImage:
    """Level every channel against its Gaussian-smoothed version."""
    return img.map_channels(lambda ch: leveling(ch, gaussian_filter(ch, window, sigma)))


def smooth_then_gradient(img: HyperImage, metric: MetricKind = None, se: StructuringElement = None) -> GradientMap:
    leveled = level_channels(img)
    logging.debug("Channels leveled before gradient")
    return vector_gradient(leveled, metric, se)


def normalize01(g: GradientMap) -> GradientMap:
    values = np.asarray(g.values, dtype=np.float64)
    peak = float(values.max()) if values.size else 0.0
    if peak <= 0:
        return GradientMap(np.zeros_like(values), normalized=True)
    return GradientMap(values / peak, normalized=True)


def metric_for_space(space: str, img: HyperImage) -> MetricKind:
    """Default metric of a feature space: factor, parameters or image."""
    if space == "factor":
        return MetricKind.euclidean()
    if space == "parameters":
        return MetricKind.inverse_variance(channel_sigma(img))
    if space == "image":
        return MetricKind.chi_squared()
    raise ParameterError(f"unknown feature space '{space}'")

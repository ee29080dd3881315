"""
Kinetic Atlas Spectral Denoising
================================
Factor correspondence analysis of the pixel × channel table, partial
reconstruction, and the nugget-effect SNR used to pick which factorial
axes carry signal.

Pipeline:
1. fca_fit          - chi-squared factorization of the table
2. snr_report       - SNR of every axis, measured on its factor-pixel raster
3. select_axes      - keep axes whose SNR exceeds the threshold
4. fca_reconstruct  - rebuild the table from the kept axes
5. double_fca       - repeat 1-4 on the translated first reconstruction

Diagnostics: residues, hyper_snr, channel_snr_profile, residue_nugget_ratio,
and the inertia-based Kaiser / scree selections.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import (
    DegenerateMarginError,
    DimensionMismatchError,
    DomainError,
    ParameterError,
    RasterTooSmallError,
    UndefinedSnrError,
)
from .morphology import opening, square
from .raster import HyperImage

DEFAULT_SNR_THRESHOLD = 0.3
DEFAULT_LAG = 15
MAX_AXES = 100
# Singular values below this fraction of the largest one are rank noise
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class FcaModel:
    """Factorial decomposition of a pixel × channel correspondence table."""
    factor_pixels: np.ndarray      # P × K
    channel_factors: np.ndarray    # K × L
    inertias: np.ndarray           # K, non-increasing
    row_marginals: np.ndarray      # P
    col_marginals: np.ndarray      # L
    grand_total: float
    total_inertia: float
    width: int
    height: int

    @property
    def axes(self) -> int:
        return self.inertias.shape[0]

    @property
    def channels(self) -> int:
        return self.col_marginals.shape[0]


@dataclass(frozen=True)
class SnrReport:
    snr: np.ndarray
    inertia_fractions: np.ndarray
    kept: Tuple[int, ...]
    threshold: float

    @property
    def rejected(self) -> Tuple[int, ...]:
        return tuple(k for k in range(len(self.snr)) if k not in self.kept)


@dataclass(frozen=True)
class CovarianceMap:
    """Centred spatial covariance on the lag window [-H, H]²; centre is lag 0."""
    values: np.ndarray
    lag: int

    def at(self, dy: int, dx: int) -> float:
        return float(self.values[self.lag + dy, self.lag + dx])

    @property
    def origin(self) -> float:
        return self.at(0, 0)


@dataclass(frozen=True)
class DoubleFcaResult:
    image: HyperImage
    first_model: FcaModel
    first_report: SnrReport
    first_reconstruction: HyperImage
    second_model: FcaModel
    second_report: SnrReport
    epsilon: float


def _check_table(table: np.ndarray) -> None:
    negative = np.argwhere(table < 0)
    if negative.size:
        i, j = negative[0]
        raise DomainError(
            f"negative value {table[i, j]:.6g} at pixel {i + 1}, channel {j + 1}"
        )
    if not np.all(np.isfinite(table)):
        raise DomainError("non-finite value in correspondence table")
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    if np.any(rows <= 0):
        raise DegenerateMarginError(f"pixel {int(np.argmax(rows <= 0)) + 1} has an all-zero spectrum")
    if np.any(cols <= 0):
        raise DegenerateMarginError(f"channel {int(np.argmax(cols <= 0)) + 1} is all zero")


def default_k_max(channels: int) -> int:
    return max(1, min(channels - 1, MAX_AXES))


def fca_fit(img: HyperImage, k_max: Optional[int] = None) -> FcaModel:
    """
    Fit the correspondence analysis of img.

    With p = N / f, r and c the row and column margins, the standardized
    residuals (p - r c) / sqrt(r c) are decomposed by SVD. Row coordinates
    are σ u / sqrt(r), column coordinates σ v / sqrt(c), inertias σ².
    """
    table = img.table
    _check_table(table)
    if k_max is None:
        k_max = default_k_max(img.channels)
    if k_max < 1:
        raise ParameterError(f"k_max must be at least 1, got {k_max}")

    total = float(table.sum())
    p = table / total
    r = p.sum(axis=1)
    c = p.sum(axis=0)
    expected = np.outer(r, c)
    residuals = (p - expected) / np.sqrt(expected)

    u, sigma, vt = linalg.svd(residuals, full_matrices=False, lapack_driver="gesdd")
    total_inertia = float(np.sum(sigma ** 2))
    rank = int(np.sum(sigma > RANK_TOLERANCE * max(sigma[0], 1.0))) if sigma.size else 0
    k = min(k_max, rank, img.channels - 1)

    u = u[:, :k]
    sigma = sigma[:k]
    v = vt[:k, :].T

    factor_pixels = u * sigma / np.sqrt(r)[:, np.newaxis]
    channel_factors = (v * sigma / np.sqrt(c)[:, np.newaxis]).T

    # Largest-magnitude row coordinate of each axis made positive
    pivot = np.argmax(np.abs(factor_pixels), axis=0)
    signs = np.sign(factor_pixels[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    factor_pixels = factor_pixels * signs
    channel_factors = channel_factors * signs[:, np.newaxis]

    logging.info(f"FCA fitted: {k} axes kept of rank {rank}, total inertia {total_inertia:.6g}")
    return FcaModel(
        factor_pixels=factor_pixels,
        channel_factors=channel_factors,
        inertias=sigma ** 2,
        row_marginals=r,
        col_marginals=c,
        grand_total=total,
        total_inertia=total_inertia,
        width=img.width,
        height=img.height,
    )


def fca_reconstruct(model: FcaModel, kept_axes: Sequence[int]) -> HyperImage:
    """Rebuild the table from the kept axes; the empty set gives the independence model."""
    kept = sorted(set(int(k) for k in kept_axes))
    if any(k < 0 or k >= model.axes for k in kept):
        raise ParameterError(f"kept axes {kept} outside 0..{model.axes - 1}")
    expansion = np.ones((model.row_marginals.shape[0], model.channels))
    if kept:
        coords = model.factor_pixels[:, kept] / np.sqrt(model.inertias[kept])
        expansion = expansion + coords @ model.channel_factors[kept, :]
    table = model.grand_total * np.outer(model.row_marginals, model.col_marginals) * expansion
    return HyperImage.from_table(table, model.width, model.height)


def factor_image(model: FcaModel, axes: Optional[Sequence[int]] = None) -> HyperImage:
    """Factor pixels of the chosen axes as an image (one channel per axis)."""
    axes = list(range(model.axes)) if axes is None else [int(a) for a in axes]
    if not axes:
        raise ParameterError("factor image needs at least one axis")
    return HyperImage.from_table(model.factor_pixels[:, axes], model.width, model.height)


def spatial_covariance(ch: np.ndarray, lag: int = DEFAULT_LAG) -> CovarianceMap:
    """
    Centred spatial covariance for every lag in [-lag, lag]².

    Each lag averages the products of all in-domain pixel pairs. Only the
    half plane is computed; the other half is its point reflection.
    """
    ch = np.asarray(ch, dtype=np.float64)
    height, width = ch.shape
    if height <= 2 * lag + 1 or width <= 2 * lag + 1:
        raise RasterTooSmallError(
            f"raster {width}x{height} too small for lag window {2 * lag + 1}"
        )
    centred = ch - ch.mean()
    size = 2 * lag + 1
    values = np.zeros((size, size))
    for dy in range(0, lag + 1):
        for dx in range(-lag, lag + 1):
            if dy == 0 and dx < 0:
                continue
            a = centred[: height - dy, max(0, -dx): width - max(0, dx)]
            b = centred[dy:, max(0, dx): width - max(0, -dx)]
            value = float(np.mean(a * b))
            values[lag + dy, lag + dx] = value
            values[lag - dy, lag - dx] = value
    return CovarianceMap(values=values, lag=lag)


def fit_lag(shape: Tuple[int, int], lag: int = DEFAULT_LAG) -> int:
    """Largest lag ≤ lag that fits a raster of this shape."""
    return max(1, min(lag, (min(shape) - 2) // 2))


def channel_snr(ch: np.ndarray, lag: int = DEFAULT_LAG) -> float:
    """
    Nugget-effect SNR of a raster.

    The covariance is opened by a 3×3 square; the opened value at the origin
    estimates the signal variance and the jump to the raw origin value the
    noise variance. Returns +inf when there is no jump.
    """
    ch = np.asarray(ch, dtype=np.float64)
    if np.ptp(ch) == 0:
        raise UndefinedSnrError("SNR is undefined on a constant raster")
    cov = spatial_covariance(ch, fit_lag(ch.shape, lag))
    g0 = cov.origin
    opened = opening(cov.values, square(3))
    signal = max(0.0, float(opened[cov.lag, cov.lag]))
    nugget = g0 - signal
    if nugget <= 0:
        logging.warning("No nugget effect found, SNR reported as infinite")
        return float("inf")
    return signal / nugget


def inertia_fractions(model: FcaModel) -> np.ndarray:
    if model.total_inertia <= 0:
        return np.zeros_like(model.inertias)
    return model.inertias / model.total_inertia


def snr_report(model: FcaModel, threshold: float = DEFAULT_SNR_THRESHOLD, lag: int = DEFAULT_LAG) -> SnrReport:
    """SNR of every axis measured on its factor-pixel raster."""
    snrs = []
    for k in range(model.axes):
        raster = model.factor_pixels[:, k].reshape(model.height, model.width)
        try:
            snrs.append(channel_snr(raster, lag))
        except UndefinedSnrError:
            snrs.append(0.0)
    snr = np.asarray(snrs, dtype=np.float64)
    kept = select_axes(snr, threshold)
    return SnrReport(snr=snr, inertia_fractions=inertia_fractions(model), kept=kept, threshold=threshold)


def select_axes(report, threshold: float = DEFAULT_SNR_THRESHOLD) -> Tuple[int, ...]:
    """Axes whose SNR strictly exceeds threshold; accepts a report or a plain SNR list."""
    if threshold < 0:
        raise ParameterError(f"SNR threshold must be non-negative, got {threshold}")
    snr = report.snr if isinstance(report, SnrReport) else np.asarray(report, dtype=np.float64)
    return tuple(int(k) for k in np.flatnonzero(snr > threshold))


def kaiser_axes(model: FcaModel) -> Tuple[int, ...]:
    """Axes whose inertia exceeds the mean axis inertia."""
    if model.axes == 0:
        return ()
    mean = model.total_inertia / max(model.channels - 1, 1)
    return tuple(int(k) for k in np.flatnonzero(model.inertias > mean))


def scree_axes(model: FcaModel) -> Tuple[int, ...]:
    """Leading axes up to the largest drop between successive inertias."""
    if model.axes <= 1:
        return tuple(range(model.axes))
    drops = model.inertias[:-1] - model.inertias[1:]
    return tuple(range(int(np.argmax(drops)) + 1))


def _fit_select_reconstruct(img: HyperImage, threshold: float, k_max: Optional[int], lag: int):
    model = fca_fit(img, k_max)
    report = snr_report(model, threshold, lag)
    logging.info(f"Axes kept {list(report.kept)}, rejected {list(report.rejected)}")
    return model, report, fca_reconstruct(model, report.kept)


def double_fca(
    img: HyperImage,
    threshold: float = DEFAULT_SNR_THRESHOLD,
    k_max: Optional[int] = None,
    lag: int = DEFAULT_LAG,
) -> DoubleFcaResult:
    """Two FCA-reconstruction passes with the translation by the first-pass minimum in between."""
    first_model, first_report, first = _fit_select_reconstruct(img, threshold, k_max, lag)
    epsilon = float(first.cube.min())
    translated = first.cube - epsilon
    if translated.min() < 0:
        raise DomainError("translated first reconstruction has negative values")
    second_model, second_report, second = _fit_select_reconstruct(
        HyperImage(translated), threshold, k_max, lag
    )
    logging.info(f"Double FCA done (epsilon = {epsilon:.6g})")
    return DoubleFcaResult(
        image=HyperImage(second.cube + epsilon),
        first_model=first_model,
        first_report=first_report,
        first_reconstruction=first,
        second_model=second_model,
        second_report=second_report,
        epsilon=epsilon,
    )


def denoise_double_fca(
    img: HyperImage,
    threshold: float = DEFAULT_SNR_THRESHOLD,
    k_max: Optional[int] = None,
    lag: int = DEFAULT_LAG,
) -> Tuple[HyperImage, SnrReport]:
    result = double_fca(img, threshold, k_max, lag)
    return result.image, result.first_report


def _require_same(orig: HyperImage, recon: HyperImage) -> None:
    if not orig.same_dims(recon):
        raise DimensionMismatchError(
            f"images differ in shape: {orig.cube.shape} vs {recon.cube.shape}"
        )


def residues(orig: HyperImage, recon: HyperImage) -> HyperImage:
    _require_same(orig, recon)
    return HyperImage(np.abs(orig.cube - recon.cube))


def hyper_snr(orig: HyperImage, recon: HyperImage) -> float:
    """Summed channel variance of recon over summed channel variance of orig - recon."""
    _require_same(orig, recon)
    signal = float(np.sum(np.var(recon.table, axis=0)))
    noise = float(np.sum(np.var(orig.table - recon.table, axis=0)))
    if noise == 0:
        return float("inf")
    return signal / noise


def channel_snr_profile(img: HyperImage, lag: int = DEFAULT_LAG) -> List[float]:
    """channel_snr of every channel; constant channels report 0."""
    profile = []
    for j in range(img.channels):
        try:
            profile.append(channel_snr(img.cube[:, :, j], lag))
        except UndefinedSnrError:
            profile.append(0.0)
    return profile


def residue_nugget_ratio(residue: np.ndarray, lag: int = DEFAULT_LAG) -> float:
    """Covariance at the origin over the mean absolute off-origin covariance."""
    residue = np.asarray(residue, dtype=np.float64)
    cov = spatial_covariance(residue, fit_lag(residue.shape, lag))
    off = np.abs(cov.values).copy()
    off[cov.lag, cov.lag] = np.nan
    mean_off = float(np.nanmean(off))
    if mean_off == 0:
        return float("inf")
    return cov.origin / mean_off

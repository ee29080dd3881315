"""
Kinetic Atlas Stochastic Watershed
==================================
Monte-Carlo contour densities from many marker-controlled watersheds with
random germs, optionally regionalized by a classification.

Flow:
1. preprocess_classification - erode each class, fill its holes, void the rest
2. sample_germs              - one of five germ strategies
3. marginal_pdf / vector_pdf - accumulate smoothed contour rasters
4. probabilistic_gradient    - combine a pdf with a metric gradient
5. segment_pdf               - volume watershed of the pdf

Each realisation draws from its own substream (channel, realisation), so
the result does not depend on how realisations are spread over workers.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache, partial
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, EmptyMarkersError, ParameterError
from .gradient import GradientMap, MetricKind, morph_gradient, normalize01, vector_gradient
from .morphology import (
    StructuringElement,
    binary_erode,
    binary_opening,
    closing_by_reconstruction,
    disk,
    gaussian_filter,
    parzen_size,
    square,
)
from .raster import CROSS, HyperImage, LabelField, RngStream
from .watershed import Partition, Relief, contours, marker_watershed, volume_watershed
from .workers import WorkerOrchestrator

WEIGHT_TOLERANCE = 1e-9
MARKER_DISK = 5


class Strategy(Enum):
    UNIFORM_POINTS = "uniform_points"
    REGIONALIZED_POINTS = "regionalized_points"
    BALL_ONE_HIT = "ball_one_hit"
    BALL_UNION = "ball_union"
    BALL_UNION_CONNECTED = "ball_union_connected"


@dataclass(frozen=True)
class GermParams:
    n: int = 100
    m: int = 100
    s: int = 2
    rmax: int = 30
    sigma: float = 3.0
    strategy: Strategy = Strategy.BALL_UNION_CONNECTED
    background: Optional[int] = None

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.s < 1 or self.rmax < 1:
            raise ParameterError(f"germ parameters must be at least 1: N={self.n} M={self.m} S={self.s} Rmax={self.rmax}")
        if self.sigma <= 0:
            raise ParameterError(f"Parzen sigma must be positive, got {self.sigma}")
        if not isinstance(self.strategy, Strategy):
            object.__setattr__(self, "strategy", Strategy(self.strategy))

    @classmethod
    def parse(cls, text: str, **overrides) -> "GermParams":
        """Parse 'N=100,M=100,S=2,Rmax=30' (sigma optional)."""
        keys = {"n": "n", "m": "m", "s": "s", "rmax": "rmax", "sigma": "sigma"}
        values: Dict[str, object] = {}
        for item in filter(None, (part.strip() for part in text.split(","))):
            if "=" not in item:
                raise ParameterError(f"germ setting '{item}' is not key=value")
            key, raw = (piece.strip() for piece in item.split("=", 1))
            if key.lower() not in keys:
                raise ParameterError(f"unknown germ setting '{key}'")
            name = keys[key.lower()]
            values[name] = float(raw) if name == "sigma" else int(raw)
        values.update(overrides)
        return cls(**values)


class PdfKind(Enum):
    MARGINAL = "marginal"
    VECTORIAL = "vectorial"
    PROBABILISTIC_GRADIENT = "probabilistic_gradient"


@dataclass(frozen=True)
class ContourPdf:
    values: np.ndarray
    kind: PdfKind


def preprocess_classification(k: LabelField) -> LabelField:
    """Erode every class by a 3×3 square and fill its holes; uncovered pixels become void."""
    void = k.void_id if k.void_id is not None else k.num_classes
    out = np.full(k.shape, void, dtype=np.int64)
    se = square(3)
    for cls in range(k.num_classes):
        mask = k.mask(cls)
        if not mask.any():
            continue
        processed = closing_by_reconstruction(binary_erode(mask, se))
        out[processed & (out == void)] = cls
    logging.info(f"Classification preprocessed, {int(np.sum(out == void))} void pixels")
    return LabelField(out, k.num_classes, void_id=void)


@dataclass(frozen=True)
class EligibleComponents:
    """Components that may receive germs (id 0 = ineligible)."""
    ids: np.ndarray
    count: int


def eligible_components(k_hat: LabelField, s: int, background: Optional[int] = None) -> EligibleComponents:
    ids = np.zeros(k_hat.shape, dtype=np.int64)
    count = 0
    for cls in range(k_hat.num_classes):
        if cls == background:
            continue
        comps, n = k_hat.components(cls)
        if n == 0:
            continue
        areas = np.bincount(comps.ravel(), minlength=n + 1)
        for comp in range(1, n + 1):
            if areas[comp] >= s:
                count += 1
                ids[comps == comp] = count
    return EligibleComponents(ids, count)


@lru_cache(maxsize=None)
def _disk_footprint(radius: int) -> np.ndarray:
    return disk(radius).footprint


def _ball(shape: Tuple[int, int], centre: int, radius: int) -> Tuple[Tuple[slice, slice], np.ndarray]:
    height, width = shape
    row, col = divmod(int(centre), width)
    footprint = _disk_footprint(radius)
    top, left = row - radius, col - radius
    ys = slice(max(0, top), min(height, row + radius + 1))
    xs = slice(max(0, left), min(width, col + radius + 1))
    cut = footprint[ys.start - top: ys.stop - top, xs.start - left: xs.stop - left]
    return (ys, xs), cut


def _as_markers(labels: np.ndarray, count: int) -> LabelField:
    """Germ labels as a marker field; count 0 gives an all-void field."""
    labels = np.where(labels < 0, count, labels)
    return LabelField(labels, count, void_id=count)


def sample_germs(k_hat: Optional[LabelField], params: GermParams, rng: RngStream,
                 realisation: int = 0, channel: int = 0, shape: Optional[Tuple[int, int]] = None,
                 eligible: Optional[EligibleComponents] = None) -> LabelField:
    """
    Markers of one realisation.

    N pixels and N radii are always drawn from the substream (channel,
    realisation), whatever the strategy, so strategies share their draws.
    A realisation whose draws all miss the eligible components returns a
    field with no marker label.
    """
    if k_hat is not None:
        shape = k_hat.shape
    if shape is None:
        raise ParameterError("germ sampling needs a classification or a raster shape")
    generator = rng.substream(channel, realisation).generator()
    pixels = generator.integers(0, shape[0] * shape[1], size=params.n)
    radii = generator.integers(1, params.rmax + 1, size=params.n)
    markers = np.full(shape, -1, dtype=np.int64)
    flat = markers.reshape(-1)

    if params.strategy is Strategy.UNIFORM_POINTS:
        count = 0
        for p in pixels:
            if flat[p] < 0:
                flat[p] = count
                count += 1
        return _as_markers(markers, count)

    if k_hat is None:
        raise ParameterError(f"strategy {params.strategy.value} needs a classification")
    if eligible is None:
        eligible = eligible_components(k_hat, params.s, params.background)
    if eligible.count == 0:
        raise EmptyMarkersError("classification has no component eligible for germs")
    comp_flat = eligible.ids.reshape(-1)
    marked = np.zeros(eligible.count + 1, dtype=bool)
    count = 0

    if params.strategy is Strategy.REGIONALIZED_POINTS:
        for p in pixels:
            comp = comp_flat[p]
            if comp and not marked[comp]:
                marked[comp] = True
                flat[p] = count
                count += 1
        return _as_markers(markers, count)

    if params.strategy is Strategy.BALL_ONE_HIT:
        for p, r in zip(pixels, radii):
            comp = comp_flat[p]
            if comp and not marked[comp]:
                marked[comp] = True
                window, ball = _ball(shape, p, int(r))
                region = ball & (eligible.ids[window] == comp)
                markers[window][region] = count
                count += 1
        return _as_markers(markers, count)

    union = np.zeros(shape, dtype=bool)
    hit_order = []
    for p, r in zip(pixels, radii):
        comp = comp_flat[p]
        if not comp:
            continue
        if not marked[comp]:
            marked[comp] = True
            hit_order.append(comp)
        window, ball = _ball(shape, p, int(r))
        union[window] |= ball & (eligible.ids[window] == comp)

    if params.strategy is Strategy.BALL_UNION:
        for comp in hit_order:
            markers[union & (eligible.ids == comp)] = count
            count += 1
        return _as_markers(markers, count)

    # BALL_UNION_CONNECTED: connected pieces of the union, never across components
    for comp in hit_order:
        pieces, n = ndimage.label(union & (eligible.ids == comp), structure=CROSS)
        if n:
            markers[pieces > 0] = pieces[pieces > 0] - 1 + count
            count += n
    return _as_markers(markers, count)


def _realisation_contours(task, k_hat: Optional[LabelField], params: GermParams, seed: int,
                          eligible: Optional[EligibleComponents]) -> np.ndarray:
    relief, channel, realisation = task
    markers = sample_germs(k_hat, params, RngStream(seed), realisation, channel,
                           shape=relief.shape, eligible=eligible)
    if markers.num_classes == 0:
        logging.warning(f"Realisation {realisation} of channel {channel} kept no germ, no contour added")
        return np.zeros(relief.shape, dtype=bool)
    return contours(marker_watershed(relief, markers))


def _accumulate(reliefs: Sequence[Tuple[Relief, int, int]], k_hat: Optional[LabelField],
                params: GermParams, rng: RngStream, workers: Optional[WorkerOrchestrator],
                progress: bool) -> np.ndarray:
    """Sum of contour rasters over the tasks, in task order."""
    eligible = None
    if k_hat is not None and params.strategy is not Strategy.UNIFORM_POINTS:
        eligible = eligible_components(k_hat, params.s, params.background)
        if eligible.count == 0:
            raise EmptyMarkersError("classification has no component eligible for germs")
    worker = partial(_realisation_contours, k_hat=k_hat, params=params, seed=rng.seed, eligible=eligible)
    workers = workers or WorkerOrchestrator(threads=1)
    total = np.zeros(reliefs[0][0].shape, dtype=np.int64)
    for edges in workers.map_ordered(worker, reliefs, progress=progress):
        total += edges
    return total


def _smooth(density: np.ndarray, sigma: float) -> np.ndarray:
    return gaussian_filter(density, parzen_size(sigma), sigma)


def channel_pdf(channel: np.ndarray, j: int, k_hat: Optional[LabelField], params: GermParams,
                rng: RngStream, workers: Optional[WorkerOrchestrator] = None,
                progress: bool = False) -> np.ndarray:
    """pdf of one channel (0-based index j selects the substreams (j, i))."""
    relief = Relief.from_raster(morph_gradient(channel).values)
    tasks = [(relief, j, i) for i in range(params.m)]
    counts = _accumulate(tasks, k_hat, params, rng, workers, progress)
    return _smooth(counts / params.m, params.sigma)


def _check_weights(weights: Sequence[float], channels: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (channels,):
        raise DimensionMismatchError(f"{weights.shape[0]} weights for {channels} channels")
    if abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
        raise ParameterError(f"channel weights sum to {weights.sum():.12g}, expected 1")
    return weights


def marginal_pdf(img: HyperImage, weights: Sequence[float], k_hat: Optional[LabelField],
                 params: GermParams, rng: RngStream, workers: Optional[WorkerOrchestrator] = None,
                 progress: bool = False) -> ContourPdf:
    weights = _check_weights(weights, img.channels)
    mpdf = np.zeros(img.shape)
    for j in range(img.channels):
        mpdf = mpdf + weights[j] * channel_pdf(img.cube[:, :, j], j, k_hat, params, rng, workers, progress)
    logging.info(f"Marginal pdf over {img.channels} channels, {params.m} realisations each")
    return ContourPdf(mpdf, PdfKind.MARGINAL)


def vector_pdf(img: HyperImage, metric: MetricKind, k_hat: Optional[LabelField], params: GermParams,
               rng: RngStream, workers: Optional[WorkerOrchestrator] = None,
               progress: bool = False) -> ContourPdf:
    relief = Relief.from_raster(vector_gradient(img, metric).values)
    realisations = params.m * img.channels
    tasks = [(relief, 0, i) for i in range(realisations)]
    counts = _accumulate(tasks, k_hat, params, rng, workers, progress)
    logging.info(f"Vectorial pdf over {realisations} realisations")
    return ContourPdf(_smooth(counts / realisations, params.sigma), PdfKind.VECTORIAL)


def probabilistic_gradient(mpdf: ContourPdf, g: GradientMap) -> ContourPdf:
    if np.shape(mpdf.values) != np.shape(g.values):
        raise DimensionMismatchError(f"pdf {np.shape(mpdf.values)} and gradient {np.shape(g.values)} differ")
    combined = normalize01(GradientMap(mpdf.values)).values + normalize01(g).values
    return ContourPdf(normalize01(GradientMap(combined)).values, PdfKind.PROBABILISTIC_GRADIENT)


def segment_pdf(pdf: ContourPdf, regions: int) -> Partition:
    return volume_watershed(Relief.from_raster(pdf.values), regions)


def gradient_segmentation(g: GradientMap, regions: int) -> Partition:
    """Deterministic volume watershed of a gradient."""
    return volume_watershed(Relief.from_raster(g.values), regions)


def classification_markers(k: LabelField, se: StructuringElement = None) -> LabelField:
    """Open every connected component of every class; each surviving piece is a marker."""
    se = se or disk(MARKER_DISK)
    markers = np.full(k.shape, -1, dtype=np.int64)
    count = 0
    for cls in range(k.num_classes):
        comps, n = k.components(cls)
        for comp in range(1, n + 1):
            opened = binary_opening(comps == comp, se) & (comps == comp)
            pieces, found = ndimage.label(opened, structure=CROSS)
            if found:
                markers[pieces > 0] = pieces[pieces > 0] - 1 + count
                count += found
    if count == 0:
        raise EmptyMarkersError(f"no class component survives opening by {se!r}")
    return _as_markers(markers, count)


def classification_watershed(relief: Relief, k: LabelField, se: StructuringElement = None) -> Partition:
    return marker_watershed(relief, classification_markers(k, se))

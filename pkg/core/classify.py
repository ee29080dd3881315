"""
Kinetic Atlas Temporal Classification
=====================================
Four ways to label pixels by their kinetics:

- kmeans: Lloyd iterations from k-means++ seeding, in any Euclidean feature space
- class_models / model_classify: L1 distance between fitted line models
- lda_fit / lda_predict: supervised LDA with equal priors
- cdf_normalize: 255-bin histogram anamorphosis towards a reference series

Training masks use 0 for unlabelled pixels and 1..4 for the classes
tumour, heart, background, lung.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from sklearn.cluster import kmeans_plusplus
from sklearn.decomposition import PCA

from .errors import DimensionMismatchError, ParameterError
from .model import ParameterMaps, check_j1, fit_lines
from .raster import HyperImage, LabelField, RngStream, require_same_shape

CLASS_NAMES = ("tumour", "heart", "background", "lung")
BACKGROUND_CLASS = CLASS_NAMES.index("background")
DEFAULT_K = 5
DEFAULT_MAX_ITER = 300
TRAINING_PER_CLASS = 80
CDF_BINS = 255
RIDGE = 1e-6
PCA_VARIANCE = 0.99


@dataclass(frozen=True)
class KMeansResult:
    labels: LabelField          # raster of the rows, or a P×1 column without a shape
    centroids: np.ndarray
    inertia: float
    inertia_history: Tuple[float, ...]
    iterations: int

    @property
    def rows(self) -> np.ndarray:
        """Class id of every feature row."""
        return self.labels.labels.reshape(-1)


def _assign(points: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    dist = cdist(points, centroids, metric="sqeuclidean")
    labels = np.argmin(dist, axis=1)
    return labels, dist[np.arange(points.shape[0]), labels]


def kmeans(points: np.ndarray, k: int, rng: RngStream, max_iter: int = DEFAULT_MAX_ITER,
           shape: Optional[Tuple[int, int]] = None) -> KMeansResult:
    """
    Lloyd k-means; empty clusters are reseeded at the point farthest from its centroid.

    With a raster shape the labels come back as that raster (rows in
    row-major pixel order).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, np.newaxis]
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k = {k} outside 1..{n}")
    shape = tuple(shape) if shape is not None else (n, 1)
    if shape[0] * shape[1] != n:
        raise DimensionMismatchError(f"{n} rows do not fill a {shape[0]}x{shape[1]} raster")
    generator = rng.generator()
    seed = int(generator.integers(0, 2 ** 31 - 1))
    centroids, _ = kmeans_plusplus(points, n_clusters=k, random_state=seed)
    centroids = np.array(centroids, dtype=np.float64)

    labels, sq = _assign(points, centroids)
    history = [float(sq.sum())]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        for cluster in range(k):
            members = labels == cluster
            if members.any():
                centroids[cluster] = points[members].mean(axis=0)
            else:
                farthest = int(np.argmax(sq))
                logging.warning(f"k-means cluster {cluster} emptied, reseeded at point {farthest}")
                centroids[cluster] = points[farthest]
                sq[farthest] = 0.0
        new_labels, sq = _assign(points, centroids)
        history.append(float(sq.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(
        labels=LabelField(labels.reshape(shape), k),
        centroids=centroids,
        inertia=history[-1],
        inertia_history=tuple(history),
        iterations=iterations,
    )


@dataclass(frozen=True)
class ClassModelSet:
    slopes: np.ndarray
    intercepts: np.ndarray
    mean_spectra: np.ndarray
    present: np.ndarray          # bool per class

    @property
    def num_classes(self) -> int:
        return self.present.shape[0]


def class_models(img: HyperImage, labels: LabelField, j1: int) -> ClassModelSet:
    """Mean spectrum of every class, then its line model."""
    require_same_shape(img.shape, labels.shape, "image and labels")
    check_j1(j1, img.channels)
    flat = labels.labels.ravel()
    table = img.table
    spectra = np.zeros((labels.num_classes, img.channels))
    present = np.zeros(labels.num_classes, dtype=bool)
    for cls in range(labels.num_classes):
        members = flat == cls
        if members.any():
            spectra[cls] = table[members].mean(axis=0)
            present[cls] = True
        else:
            logging.warning(f"Class {cls} is empty, excluded from model classification")
    slopes, intercepts = fit_lines(spectra, j1)
    slopes[~present] = np.nan
    intercepts[~present] = np.nan
    return ClassModelSet(slopes=slopes, intercepts=intercepts, mean_spectra=spectra, present=present)


def line_l1_distances(slopes: np.ndarray, intercepts: np.ndarray,
                      model_slopes: np.ndarray, model_intercepts: np.ndarray,
                      channels: int) -> np.ndarray:
    """Σ_j |Δa·j + Δb| over j = 1..L, for every (pixel, model) pair."""
    lam = np.arange(1, channels + 1, dtype=np.float64)
    out = np.empty((slopes.shape[0], model_slopes.shape[0]))
    for k in range(model_slopes.shape[0]):
        da = (slopes - model_slopes[k])[:, np.newaxis]
        db = (intercepts - model_intercepts[k])[:, np.newaxis]
        out[:, k] = np.abs(da * lam + db).sum(axis=1)
    return out


def model_classify(img: HyperImage, models: ClassModelSet, j1: int) -> LabelField:
    present = np.flatnonzero(models.present)
    if present.size == 0:
        raise ParameterError("no class model present")
    slopes, intercepts = fit_lines(img.table, j1)
    dist = line_l1_distances(slopes, intercepts, models.slopes[present],
                             models.intercepts[present], img.channels)
    labels = present[np.argmin(dist, axis=1)]
    return LabelField(labels.reshape(img.shape), models.num_classes)


@dataclass(frozen=True)
class LdaModel:
    means: np.ndarray
    covariance: np.ndarray
    class_ids: np.ndarray
    class_names: Tuple[str, ...]
    training_rows: int
    feature_space: str = "parameters"
    _factor: Tuple = field(default=None, repr=False, compare=False)

    @property
    def dimension(self) -> int:
        return self.means.shape[1]


def lda_fit(rows: np.ndarray, labels: np.ndarray,
            class_names: Optional[Sequence[str]] = None,
            feature_space: str = "parameters") -> LdaModel:
    """Class means and pooled within-class covariance with a trace-scaled ridge."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[:, np.newaxis]
    labels = np.asarray(labels).ravel()
    if labels.shape[0] != rows.shape[0]:
        raise DimensionMismatchError(f"{rows.shape[0]} rows but {labels.shape[0]} labels")
    class_ids = np.unique(labels)
    if class_ids.size < 2:
        raise ParameterError("LDA needs at least two classes")
    n, dim = rows.shape
    if dim > n:
        raise ParameterError(f"feature dimension {dim} exceeds {n} training rows")

    means = np.empty((class_ids.size, dim))
    scatter = np.zeros((dim, dim))
    for idx, cls in enumerate(class_ids):
        members = rows[labels == cls]
        if members.shape[0] < 2:
            raise ParameterError(f"class {cls} has {members.shape[0]} training rows, needs 2")
        means[idx] = members.mean(axis=0)
        centred = members - means[idx]
        scatter += centred.T @ centred
    covariance = scatter / max(n - class_ids.size, 1)
    covariance = (covariance + covariance.T) / 2.0
    ridge = RIDGE * np.trace(covariance) / dim
    if ridge <= 0:
        ridge = RIDGE
    regularized = covariance + ridge * np.eye(dim)
    factor = linalg.cho_factor(regularized)
    names = tuple(class_names) if class_names is not None else tuple(str(c) for c in class_ids)
    logging.info(f"LDA fitted on {n} rows, {class_ids.size} classes, {dim} features ({feature_space})")
    return LdaModel(means=means, covariance=covariance, class_ids=class_ids, class_names=names,
                    training_rows=n, feature_space=feature_space, _factor=factor)


def lda_distances(model: LdaModel, rows: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distance of every row to every class mean."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[:, np.newaxis]
    if rows.shape[1] != model.dimension:
        raise DimensionMismatchError(f"features have {rows.shape[1]} columns, model expects {model.dimension}")
    out = np.empty((rows.shape[0], model.means.shape[0]))
    for idx, mean in enumerate(model.means):
        diff = rows - mean
        solved = linalg.cho_solve(model._factor, diff.T)
        out[:, idx] = np.einsum("ij,ji->i", diff, solved)
    return out


def lda_predict_rows(model: LdaModel, rows: np.ndarray) -> np.ndarray:
    """Class id of every row (ties to the lowest class id)."""
    return model.class_ids[np.argmin(lda_distances(model, rows), axis=1)]


def lda_predict(model: LdaModel, rows: np.ndarray, shape: Optional[Tuple[int, int]] = None) -> LabelField:
    """Predict classes; labels are indices into model.class_ids."""
    rows = np.asarray(rows, dtype=np.float64)
    index = np.argmin(lda_distances(model, rows), axis=1)
    if shape is None:
        shape = (1, index.shape[0])
    return LabelField(index.reshape(shape), model.class_ids.size)


def lda_training_error(model: LdaModel, rows: np.ndarray, labels: np.ndarray) -> float:
    predicted = lda_predict_rows(model, rows)
    return float(np.mean(predicted != np.asarray(labels).ravel()))


def training_rows(mask: np.ndarray, features: np.ndarray, rng: RngStream,
                  per_class: int = TRAINING_PER_CLASS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample at most per_class labelled pixels of every class of a mask.

    features is P×d (row-major pixels). Returned labels are 0-based
    (mask value − 1).
    """
    mask = np.asarray(mask).ravel()
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != mask.shape[0]:
        raise DimensionMismatchError(f"mask has {mask.shape[0]} pixels, features {features.shape[0]} rows")
    generator = rng.generator()
    picked: List[np.ndarray] = []
    for value in np.unique(mask[mask > 0]):
        pixels = np.flatnonzero(mask == value)
        if pixels.shape[0] > per_class:
            pixels = np.sort(generator.choice(pixels, size=per_class, replace=False))
        picked.append(pixels)
    if not picked:
        raise ParameterError("training mask has no labelled pixel")
    index = np.concatenate(picked)
    return features[index], mask[index].astype(np.int64) - 1


class TrainingPca:
    """PCA of training spectra, used as an LDA feature space."""

    def __init__(self, variance: float = PCA_VARIANCE):
        self.variance = variance
        self._pca: Optional[PCA] = None

    def fit(self, spectra: np.ndarray) -> "TrainingPca":
        self._pca = PCA(n_components=self.variance, svd_solver="full")
        self._pca.fit(np.asarray(spectra, dtype=np.float64))
        logging.info(f"Training PCA keeps {self._pca.n_components_} components")
        return self

    @property
    def components(self) -> int:
        if self._pca is None:
            raise ParameterError("TrainingPca used before fit")
        return int(self._pca.n_components_)

    def transform(self, spectra: np.ndarray) -> np.ndarray:
        if self._pca is None:
            raise ParameterError("TrainingPca used before fit")
        return self._pca.transform(np.asarray(spectra, dtype=np.float64))


@dataclass(frozen=True)
class CdfMapping:
    """Monotone piecewise-linear transfer of a map onto a reference distribution."""
    edges: np.ndarray
    map_cdf: np.ndarray
    reference_cdf: np.ndarray
    reference: str = "reference"

    @property
    def width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    def map_quantile(self, values: np.ndarray) -> np.ndarray:
        """Piecewise-linear F_map(v)."""
        values = np.asarray(values, dtype=np.float64)
        bins = self.edges.shape[0] - 1
        k = np.clip(np.floor((values - self.edges[0]) / self.width).astype(np.int64), 0, bins - 1)
        mass = self.map_cdf[k + 1] - self.map_cdf[k]
        frac = np.clip((values - self.edges[k]) / self.width, 0.0, 1.0)
        return self.map_cdf[k] + mass * frac

    def reference_inverse(self, q: np.ndarray) -> np.ndarray:
        """Piecewise-linear F_ref⁻¹(q), resolved inside non-empty reference bins."""
        q = np.clip(np.asarray(q, dtype=np.float64), 0.0, 1.0)
        cdf = self.reference_cdf
        bins = self.edges.shape[0] - 1
        mass = cdf[1:] - cdf[:-1]
        k = np.clip(np.searchsorted(cdf[1:], q, side="left"), 0, bins - 1)
        # Skip empty bins so the inverse never lands in a gap of the reference
        nonempty = np.flatnonzero(mass > 0)
        pos = np.searchsorted(nonempty, k, side="left")
        k = nonempty[np.clip(pos, 0, nonempty.size - 1)]
        frac = np.clip((q - cdf[k]) / mass[k], 0.0, 1.0)
        return self.edges[k] + frac * self.width

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.reference_inverse(self.map_quantile(values))


def _cdf(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(values, bins=edges)
    cdf = np.concatenate([[0.0], np.cumsum(counts)]) / values.size
    cdf[-1] = 1.0
    return cdf


def cdf_normalize(values: np.ndarray, reference: np.ndarray,
                  reference_name: str = "reference") -> Tuple[np.ndarray, CdfMapping]:
    """Histogram anamorphosis of values onto the distribution of reference."""
    values = np.asarray(values, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if np.ptp(values) == 0 or np.ptp(reference) == 0:
        raise ParameterError("cdf normalization needs non-constant rasters")
    low = min(values.min(), reference.min())
    high = max(values.max(), reference.max())
    edges = np.linspace(low, high, CDF_BINS + 1)
    mapping = CdfMapping(
        edges=edges,
        map_cdf=_cdf(values.ravel(), edges),
        reference_cdf=_cdf(reference.ravel(), edges),
        reference=reference_name,
    )
    return mapping.apply(values), mapping


def cdf_normalize_maps(maps: ParameterMaps, reference: ParameterMaps) -> ParameterMaps:
    """cdf_normalize applied to a, b and m independently."""
    a, _ = cdf_normalize(maps.a, reference.a, "a")
    b, _ = cdf_normalize(maps.b, reference.b, "b")
    m, _ = cdf_normalize(maps.m, reference.m, "m")
    return ParameterMaps(a=a, b=b, m=np.maximum(m, 0.0), j1=maps.j1)

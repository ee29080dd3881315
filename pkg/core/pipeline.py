"""
Kinetic Atlas Pipeline
======================
Tumour detection flow over one series:

denoise -> fit -> classify -> segment -> detect

1. denoise:  double FCA-reconstruction with SNR axis selection
2. fit:      slope / intercept / rise maps
3. classify: cdf normalization against the reference, then LDA
             (or k-means / model classification)
4. segment:  classification pre-processing, marginal pdf with
             regionalized germs, volume watershed in R regions of the pdf
             (or of the pdf combined with the metric gradient)
5. detect:   region statistics, decision rule, confidence maps

Every stage writes its intermediates (.hsr + PNG) under the output
directory; detect also writes report.json. A run may stop after any stage.
"""

import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np
from dotenv import dotenv_values

from .classify import (
    BACKGROUND_CLASS,
    CLASS_NAMES,
    DEFAULT_K,
    TrainingPca,
    class_models,
    cdf_normalize_maps,
    kmeans,
    lda_fit,
    lda_predict,
    model_classify,
    training_rows,
)
from .detect import DEFAULT_B_THRESHOLD, background_floor, confidence_maps, detect_regions, region_stats, stats_report
from .errors import AtlasError, ConfigurationError, ParameterError, StageError
from .fca import DEFAULT_LAG, DEFAULT_SNR_THRESHOLD, DoubleFcaResult, double_fca, factor_image, hyper_snr, residues
from .gradient import MetricKind, metric_for_space, vector_gradient
from .model import DEFAULT_J1, ParameterMaps, fit_parameter_maps
from .raster import HyperImage, LabelField, RngStream
from .series_io import export_image, read_hsr, read_label_png, write_hsr, write_label_png, write_png, write_rgb_png
from .stochastic import (
    GermParams,
    Strategy,
    marginal_pdf,
    preprocess_classification,
    probabilistic_gradient,
    segment_pdf,
)
from .workers import WorkerOrchestrator

STAGES = ("denoise", "fit", "classify", "segment", "detect")
CLASSIFIERS = ("lda", "kmeans", "model")
LDA_SPACES = ("parameters", "image", "pca")
RELIEFS = ("mpdf", "probabilistic_gradient")
DEFAULT_REGIONS = 20
TRAINING_STREAM = 1
KMEANS_STREAM = 2


@dataclass
class PipelineConfig:
    input: Optional[Path] = None
    output: Path = Path("out")
    reference: Optional[Path] = None
    training_mask: Optional[Path] = None
    snr_threshold: float = DEFAULT_SNR_THRESHOLD
    lag: int = DEFAULT_LAG
    k_max: Optional[int] = None
    j1: int = DEFAULT_J1
    k: int = DEFAULT_K
    classifier: str = "lda"
    lda_space: str = "parameters"
    metric: str = "inverse_variance"
    relief: str = "mpdf"
    germs: GermParams = field(default_factory=GermParams)
    regions: int = DEFAULT_REGIONS
    b_threshold: float = DEFAULT_B_THRESHOLD
    cdf: bool = True
    suppress_background: bool = False
    seed: int = 0
    stage: str = "detect"
    threads: Optional[int] = None

    def stage_index(self) -> int:
        return STAGES.index(self.stage)

    def reaches(self, stage: str) -> bool:
        return self.stage_index() >= STAGES.index(stage)

    def validate(self) -> "PipelineConfig":
        if self.stage not in STAGES:
            raise ConfigurationError(f"unknown stage '{self.stage}', expected one of {', '.join(STAGES)}")
        if self.input is None:
            raise ConfigurationError("no input series given")
        if self.snr_threshold < 0:
            raise ConfigurationError(f"snr_threshold must be non-negative, got {self.snr_threshold}")
        if self.lag < 1:
            raise ConfigurationError(f"lag must be at least 1, got {self.lag}")
        if self.k_max is not None and self.k_max < 1:
            raise ConfigurationError(f"k_max must be at least 1, got {self.k_max}")
        if self.j1 < 2:
            raise ConfigurationError(f"j1 must be at least 2, got {self.j1}")
        if self.k < 1:
            raise ConfigurationError(f"k must be at least 1, got {self.k}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigurationError(f"unknown classifier '{self.classifier}'")
        if self.lda_space not in LDA_SPACES:
            raise ConfigurationError(f"unknown LDA feature space '{self.lda_space}'")
        if self.metric not in ("euclidean", "chi_squared", "mahalanobis", "inverse_variance"):
            raise ConfigurationError(f"unknown metric '{self.metric}'")
        if self.relief not in RELIEFS:
            raise ConfigurationError(f"unknown segmentation relief '{self.relief}', "
                                     f"expected one of {', '.join(RELIEFS)}")
        if self.regions < 1:
            raise ConfigurationError(f"regions must be at least 1, got {self.regions}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        if self.threads is not None and self.threads < 1:
            raise ConfigurationError(f"threads must be at least 1, got {self.threads}")
        if self.reaches("classify"):
            if self.cdf and self.reference is None:
                raise ConfigurationError("cdf normalization is enabled but no reference series was given")
            if self.classifier == "lda" and self.training_mask is None:
                raise ConfigurationError("LDA classification needs a training mask")
        return self

    def summary(self) -> Dict[str, Any]:
        """Path-free settings recorded in the report."""
        return {
            "snr_threshold": self.snr_threshold,
            "lag": self.lag,
            "k_max": self.k_max,
            "j1": self.j1,
            "k": self.k,
            "classifier": self.classifier,
            "lda_space": self.lda_space,
            "metric": self.metric,
            "relief": self.relief,
            "germs": {
                "N": self.germs.n,
                "M": self.germs.m,
                "S": self.germs.s,
                "Rmax": self.germs.rmax,
                "sigma": self.germs.sigma,
                "strategy": self.germs.strategy.value,
            },
            "regions": self.regions,
            "b_threshold": self.b_threshold,
            "cdf": self.cdf,
            "suppress_background": self.suppress_background,
            "seed": self.seed,
        }


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: Any, current: Any) -> Any:
    """Turn a config-file or flag value into the type of the field."""
    if raw is None:
        return None
    if name == "germs":
        if isinstance(raw, GermParams):
            return raw
        return GermParams.parse(str(raw), strategy=current.strategy, background=current.background)
    if name in ("input", "output", "reference", "training_mask"):
        return Path(raw)
    if name in ("cdf", "suppress_background"):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in _BOOL_TRUE:
            return True
        if text in _BOOL_FALSE:
            return False
        raise ConfigurationError(f"{name} must be a boolean, got '{raw}'")
    if name in ("snr_threshold", "b_threshold"):
        return float(raw)
    if name in ("lag", "k_max", "j1", "k", "regions", "seed", "threads"):
        return int(raw)
    return str(raw)


def apply_settings(config: PipelineConfig, settings: Mapping[str, Any]) -> PipelineConfig:
    """Overlay settings (config file or flags) on a config; None values are skipped."""
    names = {f.name for f in fields(PipelineConfig)}
    updates: Dict[str, Any] = {}
    strategy = settings.get("strategy")
    for key, raw in settings.items():
        if raw is None or key == "strategy":
            continue
        name = key.replace("-", "_").lower()
        if name not in names:
            raise ConfigurationError(f"unknown setting '{key}'")
        try:
            updates[name] = _coerce(name, raw, getattr(config, name))
        except (ValueError, ParameterError) as exc:
            raise ConfigurationError(f"bad value for {key}: {exc}")
    config = replace(config, **updates)
    if strategy is not None:
        try:
            config = replace(config, germs=replace(config.germs, strategy=Strategy(strategy)))
        except ValueError:
            raise ConfigurationError(f"unknown germ strategy '{strategy}'")
    return config


def load_config_file(path: Path) -> Dict[str, Optional[str]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} not found")
    return dict(dotenv_values(path))


def build_config(config_file: Optional[Path] = None, **flags) -> PipelineConfig:
    """Defaults, then the key=value file, then flags."""
    config = PipelineConfig()
    if config_file is not None:
        config = apply_settings(config, load_config_file(config_file))
    return apply_settings(config, flags)


@dataclass
class PipelineState:
    """Intermediate results carried between stages."""
    image: Optional[HyperImage] = None
    denoise: Optional[DoubleFcaResult] = None
    maps: Optional[ParameterMaps] = None
    normalized: Optional[ParameterMaps] = None
    reference: Optional[DoubleFcaResult] = None
    reference_maps: Optional[ParameterMaps] = None
    classification: Optional[LabelField] = None
    preprocessed: Optional[LabelField] = None
    segmentation: Any = None
    report: Optional[Dict[str, Any]] = None
    artifacts: Dict[str, str] = field(default_factory=dict)


class Pipeline:
    """Runs the stages in order and records every artifact written."""

    def __init__(self, config: PipelineConfig, workers: Optional[WorkerOrchestrator] = None,
                 progress: bool = False):
        self.config = config.validate()
        self.workers = workers or WorkerOrchestrator(config.threads)
        self.progress = progress
        self.state = PipelineState()
        self.out = Path(config.output)

    def run(self) -> PipelineState:
        self.out.mkdir(parents=True, exist_ok=True)
        for stage in STAGES:
            logging.info(f"Stage {stage} started")
            try:
                getattr(self, f"_stage_{stage}")()
            except StageError:
                raise
            except (AtlasError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                logging.error(f"Stage {stage} aborted: {exc}")
                raise StageError(stage, exc) from exc
            logging.info(f"Stage {stage} finished")
            if stage == self.config.stage:
                break
        return self.state

    def _record(self, name: str, path: Path) -> None:
        self.state.artifacts[name] = str(path)

    def _denoise_series(self, img: HyperImage) -> DoubleFcaResult:
        cfg = self.config
        return double_fca(img, cfg.snr_threshold, cfg.k_max, cfg.lag)

    def _stage_denoise(self) -> None:
        img = read_hsr(self.config.input)
        result = self._denoise_series(img)
        self.state.image = img
        self.state.denoise = result
        self._record("denoised", export_image(self.out, "denoised", result.image))
        self._record("residues", write_hsr(self.out / "residues.hsr", residues(img, result.image)))
        snr = {
            "first_pass": {"snr": result.first_report.snr.tolist(), "kept": list(result.first_report.kept),
                           "inertia_fractions": result.first_report.inertia_fractions.tolist()},
            "second_pass": {"snr": result.second_report.snr.tolist(), "kept": list(result.second_report.kept)},
            "epsilon": result.epsilon,
            "hyper_snr": _finite_or_text(hyper_snr(img, result.image)),
        }
        path = self.out / "snr.json"
        path.write_text(json.dumps(snr, indent=2, sort_keys=True))
        self._record("snr", path)

    def _stage_fit(self) -> None:
        maps = fit_parameter_maps(self.state.denoise.image, self.config.j1)
        self.state.maps = maps
        self._record("parameters", export_image(self.out, "parameters", maps.as_image()))

    def _load_reference(self) -> None:
        if self.state.reference is not None or self.config.reference is None:
            return
        reference = read_hsr(self.config.reference)
        if reference.channels != self.state.image.channels:
            raise ConfigurationError(
                f"reference has {reference.channels} channels, input has {self.state.image.channels}"
            )
        logging.info("Processing reference series")
        self.state.reference = self._denoise_series(reference)
        self.state.reference_maps = fit_parameter_maps(self.state.reference.image, self.config.j1)

    def _lda_features(self, space: str, denoised: HyperImage, maps: ParameterMaps) -> np.ndarray:
        if space == "parameters":
            return maps.as_image().table
        return denoised.table

    def _classify_lda(self, normalized: ParameterMaps) -> LabelField:
        cfg = self.config
        mask = read_label_png(cfg.training_mask)
        if self.state.reference is not None:
            train_image, train_maps = self.state.reference.image, self.state.reference_maps
        else:
            train_image, train_maps = self.state.denoise.image, normalized
        if mask.shape != train_image.shape:
            raise ConfigurationError(f"training mask {mask.shape} does not match series {train_image.shape}")
        train_features = self._lda_features(cfg.lda_space, train_image, train_maps)
        query = self._lda_features(cfg.lda_space, self.state.denoise.image, normalized)
        rows, labels = training_rows(mask, train_features, RngStream(cfg.seed, TRAINING_STREAM))
        if cfg.lda_space == "pca":
            pca = TrainingPca().fit(rows)
            rows, query = pca.transform(rows), pca.transform(query)
        names = [CLASS_NAMES[c] if c < len(CLASS_NAMES) else str(c) for c in np.unique(labels)]
        model = lda_fit(rows, labels, names, feature_space=cfg.lda_space)
        predicted = lda_predict(model, query, self.state.image.shape)
        classes = model.class_ids[predicted.labels]
        return LabelField(classes, int(model.class_ids.max()) + 1)

    def _classify_kmeans(self) -> LabelField:
        cfg = self.config
        result = self.state.denoise
        axes = result.second_report.kept or tuple(range(result.second_model.axes))
        if not axes:
            raise ParameterError("second FCA has no factorial axis to cluster on")
        features = factor_image(result.second_model, axes).table
        clusters = kmeans(features, cfg.k, RngStream(cfg.seed, KMEANS_STREAM), shape=self.state.image.shape)
        return clusters.labels

    def _stage_classify(self) -> None:
        cfg = self.config
        self._load_reference()
        maps = self.state.maps
        if cfg.cdf:
            normalized = cdf_normalize_maps(maps, self.state.reference_maps)
            logging.info("Parameter maps normalized against the reference")
        else:
            normalized = maps
        self.state.normalized = normalized
        self._record("normalized", export_image(self.out, "parameters_normalized", normalized.as_image()))

        if cfg.classifier == "lda":
            classification = self._classify_lda(normalized)
        elif cfg.classifier == "kmeans":
            classification = self._classify_kmeans()
        else:
            clusters = self._classify_kmeans()
            models = class_models(self.state.denoise.image, clusters, cfg.j1)
            classification = model_classify(self.state.denoise.image, models, cfg.j1)
        self.state.classification = classification
        path = write_label_png(self.out / "classification.png", classification.labels + 1)
        self._record("classification", path)

    def _stage_segment(self) -> None:
        cfg = self.config
        k_hat = preprocess_classification(self.state.classification)
        self.state.preprocessed = k_hat
        write_label_png(self.out / "classification_preprocessed.png", np.where(
            k_hat.labels == k_hat.void_id, 0, k_hat.labels + 1))
        background = BACKGROUND_CLASS if cfg.classifier == "lda" else None
        germs = replace(cfg.germs, background=background)
        image = self.state.normalized.as_image()
        weights = np.full(image.channels, 1.0 / image.channels)
        mpdf = marginal_pdf(image, weights, k_hat, germs, RngStream(cfg.seed), self.workers, self.progress)
        self._record("mpdf", write_hsr(self.out / "mpdf.hsr", HyperImage(mpdf.values)))
        write_png(self.out / "mpdf.png", mpdf.values)

        gradient = vector_gradient(image, self._metric(image))
        write_png(self.out / "gradient.png", gradient.values)

        relief = mpdf
        if cfg.relief == "probabilistic_gradient":
            relief = probabilistic_gradient(mpdf, gradient)
            self._record("probabilistic_gradient", write_hsr(self.out / "probabilistic_gradient.hsr",
                                                             HyperImage(relief.values)))
            write_png(self.out / "probabilistic_gradient.png", relief.values)
        partition = segment_pdf(relief, cfg.regions)
        self.state.segmentation = partition
        self._record("segmentation", write_hsr(self.out / "segmentation.hsr",
                                               HyperImage(partition.labels.astype(np.float64))))
        write_png(self.out / "segmentation.png", partition.labels)

    def _metric(self, image: HyperImage) -> MetricKind:
        if self.config.metric == "inverse_variance":
            return metric_for_space("parameters", image)
        return MetricKind.parse(self.config.metric, image)

    def _stage_detect(self) -> None:
        cfg = self.config
        partition = self.state.segmentation
        last = self.state.image.cube[:, :, -1]
        stats = region_stats(self.state.normalized, partition, intensity=last)
        floor = background_floor(last) if cfg.suppress_background else None
        stats = detect_regions(stats, cfg.b_threshold, floor)
        maps = confidence_maps(stats, partition)
        write_rgb_png(self.out / "risk_beta_a.png", maps.risk_a)
        write_rgb_png(self.out / "risk_beta_b.png", maps.risk_b)
        write_png(self.out / "beta_a.png", maps.beta_a)
        write_png(self.out / "beta_b.png", maps.beta_b)
        detected = np.flatnonzero(stats.detected)
        detection = np.isin(partition.labels, detected)
        write_label_png(self.out / "detection.png", detection.astype(np.uint8) * 255)
        report = {
            "config": cfg.summary(),
            "regions": stats_report(stats),
            "detected": [int(r) for r in detected],
        }
        self.state.report = report
        path = self.out / "report.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True))
        self._record("report", path)


def _finite_or_text(value: float) -> Any:
    return value if np.isfinite(value) else "inf"


def run_pipeline(config: PipelineConfig, workers: Optional[WorkerOrchestrator] = None,
                 progress: bool = False) -> PipelineState:
    return Pipeline(config, workers, progress).run()


"""
Kinetic Atlas Core Module
=========================
The analysis chain of Kinetic Atlas v1.0 "Nugget"

Modules:
- raster: hyper-images, label fields, deterministic random streams
- morphology: erosion/dilation, reconstruction, levelings, gaussian kernels
- fca: correspondence analysis, SNR axis selection, double reconstruction
- model: slope / intercept / rise maps
- classify: k-means, model classification, LDA, cdf normalization
- gradient: morphological and vector gradients with chi2/Mahalanobis metrics
- watershed: marker and volume-extinction watersheds
- stochastic: regionalized germs and contour probability densities
- detect: region statistics, decision rule, confidence maps
- pipeline: config layering and the staged run
- workers: process pool for realisations

Usage:
    from core import build_config, run_pipeline
    from core.fca import double_fca
"""

from .errors import (
    AtlasError,
    ConfigurationError,
    DataError,
    StageError,
    exit_code_for,
)

from .raster import HyperImage, LabelField, RngStream

from .pipeline import (
    PipelineConfig,
    Pipeline,
    build_config,
    run_pipeline,
    STAGES,
)

from .workers import WorkerOrchestrator

__all__ = [
    # Errors
    'AtlasError',
    'ConfigurationError',
    'DataError',
    'StageError',
    'exit_code_for',

    # Rasters
    'HyperImage',
    'LabelField',
    'RngStream',

    # Pipeline
    'PipelineConfig',
    'Pipeline',
    'build_config',
    'run_pipeline',
    'STAGES',

    # Workers
    'WorkerOrchestrator',
]

__version__ = "1.0.0"
__codename__ = "Nugget"

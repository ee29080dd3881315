"""
Kinetic Atlas v1.0 "Nugget" - Command Line
==========================================
Tumour-candidate detection on dynamic contrast-enhanced time series.

Design Principles:
- One series in, every intermediate out (.hsr + PNG + report.json)
- Deterministic: same config and inputs give byte-identical reports
- Flags override the key=value config file, which overrides defaults
- Exit codes: 0 success, 2 configuration error, 3 data error

Subcommands:
    phantom   write a synthetic series, its ground truth and a training mask
    denoise   double FCA-reconstruction only
    fit       ... then slope / intercept / rise maps
    classify  ... then cdf normalization and classification
    segment   ... then stochastic watershed segmentation
    detect    ... then detection and confidence maps
    run       full chain (same as detect, honours --stage)
"""

import argparse
import logging
import signal
import sys
from pathlib import Path
from typing import List, Optional

from core.errors import AtlasError, ConfigurationError, DataError, exit_code_for
from core.phantom import phantom
from core.pipeline import STAGES, build_config, run_pipeline
from core.series_io import export_image, write_label_png
from core.stochastic import Strategy
from core.workers import WorkerOrchestrator

LOG_FORMAT = '%(asctime)s - ATLAS - %(levelname)s - %(message)s'


class CliArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage errors as configuration errors (exit 2)."""

    def error(self, message):
        raise ConfigurationError(message)


def _add_pipeline_flags(parser: argparse.ArgumentParser, with_stage: bool) -> None:
    parser.add_argument("input", type=Path, help="input series (.hsr)")
    parser.add_argument("-o", "--output", type=Path, help="output directory")
    parser.add_argument("-c", "--config", type=Path, help="key=value configuration file")
    parser.add_argument("--reference", type=Path, help="reference series for cdf normalization")
    parser.add_argument("--training-mask", type=Path, help="PNG mask: 0 unlabelled, 1..4 classes")
    parser.add_argument("--snr-threshold", type=float)
    parser.add_argument("--lag", type=int, help="covariance lag window H")
    parser.add_argument("--k-max", type=int, help="maximum number of factorial axes")
    parser.add_argument("--j1", type=int, help="first channel of the line fit")
    parser.add_argument("--k", type=int, help="k-means class count")
    parser.add_argument("--classifier", choices=["lda", "kmeans", "model"])
    parser.add_argument("--lda-space", choices=["parameters", "image", "pca"])
    parser.add_argument("--metric", choices=["euclidean", "chi_squared", "mahalanobis", "inverse_variance"],
                        help="metric of the vector gradient (gradient.png, probabilistic_gradient relief)")
    parser.add_argument("--relief", choices=["mpdf", "probabilistic_gradient"],
                        help="relief of the volume watershed")
    parser.add_argument("--germs", help="e.g. N=100,M=100,S=2,Rmax=30")
    parser.add_argument("--strategy", choices=[s.value for s in Strategy])
    parser.add_argument("--regions", type=int, help="region count R of the volume watershed")
    parser.add_argument("--b-threshold", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--no-cdf", dest="cdf", action="store_const", const=False, default=None)
    parser.add_argument("--suppress-background", action="store_const", const=True, default=None)
    parser.add_argument("--threads", type=int, help="maximum worker processes")
    if with_stage:
        parser.add_argument("--stage", choices=STAGES, help="stop after this stage")


def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(prog="kinetic-atlas", description="DCE time-series tumour detection")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging and tracebacks")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliArgumentParser)

    ph = commands.add_parser("phantom", help="write a synthetic series")
    ph.add_argument("output", type=Path, help="output directory")
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--width", type=int, default=64)
    ph.add_argument("--height", type=int, default=64)
    ph.add_argument("--channels", type=int, default=128)
    ph.add_argument("--noise-sigma", type=float, default=None, help="default: 10%% of the signal range")
    ph.add_argument("--no-tumour", action="store_true", help="tumour-free scene")

    for stage in STAGES:
        _add_pipeline_flags(commands.add_parser(stage, help=f"run the chain up to {stage}"), with_stage=False)
    _add_pipeline_flags(commands.add_parser("run", help="full chain"), with_stage=True)
    return parser


def cmd_phantom(args) -> int:
    scene = phantom(seed=args.seed, width=args.width, height=args.height, channels=args.channels,
                    noise_sigma=args.noise_sigma, tumour=not args.no_tumour)
    out = Path(args.output)
    export_image(out, "series", scene.image)
    write_label_png(out / "truth.png", scene.training_mask())
    write_label_png(out / "tumour_mask.png", scene.mask(0).astype("uint8") * 255)
    logging.info(f"Phantom seed {args.seed} written to {out} (noise sigma {scene.noise_sigma:.4g})")
    return 0


PIPELINE_FLAGS = (
    "output", "reference", "training_mask", "snr_threshold", "lag", "k_max", "j1", "k", "classifier",
    "lda_space", "metric", "relief", "germs", "strategy", "regions", "b_threshold", "seed", "cdf",
    "suppress_background", "threads",
)


def cmd_pipeline(args) -> int:
    flags = {name: getattr(args, name, None) for name in PIPELINE_FLAGS}
    flags["input"] = args.input
    flags["stage"] = getattr(args, "stage", None) or (args.command if args.command != "run" else None)
    config = build_config(args.config, **flags)
    workers = WorkerOrchestrator(config.threads)
    state = run_pipeline(config, workers, progress=not args.quiet)
    for name, path in sorted(state.artifacts.items()):
        logging.info(f"  {name}: {path}")
    if state.report is not None:
        logging.info(f"Detected regions: {state.report['detected']}")
    return 0


def _handle_interrupt(signum, frame):
    logging.warning(f"Received signal {signum}, stopping")
    sys.exit(130)


def main(argv: Optional[List[str]] = None) -> int:
    signal.signal(signal.SIGINT, _handle_interrupt)
    signal.signal(signal.SIGTERM, _handle_interrupt)
    verbose = argv is not None and ("-v" in argv or "--verbose" in argv)
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        verbose = args.verbose
        level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        logging.basicConfig(level=level, format=LOG_FORMAT)
        logging.getLogger().setLevel(level)
        if args.command == "phantom":
            return cmd_phantom(args)
        return cmd_pipeline(args)
    except (AtlasError, OSError) as error:
        if isinstance(error, OSError):
            error = DataError(str(error))
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logging.error(str(error), exc_info=verbose)
        return exit_code_for(error)


if __name__ == '__main__':
    sys.exit(main())

"""
Kinetic Atlas Phantom
=====================
Deterministic synthetic series with known ground truth.

Zones and kinetics (channel index j = 1..L):
- background: flat 400
- lung: flat 250
- heart: sharp early bolus peak on a slowly washing-out plateau
- tumour: ring 950 + 4j around a hypoxic core 850 + 3j (both exact ramps)

Gaussian noise is added per pixel and channel, then values are clipped at
zero so the series stays a valid correspondence table.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError
from .raster import HyperImage, LabelField, RngStream

TUMOUR, HEART, BACKGROUND, LUNG = 0, 1, 2, 3
ZONES = ("tumour", "heart", "background", "lung")

MIN_SIZE = 16
MIN_CHANNELS = 32
NOISE_FRACTION = 0.10

BACKGROUND_LEVEL = 400.0
LUNG_LEVEL = 250.0
RING_BASE, RING_SLOPE = 950.0, 4.0
CORE_BASE, CORE_SLOPE = 850.0, 3.0
HEART_BASE, HEART_SLOPE = 1100.0, -0.5
HEART_PEAK, HEART_PEAK_AT, HEART_PEAK_WIDTH = 300.0, 8.0, 3.0


@dataclass(frozen=True)
class Phantom:
    image: HyperImage
    clean: HyperImage
    truth: LabelField
    noise_sigma: float
    seed: int

    def mask(self, zone: int) -> np.ndarray:
        return self.truth.mask(zone)

    def training_mask(self) -> np.ndarray:
        """Ground truth as a mask file expects it: 1..4, no unlabelled pixel."""
        return self.truth.labels + 1


def zone_spectra(channels: int) -> dict:
    """Noise-free spectrum of every zone."""
    j = np.arange(1, channels + 1, dtype=np.float64)
    bolus = HEART_PEAK * np.exp(-(((j - HEART_PEAK_AT) / HEART_PEAK_WIDTH) ** 2))
    return {
        "background": np.full(channels, BACKGROUND_LEVEL),
        "lung": np.full(channels, LUNG_LEVEL),
        "heart": HEART_BASE + HEART_SLOPE * j + bolus,
        "ring": RING_BASE + RING_SLOPE * j,
        "core": CORE_BASE + CORE_SLOPE * j,
    }


def _layout(height: int, width: int, tumour: bool):
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    size = min(height, width)
    zones = np.full((height, width), BACKGROUND, dtype=np.int64)

    lung = ((yy - 0.35 * height) / (0.18 * height)) ** 2 + ((xx - 0.27 * width) / (0.12 * width)) ** 2 <= 1.0
    zones[lung] = LUNG
    heart = np.hypot(yy - 0.30 * height, xx - 0.65 * width) <= 0.12 * size
    zones[heart] = HEART

    core = np.zeros_like(heart)
    if tumour:
        dist = np.hypot(yy - 0.68 * height, xx - 0.62 * width)
        radius = 0.16 * size
        zones[dist <= radius] = TUMOUR
        core = dist <= 0.55 * radius
    return zones, core


def phantom(seed: int = 0, width: int = 64, height: int = 64, channels: int = 128,
            noise_sigma: Optional[float] = None, tumour: bool = True) -> Phantom:
    """
    Build a phantom series.

    noise_sigma defaults to 10% of the noise-free signal range.
    """
    if width < MIN_SIZE or height < MIN_SIZE or channels < MIN_CHANNELS:
        raise ParameterError(
            f"phantom needs at least {MIN_SIZE}x{MIN_SIZE}x{MIN_CHANNELS}, got {width}x{height}x{channels}"
        )
    zones, core = _layout(height, width, tumour)
    spectra = zone_spectra(channels)
    cube = np.empty((height, width, channels))
    cube[zones == BACKGROUND] = spectra["background"]
    cube[zones == LUNG] = spectra["lung"]
    cube[zones == HEART] = spectra["heart"]
    cube[(zones == TUMOUR) & ~core] = spectra["ring"]
    cube[(zones == TUMOUR) & core] = spectra["core"]
    clean = HyperImage(cube)

    if noise_sigma is None:
        noise_sigma = NOISE_FRACTION * float(np.ptp(cube))
    if noise_sigma < 0:
        raise ParameterError(f"noise sigma must be non-negative, got {noise_sigma}")
    noisy = cube
    if noise_sigma > 0:
        generator = RngStream(seed).generator()
        noisy = np.maximum(cube + generator.normal(0.0, noise_sigma, size=cube.shape), 0.0)
    return Phantom(
        image=HyperImage(noisy),
        clean=clean,
        truth=LabelField(zones, len(ZONES)),
        noise_sigma=float(noise_sigma),
        seed=seed,
    )

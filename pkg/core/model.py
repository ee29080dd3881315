"""
Kinetic Atlas Spectrum Model
============================
Per-pixel line model of the post-transitory spectrum plus the rise of the
transitory phase. The abscissa is the 1-based channel index.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ParameterError
from .raster import HyperImage

DEFAULT_J1 = 21


@dataclass(frozen=True)
class ParameterMaps:
    """Slope a, intercept b and rise m maps, sharing the image grid."""
    a: np.ndarray
    b: np.ndarray
    m: np.ndarray
    j1: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.a.shape

    def as_image(self) -> HyperImage:
        """Parameters as a three-channel image (a, b, m)."""
        return HyperImage.from_channels([self.a, self.b, self.m])

    @classmethod
    def from_image(cls, img: HyperImage, j1: int) -> "ParameterMaps":
        if img.channels != 3:
            raise ParameterError(f"parameter image needs 3 channels, got {img.channels}")
        return cls(a=img.cube[:, :, 0].copy(), b=img.cube[:, :, 1].copy(), m=img.cube[:, :, 2].copy(), j1=j1)


def check_j1(j1: int, channels: int) -> None:
    if not 2 <= j1 <= channels - 1:
        raise ParameterError(f"j1 = {j1} outside 2..{channels - 1}")


def fit_lines(spectra: np.ndarray, j1: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    OLS line through (j, spectra[..., j-1]) for j = j1..L.

    Works on any array whose last axis is the channel axis.
    """
    spectra = np.asarray(spectra, dtype=np.float64)
    channels = spectra.shape[-1]
    check_j1(j1, channels)
    lam = np.arange(j1, channels + 1, dtype=np.float64)
    y = spectra[..., j1 - 1:]
    lam_c = lam - lam.mean()
    slope = (y - y.mean(axis=-1, keepdims=True)) @ lam_c / np.dot(lam_c, lam_c)
    intercept = y.mean(axis=-1) - slope * lam.mean()
    return slope, intercept


def rise(spectra: np.ndarray, j1: int) -> np.ndarray:
    """max − min over the first j1 − 1 samples."""
    head = np.asarray(spectra, dtype=np.float64)[..., : j1 - 1]
    return head.max(axis=-1) - head.min(axis=-1)


def fit_parameter_maps(img: HyperImage, j1: int = DEFAULT_J1) -> ParameterMaps:
    check_j1(j1, img.channels)
    a, b = fit_lines(img.cube, j1)
    m = rise(img.cube, j1)
    logging.info(f"Parameter maps fitted on channels {j1}..{img.channels}")
    return ParameterMaps(a=a, b=b, m=m, j1=j1)

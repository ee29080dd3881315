"""
Kinetic Atlas Raster Types
==========================
Shared domain types for every stage of the chain.

- HyperImage: P-pixel, L-channel raster (the time series, one channel per
  acquisition time). Stored as a float64 cube of shape (height, width, L).
- LabelField: integer label per pixel with an optional void label.
- RngStream: seeded, platform-stable random substreams.

All three are immutable once built: arrays are copied and frozen.
Pixel indexing is row-major from the top-left corner. The public
channel/pixel accessors are 1-based, matching the series notation.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, ParameterError

# 4-connectivity used for every component labeling in the package
CROSS = ndimage.generate_binary_structure(2, 1)


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class HyperImage:
    """Multichannel raster, values indexed by (pixel, channel)."""
    cube: np.ndarray

    def __post_init__(self):
        cube = np.asarray(self.cube)
        if cube.ndim == 2:
            cube = cube[:, :, np.newaxis]
        if cube.ndim != 3:
            raise DimensionMismatchError(f"expected a (height, width, channels) cube, got shape {cube.shape}")
        if min(cube.shape) < 1:
            raise DimensionMismatchError(f"empty image of shape {cube.shape}")
        object.__setattr__(self, "cube", _frozen(cube, np.float64))

    @classmethod
    def from_table(cls, table: np.ndarray, width: int, height: int) -> "HyperImage":
        """Build from a P×L table whose rows are row-major pixels."""
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2 or table.shape[0] != width * height:
            raise DimensionMismatchError(
                f"table of shape {table.shape} does not fit a {width}x{height} raster"
            )
        return cls(table.reshape(height, width, table.shape[1]))

    @classmethod
    def from_channels(cls, channels) -> "HyperImage":
        """Stack a sequence of equally-shaped 2-D channels."""
        stack = [np.asarray(ch, dtype=np.float64) for ch in channels]
        if not stack:
            raise DimensionMismatchError("no channels given")
        shapes = {ch.shape for ch in stack}
        if len(shapes) != 1:
            raise DimensionMismatchError(f"channels differ in shape: {sorted(shapes)}")
        return cls(np.stack(stack, axis=-1))

    @property
    def height(self) -> int:
        return self.cube.shape[0]

    @property
    def width(self) -> int:
        return self.cube.shape[1]

    @property
    def channels(self) -> int:
        return self.cube.shape[2]

    @property
    def pixels(self) -> int:
        return self.height * self.width

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def table(self) -> np.ndarray:
        """P×L view of the data (rows are pixels)."""
        return self.cube.reshape(self.pixels, self.channels)

    def same_dims(self, other: "HyperImage") -> bool:
        return self.cube.shape == other.cube.shape

    def map_channels(self, func) -> "HyperImage":
        """Apply a raster -> raster function to every channel."""
        return HyperImage.from_channels(func(self.cube[:, :, j]) for j in range(self.channels))


def channel_view(img: HyperImage, j: int) -> np.ndarray:
    """The j-th channel (1-based) as a 2-D raster."""
    if not 1 <= j <= img.channels:
        raise IndexError(f"channel {j} outside 1..{img.channels}")
    return img.cube[:, :, j - 1]


def spectrum_view(img: HyperImage, i: int) -> np.ndarray:
    """The vector pixel i (1-based, row-major) as a length-L array."""
    if not 1 <= i <= img.pixels:
        raise IndexError(f"pixel {i} outside 1..{img.pixels}")
    row, col = divmod(i - 1, img.width)
    return img.cube[row, col, :]


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = "rasters") -> None:
    if np.shape(a) != np.shape(b):
        raise DimensionMismatchError(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")


@dataclass(frozen=True)
class LabelField:
    """Integer label per pixel, labels in [0, num_classes) or void_id."""
    labels: np.ndarray
    num_classes: int
    void_id: Optional[int] = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimensionMismatchError(f"label field must be 2-D, got shape {labels.shape}")
        if self.num_classes < 0:
            raise ParameterError("num_classes must be non-negative")
        labels = _frozen(labels, np.int64)
        valid = (labels >= 0) & (labels < self.num_classes)
        if self.void_id is not None:
            if 0 <= self.void_id < self.num_classes:
                raise ParameterError(f"void id {self.void_id} collides with a class id")
            valid |= labels == self.void_id
        if not valid.all():
            bad = labels[~valid][0]
            raise ParameterError(f"label {bad} outside [0, {self.num_classes}) and not void")
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def mask(self, label: int) -> np.ndarray:
        return self.labels == label

    def present_classes(self) -> np.ndarray:
        counts = self.counts()
        return np.flatnonzero(counts > 0)

    def counts(self) -> np.ndarray:
        """Pixel count of each class id 0..num_classes-1 (void excluded)."""
        flat = self.labels.ravel()
        flat = flat[(flat >= 0) & (flat < self.num_classes)]
        return np.bincount(flat, minlength=self.num_classes)

    def components(self, label: int) -> Tuple[np.ndarray, int]:
        """4-connected components of one label: (component raster, count)."""
        comps, count = ndimage.label(self.mask(label), structure=CROSS)
        return comps, int(count)


@dataclass(frozen=True)
class RngStream:
    """
    Deterministic random substream.

    The generator is Philox (counter-based) keyed by a SeedSequence whose
    spawn key is the stream id, so a (seed, stream_id) pair yields the same
    draws on every platform and in every worker.
    """
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ParameterError("seed and stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this substream."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(sequence))

    def substream(self, channel: int, realisation: int) -> "RngStream":
        """Substream for (channel, realisation), independent of scheduling."""
        return RngStream(self.seed, (channel << 32) | realisation)

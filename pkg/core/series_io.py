"""
Kinetic Atlas Series I/O
========================
.hsr series container, PNG label masks and PNG renders.

.hsr layout (little-endian):
- bytes 0-3   magic "HSR1"
- bytes 4-15  u32 width, height, channels
- bytes 16-19 u32 dtype tag (1 = float32)
- bytes 20-31 reserved, zero
- payload     float32, channel-major, each channel row-major
"""

import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image

from .errors import DataError
from .raster import HyperImage

MAGIC = b"HSR1"
HEADER = struct.Struct("<4sIIII12s")
DTYPE_FLOAT32 = 1

PathLike = Union[str, Path]


def write_hsr(path: PathLike, img: HyperImage) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = HEADER.pack(MAGIC, img.width, img.height, img.channels, DTYPE_FLOAT32, b"\0" * 12)
    payload = np.ascontiguousarray(np.transpose(img.cube, (2, 0, 1)), dtype="<f4")
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(payload.tobytes())
    return path


def read_hsr(path: PathLike) -> HyperImage:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read series {path}: {exc}")
    if len(raw) < HEADER.size:
        raise DataError(f"{path} is shorter than an .hsr header")
    magic, width, height, channels, dtype, _ = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path} is not an .hsr series (magic {magic!r})")
    if dtype != DTYPE_FLOAT32:
        raise DataError(f"{path} uses unsupported dtype tag {dtype}")
    if min(width, height, channels) < 1:
        raise DataError(f"{path} declares an empty raster {width}x{height}x{channels}")
    expected = width * height * channels * 4
    if len(raw) - HEADER.size != expected:
        raise DataError(f"{path} payload is {len(raw) - HEADER.size} bytes, expected {expected}")
    payload = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(channels, height, width)
    return HyperImage(np.transpose(payload, (1, 2, 0)).astype(np.float64))


def scale_to_uint8(raster: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Linear min-max scaling to 0..255; a constant raster maps to 0."""
    raster = np.asarray(raster, dtype=np.float64)
    finite = raster[np.isfinite(raster)]
    low = float(finite.min()) if finite.size else 0.0
    high = float(finite.max()) if finite.size else 0.0
    if high == low:
        return np.zeros(raster.shape, dtype=np.uint8), low, high
    clean = np.nan_to_num(raster, nan=low, posinf=high, neginf=low)
    scaled = (clean - low) / (high - low) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8), low, high


def write_png(path: PathLike, raster: np.ndarray) -> Path:
    """Grey PNG of a scalar raster plus a '<name>.png.txt' sidecar with the bounds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels, low, high = scale_to_uint8(raster)
    Image.fromarray(pixels, mode="L").save(path)
    sidecar = path.with_name(path.name + ".txt")
    sidecar.write_text(f"min={low!r}\nmax={high!r}\n")
    return path


def write_rgb_png(path: PathLike, rgb: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)
    return path


def write_label_png(path: PathLike, labels: np.ndarray) -> Path:
    """8-bit PNG holding the label values themselves (no scaling)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise DataError("label PNG needs labels in 0..255")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)
    return path


def read_label_png(path: PathLike) -> np.ndarray:
    """Label mask from an indexed or grey PNG (0 = unlabelled)."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            if image.mode not in ("L", "P", "I", "I;16"):
                raise DataError(f"{path} is a {image.mode} image, expected an indexed or grey mask")
            labels = np.array(image, dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}")
    logging.debug(f"Mask {path.name}: classes {sorted(set(np.unique(labels).tolist()))}")
    return labels


def export_image(directory: PathLike, stem: str, img: HyperImage) -> Path:
    """Write a series as .hsr plus one PNG per channel."""
    directory = Path(directory)
    path = write_hsr(directory / f"{stem}.hsr", img)
    for j in range(img.channels):
        write_png(directory / "png" / f"{stem}_{j + 1:03d}.png", img.cube[:, :, j])
    return path

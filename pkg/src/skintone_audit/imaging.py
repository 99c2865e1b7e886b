"""Color conversion, YCrCb skin detection and skin histograms.

Images are thin immutable wrappers around ``(height, width, 3)`` uint8
arrays. RGB <-> YCrCb uses the full-range BT.601 matrices with an offset of
128 on the chroma channels; results are rounded half-up and clipped, so the
conversion is bit-reproducible on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import EmptyCrop, EmptyMask, NoSkinPixels

N_LEVELS = 256

# Rows produce (Y, Cr, Cb) from (R, G, B); chroma rows get +128 afterwards.
RGB_TO_YCRCB = np.array(
    [
        [0.299, 0.587, 0.114],
        [0.5, -0.418688, -0.081312],
        [-0.168736, -0.331264, 0.5],
    ]
)


def _round_clip(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def _frozen_pixels(pixels, name: str) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} pixels must have shape (height, width, 3), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must have at least one pixel")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"{name} pixels must be integers, got {arr.dtype}")
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError(f"{name} channel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    else:
        arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RasterImage:
    """An 8-bit RGB image, row-major, shape ``(height, width, 3)``."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _frozen_pixels(self.pixels, "RasterImage"))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, RasterImage) and np.array_equal(self.pixels, other.pixels)

    @classmethod
    def open(cls, path) -> "RasterImage":
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("RGB")))

    def save(self, path) -> None:
        Image.fromarray(np.asarray(self.pixels)).save(path)


@dataclass(frozen=True, eq=False)
class YCrCbImage:
    """Pixels stored as ``(Y, Cr, Cb)`` triples, each in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _frozen_pixels(self.pixels, "YCrCbImage"))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def y(self) -> np.ndarray:
        return self.pixels[:, :, 0]

    @property
    def cr(self) -> np.ndarray:
        return self.pixels[:, :, 1]

    @property
    def cb(self) -> np.ndarray:
        return self.pixels[:, :, 2]

    def with_luminance(self, y: np.ndarray) -> "YCrCbImage":
        out = self.pixels.copy()
        out[:, :, 0] = y
        return YCrCbImage(out)

    def __eq__(self, other):
        return isinstance(other, YCrCbImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class SkinRule:
    """Inclusive chroma box; a pixel is skin iff Cr and Cb both fall inside."""

    cr_min: int = 90
    cr_max: int = 115
    cb_min: int = 140
    cb_max: int = 195

    def __post_init__(self):
        for name in ("cr_min", "cr_max", "cb_min", "cb_max"):
            value = getattr(self, name)
            if not 0 <= value <= 255:
                raise ValueError(f"{name}={value} outside [0, 255]")
        if self.cr_min > self.cr_max or self.cb_min > self.cb_max:
            raise ValueError("rule minimum exceeds maximum")

    def contains(self, cr, cb):
        cr = np.asarray(cr)
        cb = np.asarray(cb)
        return (
            (cr >= self.cr_min) & (cr <= self.cr_max) & (cb >= self.cb_min) & (cb <= self.cb_max)
        )


DEFAULT_RULE = SkinRule()


@dataclass(frozen=True, eq=False)
class SkinMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool).copy()
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return isinstance(other, SkinMask) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True, eq=False)
class LuminanceHistogram:
    """Counts of skin pixels per luminance level 0..255."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (N_LEVELS,):
            raise ValueError(f"histogram needs {N_LEVELS} bins, got shape {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.round(counts)):
                raise ValueError("histogram counts must be integers")
        counts = counts.astype(np.int64)
        if counts.min() < 0:
            raise ValueError("histogram counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros(N_LEVELS)
        return self.counts / self.total

    def mean(self) -> float:
        return float(np.dot(np.arange(N_LEVELS), self.counts) / self.total)

    def __add__(self, other: "LuminanceHistogram") -> "LuminanceHistogram":
        return LuminanceHistogram(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, LuminanceHistogram) and np.array_equal(self.counts, other.counts)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "LuminanceHistogram":
        counts = np.zeros(N_LEVELS, dtype=np.int64)
        for level, n in mapping.items():
            counts[level] = n
        return cls(counts)


@dataclass(frozen=True, eq=False)
class ChromaHistogram:
    cr_counts: np.ndarray
    cb_counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.cr_counts.sum())


@dataclass(frozen=True)
class CropBox:
    """Face box as ``(x, y, w, h)`` with ``(x, y)`` the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"crop box needs positive size, got {self.w}x{self.h}")


def rgb_to_ycrcb(img: RasterImage) -> YCrCbImage:
    rgb = img.pixels.astype(np.float64)
    out = rgb @ RGB_TO_YCRCB.T
    out[:, :, 1:] += 128.0
    return YCrCbImage(_round_clip(out))


def ycrcb_to_rgb(img: YCrCbImage) -> RasterImage:
    p = img.pixels.astype(np.float64)
    y, cr, cb = p[:, :, 0], p[:, :, 1] - 128.0, p[:, :, 2] - 128.0
    rgb = np.stack(
        [
            y + 1.402 * cr,
            y - 0.344136 * cb - 0.714136 * cr,
            y + 1.772 * cb,
        ],
        axis=-1,
    )
    return RasterImage(_round_clip(rgb))


def detect_skin(img: YCrCbImage, rule: SkinRule = DEFAULT_RULE) -> SkinMask:
    return SkinMask(rule.contains(img.cr, img.cb))


def _check_mask(img: YCrCbImage, mask: SkinMask) -> None:
    if mask.bits.shape != (img.height, img.width):
        raise ValueError(
            f"mask shape {mask.bits.shape} does not match image {(img.height, img.width)}"
        )


def skin_luminance_histogram(img: YCrCbImage, mask: SkinMask) -> LuminanceHistogram:
    """Histogram of Y over the masked pixels.

    Raises EmptyMask when the mask selects nothing; callers deciding to skip
    such images should catch it.
    """
    _check_mask(img, mask)
    if mask.count == 0:
        raise EmptyMask("no skin pixels in mask")
    return LuminanceHistogram(np.bincount(img.y[mask.bits], minlength=N_LEVELS))


def chroma_histograms(images: Sequence[tuple[YCrCbImage, SkinMask]]) -> ChromaHistogram:
    if not images:
        raise ValueError("chroma_histograms needs at least one image")
    cr = np.zeros(N_LEVELS, dtype=np.int64)
    cb = np.zeros(N_LEVELS, dtype=np.int64)
    for img, mask in images:
        _check_mask(img, mask)
        cr += np.bincount(img.cr[mask.bits], minlength=N_LEVELS)
        cb += np.bincount(img.cb[mask.bits], minlength=N_LEVELS)
    if cr.sum() == 0:
        raise NoSkinPixels("every mask is empty")
    return ChromaHistogram(cr, cb)


def crop_face(img: RasterImage, box: CropBox, pad_fraction: float = 0.0) -> RasterImage:
    """Cut out ``box`` grown by ``pad_fraction`` of its size on every side.

    The padded box is floored/ceiled to whole pixels and clipped to the image.
    """
    if pad_fraction < 0:
        raise ValueError("pad_fraction must be >= 0")
    pad_x = pad_fraction * box.w
    pad_y = pad_fraction * box.h
    x0 = max(0, math.floor(box.x - pad_x))
    y0 = max(0, math.floor(box.y - pad_y))
    x1 = min(img.width, math.ceil(box.x + box.w + pad_x))
    y1 = min(img.height, math.ceil(box.y + box.h + pad_y))
    if x1 <= x0 or y1 <= y0:
        raise EmptyCrop(f"box {box} with padding {pad_fraction} misses the {img.width}x{img.height} image")
    return RasterImage(img.pixels[y0:y1, x0:x1])


def write_histogram(path, counts: Iterable[int]) -> None:
    """Two-column text: value, count (one line per level)."""
    lines = [f"{value} {int(n)}" for value, n in enumerate(counts)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_histogram(path) -> np.ndarray:
    data = np.loadtxt(path, dtype=np.int64, ndmin=2)
    counts = np.zeros(N_LEVELS, dtype=np.int64)
    counts[data[:, 0]] = data[:, 1]
    return counts

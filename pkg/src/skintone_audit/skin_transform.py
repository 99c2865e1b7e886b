"""Skin-tone changes in YCrCb: luminance mode shift and 1-D optimal transport.

Both transforms only touch the Y channel. The transport variant solves the
quadratic-cost problem on the line exactly: the optimal coupling between two
1-D distributions is the monotone (quantile-matching) one, built here with
the north-west corner rule over the 256 luminance bins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Literal, Mapping, Sequence

import numpy as np

from .errors import EmptyEnsemble, EmptyHistogram, EmptyMask, MapMismatch
from .imaging import (
    N_LEVELS,
    LuminanceHistogram,
    SkinMask,
    YCrCbImage,
    skin_luminance_histogram,
)

log = logging.getLogger(__name__)

Direction = Literal["lighten", "darken"]
Method = Literal["mode-shift", "ot"]
Scope = Literal["whole-image", "skin-only"]

GRID_STEP = 10
GRID_LOW = 10
GRID_HIGH = 245


@dataclass(frozen=True)
class ModeShiftSpec:
    target_mode: int
    scope: Scope = "whole-image"

    def __post_init__(self):
        if not 0 <= self.target_mode <= 255:
            raise ValueError(f"target_mode {self.target_mode} outside [0, 255]")
        if self.scope not in ("whole-image", "skin-only"):
            raise ValueError(f"unknown scope {self.scope!r}")


@dataclass(frozen=True, eq=False)
class MonotoneMap:
    """Discrete monotone transport plan between two luminance histograms.

    ``splits[y]`` lists ``(count, target)`` pairs in ascending target order;
    bins with a single target hold one pair and empty bins hold none.
    ``map[y]`` is the lowest target of bin ``y`` (forward-filled across
    empty bins so the array stays nondecreasing).
    """

    source: LuminanceHistogram
    target_counts: np.ndarray
    map: np.ndarray
    splits: tuple

    @property
    def fractional_splits(self) -> dict[int, list[tuple[int, int]]]:
        return {y: list(pairs) for y, pairs in enumerate(self.splits) if len(pairs) > 1}


@dataclass(frozen=True)
class EnsembleMember:
    image: YCrCbImage
    label: str
    target_mode: int | None = None
    palette_id: str | None = None
    delta: int | None = None


@dataclass(frozen=True)
class TransformEnsemble:
    direction: Direction
    method: Method
    members: tuple[EnsembleMember, ...]


@dataclass
class EnsembleConfig:
    step: int = GRID_STEP
    low: int = GRID_LOW
    high: int = GRID_HIGH
    scope: Scope = "whole-image"
    palettes: Mapping[str, "LuminanceHistogram | np.ndarray"] = field(default_factory=dict)


def luminance_mode(hist: LuminanceHistogram) -> int:
    """Most frequent Y level; ties go to the darkest level."""
    if hist.total == 0:
        raise EmptyHistogram("mode of an empty histogram")
    return int(np.argmax(hist.counts))


def mode_shift(img: YCrCbImage, mask: SkinMask, spec: ModeShiftSpec) -> YCrCbImage:
    """Add ``target_mode - old_mode`` to Y and clip to [0, 255]."""
    if mask.count == 0:
        raise EmptyMask("mode shift needs at least one skin pixel")
    old_mode = luminance_mode(skin_luminance_histogram(img, mask))
    delta = spec.target_mode - old_mode
    y = img.y.astype(np.int64)
    shifted = np.clip(y + delta, 0, 255)
    if spec.scope == "skin-only":
        shifted = np.where(mask.bits, shifted, y)
    return img.with_luminance(shifted.astype(np.uint8))


def round_to_total(masses, total: int) -> np.ndarray:
    """Scale ``masses`` to sum to ``total`` with largest-remainder rounding.

    Arithmetic is exact (floats are converted to Fractions), so the result
    is reproducible. Remainder ties go to the lower bin.
    """
    masses = [Fraction(m) if not isinstance(m, float) else Fraction.from_float(m) for m in masses]
    if any(m < 0 for m in masses):
        raise ValueError("masses must be nonnegative")
    mass_total = sum(masses)
    if mass_total == 0:
        raise EmptyHistogram("target has no mass")
    quotas = [m * total / mass_total for m in masses]
    floors = [q.numerator // q.denominator for q in quotas]
    short = total - sum(floors)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:short]:
        floors[i] += 1
    return np.array(floors, dtype=np.int64)


def transport_map(source: LuminanceHistogram, target) -> MonotoneMap:
    """Monotone coupling of ``source`` onto ``target``.

    ``target`` may be a LuminanceHistogram or any 256 nonnegative masses; it
    is normalized and rescaled to ``source.total`` pixels first.
    """
    if source.total == 0:
        raise EmptyHistogram("source histogram is empty")
    masses = target.counts if isinstance(target, LuminanceHistogram) else np.asarray(target)
    if len(masses) != N_LEVELS:
        raise ValueError(f"target needs {N_LEVELS} bins")
    if np.sum(masses) <= 0:
        raise EmptyHistogram("target histogram is empty")
    target_counts = round_to_total(list(masses.tolist()), source.total)

    splits: list[tuple] = []
    remaining = target_counts.copy()
    t = 0
    for y in range(N_LEVELS):
        need = int(source.counts[y])
        pairs = []
        while need > 0:
            while remaining[t] == 0:
                t += 1
            take = min(need, int(remaining[t]))
            pairs.append((take, t))
            remaining[t] -= take
            need -= take
        splits.append(tuple(pairs))

    lowest = np.empty(N_LEVELS, dtype=np.int64)
    first = next(pairs[0][1] for pairs in splits if pairs)
    current = first
    for y, pairs in enumerate(splits):
        if pairs:
            current = pairs[0][1]
        lowest[y] = current
    target_counts.setflags(write=False)
    lowest.setflags(write=False)
    return MonotoneMap(source, target_counts, lowest, tuple(splits))


def apply_transport(img: YCrCbImage, mask: SkinMask, plan: MonotoneMap) -> YCrCbImage:
    """Replace skin-pixel luminance according to ``plan``.

    Inside a split bin, pixels are handed to targets in ascending order by
    row-major index. All pixels in a bin share one Y value, so this order is
    cost-neutral.
    """
    hist = skin_luminance_histogram(img, mask)
    if hist != plan.source:
        raise MapMismatch("map was not built from this image's skin histogram")
    flat_y = img.y.reshape(-1)
    flat_mask = mask.bits.reshape(-1)
    new_y = flat_y.copy()
    skin_idx = np.flatnonzero(flat_mask)
    skin_y = flat_y[skin_idx]
    for level in np.unique(skin_y):
        idx = skin_idx[skin_y == level]  # ascending row-major
        values = np.concatenate([np.full(n, target) for n, target in plan.splits[level]])
        new_y[idx] = values
    return img.with_luminance(new_y.reshape(img.y.shape).astype(np.uint8))


def mode_grid(old_mode: int, direction: Direction, step: int = GRID_STEP,
              low: int = GRID_LOW, high: int = GRID_HIGH) -> list[int]:
    """Target modes ``old_mode +/- k*step`` inside ``[low, high]``.

    When the next step would overshoot the bound and the bound itself lies
    strictly beyond ``old_mode``, the bound is appended as a final member.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    sign = 1 if direction == "lighten" else -1
    bound = high if sign > 0 else low
    targets = []
    t = old_mode + sign * step
    while low <= t <= high:
        targets.append(t)
        t += sign * step
    last = targets[-1] if targets else old_mode
    if (bound - last) * sign > 0:
        targets.append(bound)
    return targets


def build_ensemble(img: YCrCbImage, mask: SkinMask, direction: Direction, method: Method,
                   config: EnsembleConfig | None = None) -> TransformEnsemble:
    config = config or EnsembleConfig()
    if direction not in ("lighten", "darken"):
        raise ValueError(f"unknown direction {direction!r}")
    hist = skin_luminance_histogram(img, mask)
    members = []
    if method == "mode-shift":
        old = luminance_mode(hist)
        for target in mode_grid(old, direction, config.step, config.low, config.high):
            spec = ModeShiftSpec(target, config.scope)
            members.append(
                EnsembleMember(mode_shift(img, mask, spec), f"mode={target}",
                               target_mode=target, delta=target - old)
            )
    elif method == "ot":
        skin_mean = hist.mean()
        for pid in sorted(config.palettes):
            palette = config.palettes[pid]
            palette_mean = palette_mean_luminance(palette)
            lighter = palette_mean > skin_mean
            darker = palette_mean < skin_mean
            if (direction == "lighten" and lighter) or (direction == "darken" and darker):
                plan = transport_map(hist, palette)
                members.append(
                    EnsembleMember(apply_transport(img, mask, plan), f"palette={pid}",
                                   palette_id=pid)
                )
    else:
        raise ValueError(f"unknown method {method!r}")
    if not members:
        raise EmptyEnsemble(f"no {method} target {direction}s this image")
    return TransformEnsemble(direction, method, tuple(members))


def palette_mean_luminance(palette) -> float:
    masses = np.asarray(palette.counts if isinstance(palette, LuminanceHistogram) else palette,
                        dtype=np.float64)
    return float(np.dot(np.arange(N_LEVELS), masses) / masses.sum())


def load_palette(path) -> np.ndarray:
    """Read 256 whitespace-separated nonnegative masses."""
    values = np.array(Path(path).read_text().split(), dtype=np.float64)
    if values.shape != (N_LEVELS,):
        raise ValueError(f"{path}: expected {N_LEVELS} values, got {values.size}")
    if values.min() < 0 or values.sum() <= 0:
        raise ValueError(f"{path}: masses must be nonnegative with positive sum")
    return values


def save_palette(path, masses: Sequence[float]) -> None:
    masses = np.asarray(masses, dtype=np.float64)
    Path(path).write_text("\n".join(f"{m:.10g}" for m in masses) + "\n")


def load_palette_dir(directory) -> dict[str, np.ndarray]:
    paths = sorted(Path(directory).glob("*.txt"))
    if not paths:
        raise FileNotFoundError(f"no palette files (*.txt) in {directory}")
    return {p.stem: load_palette(p) for p in paths}


def default_palette_dir() -> Path:
    return Path(__file__).with_name("palettes")

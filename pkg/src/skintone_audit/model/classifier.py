"""Classifier abstraction: anything that maps an RGB image to a male score."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from PIL import Image

from ..errors import InputShape
from ..imaging import RasterImage, rgb_to_ycrcb
from .net import CompactNet

THRESHOLD = 0.5


@dataclass(frozen=True)
class GenderScore:
    """Probability that the face is male. ``s <= 0.5`` is a female decision."""

    s: float

    def __post_init__(self):
        if not (0.0 <= self.s <= 1.0):
            raise ValueError(f"score {self.s} outside [0, 1]")

    @property
    def is_male(self) -> bool:
        return self.s > THRESHOLD

    @property
    def decision(self) -> str:
        return "male" if self.is_male else "female"


@runtime_checkable
class Classifier(Protocol):
    def score(self, img: RasterImage) -> float: ...


@dataclass(frozen=True)
class Preprocessor:
    """Resize to ``side x side`` (bilinear) and scale pixel values to [0, 1].

    ``channels=1`` feeds the luminance plane only.
    """

    side: int = 32
    channels: int = 3

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    def conform(self, img: RasterImage) -> RasterImage:
        if img.width == self.side and img.height == self.side:
            return img
        resized = Image.fromarray(np.asarray(img.pixels)).resize((self.side, self.side), Image.BILINEAR)
        return RasterImage(np.asarray(resized))

    def to_input(self, img: RasterImage) -> np.ndarray:
        img = self.conform(img)
        if self.channels == 1:
            return rgb_to_ycrcb(img).y[None].astype(np.float64) / 255.0
        return img.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0

    def to_image(self, x) -> RasterImage:
        """Inverse of :meth:`to_input` for viewing (rounded, clipped)."""
        x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0
        px = np.floor(x + 0.5).astype(np.uint8)
        if px.shape[0] == 1:
            px = np.repeat(px, 3, axis=0)
        return RasterImage(px.transpose(1, 2, 0))


class NetClassifier:
    """Scores images with a CompactNet behind a Preprocessor."""

    def __init__(self, net: CompactNet, preprocessor: Preprocessor | None = None):
        if preprocessor is None:
            c, side, _ = net.input_shape
            preprocessor = Preprocessor(side=side, channels=c)
        if net.input_shape != (preprocessor.channels, preprocessor.side, preprocessor.side):
            raise InputShape(f"net input {net.input_shape} does not match preprocessor {preprocessor}")
        self.net = net
        self.preprocessor = preprocessor

    def score(self, img: RasterImage) -> float:
        return float(self.net.predict_scores(self.preprocessor.to_input(img)[None])[0])

    def score_many(self, imgs: Sequence[RasterImage], batch_size: int = 64) -> list[float]:
        out: list[float] = []
        for start in range(0, len(imgs), batch_size):
            batch = np.stack([self.preprocessor.to_input(im) for im in imgs[start:start + batch_size]])
            out.extend(float(s) for s in self.net.predict_scores(batch))
        return out


def score(classifier: Classifier, img: RasterImage) -> GenderScore:
    return GenderScore(float(classifier.score(img)))


def score_many(classifier, imgs: Sequence[RasterImage]) -> list[float]:
    if hasattr(classifier, "score_many"):
        return list(classifier.score_many(imgs))
    return [float(classifier.score(im)) for im in imgs]

"""Seeded cartoon faces for tests and demos.

Faces are drawn directly in YCrCb so skin pixels satisfy the default skin
rule with margin (chroma survives the RGB round trip). The gender cue is
the lip color; skin type only moves skin luminance; hair is a dark,
non-skin region above the face and, for long hair, down both sides.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import CropBox, RasterImage, YCrCbImage, ycrcb_to_rgb

SKIN_Y = {"dark": (80.0, 10.0), "light": (170.0, 10.0)}


@dataclass(frozen=True)
class SyntheticFace:
    image: RasterImage
    gender: str
    skin_type: str
    hair_length: str
    crop: CropBox


def make_face(rng: np.random.Generator, gender: str, skin_type: str, hair_length: str,
              side: int = 32) -> SyntheticFace:
    rows, cols = np.mgrid[0:side, 0:side].astype(np.float64)
    cy, cx = side * 0.55, side * 0.5
    ry, rx = side * 0.36, side * 0.28
    face = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0

    px = np.empty((side, side, 3))
    px[..., 0] = 120 + rng.normal(0, 6, (side, side))
    px[..., 1] = 128 + rng.normal(0, 1, (side, side))
    px[..., 2] = 128 + rng.normal(0, 1, (side, side))

    mean_y, sd_y = SKIN_Y[skin_type]
    skin_y = float(np.clip(rng.normal(mean_y, sd_y), 50, 195))
    cr, cb = rng.uniform(99, 107), rng.uniform(148, 156)
    px[face, 0] = skin_y + rng.normal(0, 4, face.sum())
    px[face, 1] = cr + rng.normal(0, 1, face.sum())
    px[face, 2] = cb + rng.normal(0, 1, face.sum())

    hair = (rows < cy - ry * 0.7) & (np.abs(cols - cx) < rx * 1.3) & ~face
    if hair_length == "long":
        hair |= (np.abs(np.abs(cols - cx) - rx * 1.15) < side * 0.1) & (rows < cy + ry * 0.6) & ~face
    px[hair] = (35, 138, 120)

    eye_row = int(round(cy - ry * 0.25))
    for ex in (cx - rx * 0.45, cx + rx * 0.45):
        c = int(round(ex))
        px[eye_row:eye_row + 2, c - 1:c + 1] = (30, 128, 128)

    lip_row = int(round(cy + ry * 0.5))
    half = int(round(rx * 0.45))
    c = int(round(cx))
    if gender == "female":
        px[lip_row:lip_row + 2, c - half:c + half] = (95, 185, 110)
    else:
        px[lip_row:lip_row + 1, c - half:c + half] = (max(skin_y - 30, 20), 128, 128)

    ycc = YCrCbImage(np.clip(np.round(px), 0, 255).astype(np.uint8))
    x0 = int(np.floor(cx - rx))
    y0 = int(np.floor(cy - ry))
    crop = CropBox(x0, y0, int(np.ceil(2 * rx)), min(side - y0, int(np.ceil(2 * ry))))
    return SyntheticFace(ycrcb_to_rgb(ycc), gender, skin_type, hair_length, crop)


def make_dataset(out_dir, n: int = 40, seed: int = 0, side: int = 32) -> Path:
    """Write ``n`` PNG faces and ``manifest.csv`` into ``out_dir``.

    Rows cycle through the four gender x skin-type groups; females get long
    or short hair at random, males are short-haired.
    """
    from .manifest import ManifestRow, save_manifest

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    groups = [("female", "dark"), ("male", "dark"), ("female", "light"), ("male", "light")]
    rows = []
    for i in range(n):
        gender, skin = groups[i % 4]
        hair = ("long" if rng.random() < 0.5 else "short") if gender == "female" else "short"
        face = make_face(rng, gender, skin, hair, side)
        path = out / "images" / f"face{i:03d}.png"
        face.image.save(path)
        rows.append(ManifestRow(path.resolve(), gender, skin, hair, face.crop))
    manifest = out / "manifest.csv"
    save_manifest(rows, manifest)
    return manifest

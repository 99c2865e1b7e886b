"""Dataset manifests and intersectional accuracy tables."""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ManifestError, MissingFile, MissingScore
from .imaging import CropBox
from .model.classifier import THRESHOLD

COLUMNS = ["path", "gender", "skin_type", "hair_length", "crop_x", "crop_y", "crop_w", "crop_h"]
GENDERS = ("female", "male")
SKIN_TYPES = ("dark", "light")
HAIR_LENGTHS = ("short", "long", "unknown")
ATTRIBUTES = ("gender", "skin_type", "hair_length")


@dataclass(frozen=True)
class ManifestRow:
    path: Path
    gender: str
    skin_type: str
    hair_length: str = "unknown"
    crop: CropBox | None = None

    @property
    def group(self) -> str:
        return f"{self.skin_type}-{self.gender}"


def _parse_row(rec: dict, line: int, base: Path, check_exists: bool) -> ManifestRow:
    def field(name):
        value = (rec.get(name) or "").strip()
        return value

    raw_path = field("path")
    if not raw_path:
        raise ManifestError(line, "empty path")
    gender, skin, hair = field("gender"), field("skin_type"), field("hair_length") or "unknown"
    if gender not in GENDERS:
        raise ManifestError(line, f"gender must be one of {GENDERS}, got {gender!r}")
    if skin not in SKIN_TYPES:
        raise ManifestError(line, f"skin_type must be one of {SKIN_TYPES}, got {skin!r}")
    if hair not in HAIR_LENGTHS:
        raise ManifestError(line, f"hair_length must be one of {HAIR_LENGTHS}, got {hair!r}")
    if hair == "unknown" and gender == "female":
        raise ManifestError(line, "hair_length 'unknown' is only allowed for males")
    box_fields = [field(c) for c in ("crop_x", "crop_y", "crop_w", "crop_h")]
    crop = None
    if any(box_fields):
        try:
            crop = CropBox(*(int(v) for v in box_fields))
        except ValueError as exc:
            raise ManifestError(line, f"bad crop box {box_fields}: {exc}") from None
    path = Path(raw_path)
    if not path.is_absolute():
        path = base / path
    path = Path(os.path.normpath(path))
    if check_exists and not path.is_file():
        raise MissingFile(f"line {line}: image not found: {path}")
    return ManifestRow(path, gender, skin, hair, crop)


def load_manifest(path, check_exists: bool = True) -> list[ManifestRow]:
    """Parse a CSV manifest; relative image paths resolve against its folder."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    base = path.resolve().parent
    rows: list[ManifestRow] = []
    seen: dict[Path, int] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"path", "gender", "skin_type"} - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(1, f"header lacks column(s) {sorted(missing)}")
        for rec in reader:
            line = reader.line_num
            row = _parse_row(rec, line, base, check_exists)
            if row.path in seen:
                raise ManifestError(line, f"duplicate path {row.path} (first on line {seen[row.path]})")
            seen[row.path] = line
            rows.append(row)
    return rows


def save_manifest(rows: Sequence[ManifestRow], path) -> None:
    """Write rows as CSV, storing paths relative to the manifest when possible."""
    path = Path(path)
    base = path.resolve().parent
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            p = Path(row.path)
            try:
                p = p.resolve().relative_to(base)
            except ValueError:
                pass
            box = ["", "", "", ""] if row.crop is None else [row.crop.x, row.crop.y, row.crop.w, row.crop.h]
            writer.writerow([p.as_posix(), row.gender, row.skin_type, row.hair_length, *box])


def row_id(row: ManifestRow, base) -> str:
    """Stable identifier: the image path relative to ``base`` when possible."""
    try:
        return Path(row.path).relative_to(Path(base).resolve()).as_posix()
    except ValueError:
        return Path(row.path).as_posix()


@dataclass(frozen=True)
class GroupCell:
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n


@dataclass(frozen=True)
class GroupAccuracyTable:
    group_by: tuple[str, ...]
    cells: dict  # tuple of attribute values -> GroupCell

    @property
    def total(self) -> int:
        return sum(c.n for c in self.cells.values())

    def to_csv(self) -> str:
        lines = [",".join([*self.group_by, "n", "correct", "accuracy"])]
        for key in sorted(self.cells):
            cell = self.cells[key]
            lines.append(",".join([*key, str(cell.n), str(cell.correct), f"{cell.accuracy:.6g}"]))
        return "\n".join(lines) + "\n"


def is_correct(row: ManifestRow, s: float) -> bool:
    return (s > THRESHOLD) == (row.gender == "male")


def group_accuracy(rows: Sequence[ManifestRow], scores: Mapping, group_by: Sequence[str]) -> GroupAccuracyTable:
    """Accuracy per cell of the cross product of ``group_by`` attributes.

    ``scores`` maps each row's path to its male score.
    """
    group_by = tuple(group_by)
    for attr in group_by:
        if attr not in ATTRIBUTES:
            raise ValueError(f"cannot group by {attr!r}; choose from {ATTRIBUTES}")
    n = defaultdict(int)
    correct = defaultdict(int)
    for row in rows:
        key_path = Path(row.path)
        if key_path in scores:
            s = scores[key_path]
        elif str(key_path) in scores:
            s = scores[str(key_path)]
        else:
            raise MissingScore(f"no score for {row.path}")
        key = tuple(getattr(row, a) for a in group_by)
        n[key] += 1
        correct[key] += int(is_correct(row, float(s)))
    return GroupAccuracyTable(group_by, {k: GroupCell(n[k], correct[k]) for k in n})

"""Skin-tone stability experiment: score diffs, t intervals and decision flips.

For every image the classifier scores the original and each member of a
lighten/darken ensemble; the per-image statistic is
``diff = mean(member scores) - original score``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import betaincinv

from .errors import EmptyEnsemble, EmptyInput, MissingLabel, NoFace, TooFewSamples
from .imaging import SkinMask, YCrCbImage, ycrcb_to_rgb
from .model.classifier import THRESHOLD
from .skin_transform import Direction, EnsembleConfig, Method, build_ensemble

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.1
DEFAULT_LEVEL = 0.95
DEFAULT_BINS = 20


@dataclass(frozen=True)
class StabilityItem:
    image_id: str
    image: YCrCbImage
    mask: SkinMask
    gender: str | None = None


@dataclass(frozen=True)
class ScoreRecord:
    image_id: str
    original_score: float
    ensemble_scores: tuple[float, ...]
    gender: str | None = None

    def __post_init__(self):
        if not self.ensemble_scores:
            raise ValueError("a record needs at least one ensemble score")
        object.__setattr__(self, "original_score", float(self.original_score))
        object.__setattr__(self, "ensemble_scores", tuple(float(s) for s in self.ensemble_scores))

    @property
    def avg_new_score(self) -> float:
        # Exact rational mean, rounded once: equal members average to themselves.
        return float(sum(map(Fraction, self.ensemble_scores)) / len(self.ensemble_scores))

    @property
    def diff(self) -> float:
        return self.avg_new_score - self.original_score


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    level: float
    n: int
    mean: float
    stddev: float


@dataclass(frozen=True)
class FlipCounts:
    n: int
    to_correct: int
    to_incorrect: int
    direction: str = ""


@dataclass(frozen=True)
class StabilityReport:
    group: str
    direction: str
    method: str
    records: tuple[ScoreRecord, ...]
    threshold: float
    fraction_stable: float
    ci: ConfidenceInterval | None
    flips: FlipCounts | None
    hist_counts: tuple[int, ...]
    bin_edges: tuple[float, ...]
    excluded: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return len(self.records)


def _score_images(classifier, imgs) -> list[float | None]:
    """Score a batch; ``None`` marks images the backend reported faceless."""
    if hasattr(classifier, "score_many"):
        try:
            return [float(s) for s in classifier.score_many(imgs)]
        except NoFace:
            pass
    out: list[float | None] = []
    for im in imgs:
        try:
            out.append(float(classifier.score(im)))
        except NoFace:
            out.append(None)
    return out


def run_stability(classifier, items: Iterable[StabilityItem], direction: Direction,
                  method: Method, config: EnsembleConfig | None = None,
                  excluded: list | None = None) -> list[ScoreRecord]:
    """Score originals and their ensembles, one record per usable image.

    Images without a usable ensemble, or whose original gets a NoFace reply,
    are skipped and their ids appended to ``excluded``. Members that come
    back faceless are dropped from that image's average. Transport errors
    propagate.
    """
    config = config or EnsembleConfig()
    records = []
    skipped = [] if excluded is None else excluded
    for item in sorted(items, key=lambda it: it.image_id):
        try:
            ensemble = build_ensemble(item.image, item.mask, direction, method, config)
        except EmptyEnsemble as exc:
            log.info("skipping %s: %s", item.image_id, exc)
            skipped.append(item.image_id)
            continue
        imgs = [ycrcb_to_rgb(item.image)] + [ycrcb_to_rgb(m.image) for m in ensemble.members]
        scores = _score_images(classifier, imgs)
        original, members = scores[0], [s for s in scores[1:] if s is not None]
        if original is None or not members:
            log.info("excluding %s: no face detected", item.image_id)
            skipped.append(item.image_id)
            continue
        records.append(ScoreRecord(item.image_id, original, tuple(members), item.gender))
    if skipped:
        log.info("%d image(s) excluded from the stability statistics", len(skipped))
    return records


def stability_fraction(records: Sequence[ScoreRecord], threshold: float = DEFAULT_THRESHOLD) -> float:
    if not records:
        raise EmptyInput("no records")
    stable = sum(1 for r in records if abs(r.diff) <= threshold)
    return stable / len(records)


def t_critical(level: float, df: int) -> float:
    """Two-sided critical value of Student's t with ``df`` degrees of freedom."""
    # Inverting the incomplete beta directly stays within a few ulps for small df,
    # where scipy.stats.t.ppf drifts by ~1e-10.
    x = betaincinv(df / 2.0, 0.5, 1.0 - level)
    return math.sqrt(df * (1.0 / x - 1.0))


def one_sample_t_ci(diffs: Sequence[float], level: float = DEFAULT_LEVEL) -> ConfidenceInterval:
    """Two-sided ``level`` interval for the mean, using the sample (n-1) sd."""
    diffs = [float(d) for d in diffs]
    n = len(diffs)
    if n < 2:
        raise TooFewSamples(f"t interval needs at least 2 samples, got {n}")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if min(diffs) == max(diffs):
        mean, sd = diffs[0], 0.0
    else:
        mean = math.fsum(diffs) / n
        sd = math.sqrt(math.fsum((d - mean) ** 2 for d in diffs) / (n - 1))
    half = t_critical(level, n - 1) * sd / math.sqrt(n)
    return ConfidenceInterval(mean - half, mean + half, level, n, mean, sd)


def decision_flips(records: Sequence[ScoreRecord], direction: str = "") -> FlipCounts:
    """Count averaged decisions that cross the 0.5 threshold.

    ``to_correct``: misclassified originally, correct after the transform.
    ``to_incorrect``: the reverse.
    """
    to_correct = to_incorrect = 0
    for r in records:
        if r.gender not in ("female", "male"):
            raise MissingLabel(f"record {r.image_id} has no gender label")
        male_before = r.original_score > THRESHOLD
        male_after = r.avg_new_score > THRESHOLD
        truth_male = r.gender == "male"
        before_ok = male_before == truth_male
        after_ok = male_after == truth_male
        if not before_ok and after_ok:
            to_correct += 1
        elif before_ok and not after_ok:
            to_incorrect += 1
    return FlipCounts(len(records), to_correct, to_incorrect, direction)


def diff_histogram(records, bins: int = DEFAULT_BINS):
    counts, edges = np.histogram([r.diff for r in records], bins=bins, range=(-1.0, 1.0))
    return tuple(int(c) for c in counts), tuple(float(e) for e in edges)


def build_report(group: str, records: Sequence[ScoreRecord], direction: str, method: str,
                 threshold: float = DEFAULT_THRESHOLD, level: float = DEFAULT_LEVEL,
                 bins: int = DEFAULT_BINS, excluded: Sequence[str] = ()) -> StabilityReport:
    records = tuple(sorted(records, key=lambda r: r.image_id))
    if not records:
        raise EmptyInput(f"group {group!r} has no records")
    diffs = [r.diff for r in records]
    ci = one_sample_t_ci(diffs, level) if len(diffs) >= 2 else None
    flips = None
    if all(r.gender in ("female", "male") for r in records):
        flips = decision_flips(records, direction)
    counts, edges = diff_histogram(records, bins)
    return StabilityReport(group, direction, method, records, threshold,
                           stability_fraction(records, threshold), ci, flips, counts, edges,
                           tuple(excluded))


# ---------------------------------------------------------------- output

def fmt(x) -> str:
    """Six significant digits, the precision used across report files."""
    if x is None:
        return "NA"
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.6g}"


def report_text(report: StabilityReport) -> str:
    ci = report.ci
    flips = report.flips
    fields = [
        ("group", report.group),
        ("direction", report.direction),
        ("method", report.method),
        ("n", fmt(report.n)),
        ("excluded", fmt(len(report.excluded))),
        ("threshold", fmt(report.threshold)),
        ("fraction_stable", fmt(report.fraction_stable)),
        ("mean_diff", fmt(ci.mean if ci else report.records[0].diff)),
        ("stddev_diff", fmt(ci.stddev if ci else None)),
        ("ci_level", fmt(ci.level if ci else None)),
        ("ci_lo", fmt(ci.lo if ci else None)),
        ("ci_hi", fmt(ci.hi if ci else None)),
        ("flips_to_correct", fmt(flips.to_correct if flips else None)),
        ("flips_to_incorrect", fmt(flips.to_incorrect if flips else None)),
    ]
    return "".join(f"{k}: {v}\n" for k, v in fields)


def export_plot_data(report: StabilityReport, out_dir, bins: int | None = None) -> tuple[Path, Path]:
    """Write ``hist.csv`` (diff histogram over [-1, 1]) and ``scatter.csv``.

    Scatter rows carry the exact (original, averaged) scores via ``repr``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if bins is None:
        counts, edges = report.hist_counts, report.bin_edges
    else:
        counts, edges = diff_histogram(report.records, bins)
    hist_path = out / "hist.csv"
    rows = ["bin_lo,bin_hi,count"]
    rows += [f"{fmt(edges[i])},{fmt(edges[i + 1])},{c}" for i, c in enumerate(counts)]
    hist_path.write_text("\n".join(rows) + "\n")
    scatter_path = out / "scatter.csv"
    rows = ["image_id,original,avg_new"]
    rows += [f"{r.image_id},{r.original_score!r},{r.avg_new_score!r}" for r in report.records]
    scatter_path.write_text("\n".join(rows) + "\n")
    return hist_path, scatter_path


def write_report(report: StabilityReport, out_dir) -> Path:
    """Write report.txt, records.csv, hist.csv and scatter.csv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report_text(report))
    rows = ["image_id,gender,original,member_scores"]
    for r in report.records:
        members = ";".join(repr(s) for s in r.ensemble_scores)
        rows.append(f"{r.image_id},{r.gender or ''},{r.original_score!r},{members}")
    (out / "records.csv").write_text("\n".join(rows) + "\n")
    export_plot_data(report, out)
    return out

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skintone_audit.errors import EmptyEnsemble, EmptyHistogram, EmptyMask, MapMismatch
from skintone_audit.imaging import LuminanceHistogram, SkinMask, detect_skin, skin_luminance_histogram
from skintone_audit.skin_transform import (
    EnsembleConfig,
    ModeShiftSpec,
    apply_transport,
    build_ensemble,
    default_palette_dir,
    load_palette,
    load_palette_dir,
    luminance_mode,
    mode_grid,
    mode_shift,
    round_to_total,
    save_palette,
    transport_map,
)

from conftest import ycc

SKIN_CR, SKIN_CB = 100, 150


def skin_image(y, skin=None):
    """Image whose pixels are skin where ``skin`` is True (all skin by default)."""
    y = np.asarray(y)
    skin = np.ones(y.shape, bool) if skin is None else np.asarray(skin)
    cr = np.where(skin, SKIN_CR, 200)
    cb = np.where(skin, SKIN_CB, 20)
    return ycc(y, cr, cb)


def hist(mapping):
    return LuminanceHistogram.from_mapping(mapping)


# ------------------------------------------------------------------- mode

def test_luminance_mode_cases():
    assert luminance_mode(hist({80: 10})) == 80
    assert luminance_mode(hist({80: 10, 81: 10})) == 80
    assert luminance_mode(hist({10: 1, 200: 5, 90: 4})) == 200
    with pytest.raises(EmptyHistogram):
        luminance_mode(hist({}))


def test_mode_shift_arithmetic_and_clip():
    img = skin_image([[80, 80, 80, 100, 250]])
    out = mode_shift(img, detect_skin(img), ModeShiftSpec(140))
    assert out.y.tolist() == [[140, 140, 140, 160, 255]]
    assert np.array_equal(out.cr, img.cr) and np.array_equal(out.cb, img.cb)


def test_mode_shift_identity_and_scope():
    img = skin_image([[80, 80, 30]], skin=[[True, True, False]])
    mask = detect_skin(img)
    assert mode_shift(img, mask, ModeShiftSpec(80)) == img
    whole = mode_shift(img, mask, ModeShiftSpec(90))
    only = mode_shift(img, mask, ModeShiftSpec(90, "skin-only"))
    assert whole.y.tolist() == [[90, 90, 40]]
    assert only.y.tolist() == [[90, 90, 30]]


def test_mode_shift_empty_mask():
    img = skin_image([[80]])
    with pytest.raises(EmptyMask):
        mode_shift(img, SkinMask([[False]]), ModeShiftSpec(100))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(60, 190), min_size=1, max_size=30), st.integers(-50, 50))
def test_mode_shift_properties(values, delta):
    img = skin_image([values])
    mask = detect_skin(img)
    old = luminance_mode(skin_luminance_histogram(img, mask))
    target = old + delta
    out = mode_shift(img, mask, ModeShiftSpec(target))
    # values in [60,190] and |delta| <= 50 never clip
    assert luminance_mode(skin_luminance_histogram(out, mask)) == target
    assert mode_shift(out, mask, ModeShiftSpec(old)) == img
    assert np.array_equal(out.cr, img.cr) and np.array_equal(out.cb, img.cb)


# -------------------------------------------------------------- transport

def brute_force_cost(source_values, target_values):
    return min(
        sum((s - t) ** 2 for s, t in zip(source_values, perm))
        for perm in itertools.permutations(target_values)
    )


def test_transport_identity():
    h = hist({50: 3, 60: 1, 200: 2})
    plan = transport_map(h, h)
    for y in (50, 60, 200):
        assert plan.splits[y] == ((h.counts[y], y),)
    assert plan.fractional_splits == {}
    img = skin_image([[50, 50, 50, 60, 200, 200]])
    assert apply_transport(img, detect_skin(img), plan) == img


def test_transport_split_example():
    plan = transport_map(hist({100: 2}), hist({0: 1, 255: 1}))
    assert plan.fractional_splits == {100: [(1, 0), (1, 255)]}
    img = skin_image([[100, 100]])
    out = apply_transport(img, detect_skin(img), plan)
    assert out.y.tolist() == [[0, 255]]
    # brute force over both assignments: cost 100^2 + 155^2 either way
    assert brute_force_cost([100, 100], [0, 255]) == 100 ** 2 + 155 ** 2


def test_transport_point_mass_target():
    plan = transport_map(hist({0: 1, 255: 1}), hist({128: 2}))
    img = skin_image([[0, 255]])
    assert apply_transport(img, detect_skin(img), plan).y.tolist() == [[128, 128]]


def test_transport_leaves_non_skin_and_chroma():
    img = skin_image([[10, 20, 30, 40]], skin=[[True, False, True, False]])
    mask = detect_skin(img)
    plan = transport_map(skin_luminance_histogram(img, mask), hist({200: 1}))
    out = apply_transport(img, mask, plan)
    assert out.y.tolist() == [[200, 20, 200, 40]]
    assert np.array_equal(out.cr, img.cr) and np.array_equal(out.cb, img.cb)


def test_transport_mismatch_and_empty():
    img = skin_image([[10, 20]])
    plan = transport_map(hist({10: 1, 30: 1}), hist({100: 1}))
    with pytest.raises(MapMismatch):
        apply_transport(img, detect_skin(img), plan)
    with pytest.raises(EmptyHistogram):
        transport_map(hist({}), hist({1: 1}))
    with pytest.raises(EmptyHistogram):
        transport_map(hist({1: 1}), np.zeros(256))


def test_round_to_total_largest_remainder():
    # quotas 5*(1/3,1/3,1/3) = 1.667 each -> floors 1,1,1, two extra to lowest bins
    assert round_to_total([1, 1, 1], 5).tolist() == [2, 2, 1]
    assert round_to_total([0.5, 0.25, 0.25], 4).tolist() == [2, 1, 1]
    assert round_to_total([3, 1], 2).tolist() == [2, 0]


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(0, 255), min_size=1, max_size=6),
    st.dictionaries(st.integers(0, 255), st.integers(1, 5), min_size=1, max_size=4),
)
def test_transport_matches_brute_force(values, target):
    img = skin_image([values])
    mask = detect_skin(img)
    plan = transport_map(skin_luminance_histogram(img, mask), hist(target))
    out = apply_transport(img, mask, plan)
    targets = [y for y in range(256) for _ in range(int(plan.target_counts[y]))]
    moved = int(np.sum((out.y.astype(int) - img.y.astype(int)) ** 2))
    assert moved == brute_force_cost(values, targets)
    assert np.array_equal(skin_luminance_histogram(out, mask).counts, plan.target_counts)
    assert np.all(np.diff(plan.map) >= 0)


def test_transport_map_monotone_between_bins():
    plan = transport_map(hist({10: 3, 20: 5, 30: 2}), hist({0: 1, 100: 4, 255: 5}))
    prev = -1
    for y in (10, 20, 30):
        targets = [t for _, t in plan.splits[y]]
        assert targets == sorted(targets) and targets[0] >= prev
        prev = targets[-1]
        assert sum(n for n, _ in plan.splits[y]) == plan.source.counts[y]


# --------------------------------------------------------------- ensembles

def test_mode_grid_enumeration():
    assert mode_grid(128, "darken") == [118, 108, 98, 88, 78, 68, 58, 48, 38, 28, 18, 10]
    assert mode_grid(240, "lighten") == [245]
    assert mode_grid(245, "lighten") == []
    assert mode_grid(128, "lighten")[:2] == [138, 148] and mode_grid(128, "lighten")[-1] == 245
    assert mode_grid(20, "darken") == [10]


def test_build_ensemble_mode_shift():
    img = skin_image([[240, 240, 230]])
    ens = build_ensemble(img, detect_skin(img), "lighten", "mode-shift")
    assert [m.target_mode for m in ens.members] == [245]
    assert ens.members[0].delta == 5
    img = skin_image([[128, 128, 100]])
    ens = build_ensemble(img, detect_skin(img), "darken", "mode-shift")
    assert [m.target_mode for m in ens.members] == [118, 108, 98, 88, 78, 68, 58, 48, 38, 28, 18, 10]
    for m in ens.members:
        assert luminance_mode(skin_luminance_histogram(m.image, detect_skin(img))) == m.target_mode


def test_build_ensemble_empty():
    img = skin_image([[250, 250]])
    with pytest.raises(EmptyEnsemble):
        build_ensemble(img, detect_skin(img), "lighten", "mode-shift")
    with pytest.raises(EmptyEnsemble):
        build_ensemble(img, detect_skin(img), "lighten", "ot", EnsembleConfig(palettes={}))


def test_build_ensemble_transport_filters_palettes():
    img = skin_image([[100, 110, 120]])  # mean skin Y 110
    means = [20, 40, 60, 80, 90, 100, 130, 150, 170, 200]
    palettes = {f"p{i}": hist({m: 3}) for i, m in enumerate(means)}
    cfg = EnsembleConfig(palettes=palettes)
    light = build_ensemble(img, detect_skin(img), "lighten", "ot", cfg)
    dark = build_ensemble(img, detect_skin(img), "darken", "ot", cfg)
    assert len(light.members) == 4 and len(dark.members) == 6
    for m in light.members:
        assert m.image.y.mean() > img.y.mean()


def test_palette_files(tmp_path):
    masses = np.zeros(256)
    masses[[100, 101]] = [0.25, 0.75]
    save_palette(tmp_path / "a.txt", masses)
    assert np.array_equal(load_palette(tmp_path / "a.txt"), masses)
    (tmp_path / "bad.txt").write_text("1 2 3")
    with pytest.raises(ValueError):
        load_palette(tmp_path / "bad.txt")
    bundled = load_palette_dir(default_palette_dir())
    assert len(bundled) == 10

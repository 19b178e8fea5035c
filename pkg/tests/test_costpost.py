import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereopipe.costpost import (
    PostConfig,
    consistency_check,
    extract_disparity,
    right_disparity,
    uniqueness_check,
    uniqueness_ratio,
)
from stereopipe.imagecore import INVALID, DisparityMap
from stereopipe.sgm import MAX_COST, CostVolume, MatchConfig

from oracles import consistency_ref, extract_ref, right_matcher_ref, unique_ref


def column_volume(col, offset=0):
    """One pixel far enough right that every entry is in-image."""
    nd = len(col)
    costs = np.zeros((1, nd + offset, nd), dtype=np.uint16)
    costs[0, -1] = col
    return CostVolume(costs, offset)


def pixel(disp):
    return int(disp.data[0, -1])


def test_symmetric_costs_no_shift():
    vol = column_volume([20, 9, 4, 9, 20], offset=3)
    assert pixel(extract_disparity(vol)) == (3 + 2) * 16


def dense_parabola_min(cm, c0, cp):
    """Locate the minimum of the interpolating parabola by dense sampling."""
    t = np.linspace(-1, 1, 200001)
    a = (cm + cp - 2 * c0) / 2
    b = (cp - cm) / 2
    return t[np.argmin(a * t * t + b * t + c0)]


def test_parabola_6_4_8():
    vol = column_volume([30, 6, 4, 8, 30])
    delta = dense_parabola_min(6, 4, 8)
    assert abs(delta - (-2 / 12)) < 1e-4
    assert pixel(extract_disparity(vol)) == 2 * 16 - 3
    assert math.floor(delta * 16 + 0.5) == -3


def test_boundary_minimum_not_refined():
    vol = column_volume([1, 5, 9, 9], offset=7)
    assert pixel(extract_disparity(vol)) == 7 * 16
    vol = column_volume([9, 9, 5, 1], offset=7)
    assert pixel(extract_disparity(vol)) == 10 * 16


def test_ties_take_lowest_index():
    vol = column_volume([9, 3, 7, 3, 9])
    # j*=1; neighbours 9 and 7 -> delta = (9-7)/(2*(9-6+7)) = 0.1 -> 2/16 after rounding
    assert pixel(extract_disparity(vol)) == 16 + 2


def test_delta_half_when_neighbour_ties():
    vol = column_volume([9, 4, 4, 9])
    assert pixel(extract_disparity(vol)) == 16 + 8


def test_left_edge_pixels_invalid_and_partial_range():
    costs = np.full((1, 4, 3), 5, dtype=np.uint16)
    vol = CostVolume(costs, disparity_offset=2)
    disp = extract_disparity(vol)
    # x=0,1 have no in-image candidate; x=2 only j=0; x=3 j in {0,1}
    assert disp.data[0].tolist() == [INVALID, INVALID, 32, 32]


def random_volume(rng, h, w, nd, offset, high=40):
    costs = rng.integers(0, high, (h, w, nd)).astype(np.uint16)
    x = np.arange(w)[:, None]
    j = np.arange(nd)[None, :]
    costs[:, (x - offset - j) < 0] = MAX_COST
    return CostVolume(costs, offset)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_extract_matches_rational_reference(seed, offset):
    rng = np.random.default_rng(seed)
    vol = random_volume(rng, 4, 12, 7, offset)
    cfg = MatchConfig(disparity_offset=offset, iterations=1, parallelism=7)
    disp = extract_disparity(vol, cfg)
    assert np.array_equal(disp.data, extract_ref(vol.costs, offset))
    valid = disp.data[disp.valid]
    assert ((valid >= offset * 16) & (valid <= cfg.max_disparity * 16)).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_subpixel_within_half_pixel_of_argmin(seed):
    rng = np.random.default_rng(seed)
    vol = random_volume(rng, 3, 10, 9, 0)
    disp = extract_disparity(vol).data.astype(np.int64)
    for y in range(3):
        for x in range(10):
            n = min(9, x + 1)
            j = int(np.argmin(vol.costs[y, x, :n]))
            assert abs(disp[y, x] - 16 * j) <= 8


# -- uniqueness ---------------------------------------------------------------

@pytest.mark.parametrize("competitor, survives", [(16, True), (15, False)])
def test_uniqueness_boundary(competitor, survives):
    vol = column_volume([40, 40, 10, 40, competitor, 40])
    disp = extract_disparity(vol)
    out = uniqueness_check(vol, disp, 1.5)
    assert (pixel(out) != INVALID) == survives


def test_uniqueness_q1_equal_second_best_rejected():
    vol = column_volume([7, 30, 30, 7])
    assert pixel(uniqueness_check(vol, extract_disparity(vol), 1)) == INVALID


def test_uniqueness_neighbours_excluded_by_default():
    vol = column_volume([30, 10, 10, 30, 30])
    disp = extract_disparity(vol)
    assert pixel(uniqueness_check(vol, disp, 1)) != INVALID
    assert pixel(uniqueness_check(vol, disp, 1, exclude_neighbors=False)) == INVALID


def test_uniqueness_ratio_is_exact():
    assert uniqueness_ratio(1.5) == (3, 2)
    assert uniqueness_ratio(1) == (1, 1)
    assert uniqueness_ratio(1.05) == (21, 20)
    with pytest.raises(ValueError):
        uniqueness_ratio(0.9)


def test_uniqueness_brute_force_columns():
    rng = np.random.default_rng(99)
    qs = [1, 1.05, 1.25, 1.5, 2, 3]
    for trial in range(1000):
        n = int(rng.integers(1, 65))
        col = rng.integers(0, int(rng.integers(2, 60)), n).tolist()
        q = qs[trial % len(qs)]
        for excl in (True, False):
            vol = column_volume(col)
            out = uniqueness_check(vol, extract_disparity(vol), q, exclude_neighbors=excl)
            assert (pixel(out) != INVALID) == unique_ref(col, q, excl)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_uniqueness_anti_monotone_in_q(seed):
    rng = np.random.default_rng(seed)
    vol = random_volume(rng, 5, 16, 8, 1)
    disp = extract_disparity(vol)
    counts = [uniqueness_check(vol, disp, q).valid.sum() for q in (1, 1.1, 1.3, 2, 4)]
    assert counts == sorted(counts, reverse=True)


# -- consistency ----------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 32), st.integers(1, 8),
       st.integers(1, 16), st.integers(0, 3))
def test_right_disparity_equals_right_to_left_matcher(seed, w, h, nd, offset):
    rng = np.random.default_rng(seed)
    vol = random_volume(rng, h, w, nd, offset, high=8)
    ref = right_matcher_ref(vol.costs, offset)
    assert np.array_equal(right_disparity(vol), ref)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1, 2]))
def test_consistency_matches_reference(seed, t_c):
    rng = np.random.default_rng(seed)
    vol = random_volume(rng, 6, 20, 8, 1, high=10)
    cfg = MatchConfig(disparity_offset=1, iterations=1, parallelism=8)
    disp = extract_disparity(vol, cfg)
    out = consistency_check(vol, disp, cfg, t_c)
    expected = consistency_ref(disp.data, right_matcher_ref(vol.costs, 1), t_c)
    assert np.array_equal(out.data, expected)


def constant_disparity_volume(h, w, nd, d):
    costs = np.full((h, w, nd), 20, dtype=np.uint16)
    costs[:, :, d] = 1
    x = np.arange(w)[:, None]
    j = np.arange(nd)[None, :]
    costs[:, (x - j) < 0] = MAX_COST
    return CostVolume(costs, 0)


def test_consistent_scene_keeps_everything():
    vol = constant_disparity_volume(3, 20, 8, 5)
    disp = extract_disparity(vol)
    for t_c in (0, 1, 5):
        out = consistency_check(vol, disp, None, t_c)
        # pixels x >= 5 see the true match; x < 5 have no right partner at d=5
        assert out.valid[:, 5:].all()


def test_two_plane_occlusion_invalidated():
    """Background at d=2, a front strip at d=6 over x in [12, 18).

    Left pixels x in [8, 12) are hidden in the right view: their background
    partner x - 2 is covered by the front strip, which occupies right
    columns [6, 12), so their best cost is only mediocre.
    """
    h, w, nd = 2, 30, 8
    costs = np.full((h, w, nd), 20, dtype=np.uint16)
    truth = np.where((np.arange(w) >= 12) & (np.arange(w) < 18), 6, 2)
    for x in range(w):
        costs[:, x, truth[x]] = 10 if 8 <= x < 12 else 1
    x = np.arange(w)[:, None]
    j = np.arange(nd)[None, :]
    costs[:, (x - j) < 0] = MAX_COST
    vol = CostVolume(costs, 0)
    disp = extract_disparity(vol)
    out = consistency_check(vol, disp, None, 0)
    assert not out.valid[:, 8:12].any()
    assert out.valid[:, 12:18].all()
    assert out.valid[:, 18:].all()


def test_disabled_threshold_is_identity():
    rng = np.random.default_rng(0)
    vol = random_volume(rng, 4, 10, 5, 0)
    disp = extract_disparity(vol)
    assert consistency_check(vol, disp, None, None) is disp


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_checks_only_remove(seed):
    rng = np.random.default_rng(seed)
    vol = random_volume(rng, 6, 18, 8, 2)
    disp = extract_disparity(vol)
    for out in (uniqueness_check(vol, disp, 1.2), consistency_check(vol, disp, None, 1)):
        kept = out.valid
        assert not (kept & ~disp.valid).any()
        assert np.array_equal(out.data[kept], disp.data[kept])


def test_post_config_validation():
    with pytest.raises(ValueError):
        PostConfig(uniqueness_factor=0.5)
    with pytest.raises(ValueError):
        PostConfig(consistency_threshold=-1)
    assert PostConfig(consistency_threshold=None).consistency_threshold is None


def test_invalid_input_stays_invalid():
    vol = column_volume([9, 1, 9, 30])
    disp = DisparityMap(np.full((1, 4), INVALID, dtype=np.uint16))
    assert not uniqueness_check(vol, disp, 1).valid.any()
    assert not consistency_check(vol, disp, None, 3).valid.any()

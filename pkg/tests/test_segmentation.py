import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldsf.asc_model import Kind, ScatteringCenter, ScatterSet, synthesize_image
from ldsf.core_types import MagnitudeImage, RadarConfig, magnitude
from ldsf.errors import DegenerateInputError, NoRegionError
from ldsf.segmentation import (
    BinaryMask, Region, classify_region_kind, extract_max_region, make_region,
    neighborhood_mean_levels, otsu2d, otsu2d_thresholds, quantize, region_shape)


def otsu_bruteforce(values):
    """Exhaustive search over all 256 x 256 threshold pairs, computed per pixel."""
    q = quantize(values).ravel().astype(float)
    m = neighborhood_mean_levels(quantize(values)).ravel().astype(float)
    n = q.size
    mu = np.array([q.mean(), m.mean()])
    t = np.arange(256)
    best, arg = -np.inf, None
    for s in range(256):
        in0 = (q <= s)[:, None] & (m[:, None] <= t[None, :])
        in1 = (q > s)[:, None] & (m[:, None] > t[None, :])
        for cls in (in0, in1):
            pass
        w0 = in0.sum(0) / n
        w1 = in1.sum(0) / n
        with np.errstate(divide="ignore", invalid="ignore"):
            a0 = (q[:, None] * in0).sum(0) / in0.sum(0)
            b0 = (m[:, None] * in0).sum(0) / in0.sum(0)
            a1 = (q[:, None] * in1).sum(0) / in1.sum(0)
            b1 = (m[:, None] * in1).sum(0) / in1.sum(0)
            score = w0 * ((a0 - mu[0]) ** 2 + (b0 - mu[1]) ** 2) + w1 * ((a1 - mu[0]) ** 2 + (b1 - mu[1]) ** 2)
        score = np.where((w0 > 1e-12) & (w1 > 1e-12), score, -np.inf)
        j = int(np.argmax(score))
        if score[j] > best + 1e-12:
            best, arg = score[j], (s, j)
    return arg, best


def test_otsu_bimodal_example():
    img = np.full((4, 4), 0.1)
    img[:2, :2] = 0.9
    mask = otsu2d(MagnitudeImage(img))
    np.testing.assert_array_equal(mask.data, img > 0.5)


def test_otsu_constant_image_is_degenerate():
    with pytest.raises(DegenerateInputError):
        otsu2d(MagnitudeImage(np.full((5, 5), 0.3)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_otsu_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    img = rng.normal(0.2, 0.05, size=(16, 16))
    img[4:10, 5:12] += rng.normal(0.7, 0.05, size=(6, 7))
    img = np.abs(img)
    (s_bf, t_bf), _ = otsu_bruteforce(img)
    assert otsu2d_thresholds(MagnitudeImage(img)) == (s_bf, t_bf)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100), st.floats(0, 10), st.integers(0, 10_000))
def test_otsu_invariant_under_affine_rescaling(scale, offset, seed):
    rng = np.random.default_rng(seed)
    img = np.abs(rng.normal(0.2, 0.05, size=(12, 12)))
    img[3:7, 3:8] += 0.6
    # power-of-two scale keeps bin edges exact in floating point
    scale = 2.0 ** round(math.log2(scale))
    a = otsu2d(MagnitudeImage(img)).data
    b = otsu2d(MagnitudeImage(img * scale + offset * scale)).data
    np.testing.assert_array_equal(a, b)


def blob(shape, center, amp, width=1.0):
    r, c = np.indices(shape)
    return amp * np.exp(-((r - center[0]) ** 2 + (c - center[1]) ** 2) / (2 * width ** 2))


def full_mask(shape):
    return BinaryMask(np.ones(shape, dtype=bool))


def test_single_blob_region():
    img = blob((20, 20), (8, 11), 3.0)
    r = extract_max_region(MagnitudeImage(img), full_mask(img.shape), [], 20)
    assert r.peak == (8, 11)
    assert r.peak_value == img[8, 11]
    assert (8, 11) in set(map(tuple, r.pixels))
    assert np.all(img[r.pixels[:, 0], r.pixels[:, 1]] >= 3.0 * 10 ** (-6 / 20))


def test_distance_constraint_rejects_far_brighter_blob():
    dmax = 5.0
    shape = (40, 40)
    existing_peak = (20, 5)
    bright_pos = (20, 5 + 3 * int(dmax))  # 3 dmax away
    dim_pos = (20, 9)
    img = blob(shape, bright_pos, 4.0) + blob(shape, dim_pos, 1.0)
    existing = Region(np.array([existing_peak]), existing_peak, 1.0, (1.0, 1.0), 0.0)
    r = extract_max_region(MagnitudeImage(img), full_mask(shape), [existing], dmax)
    assert r.peak == dim_pos
    # without the constraint the brighter blob wins
    r = extract_max_region(MagnitudeImage(img), full_mask(shape), [], dmax)
    assert r.peak == bright_pos


def test_all_candidates_rejected_raises():
    img = blob((30, 30), (25, 25), 1.0)
    existing = Region(np.array([[0, 0]]), (0, 0), 1.0, (1.0, 1.0), 0.0)
    with pytest.raises(NoRegionError):
        extract_max_region(MagnitudeImage(img), full_mask(img.shape), [existing], 3.0)
    with pytest.raises(NoRegionError):
        extract_max_region(MagnitudeImage(np.zeros((5, 5))), full_mask((5, 5)), [], 3.0)


def flood_fill_oracle(values, seed, floor):
    """4/8-connected flood from the seed over pixels >= floor that descend monotonically."""
    rows, cols = values.shape
    seen = {seed}
    stack = [seed]
    while stack:
        r, c = stack.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if (rr, cc) in seen or not (0 <= rr < rows and 0 <= cc < cols):
                    continue
                if values[rr, cc] >= floor and values[rr, cc] <= values[r, c]:
                    seen.add((rr, cc))
                    stack.append((rr, cc))
    return seen


def test_three_blob_region_matches_flood_fill():
    shape = (40, 40)
    img = blob(shape, (10, 10), 3.0, 1.3) + blob(shape, (25, 12), 2.0, 1.1) + blob(shape, (18, 30), 2.5, 1.6)
    r = extract_max_region(MagnitudeImage(img), full_mask(shape), [], 50)
    oracle = flood_fill_oracle(img, (10, 10), 3.0 * 10 ** (-6 / 20))
    assert set(map(tuple, r.pixels)) == oracle


def test_region_subset_of_mask_and_peak_is_max(rng):
    img = np.abs(rng.normal(size=(24, 24)))
    mask = BinaryMask(rng.random((24, 24)) > 0.3)
    r = extract_max_region(MagnitudeImage(img), mask, [], math.inf)
    assert mask.data[r.pixels[:, 0], r.pixels[:, 1]].all()
    assert r.peak_value == img[r.pixels[:, 0], r.pixels[:, 1]].max()
    masked = np.where(mask.data, img, -1)
    assert r.peak == tuple(np.unravel_index(np.argmax(masked), img.shape))


def test_region_shape_lengths():
    assert region_shape(np.array([[3, 3]]))[0] == (1.0, 1.0)
    line = np.array([[5, c] for c in range(10)])
    (major, minor), theta = region_shape(line)
    assert major == pytest.approx(10.0) and minor == pytest.approx(1.0)
    assert theta == pytest.approx(0.0, abs=1e-12)


def test_classify_region_kind_examples():
    one = make_region(np.ones((3, 3)), np.ones((3, 3), bool) & (np.indices((3, 3))[0] == 1) & (np.indices((3, 3))[1] == 1), (1, 1))
    assert classify_region_kind(one, (0.3, 0.3)) is Kind.LOCAL
    line_img = np.zeros((5, 14))
    line_img[2, 2:12] = 1.0
    line = make_region(line_img, line_img > 0, (2, 2))
    assert len(line) == 10
    assert classify_region_kind(line, (0.3, 0.3)) is Kind.DISTRIBUTED


def test_plate_response_classified_distributed():
    cfg = RadarConfig(nf=64, nphi=64)
    plate = ScatteringCenter(A=1.0, L=3.0, phi_bar=0.0, x=0.45, y=-0.3, kind=Kind.DISTRIBUTED)
    point = ScatteringCenter(A=1.0, x=-3.1, y=4.2)
    for c in (plate, point):
        mag = magnitude(synthesize_image(ScatterSet([c]), cfg))
        r = extract_max_region(mag, full_mask(mag.shape), [], 20)
        assert classify_region_kind(r, mag.pixel_spacing) is c.kind

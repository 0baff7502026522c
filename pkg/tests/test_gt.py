import numpy as np
import pytest

from maskcount import (
    GtConfig,
    PointAnnotation,
    apply_roi,
    derive_mask,
    downsample_density,
    downsample_mask,
    generate_density_map,
)

from conftest import random_annotation


def brute_force_single_point(width, height, x, y, sigma, radius):
    """Independent oracle: per-pixel double loop, truncation, renormalisation."""
    cx, cy = int(round(x)), int(round(y))
    kernel = {}
    total = 0.0
    for py in range(max(0, cy - radius), min(height, cy + radius + 1)):
        for px in range(max(0, cx - radius), min(width, cx + radius + 1)):
            val = np.exp(-((px - x) ** 2 + (py - y) ** 2) / (2 * sigma**2))
            kernel[(py, px)] = val
            total += val
    out = np.zeros((height, width))
    for (py, px), val in kernel.items():
        out[py, px] = val / total
    return out


class TestGenerateDensityMap:
    def test_empty_annotation_gives_zero_map(self):
        ann = PointAnnotation(width=32, height=24)
        d = generate_density_map(ann)
        assert d.shape == (24, 32)
        assert d.sum() == 0.0

    def test_single_center_point_matches_brute_force(self):
        ann = PointAnnotation(width=64, height=64, points=[[32.0, 32.0]])
        d = generate_density_map(ann, sigma=4, radius=15)
        oracle = brute_force_single_point(64, 64, 32.0, 32.0, 4, 15)
        np.testing.assert_allclose(d, oracle, atol=1e-12)
        assert abs(d.sum() - 1.0) <= 1e-6
        assert np.unravel_index(d.argmax(), d.shape) == (32, 32)

    def test_two_identical_points_superpose(self):
        one = generate_density_map(
            PointAnnotation(width=48, height=40, points=[[20.0, 17.0]])
        )
        two = generate_density_map(
            PointAnnotation(width=48, height=40, points=[[20.0, 17.0], [20.0, 17.0]])
        )
        assert abs(two.sum() - 2.0) <= 1e-6
        np.testing.assert_allclose(two, 2.0 * one, rtol=1e-12)

    def test_border_point_still_sums_to_one(self):
        ann = PointAnnotation(width=40, height=30, points=[[0.0, 0.0], [39.0, 29.0]])
        d = generate_density_map(ann, sigma=4, radius=15)
        assert abs(d.sum() - 2.0) <= 1e-6

    def test_superposition_of_annotation_sets(self, rng):
        a = random_annotation(rng, 80, 60, 7)
        b = random_annotation(rng, 80, 60, 5)
        both = PointAnnotation(
            width=80, height=60, points=np.vstack([a.points, b.points])
        )
        np.testing.assert_allclose(
            generate_density_map(both),
            generate_density_map(a) + generate_density_map(b),
            rtol=0,
            atol=1e-12,
        )

    def test_point_outside_bounds_rejected_with_index(self):
        with pytest.raises(ValueError, match="point 1"):
            PointAnnotation(width=32, height=32, points=[[5.0, 5.0], [32.0, 5.0]])

    def test_kernel_parameter_validation(self):
        ann = PointAnnotation(width=32, height=32, points=[[5.0, 5.0]])
        with pytest.raises(ValueError):
            generate_density_map(ann, sigma=-1.0)
        with pytest.raises(ValueError):
            generate_density_map(ann, sigma=4.0, radius=7)

    def test_sum_matches_count_for_random_annotations(self, rng):
        for _ in range(25):
            w = int(rng.integers(64, 513))
            h = int(rng.integers(64, 513))
            count = int(rng.integers(0, 201))
            ann = random_annotation(rng, w, h, count)
            d = generate_density_map(ann)
            assert abs(d.sum() - count) <= 1e-3 * count + 1e-6


class TestDeriveMask:
    def test_zero_density_zero_mask(self):
        assert derive_mask(np.zeros((8, 8))).sum() == 0

    def test_single_point_support_is_truncation_window(self):
        ann = PointAnnotation(width=60, height=50, points=[[30.0, 25.0]])
        d = generate_density_map(ann, sigma=4, radius=15)
        mask = derive_mask(d)
        # enumerate the nonzero kernel support directly
        expected = np.zeros((50, 60), dtype=np.uint8)
        expected[25 - 15 : 25 + 16, 30 - 15 : 30 + 16] = 1
        np.testing.assert_array_equal(mask, expected)

    def test_window_clipped_at_borders(self):
        ann = PointAnnotation(width=40, height=40, points=[[2.0, 3.0]])
        mask = derive_mask(generate_density_map(ann, sigma=4, radius=15))
        expected = np.zeros((40, 40), dtype=np.uint8)
        expected[0:19, 0:18] = 1
        np.testing.assert_array_equal(mask, expected)

    def test_negative_density_rejected_before_masking(self):
        d = np.zeros((8, 8))
        d[3, 3] = -0.5
        with pytest.raises(ValueError, match="negative"):
            derive_mask(d)

    def test_mask_matches_positive_support(self, rng):
        for _ in range(20):
            ann = random_annotation(rng, 96, 72, int(rng.integers(0, 40)))
            d = generate_density_map(ann)
            np.testing.assert_array_equal(derive_mask(d), (d > 0).astype(np.uint8))


class TestDownsampling:
    def test_block_sum_closed_form(self):
        d = np.full((4, 4), 0.25)
        np.testing.assert_array_equal(downsample_density(d, 2), np.ones((2, 2)))

    def test_factor_one_is_identity(self, rng):
        d = rng.random((7, 9))
        np.testing.assert_array_equal(downsample_density(d, 1), d)
        m = (rng.random((7, 9)) > 0.5).astype(np.uint8)
        np.testing.assert_array_equal(downsample_mask(m, 1), m)

    def test_single_point_sum_preserved(self):
        ann = PointAnnotation(width=64, height=48, points=[[31.0, 23.0]])
        d = generate_density_map(ann)
        assert abs(downsample_density(d, 4).sum() - 1.0) <= 1e-6

    def test_sum_preserved_with_padding(self, rng):
        d = rng.random((37, 53))
        out = downsample_density(d, 4)
        assert out.shape == (10, 14)
        assert abs(out.sum() - d.sum()) <= 1e-9

    def test_invalid_factor(self):
        with pytest.raises(ValueError):
            downsample_density(np.ones((4, 4)), 0)
        with pytest.raises(ValueError):
            downsample_mask(np.ones((4, 4), dtype=np.uint8), -2)

    def test_mask_any_of_semantics(self):
        m = np.zeros((4, 4), dtype=np.uint8)
        m[1, 1] = 1
        out = downsample_mask(m, 2)
        np.testing.assert_array_equal(out, [[1, 0], [0, 0]])
        assert downsample_mask(np.zeros((6, 6), dtype=np.uint8), 3).sum() == 0

    def test_mask_density_commutation_on_random_maps(self, rng):
        for _ in range(100):
            h = int(rng.integers(5, 40))
            w = int(rng.integers(5, 40))
            factor = int(rng.integers(1, 6))
            d = rng.random((h, w)) * (rng.random((h, w)) < 0.3)
            left = downsample_mask(derive_mask(d), factor)
            right = derive_mask(downsample_density(d, factor))
            np.testing.assert_array_equal(left, right)


class TestApplyRoi:
    def test_all_ones_roi_is_identity(self, rng):
        d = rng.random((12, 10))
        np.testing.assert_array_equal(apply_roi(d, np.ones((12, 10), dtype=np.uint8)), d)

    def test_single_pixel_roi(self, rng):
        d = rng.random((6, 6))
        roi = np.zeros((6, 6), dtype=np.uint8)
        roi[2, 3] = 1
        assert apply_roi(d, roi).sum() == d[2, 3]

    def test_roi_removes_masked_heads(self, rng):
        # heads live on either side of x=64 with a kernel-radius guard band,
        # so the zeroed half removes exactly the k heads annotated there
        left_x = rng.uniform(0, 48, size=18)
        right_x = rng.uniform(80, 127, size=12)
        ys = rng.uniform(0, 95, size=30)
        pts = np.stack([np.concatenate([left_x, right_x]), ys], axis=1)
        ann = PointAnnotation(width=128, height=96, points=pts)
        d = generate_density_map(ann, sigma=4, radius=15)
        roi = np.ones((96, 128), dtype=np.uint8)
        roi[:, 64:] = 0  # removes the 12 right-half heads
        masked = apply_roi(d, roi)
        assert abs(masked.sum() - 18) <= 1e-3 * 12 + 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_roi(np.ones((4, 4)), np.ones((5, 4), dtype=np.uint8))

    def test_empty_roi_rejected(self):
        with pytest.raises(ValueError):
            apply_roi(np.ones((4, 4)), np.zeros((4, 4), dtype=np.uint8))


def test_gt_config_validation():
    with pytest.raises(ValueError):
        GtConfig(sigma=0.0)
    with pytest.raises(ValueError):
        GtConfig(sigma=4.0, radius=7)
    with pytest.raises(ValueError):
        GtConfig(downsample=0)
    cfg = GtConfig()
    assert cfg.sigma == 4.0 and cfg.radius == 15 and cfg.downsample == 4

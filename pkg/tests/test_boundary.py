import numpy as np
import pytest

from rrnet import tensor as tg
from rrnet.boundary import (BoundaryConfig, boundary_mask, dilate,
                            extract_boundary, sobel_magnitude)


# -- brute-force references, independent of the implementation --------------

def ref_extract(gt):
    H, W = gt.shape
    out = np.zeros_like(gt)
    for y in range(H):
        for x in range(W):
            if not gt[y, x]:
                continue
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < H and 0 <= nx < W and gt[ny, nx] == 0:
                    out[y, x] = 1
                    break
    return out


def ref_dilate(mask, width):
    H, W = mask.shape
    out = np.zeros_like(mask)
    for y in range(H):
        for x in range(W):
            y0, y1 = max(0, y - width), min(H, y + width + 1)
            x0, x1 = max(0, x - width), min(W, x + width + 1)
            if mask[y0:y1, x0:x1].any():
                out[y, x] = 1
    return out


def block_gt():
    gt = np.zeros((5, 5), dtype=np.uint8)
    gt[1:4, 1:4] = 1
    return gt


class TestExtractBoundary:
    def test_all_zero(self):
        assert extract_boundary(np.zeros((6, 6), dtype=np.uint8)).sum() == 0

    def test_single_pixel(self):
        gt = np.zeros((5, 5), dtype=np.uint8)
        gt[2, 3] = 1
        np.testing.assert_array_equal(extract_boundary(gt), ref_extract(gt))
        assert extract_boundary(gt)[2, 3] == 1
        assert extract_boundary(gt).sum() == 1

    def test_centered_block_perimeter(self):
        gt = block_gt()
        expected = gt.copy()
        expected[2, 2] = 0  # interior pixel excluded
        np.testing.assert_array_equal(extract_boundary(gt), expected)
        assert extract_boundary(gt).sum() == 8

    def test_all_foreground_has_no_contour(self):
        # the frame itself is not an edge
        assert extract_boundary(np.ones((4, 4), dtype=np.uint8)).sum() == 0

    def test_frame_touching_object(self):
        gt = np.zeros((5, 5), dtype=np.uint8)
        gt[0:3, 0:3] = 1  # corner block: contour only along the fg/bg edge
        b = extract_boundary(gt)
        np.testing.assert_array_equal(b, ref_extract(gt))
        assert b.sum() == 5 and b[0, 0] == 0

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            extract_boundary(np.full((3, 3), 0.5))


class TestDilate:
    def test_width_zero_identity(self):
        rng = np.random.default_rng(0)
        m = (rng.random((8, 8)) < 0.3).astype(np.uint8)
        np.testing.assert_array_equal(dilate(m, 0), m)

    def test_single_pixel_width_one(self):
        m = np.zeros((5, 5), dtype=np.uint8)
        m[2, 2] = 1
        out = dilate(m, 1)
        expected = np.zeros((5, 5), dtype=np.uint8)
        expected[1:4, 1:4] = 1
        np.testing.assert_array_equal(out, expected)

    def test_default_width_is_five(self):
        assert BoundaryConfig().width == 5


class TestAgainstBruteForce:
    def test_random_masks_all_widths(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            gt = (rng.random((32, 32)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
            contour = extract_boundary(gt)
            np.testing.assert_array_equal(contour, ref_extract(gt))
            for w in range(7):
                np.testing.assert_array_equal(dilate(contour, w),
                                              ref_dilate(contour, w))

    def test_monotone_in_width(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            gt = (rng.random((16, 16)) < 0.4).astype(np.uint8)
            prev = boundary_mask(gt, BoundaryConfig(width=0))
            for w in range(1, 7):
                cur = boundary_mask(gt, BoundaryConfig(width=w))
                assert (cur >= prev).all()
                prev = cur


class TestBoundaryMask:
    def test_block_width_one_covers_all(self):
        band = boundary_mask(block_gt(), BoundaryConfig(width=1))
        assert band.sum() == 25

    def test_all_one_gt_empty(self):
        for w in (0, 2, 5):
            assert boundary_mask(np.ones((6, 6), dtype=np.uint8),
                                 BoundaryConfig(width=w)).sum() == 0

    def test_empty_gt_empty(self):
        assert boundary_mask(np.zeros((8, 8), dtype=np.uint8),
                             BoundaryConfig(width=5)).sum() == 0

    def test_band_straddles_contour(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            gt = np.zeros((12, 12), dtype=np.uint8)
            y, x = rng.integers(2, 9), rng.integers(2, 9)
            gt[y:y + 3, x:x + 3] = 1
            band = boundary_mask(gt, BoundaryConfig(width=1)).astype(bool)
            assert gt[band].any() and (1 - gt)[band].any()


class TestSobel:
    def test_constant_is_zero(self):
        x = tg.Tensor(np.full((1, 1, 5, 5), 0.5))  # exactly representable
        np.testing.assert_array_equal(sobel_magnitude(x).data, np.zeros((1, 1, 5, 5)))

    def test_vertical_step_saturates(self):
        m = np.zeros((1, 1, 5, 6))
        m[:, :, :, 3:] = 1.0
        out = sobel_magnitude(tg.Tensor(m)).data
        # pixel just left of the step sees gx = 1+2+1 = 4 -> magnitude 1
        assert out[0, 0, 2, 2] == 1.0

    def test_bounded_by_one(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = tg.Tensor(rng.random((1, 1, 7, 7)))
            assert sobel_magnitude(x).data.max() <= 1.0

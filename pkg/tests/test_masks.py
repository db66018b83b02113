import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.errors import DimensionMismatch, EmptyUnion, InputError, ParseError, ShapeMismatch
from src.masks import (
    BinaryMask,
    dilate,
    downsample_max,
    load_mask_image,
    mask_iou,
    mask_union,
    rle_decode,
    rle_encode,
    save_mask_image,
)


def _mask(rows):
    return BinaryMask.from_array(np.array(rows, dtype=bool))


class TestRle(unittest.TestCase):
    def test_starts_with_background_run(self):
        self.assertEqual(rle_encode(_mask([[1, 1, 0]])), [0, 2, 1])
        self.assertEqual(rle_encode(_mask([[0, 1, 1], [1, 0, 0]])), [1, 3, 2])

    def test_decode_matches_encode(self):
        mask = _mask([[0, 1, 1, 0], [1, 1, 0, 0], [0, 0, 0, 1]])
        decoded = rle_decode(rle_encode(mask), 4, 3)
        self.assertTrue(decoded.same_bits(mask))

    def test_decode_rejects_bad_runs(self):
        with self.assertRaises(ParseError):
            rle_decode([1, 2], 2, 2)
        with self.assertRaises(ParseError):
            rle_decode([5, -1], 2, 2)

    def test_empty_mask(self):
        self.assertEqual(rle_encode(BinaryMask.empty(0, 0)), [])


class TestIou(unittest.TestCase):
    def test_iou(self):
        a = _mask([[1, 1, 0, 0]])
        b = _mask([[0, 1, 1, 0]])
        self.assertAlmostEqual(mask_iou(a, b), 1 / 3)
        self.assertEqual(mask_iou(a, a), 1.0)
        self.assertEqual(mask_union(a, b).count(), 3)

    def test_errors(self):
        with self.assertRaises(EmptyUnion):
            mask_iou(BinaryMask.empty(3, 3), BinaryMask.empty(3, 3))
        with self.assertRaises(DimensionMismatch):
            mask_iou(BinaryMask.empty(3, 3), BinaryMask.empty(3, 4))
        with self.assertRaises(ShapeMismatch):
            BinaryMask(2, 2, np.zeros(3, dtype=bool))


class TestMorphology(unittest.TestCase):
    def test_dilate_center_and_corner(self):
        center = np.zeros((5, 5), dtype=bool)
        center[2, 2] = True
        self.assertEqual(dilate(BinaryMask.from_array(center), 1).count(), 9)
        corner = np.zeros((5, 5), dtype=bool)
        corner[0, 0] = True
        self.assertEqual(dilate(BinaryMask.from_array(corner), 1).count(), 4)
        self.assertEqual(dilate(BinaryMask.from_array(corner), 0).count(), 1)
        with self.assertRaises(InputError):
            dilate(BinaryMask.from_array(corner), -1)

    def test_downsample_max(self):
        arr = np.zeros((16, 16), dtype=bool)
        arr[9, 3] = True
        pooled = downsample_max(BinaryMask.from_array(arr), 8)
        np.testing.assert_array_equal(pooled, [[0.0, 0.0], [1.0, 0.0]])
        self.assertEqual(downsample_max(BinaryMask.from_array(np.ones((17, 17))), 8).shape, (3, 3))


class TestMaskImages(unittest.TestCase):
    def test_png_round_trip(self):
        mask = _mask([[0, 1, 1, 0], [1, 1, 0, 0]])
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "mask.png"
            save_mask_image(mask, path)
            self.assertTrue(load_mask_image(path).same_bits(mask))

    def test_missing_and_broken_images(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(InputError):
                load_mask_image(Path(tmp) / "missing.png")
            broken = Path(tmp) / "broken.png"
            broken.write_bytes(b"IAMADUCK")
            with self.assertRaises(ParseError):
                load_mask_image(broken)


if __name__ == "__main__":
    unittest.main()

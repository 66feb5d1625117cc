"""Smoke tests for the _imlx extension module."""
import math
import os
import tempfile
import unittest

import numpy as np

import _imlx


class MetricsSmoke(unittest.TestCase):
    def test_auc_worked_example(self):
        value, degenerate = _imlx.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        self.assertAlmostEqual(value, 0.75, places=12)
        self.assertFalse(degenerate)

    def test_auc_degenerate(self):
        value, degenerate = _imlx.auc([0.3, 0.4], [1, 1])
        self.assertTrue(degenerate)
        self.assertEqual(value, 0.5)

    def test_hamming_and_f1(self):
        self.assertAlmostEqual(_imlx.hamming_loss([1, 1, 0], [1, 0, 1]), 2 / 3, places=12)
        truth = [1] * 30 + [0] * 970
        pred = [0] * 1000
        self.assertAlmostEqual(_imlx.f1_label(pred, truth), 0.97 / 1.97, places=9)


class EnsembleSmoke(unittest.TestCase):
    def test_ctp_mean_and_agreement(self):
        members = np.array(
            [[[0.9]], [[0.8]], [[0.7]], [[0.6]], [[0.5]]], dtype=np.float32
        )
        out = _imlx.ctp(members)
        self.assertAlmostEqual(float(out["scores"][0, 0]), 0.7, places=6)
        self.assertEqual(int(out["agreement"][0, 0]), 5)

    def test_ptc_lw_majority(self):
        members = np.array(
            [[[0.9]], [[0.9]], [[0.1]], [[0.1]], [[0.9]]], dtype=np.float32
        )
        self.assertEqual(float(_imlx.ptc_lw(members)["scores"][0, 0]), 1.0)

    def test_ptc_mode_tie_rule(self):
        # sets {A},{A},{B},{B},{C} -> {A}
        members = np.array(
            [
                [[0.9, 0.1, 0.1]],
                [[0.9, 0.1, 0.1]],
                [[0.1, 0.9, 0.1]],
                [[0.1, 0.9, 0.1]],
                [[0.1, 0.1, 0.9]],
            ],
            dtype=np.float32,
        )
        scores = _imlx.ptc_mode(members)["scores"]
        self.assertEqual(scores.tolist(), [[1.0, 0.0, 0.0]])


class PreprocessSmoke(unittest.TestCase):
    def test_postprocess_fills_holes(self):
        mask = np.zeros((32, 32), dtype=np.uint8)
        mask[4:28, 2:15] = 1
        mask[10, 10] = 0
        out, warning = _imlx.postprocess_mask(mask)
        self.assertEqual(int(out[10, 10]), 1)
        self.assertFalse(warning)

    def test_crop_box(self):
        image = np.full((64, 64), 0.5, dtype=np.float32)
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[10:41, 5:51] = 1
        cropped, box, warning = _imlx.crop_to_roi(image, mask)
        self.assertEqual(box, (9, 4, 63, 51))
        self.assertEqual(cropped.shape, (55, 48))
        self.assertFalse(warning)

    def test_resize_checkerboard(self):
        img = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
        out = _imlx.resize(img, 8)
        self.assertEqual(out.shape, (8, 8))


class TaxonomySmoke(unittest.TestCase):
    TREE = "fracture\tclavicle fracture\nfracture\trib fracture\nrib fracture\tcallus rib fracture\n"

    def test_views_and_projection(self):
        self.assertEqual(_imlx.view_labels(self.TREE, "general"), ["fracture"])
        bits = _imlx.project(self.TREE, "general", {"callus rib fracture"})
        self.assertEqual(list(bits), [1])


class CorpusSmoke(unittest.TestCase):
    def test_synth_generate(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = _imlx.synth_generate(tmp, count=12, side=64, seed=3)
            self.assertTrue(os.path.exists(manifest))
            self.assertTrue(os.path.exists(os.path.join(tmp, "taxonomy.txt")))
            self.assertTrue(os.path.exists(os.path.join(tmp, "boxes.csv")))
            with open(manifest) as fh:
                lines = fh.read().strip().splitlines()
            self.assertEqual(len(lines), 13)  # header + 12 rows


if __name__ == "__main__":
    unittest.main()

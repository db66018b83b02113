import math
import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.dataprep import HandAnnotation
from src.errors import DegenerateInput, ShapeMismatch
from src.fusion import AttentionParams, init_attention_params
from src.losses import (
    EnhancementFeatures,
    EnhancementLosses,
    GridPrediction,
    HandLoss,
    LossComponents,
    LossWeights,
    enhancement_losses,
    hand_loss,
    l1_term,
    l2_term,
    object_grid_loss,
    total_loss,
)


def _hand(offset=0.0, vertices=True):
    rng = np.random.default_rng(0)
    return HandAnnotation(
        joints_3d=rng.normal(size=(21, 3)) + offset,
        joints_2d=rng.normal(size=(21, 2)),
        mano_pose=np.zeros(48),
        mano_shape=np.zeros(10),
        vertices_3d=rng.normal(size=(778, 3)) if vertices else None,
    )


class TestReductions(unittest.TestCase):
    def test_l2_sum_is_flattened_norm(self):
        self.assertEqual(l2_term(np.array([[3.0, 0.0], [0.0, 4.0]]), np.zeros((2, 2))), 5.0)

    def test_l2_mean_is_rms(self):
        self.assertEqual(l2_term(np.full(4, 2.0), np.zeros(4), reduction="mean"), 2.0)

    def test_l1(self):
        self.assertEqual(l1_term(np.array([1.0, -2.0, 3.0]), np.zeros(3)), 6.0)
        self.assertEqual(l1_term(np.array([1.0, -2.0, 3.0]), np.zeros(3), reduction="mean"), 2.0)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            l2_term(np.zeros(3), np.zeros(4))


class TestHandAndObjectLoss(unittest.TestCase):
    def test_hand_loss_terms(self):
        loss = hand_loss(_hand(offset=1.0), _hand())
        self.assertAlmostEqual(loss.joints, math.sqrt(63.0))
        self.assertEqual(loss.vertices, 0.0)
        self.assertEqual(loss.mano, 0.0)
        self.assertEqual(loss.total, loss.joints)

    def test_hand_loss_vertex_presence_must_match(self):
        with self.assertRaises(ShapeMismatch):
            hand_loss(_hand(vertices=False), _hand())
        self.assertEqual(hand_loss(_hand(vertices=False), _hand(vertices=False)).total, 0.0)

    def test_grid_loss_gated_by_grasping(self):
        gt = GridPrediction(np.zeros((4, 8, 2)), np.full((4, 8), 0.5))
        pred = GridPrediction(np.ones((4, 8, 2)), np.full((4, 8), 0.25))
        self.assertEqual(object_grid_loss(pred, gt, grasping=False), 0.0)
        self.assertEqual(object_grid_loss(pred, gt, grasping=True), 64.0 + 8.0)

    def test_grid_validation(self):
        with self.assertRaises(ShapeMismatch):
            GridPrediction(np.zeros((4, 8, 3)), np.zeros((4, 8)))
        with self.assertRaises(DegenerateInput):
            GridPrediction(np.zeros((1, 1, 2)), np.full((1, 1), 1.5))


class TestEnhancementAndTotal(unittest.TestCase):
    def _features(self, seed):
        rng = np.random.default_rng(seed)
        return EnhancementFeatures(rng.normal(size=(2, 5)), rng.normal(size=(2, 5)), rng.normal(size=(3, 4)))

    def test_ineligible_samples_contribute_zero(self):
        losses = enhancement_losses(self._features(0), self._features(1), init_attention_params(4, 2), eligible=False)
        self.assertEqual((losses.init, losses.roi, losses.mano), (0.0, 0.0, 0.0))

    def test_eligible_samples_are_positive(self):
        losses = enhancement_losses(self._features(0), self._features(1), init_attention_params(4, 2), eligible=True)
        self.assertGreater(losses.init, 0.0)
        self.assertGreater(losses.roi, 0.0)
        self.assertGreater(losses.mano, 0.0)

    def test_identical_features_give_zero(self):
        f = self._features(0)
        losses = enhancement_losses(f, f, AttentionParams.identity(4), eligible=True)
        self.assertEqual(losses, EnhancementLosses(0.0, 0.0, 0.0))

    def test_default_coefficients(self):
        expected = {"hand": 1.0, "object": 1.0, "switcher": 10.0, "init": 0.1, "roi": 0.1, "mano": 0.5}
        for name, coef in expected.items():
            with self.subTest(name=name):
                self.assertEqual(total_loss(LossComponents(**{name: 1.0})), coef)

    def test_build_and_custom_weights(self):
        components = LossComponents.build(HandLoss(3.0, 1.0, 1.0, 1.0), 2.0, 0.5, EnhancementLosses(1.0, 1.0, 1.0))
        self.assertAlmostEqual(total_loss(components), 3.0 + 2.0 + 5.0 + 0.7)
        self.assertEqual(total_loss(components, LossWeights(alpha=0.0, gamma_init=0.0, gamma_roi=0.0, gamma_mano=0.0)), 5.0)

    def test_invalid_inputs(self):
        with self.assertRaises(DegenerateInput):
            LossWeights(alpha=-1.0)
        with self.assertRaises(DegenerateInput):
            total_loss(LossComponents(hand=float("inf")))


if __name__ == "__main__":
    unittest.main()

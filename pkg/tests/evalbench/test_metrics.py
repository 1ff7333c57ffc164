import itertools
import unittest

import numpy as np
import pytest

from molpretrain.errors import InputError, ShapeError
from molpretrain.evalbench.metrics import class_weights, linear_fit, rmse, roc_auc, spearman
from molpretrain.featurize.normalizer import fit_normalizer


def pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


class TestClassWeights(unittest.TestCase):
    def test_imbalanced(self):
        np.testing.assert_allclose(class_weights(np.array([0, 0, 0, 1])), [4 / 6, 2.0])

    def test_balanced(self):
        np.testing.assert_allclose(class_weights(np.array([0, 1, 1, 0])), [1.0, 1.0])

    def test_single_class(self):
        with self.assertRaises(InputError):
            class_weights(np.array([1, 1, 1]))

    def test_non_binary(self):
        with self.assertRaises(InputError):
            class_weights(np.array([0, 1, 2]))


class TestRMSE(unittest.TestCase):
    def test_example(self):
        self.assertAlmostEqual(rmse(np.array([0.0, 2.0]), np.array([1.0, 1.0])), 1.0)

    def test_original_scale(self):
        labels = np.array([[10.0], [20.0], [30.0]])
        norm = fit_normalizer(labels, ("y",))
        standardised = norm.apply(labels).reshape(-1)
        self.assertAlmostEqual(rmse(standardised, labels.reshape(-1), norm), 0.0, places=9)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            rmse(np.zeros(3), np.zeros(2))


class TestRocAuc(unittest.TestCase):
    def test_example(self):
        self.assertAlmostEqual(roc_auc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1])), 0.75)

    def test_perfect(self):
        self.assertEqual(roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])), 1.0)

    def test_all_ties(self):
        self.assertEqual(roc_auc(np.full(6, 0.3), np.array([0, 1, 0, 1, 0, 1])), 0.5)

    def test_one_class(self):
        with self.assertRaises(InputError):
            roc_auc(np.array([0.1, 0.2]), np.array([1, 1]))


def test_roc_auc_matches_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 30))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        # coarse scores so ties occur
        scores = rng.integers(0, 5, n).astype(float)
        assert roc_auc(scores, labels) == pytest.approx(pair_count_auc(scores, labels), abs=1e-12)


class TestLinearFit(unittest.TestCase):
    def test_identity(self):
        fit = linear_fit(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
        self.assertAlmostEqual(fit.slope, 1.0)
        self.assertAlmostEqual(fit.intercept, 0.0)
        self.assertAlmostEqual(fit.r, 1.0)

    def test_negative_slope(self):
        x = np.array([0.0, 1.0, 2.0, 5.0])
        fit = linear_fit(x, -2 * x + 3)
        self.assertAlmostEqual(fit.slope, -2.0)
        self.assertAlmostEqual(fit.intercept, 3.0)
        self.assertAlmostEqual(fit.r, -1.0)

    def test_constant_x(self):
        with self.assertRaises(InputError):
            linear_fit(np.ones(3), np.arange(3.0))

    def test_single_point(self):
        with self.assertRaises(InputError):
            linear_fit(np.ones(1), np.ones(1))


def test_linear_fit_matches_normal_equations():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.normal(size=15)
        y = 0.7 * x + rng.normal(scale=0.3, size=15)
        design = np.stack([x, np.ones_like(x)], axis=1)
        slope, intercept = np.linalg.solve(design.T @ design, design.T @ y)
        fit = linear_fit(x, y)
        assert abs(fit.slope - slope) < 1e-9
        assert abs(fit.intercept - intercept) < 1e-9
        assert abs(fit.r - np.corrcoef(x, y)[0, 1]) < 1e-9


def test_spearman():
    assert spearman(np.array([1.0, 2.0, 3.0, 4.0]), np.array([10.0, 20.0, 25.0, 100.0])) == pytest.approx(1.0)
    assert spearman(np.array([1.0, 2.0, 3.0]), np.array([3.0, 2.0, 1.0])) == pytest.approx(-1.0)


if __name__ == "__main__":
    unittest.main()

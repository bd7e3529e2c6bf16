import math

import numpy as np
from numpy.testing import assert_allclose
from django.test import SimpleTestCase

from config.exceptions import DimensionError, DomainError
from .models import Metric, MetricSpec
from .similarity import (
    cosine,
    neg_sq_euclidean,
    pairwise_similarity,
    pairwise_similarity_backward,
    softmax_rows,
)


class ScalarMetricTestCase(SimpleTestCase):
    """cosine and neg_sq_euclidean on single vectors"""

    def test_cosine_examples(self):
        self.assertEqual(cosine([1, 0], [0, 1]), 0.0)
        self.assertAlmostEqual(cosine([2, 0], [5, 0]), 1.0, places=12)
        self.assertAlmostEqual(cosine([1, 2, 3], [4, 5, 6]), 0.974631846, places=9)

    def test_cosine_zero_norm_names_operand(self):
        with self.assertRaisesMessage(DomainError, "'b'"):
            cosine([1, 2], [0, 0])
        with self.assertRaisesMessage(DomainError, "'a'"):
            cosine([0, 0], [1, 2])

    def test_cosine_scale_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rng.normal(size=(2, 6))
            lam, mu = rng.uniform(0.1, 10.0, size=2)
            self.assertAlmostEqual(cosine(a, b), cosine(lam * a, mu * b), delta=1e-12)

    def test_neg_sq_euclidean_examples(self):
        self.assertEqual(neg_sq_euclidean([1, 2], [1, 2]), 0.0)
        self.assertEqual(neg_sq_euclidean([1, 2], [4, 6]), -25.0)
        self.assertEqual(neg_sq_euclidean([0, 0, 0], [1, 1, 1]), -3.0)

    def test_neg_sq_euclidean_length_mismatch(self):
        with self.assertRaises(DimensionError):
            neg_sq_euclidean([1, 2], [1, 2, 3])

    def test_neg_sq_euclidean_symmetric_and_translation_invariant(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a, b, t = rng.normal(size=(3, 5))
            self.assertEqual(neg_sq_euclidean(a, b), neg_sq_euclidean(b, a))
            self.assertAlmostEqual(neg_sq_euclidean(a + t, b + t), neg_sq_euclidean(a, b), delta=1e-12)
            self.assertLessEqual(neg_sq_euclidean(a, b), 0.0)


class SoftmaxTestCase(SimpleTestCase):

    def test_examples(self):
        assert_allclose(softmax_rows([[0, 0, 0]]), [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)
        assert_allclose(softmax_rows([[1000, 1000]]), [[0.5, 0.5]])
        assert_allclose(
            softmax_rows([[1, 2, 3]]), [[0.09003057, 0.24472847, 0.66524096]], atol=1e-8
        )

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            rows, cols = rng.integers(1, 8, size=2)
            m = rng.normal(scale=rng.uniform(0.1, 300.0), size=(rows, cols))
            out = softmax_rows(m)
            self.assertEqual(out.shape, m.shape)
            assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
            self.assertTrue(np.all(np.isfinite(out)))


class PairwiseSimilarityTestCase(SimpleTestCase):

    def test_examples(self):
        assert_allclose(pairwise_similarity([[1, 0]], [[1, 0], [0, 1]], Metric.COSINE), [[1, 0]])
        assert_allclose(pairwise_similarity([[0, 0]], [[1, 1]], Metric.NEG_SQ_EUCLIDEAN), [[-2]])
        assert_allclose(
            pairwise_similarity([[1, 2], [3, 4]], [[1, 2]], Metric.NEG_SQ_EUCLIDEAN), [[0], [-8]]
        )

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(5, 3))
        B = rng.normal(size=(5, 3))
        for metric, scalar in ((Metric.COSINE, cosine), (Metric.NEG_SQ_EUCLIDEAN, neg_sq_euclidean)):
            expected = [[scalar(a, b) for b in B] for a in A]
            assert_allclose(pairwise_similarity(A, B, metric), expected, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            pairwise_similarity(np.ones((2, 3)), np.ones((2, 4)), Metric.COSINE)

    def test_zero_row_under_cosine(self):
        with self.assertRaisesMessage(DomainError, "row 1 of 'B'"):
            pairwise_similarity([[1.0, 1.0]], [[1.0, 0.0], [0.0, 0.0]], Metric.COSINE)

    def test_unsquared_and_temperature(self):
        spec = MetricSpec(Metric.NEG_SQ_EUCLIDEAN, squared=False, temperature=2.0)
        assert_allclose(spec.similarity([[0, 0]], [[3, 4]]), [[-2.5]])

    def test_backward_matches_central_differences(self):
        rng = np.random.default_rng(21)
        A = rng.normal(size=(3, 4))
        B = rng.normal(size=(2, 4))
        G = rng.normal(size=(3, 2))
        eps = 1e-6
        specs = [
            MetricSpec(Metric.COSINE),
            MetricSpec(Metric.NEG_SQ_EUCLIDEAN),
            MetricSpec(Metric.NEG_SQ_EUCLIDEAN, squared=False, temperature=0.5),
        ]
        for spec in specs:
            dA, dB = spec.backward(A, B, G)
            for target, analytic in ((A, dA), (B, dB)):
                numeric = np.zeros_like(target)
                for idx in np.ndindex(target.shape):
                    saved = target[idx]
                    target[idx] = saved + eps
                    plus = float((spec.similarity(A, B) * G).sum())
                    target[idx] = saved - eps
                    minus = float((spec.similarity(A, B) * G).sum())
                    target[idx] = saved
                    numeric[idx] = (plus - minus) / (2 * eps)
                assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_backward_unknown_metric(self):
        with self.assertRaises(DomainError):
            pairwise_similarity_backward(np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 1)), "manhattan")

    def test_metric_spec_rejects_bad_temperature(self):
        from config.exceptions import ConfigError
        with self.assertRaises(ConfigError):
            MetricSpec(Metric.COSINE, temperature=0.0)
        self.assertTrue(math.isclose(MetricSpec().temperature, 1.0))

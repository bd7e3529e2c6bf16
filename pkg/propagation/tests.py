import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from config.exceptions import ContractViolationError, DimensionError
from episodes.models import make_rng
from networks.layers import init_params, project_residual
from networks.models import ProjectionLayer
from numerics.models import Metric, MetricSpec
from .attention import (
    apply_repulsion,
    attention_step,
    hardcode_support,
    initial_prototypes,
    propagate,
    repulsion_threshold,
)
from .heatmaps import diagonal_dominance, write_heatmaps
from .models import MaskSource, MinScope, Mode, PropagationConfig, SoftmaxAxis


def random_embeddings(rng, n_way, k_shot, m_query, d=4):
    return rng.normal(size=(n_way * k_shot, d)), rng.normal(size=(n_way * m_query, d))


class PrototypeTestCase(SimpleTestCase):

    def test_one_shot_prototypes_are_support_rows(self):
        Z = np.random.default_rng(0).normal(size=(4, 3))
        assert_array_equal(initial_prototypes(Z, 4, 1), Z)

    def test_midpoint(self):
        assert_array_equal(initial_prototypes([[1.0, 1.0], [3.0, 3.0]], 1, 2), [[2.0, 2.0]])

    def test_matches_mean_oracle(self):
        Z = np.random.default_rng(1).normal(size=(12, 5))
        expected = [[sum(Z[4 * n + k][j] for k in range(4)) / 4 for j in range(5)] for n in range(3)]
        assert_allclose(initial_prototypes(Z, 3, 4), expected, rtol=0, atol=1e-12)

    def test_row_count_checked(self):
        with self.assertRaises(DimensionError):
            initial_prototypes(np.ones((5, 2)), 2, 2)

    def test_hardcoded_support(self):
        assert_array_equal(hardcode_support(2, 2), [[1, 1, 0, 0], [0, 0, 1, 1]])
        assert_array_equal(hardcode_support(1, 4), [[1, 1, 1, 1]])
        assert_array_equal(hardcode_support(3, 1), np.eye(3))


class RepulsionTestCase(SimpleTestCase):

    def test_threshold_schedule(self):
        self.assertAlmostEqual(repulsion_threshold(1.5, 5, 10, 0), 0.03, places=15)
        self.assertAlmostEqual(repulsion_threshold(1.5, 5, 10, 9), 0.3, places=15)
        betas = [repulsion_threshold(1.5, 5, 10, l) for l in range(10)]
        self.assertTrue(all(a < b for a, b in zip(betas, betas[1:])))

    def test_threshold_rejects_last_plus_one(self):
        with self.assertRaises(ContractViolationError):
            repulsion_threshold(1.5, 5, 10, 10)

    def test_hand_example(self):
        A = np.array([[0.5, 0.3, 0.15, 0.05]])
        masked, mask, min_value, _ = apply_repulsion(A, 0.1)
        assert_array_equal(masked, [[0.5, 0.3, 0.15, -0.05]])
        assert_array_equal(mask, [[False, False, False, True]])
        self.assertEqual(float(min_value), 0.05)

    def test_row_scope(self):
        A = np.array([[0.6, 0.3, 0.1], [0.5, 0.45, 0.05]])
        masked, _, _, _ = apply_repulsion(A, 0.2, MinScope.ROW)
        assert_array_equal(masked, [[0.6, 0.3, -0.1], [0.5, 0.45, -0.05]])

    def test_query_scope_skips_support_zeros(self):
        A = np.array([[0.5, 0.0, 0.3, 0.2], [0.0, 0.5, 0.1, 0.4]])
        masked, mask, min_value, min_index = apply_repulsion(A, 0.25, MinScope.QUERY, n_support=2)
        self.assertEqual(float(min_value), 0.1)
        self.assertEqual(min_index, (1, 2))
        assert_array_equal(masked, [[0.5, -0.1, 0.3, -0.1], [-0.1, 0.5, -0.1, 0.4]])
        _, _, fallback, _ = apply_repulsion(A[:, :2], 0.25, MinScope.QUERY, n_support=2)
        self.assertEqual(float(fallback), 0.0)

    def test_attention_structure_over_random_episodes(self):
        rng = make_rng(17)
        configs = {
            MaskSource.SCORES: PropagationConfig(),
            MaskSource.RENORMALIZED: PropagationConfig(mask_source=MaskSource.RENORMALIZED),
        }
        for _ in range(1000):
            n_way, k_shot, m_query = rng.integers(1, 6), rng.integers(1, 4), rng.integers(0, 5)
            Z_s, Z_q = random_embeddings(rng, n_way, k_shot, m_query)
            C = initial_prototypes(Z_s, n_way, k_shot)
            layer = int(rng.integers(0, 2))
            for source, config in configs.items():
                record = attention_step(C, Z_s, Z_q, config, layer, n_layers=2)
                assert_allclose(record.attention.sum(axis=1), 1.0, atol=1e-6)
                support = record.attention[:, :n_way * k_shot]
                assert_array_equal(support, hardcode_support(n_way, k_shot) / record.row_sums[:, None])
                masked = record.masked_attention
                assert_array_equal(masked[record.mask], -record.min_value)
                self.assertEqual(masked[~record.mask].tobytes(), record.attention[~record.mask].tobytes())
                compared = record.scores if source == MaskSource.SCORES else record.attention
                self.assertTrue(np.all(compared[~record.mask] >= record.threshold))


class AttentionStepTestCase(SimpleTestCase):

    def test_support_only_attention_recovers_means(self):
        rng = np.random.default_rng(3)
        Z_s = rng.normal(size=(6, 3))
        C = rng.normal(size=(3, 3))
        config = PropagationConfig(repulsion_enabled=False)
        record = attention_step(C, Z_s, np.zeros((0, 3)), config, 0, repulsion=False)
        self.assertEqual(record.rectified.tobytes(), initial_prototypes(Z_s, 3, 2).tobytes())

    def test_column_softmax_normalizes_each_query(self):
        rng = np.random.default_rng(4)
        Z_s, Z_q = random_embeddings(rng, 3, 2, 4)
        C = initial_prototypes(Z_s, 3, 2)
        record = attention_step(C, Z_s, Z_q, PropagationConfig(), 0, repulsion=False)
        assert_allclose(record.query_attention.sum(axis=0), 1.0, atol=1e-12)
        row = attention_step(C, Z_s, Z_q, PropagationConfig(softmax_axis=SoftmaxAxis.ROW), 0, repulsion=False)
        assert_allclose(row.query_attention.sum(axis=1), 1.0, atol=1e-12)

    def test_scores_mask_source_compares_before_renormalization(self):
        rng = np.random.default_rng(5)
        Z_s, Z_q = random_embeddings(rng, 2, 1, 3)
        C = initial_prototypes(Z_s, 2, 1)
        config = PropagationConfig(mask_source=MaskSource.SCORES)
        record = attention_step(C, Z_s, Z_q, config, 1, n_layers=2)
        assert_array_equal(record.mask, record.scores < record.threshold)

    def test_default_mask_is_partial_for_several_classes(self):
        rng = np.random.default_rng(6)
        for n_way in (2, 5):
            Z_s, Z_q = random_embeddings(rng, n_way, 1, 15)
            C = initial_prototypes(Z_s, n_way, 1)
            for layer in range(2):
                record = attention_step(C, Z_s, Z_q, PropagationConfig(), layer, n_layers=2)
                support_mask = record.mask[:, :n_way]
                assert_array_equal(support_mask, 1 - np.eye(n_way))
                self.assertFalse(record.mask.all())

    def test_renormalized_mask_saturates_during_training(self):
        rng = np.random.default_rng(6)
        Z_s = rng.normal(size=(5, 4))
        # every query sits on a support row, so each row sums to at least 1 + 15 / 5
        Z_q = np.repeat(Z_s, 15, axis=0)
        C = initial_prototypes(Z_s, 5, 1)
        config = PropagationConfig(mask_source=MaskSource.RENORMALIZED)
        record = attention_step(C, Z_s, Z_q, config, 1, n_layers=2)
        self.assertTrue(record.mask.all())

    def test_layer_index_out_of_range(self):
        Z_s, Z_q = random_embeddings(np.random.default_rng(0), 2, 1, 1)
        with self.assertRaises(ContractViolationError):
            attention_step(initial_prototypes(Z_s, 2, 1), Z_s, Z_q, PropagationConfig(), 2, n_layers=2)


class PropagateTestCase(SimpleTestCase):

    def setUp(self):
        self.params = init_params(4, [], 4, 3, make_rng(0), n_projections=1)

    def test_identity_stack_without_queries(self):
        rng = np.random.default_rng(6)
        Z_s = rng.normal(size=(6, 4))
        config = PropagationConfig(repulsion_enabled=False)
        expected = initial_prototypes(Z_s, 3, 2)
        for n_layers in (1, 2, 10):
            trace = propagate(self.params, Z_s, np.zeros((0, 4)), config, Mode.EVAL, n_way=3, n_layers=n_layers)
            self.assertEqual(trace.final_prototypes.tobytes(), expected.tobytes())
            assert_allclose(trace.final_prototypes, Z_s.reshape(3, 2, 4).mean(axis=1), atol=1e-12)

    def test_single_layer_unrolls(self):
        rng = np.random.default_rng(7)
        self.params.projection.weight[:] = rng.normal(scale=0.1, size=(4, 4))
        self.params.projection.bias[:] = rng.normal(scale=0.1, size=4)
        Z_s, Z_q = random_embeddings(rng, 3, 2, 2)
        config = PropagationConfig(layers_eval=1)
        trace = propagate(self.params, Z_s, Z_q, config, Mode.EVAL, n_way=3)
        record = attention_step(initial_prototypes(Z_s, 3, 2), Z_s, Z_q, config, 0, n_layers=1)
        assert_array_equal(trace.layers[0].masked_attention, record.masked_attention)
        assert_array_equal(trace.final_prototypes, project_residual(self.params, record.rectified))
        assert_array_equal(trace.final_embeddings, project_residual(self.params, np.vstack([Z_s, Z_q])))
        self.assertEqual(len(trace.prototypes), 2)

    def test_eval_does_not_touch_params(self):
        before = self.params.checksum()
        Z_s, Z_q = random_embeddings(np.random.default_rng(8), 3, 1, 5)
        propagate(self.params, Z_s, Z_q, PropagationConfig(), Mode.EVAL, n_way=3)
        self.assertEqual(self.params.checksum(), before)

    def test_mode_selects_depth(self):
        Z_s, Z_q = random_embeddings(np.random.default_rng(9), 3, 1, 2)
        config = PropagationConfig(layers_train=2, layers_eval=5)
        self.assertEqual(propagate(self.params, Z_s, Z_q, config, Mode.TRAIN, n_way=3).n_layers, 2)
        self.assertEqual(propagate(self.params, Z_s, Z_q, config, Mode.EVAL, n_way=3).n_layers, 5)

    def test_unshared_projection_per_layer(self):
        params = init_params(4, [], 4, 3, make_rng(0), n_projections=3)
        params.projections[1] = ProjectionLayer(np.eye(4), np.zeros(4))
        Z_s, Z_q = random_embeddings(np.random.default_rng(10), 3, 1, 1)
        config = PropagationConfig(layers_eval=3, share_projection=False, repulsion_enabled=False)
        trace = propagate(params, Z_s, Z_q, config, Mode.EVAL, n_way=3)
        assert_array_equal(trace.embeddings[2], 2 * trace.embeddings[1])
        assert_array_equal(trace.embeddings[3], trace.embeddings[2])


class HeatmapTestCase(SimpleTestCase):

    def test_dominance_and_files(self):
        import tempfile
        from pathlib import Path

        params = init_params(2, [], 2, 2, make_rng(0))
        Z_s = np.array([[0.0, 0.0], [10.0, 10.0]])
        Z_q = np.array([[0.1, 0.0], [9.0, 10.0], [10.0, 9.5], [0.0, 0.2]])
        labels = np.array([0, 1, 1, 0])
        config = PropagationConfig(layers_eval=2, repulsion_enabled=False)
        trace = propagate(params, Z_s, Z_q, config, Mode.EVAL, n_way=2)
        with tempfile.TemporaryDirectory() as tmp:
            scores = write_heatmaps(trace, labels, MetricSpec(Metric.NEG_SQ_EUCLIDEAN), tmp)
            files = sorted(p.name for p in Path(tmp).glob("heatmap_layer*.csv"))
            self.assertEqual(files, ["heatmap_layer0.csv", "heatmap_layer1.csv", "heatmap_layer2.csv"])
            self.assertIn("diagonal_dominance", (Path(tmp) / "summary.txt").read_text())
        self.assertEqual(scores[0], 1.0)
        self.assertEqual(diagonal_dominance(np.array([[0.0, 1.0]]), [0]), 0.0)

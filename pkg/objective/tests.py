import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from config.exceptions import ContractViolationError, DimensionError
from episodes.datasets import gen_synthetic
from episodes.models import Episode, Split, make_rng
from episodes.sampling import sample_episode
from networks.layers import build_params, embed_batch, init_params
from networks.models import ModelConfig
from propagation.attention import propagate
from propagation.models import MaskSource, MinScope, Mode, PropagationConfig
from .engine import forward_backward, predict
from .gradcheck import check_gradients, run_gradcheck, standard_cases, tiny_episode, tiny_params
from .losses import full_loss, global_likelihood, global_loss, local_likelihood, local_loss
from .models import LossReduction, ObjectiveConfig, PredictionDistribution, ScheduleArm


def random_episode(rng, n_way, k_shot, m_query, dim):
    return Episode(
        n_way=n_way,
        k_shot=k_shot,
        m_query=m_query,
        support=rng.normal(size=(n_way * k_shot, dim)),
        support_labels=np.repeat(np.arange(n_way), k_shot),
        query=rng.normal(size=(n_way * m_query, dim)),
        query_labels=np.repeat(np.arange(n_way), m_query),
        class_map=np.arange(n_way),
    )


def oracle_predict(params, episode, n_layers, constant=1.5, mask_source=MaskSource.SCORES):
    """Scalar-loop local prediction: neg. squared Euclidean, column softmax, global-min repulsion."""
    layers = params.embedder.layers

    def embed(x):
        h = list(x)
        for i, layer in enumerate(layers):
            out = [sum(layer.weight[o][j] * h[j] for j in range(len(h))) + layer.bias[o]
                   for o in range(layer.weight.shape[0])]
            h = [max(v, 0.0) for v in out] if i < len(layers) - 1 else out
        return h

    def sim(a, b):
        return -sum((a[t] - b[t]) ** 2 for t in range(len(a)))

    def softmax(values):
        top = max(values)
        exps = [math.exp(v - top) for v in values]
        return [e / sum(exps) for e in exps]

    projection = params.projection

    def project(v):
        return [sum(projection.weight[o][t] * v[t] for t in range(len(v))) + projection.bias[o] + v[o]
                for o in range(len(v))]

    N, K = episode.n_way, episode.k_shot
    S = N * K
    Z = [embed(x) for x in episode.inputs]
    d = len(Z[0])
    C = [[sum(Z[n * K + k][t] for k in range(K)) / K for t in range(d)] for n in range(N)]

    for layer in range(n_layers):
        queries = Z[S:]
        columns = [softmax([sim(C[n], q) for n in range(N)]) for q in queries]
        A, raw = [], []
        for n in range(N):
            scores = [1.0 if j // K == n else 0.0 for j in range(S)] + [col[n] for col in columns]
            total = sum(scores)
            raw.append(scores)
            A.append([s / total for s in scores])
        beta = constant / (N * (n_layers - layer))
        smallest = min(min(row) for row in A)
        compare = raw if mask_source == MaskSource.SCORES else A
        A = [[-smallest if compare[n][j] < beta else A[n][j] for j in range(len(A[n]))] for n in range(N)]
        rectified = [[sum(A[n][j] * Z[j][t] for j in range(len(Z))) for t in range(d)] for n in range(N)]
        C = [project(c) for c in rectified]
        Z = [project(z) for z in Z]

    return [softmax([sim(z, C[n]) for n in range(N)]) for z in Z[S:]]


class LikelihoodTestCase(SimpleTestCase):

    def setUp(self):
        self.params = init_params(2, [], 2, 2, make_rng(0))

    def test_single_training_class(self):
        params = init_params(2, [], 2, 1, make_rng(0))
        dist = global_likelihood(params, [[1.0, 2.0], [-3.0, 0.5]])
        assert_array_equal(dist.probs, [[1.0], [1.0]])

    def test_identical_head_rows_are_uniform(self):
        self.params.global_head.weight[:] = [[0.3, 0.4], [0.3, 0.4]]
        assert_allclose(global_likelihood(self.params, [[1.0, -2.0]]).probs, [[0.5, 0.5]], atol=1e-15)

    def test_global_cosine_example(self):
        self.params.global_head.weight[:] = np.eye(2)
        dist = global_likelihood(self.params, [[1.0, 0.0]])
        assert_allclose(dist.probs, [[0.7310586, 0.2689414]], atol=1e-7)

    def test_global_width_mismatch(self):
        with self.assertRaises(DimensionError):
            global_likelihood(self.params, [[1.0, 0.0, 0.0]])

    def test_local_examples(self):
        dist = local_likelihood([[0.0, 0.0]], [[0.0, 0.0], [10.0, 0.0]])
        self.assertAlmostEqual(dist.probs[0, 0], 1.0, places=12)
        dist = local_likelihood([[0.0, 0.0]], [[1.0, 0.0], [0.0, 2.0]])
        assert_allclose(dist.probs, [[0.9525741, 0.0474259]], atol=1e-7)
        dist = local_likelihood([[0.0, 0.0]], [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        assert_allclose(dist.probs, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_argmax_ties_go_to_lowest_index(self):
        self.assertEqual(PredictionDistribution([[0.4, 0.4, 0.2]]).predicted.tolist(), [0])


class LossTestCase(SimpleTestCase):

    def test_global_loss_examples(self):
        self.assertEqual(global_loss(PredictionDistribution([[1.0]]), [0], LossReduction.SUM), 0.0)
        uniform = PredictionDistribution(np.full((3, 4), 0.25))
        self.assertAlmostEqual(global_loss(uniform, [0, 1, 3], LossReduction.SUM), 3 * math.log(4), places=12)
        self.assertAlmostEqual(global_loss(uniform, [0, 1, 3]), math.log(4), places=12)
        skewed = PredictionDistribution([[0.9, 0.1], [0.9, 0.1]])
        self.assertAlmostEqual(global_loss(skewed, [0, 0], LossReduction.SUM), -2 * math.log(0.9), places=12)

    def test_label_out_of_range(self):
        with self.assertRaises(ContractViolationError):
            global_loss(PredictionDistribution([[0.5, 0.5]]), [2])

    def test_local_loss_examples(self):
        self.assertEqual(local_loss(PredictionDistribution([[1.0]]), [0]), 0.0)
        self.assertAlmostEqual(local_loss(PredictionDistribution(np.full((1, 5), 0.2)), [3]), math.log(5), places=12)

    def test_local_loss_matches_scalar_oracle(self):
        rng = np.random.default_rng(21)
        Z_q, C = rng.normal(size=(6, 3)), rng.normal(size=(3, 3))
        labels = [0, 0, 1, 1, 2, 2]
        expected = 0.0
        for i, label in enumerate(labels):
            logits = [-sum((Z_q[i][t] - C[n][t]) ** 2 for t in range(3)) for n in range(3)]
            expected -= logits[label] - math.log(sum(math.exp(v) for v in logits))
        loss = local_loss(local_likelihood(Z_q, C), labels, LossReduction.SUM)
        self.assertAlmostEqual(loss, expected, delta=1e-10)

    def test_full_loss(self):
        self.assertEqual(full_loss(2.0, 3.0, 0), 2.0)
        self.assertAlmostEqual(full_loss(2.0, 3.0, 0.1), 2.3, places=15)
        self.assertEqual(full_loss(1.25, 0.5, 1), 1.75)
        with self.assertRaises(ContractViolationError):
            full_loss(1.0, 1.0, -0.1)


class ForwardBackwardTestCase(SimpleTestCase):

    def setUp(self):
        self.episode = tiny_episode()
        self.params = tiny_params()
        self.prop_config = PropagationConfig()

    def test_report_satisfies_combination(self):
        for arm in (ScheduleArm.COOPERATIVE, ScheduleArm.LOCAL_ONLY, ScheduleArm.GLOBAL_ONLY):
            report, _ = forward_backward(self.params, self.episode, self.prop_config, ObjectiveConfig(), arm)
            self.assertAlmostEqual(report.full_loss, report.global_loss + report.alpha * report.local_loss,
                                   delta=1e-9)
            self.assertGreaterEqual(report.global_loss, 0.0)
            self.assertGreaterEqual(report.local_loss, 0.0)

    def test_global_head_weight_matches_finite_difference(self):
        _, grads = forward_backward(self.params, self.episode, self.prop_config, ObjectiveConfig(), "cooperative")
        from .gradcheck import numeric_gradient
        from .engine import loss_report

        numeric = numeric_gradient(
            self.params, "global_head.weight",
            lambda: loss_report(self.params, self.episode, self.prop_config, ObjectiveConfig()).full_loss,
        )
        analytic, expected = grads["global_head.weight"][0, 1], numeric[0, 1]
        self.assertLessEqual(abs(analytic - expected), 1e-4 * max(abs(analytic), abs(expected), 1e-3))

    def test_every_case_passes_gradient_check(self):
        results = run_gradcheck()
        self.assertEqual(len(results), 18)
        for result in results:
            self.assertTrue(result.passed, f"{result.case}: {result.failures[:3]}")

    def test_repulsion_cases_mask_part_of_every_layer(self):
        Z = embed_batch(self.params, self.episode.inputs)
        for case, _, prop_config, _ in standard_cases():
            if not prop_config.repulsion_enabled:
                continue
            trace = propagate(self.params, Z[:2], Z[2:], prop_config, Mode.TRAIN, n_way=2)
            for record in trace.layers:
                self.assertTrue(record.mask.any(), case)
                self.assertFalse(record.mask.all(), case)
                self.assertGreater(np.abs(record.rectified).max(), 0.0, case)
                if prop_config.min_scope == MinScope.QUERY:
                    self.assertGreater(float(record.min_value), 0.0, case)
                    self.assertTrue(np.any(record.masked_attention < 0), case)

    def test_gradient_check_with_hidden_layer_and_raw_prototypes(self):
        params = init_params(3, [4], 2, 3, make_rng(5))
        params.projection.weight[:] = 0.1 * np.eye(2)
        config = ObjectiveConfig(alpha=1.0, local_on_raw_prototypes=True)
        result = check_gradients(params, self.episode, self.prop_config, config, ScheduleArm.COOPERATIVE)
        self.assertTrue(result.passed, result.failures[:3])

    def test_local_only_leaves_global_head_untouched(self):
        _, grads = forward_backward(
            self.params, self.episode, self.prop_config, ObjectiveConfig(), ScheduleArm.LOCAL_ONLY
        )
        self.assertFalse(np.any(grads["global_head.weight"]))

    def test_zero_alpha_equals_global_only(self):
        _, cooperative = forward_backward(
            self.params, self.episode, self.prop_config, ObjectiveConfig(alpha=0.0), ScheduleArm.COOPERATIVE
        )
        _, global_only = forward_backward(
            self.params, self.episode, self.prop_config, ObjectiveConfig(), ScheduleArm.GLOBAL_ONLY
        )
        for name, value in cooperative.items():
            self.assertEqual(value.tobytes(), global_only[name].tobytes(), name)

    def test_pretrain_finetune_has_no_single_step_loss(self):
        with self.assertRaises(ContractViolationError):
            forward_backward(self.params, self.episode, self.prop_config, ObjectiveConfig(),
                             ScheduleArm.PRETRAIN_FINETUNE)


class PredictTestCase(SimpleTestCase):

    def setUp(self):
        self.params = init_params(2, [], 2, 2, make_rng(0))
        self.params.embedder.layers[0].weight[:] = np.eye(2)
        support = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        self.episode = Episode(
            n_way=3, k_shot=1, m_query=1,
            support=support, support_labels=np.arange(3),
            query=support.copy(), query_labels=np.arange(3),
            class_map=np.arange(3),
        )

    def test_self_queries_are_recovered(self):
        transductive = PropagationConfig(layers_eval=10)
        self.assertEqual(predict(self.params, self.episode, transductive).accuracy(self.episode.query_labels), 1.0)
        inductive = PropagationConfig(layers_eval=0)
        self.assertEqual(predict(self.params, self.episode, inductive).accuracy(self.episode.query_labels), 1.0)

    def test_matches_scalar_oracle(self):
        rng = make_rng(31)
        params = init_params(4, [5], 3, 6, rng)
        params.projection.weight[:] = 0.1 * rng.normal(size=(3, 3))
        params.projection.bias[:] = 0.1 * rng.normal(size=3)
        episode = random_episode(rng, 3, 2, 2, 4)
        for source in (MaskSource.SCORES, MaskSource.RENORMALIZED):
            config = PropagationConfig(layers_eval=3, mask_source=source)
            probs = predict(params, episode, config).probs
            assert_allclose(probs, oracle_predict(params, episode, 3, mask_source=source), rtol=0, atol=1e-10)

    def test_deterministic_and_label_blind(self):
        rng = make_rng(32)
        episode = random_episode(rng, 3, 2, 3, 2)
        first = predict(self.params, episode, PropagationConfig()).probs
        episode.query_labels = episode.query_labels[::-1].copy()
        second = predict(self.params, episode, PropagationConfig()).probs
        self.assertEqual(first.tobytes(), second.tobytes())

    def test_relabeling_equivariance(self):
        rng = make_rng(33)
        episode = random_episode(rng, 4, 2, 3, 2)
        permutation = np.array([2, 0, 3, 1])
        config = PropagationConfig(layers_eval=4, repulsion_enabled=False)
        original = predict(self.params, episode, config).probs
        relabeled = predict(self.params, episode.relabel(permutation), config).probs
        inverse = np.argsort(permutation)
        q_order = np.concatenate([np.flatnonzero(episode.query_labels == inverse[n]) for n in range(4)])
        assert_allclose(relabeled[:, permutation], original[q_order], rtol=0, atol=1e-10)

    def test_random_model_is_at_chance(self):
        rng = make_rng(34)
        dataset = gen_synthetic(25, 20, 4, 1.0, 0.0, rng)
        params = init_params(4, [8], 4, dataset.n_train_classes, make_rng(35))
        config = PropagationConfig(layers_eval=2, repulsion_enabled=False)
        accuracies = []
        for _ in range(1000):
            episode = sample_episode(dataset, Split.TEST, 5, 1, 15, rng)
            accuracies.append(predict(params, episode, config).accuracy(episode.query_labels))
        mean = float(np.mean(accuracies))
        ci95 = 1.96 * float(np.std(accuracies, ddof=1)) / math.sqrt(len(accuracies))
        self.assertLess(abs(mean - 0.2), max(3 * ci95, 0.03))


class DefaultPropagationTestCase(SimpleTestCase):

    def setUp(self):
        self.dataset = gen_synthetic(10, 50, 16, 1.5, 3.0, make_rng(7))
        self.params = build_params(ModelConfig(), 16, self.dataset.n_train_classes, 7)
        self.episode = sample_episode(self.dataset, Split.TRAIN, 5, 1, 15, make_rng(8))

    def test_training_layers_keep_distinct_prototypes(self):
        Z = embed_batch(self.params, self.episode.inputs)
        trace = propagate(self.params, Z[:5], Z[5:], PropagationConfig(), Mode.TRAIN, n_way=5)
        self.assertEqual(trace.n_layers, 2)
        for record in trace.layers:
            self.assertTrue(record.mask.any())
            self.assertFalse(record.mask.all())
        spread = np.ptp(trace.final_prototypes, axis=0)
        self.assertGreater(float(spread.max()), 1e-3)

    def test_local_loss_reaches_the_embedder(self):
        _, grads = forward_backward(
            self.params, self.episode, PropagationConfig(), ObjectiveConfig(), ScheduleArm.LOCAL_ONLY
        )
        self.assertGreater(float(np.abs(grads["embedder.0.weight"]).max()), 1e-6)

    def test_default_depth_beats_chance_on_separated_data(self):
        dataset = gen_synthetic(25, 20, 4, 0.5, 5.0, make_rng(36))
        params = init_params(4, [], 4, dataset.n_train_classes, make_rng(0))
        params.embedder.layers[0].weight[:] = np.eye(4)
        rng = make_rng(37)
        accuracies = []
        for _ in range(30):
            episode = sample_episode(dataset, Split.TEST, 5, 1, 15, rng)
            accuracies.append(predict(params, episode, PropagationConfig()).accuracy(episode.query_labels))
        self.assertGreater(float(np.mean(accuracies)), 0.6)

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from django.test import SimpleTestCase

from config.exceptions import CheckpointError, DimensionError
from episodes.models import make_rng
from .checkpoints import dumps, loads
from .layers import (
    embed_backward,
    embed_batch,
    embed_forward,
    he_uniform_bound,
    init_params,
    project_backward,
    project_forward,
    project_residual,
)
from .models import DenseLayer, Embedder, GlobalHead, GradientBag, ModelParams, ProjectionLayer


def hand_params(layers, d, n_train=2, projection=None):
    projection = projection or ProjectionLayer(np.zeros((d, d)), np.zeros(d))
    return ModelParams(
        embedder=Embedder([DenseLayer(np.asarray(w, float), np.asarray(b, float)) for w, b in layers]),
        global_head=GlobalHead(np.ones((n_train, d))),
        projections=[projection],
    )


class EmbedderTestCase(SimpleTestCase):

    def test_identity_layer(self):
        params = hand_params([(np.eye(2), [0, 0])], d=2)
        assert_array_equal(embed_batch(params, [[1.0, 2.0]]), [[1.0, 2.0]])

    def test_zero_weights_return_bias(self):
        params = hand_params([(np.zeros((3, 2)), [1, -2, 3])], d=3)
        out = embed_batch(params, np.random.default_rng(0).normal(size=(4, 2)))
        assert_array_equal(out, np.tile([1.0, -2.0, 3.0], (4, 1)))

    def test_two_layer_matches_scalar_loop(self):
        W1 = [[1.0, -1.0], [0.5, 2.0], [-1.0, 0.0]]
        b1 = [0.1, -0.2, 0.3]
        W2 = [[1.0, 0.0, -1.0], [2.0, 1.0, 0.5]]
        b2 = [0.0, 1.0]
        params = hand_params([(W1, b1), (W2, b2)], d=2)
        x = [1.0, 0.0]
        hidden = [max(0.0, sum(W1[i][j] * x[j] for j in range(2)) + b1[i]) for i in range(3)]
        expected = [sum(W2[k][i] * hidden[i] for i in range(3)) + b2[k] for k in range(2)]
        assert_allclose(embed_batch(params, [x])[0], expected, rtol=0, atol=1e-15)

    def test_width_mismatch(self):
        params = hand_params([(np.eye(2), [0, 0])], d=2)
        with self.assertRaises(DimensionError):
            embed_batch(params, np.ones((1, 3)))

    def test_row_permutation_equivariance(self):
        params = init_params(4, [5], 3, 2, make_rng(1))
        X = np.random.default_rng(2).normal(size=(6, 4))
        perm = np.array([3, 0, 5, 1, 2, 4])
        assert_array_equal(embed_batch(params, X[perm]), embed_batch(params, X)[perm])

    def test_backward_matches_central_differences(self):
        params = init_params(3, [4], 2, 2, make_rng(3))
        X = np.random.default_rng(4).normal(size=(5, 3))
        G = np.random.default_rng(5).normal(size=(5, 2))
        out, cache = embed_forward(params, X)
        grads = GradientBag.zeros_like(params)
        embed_backward(params, cache, G, grads)
        eps = 1e-6
        for name, value in params.named_tensors():
            if not name.startswith("embedder"):
                continue
            for idx in np.ndindex(value.shape):
                saved = value[idx]
                value[idx] = saved + eps
                plus = float((embed_batch(params, X) * G).sum())
                value[idx] = saved - eps
                minus = float((embed_batch(params, X) * G).sum())
                value[idx] = saved
                self.assertAlmostEqual(grads[name][idx], (plus - minus) / (2 * eps), delta=1e-6)


class ProjectionTestCase(SimpleTestCase):

    def test_zero_projection_is_identity(self):
        params = init_params(2, [], 3, 2, make_rng(0))
        M = np.random.default_rng(1).normal(size=(7, 3))
        self.assertEqual(project_residual(params, M).tobytes(), M.tobytes())

    def test_identity_weight_doubles(self):
        params = hand_params([(np.eye(2), [0, 0])], d=2, projection=ProjectionLayer(np.eye(2), np.zeros(2)))
        M = np.array([[1.0, -3.0], [0.5, 2.0]])
        assert_array_equal(project_residual(params, M), 2 * M)

    def test_hand_example(self):
        proj = ProjectionLayer(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1.0, 1.0]))
        params = hand_params([(np.eye(2), [0, 0])], d=2, projection=proj)
        assert_array_equal(project_residual(params, [[2.0, 3.0]]), [[6.0, 6.0]])

    def test_width_mismatch(self):
        params = init_params(2, [], 3, 2, make_rng(0))
        with self.assertRaises(DimensionError):
            project_residual(params, np.ones((1, 2)))

    def test_backward_with_relu(self):
        rng = np.random.default_rng(8)
        proj = ProjectionLayer(rng.normal(size=(3, 3)), rng.normal(size=3))
        params = hand_params([(np.eye(3), np.zeros(3))], d=3, projection=proj)
        M = rng.normal(size=(4, 3))
        G = rng.normal(size=(4, 3))
        for relu in (False, True):
            out, pre = project_forward(proj, M, relu)
            grads = GradientBag.zeros_like(params)
            dM = project_backward(params, 0, M, pre, G, grads, relu)
            eps = 1e-6
            numeric = np.zeros_like(M)
            for idx in np.ndindex(M.shape):
                saved = M[idx]
                M[idx] = saved + eps
                plus = float((project_forward(proj, M, relu)[0] * G).sum())
                M[idx] = saved - eps
                minus = float((project_forward(proj, M, relu)[0] * G).sum())
                M[idx] = saved
                numeric[idx] = (plus - minus) / (2 * eps)
            assert_allclose(dM, numeric, rtol=1e-6, atol=1e-8)


class InitAndCheckpointTestCase(SimpleTestCase):

    def test_same_seed_same_params(self):
        a = init_params(16, [32], 8, 6, make_rng(42))
        b = init_params(16, [32], 8, 6, make_rng(42))
        self.assertEqual(a.checksum(), b.checksum())

    def test_projection_starts_at_zero(self):
        params = init_params(16, [32], 8, 6, make_rng(42), n_projections=3)
        for proj in params.projections:
            self.assertEqual(np.linalg.norm(proj.weight), 0.0)
            self.assertEqual(np.linalg.norm(proj.bias), 0.0)

    def test_he_bound(self):
        self.assertAlmostEqual(he_uniform_bound(16), 0.6124, places=4)
        params = init_params(16, [], 4, 3, make_rng(0))
        self.assertLessEqual(np.abs(params.embedder.layers[0].weight).max(), he_uniform_bound(16))

    def test_checkpoint_round_trip_is_bit_exact(self):
        params = init_params(5, [7, 3], 4, 6, make_rng(9), n_projections=2)
        params.projections[1].weight[:] = np.float32(0.25)
        blob = dumps(params)
        self.assertTrue(blob.startswith(b"REMP1"))
        restored = loads(blob)
        self.assertEqual(restored.checksum(), params.checksum())
        self.assertEqual(dumps(restored), blob)

    def test_checkpoint_rejects_garbage(self):
        with self.assertRaises(CheckpointError):
            loads(b"NOPE!")
        blob = dumps(init_params(2, [], 2, 2, make_rng(0)))
        with self.assertRaises(CheckpointError):
            loads(blob[:-3])

import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from config.exceptions import ConfigError, NonFiniteError
from episodes.datasets import gen_synthetic
from episodes.models import Dataset, DatasetClass, RngStream, Split, make_rng
from episodes.sampling import sample_episode
from networks.checkpoints import load_checkpoint, save_checkpoint
from networks.layers import build_params, embed_batch, init_params
from networks.models import GradientBag, ModelConfig
from objective.models import ObjectiveConfig, ScheduleArm
from propagation.attention import propagate
from propagation.heatmaps import diagonal_dominance, layer_heatmaps
from propagation.models import Mode, PropagationConfig
from .ablation import ablation_arms, run_ablation, sweep_alpha, sweep_shape
from .loops import evaluate, train
from .models import EpisodeShape, EvalReport, ExperimentConfig, OptimizerState, TrainConfig, confidence_interval
from .optim import sgd_step
from .serializers import EvalReportSerializer, render_json


def scalar_params(value):
    params = init_params(1, [], 1, 1, make_rng(0))
    for _, tensor in params.named_tensors():
        tensor[:] = value
    return params


def filled_grads(params, value):
    grads = GradientBag.zeros_like(params)
    for name, _ in grads.items():
        grads[name][:] = value
    return grads


def small_dataset(seed=1):
    return gen_synthetic(10, 20, 6, 0.5, 3.0, make_rng(seed))


def small_train_config(**overrides):
    values = dict(max_iters=12, episode=EpisodeShape(3, 1, 3), eval_every=6, val_episodes=4, log_every=0, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


SMALL_MODEL = ModelConfig(hidden_sizes=(8,), embedding_dim=4)


class SgdTestCase(SimpleTestCase):

    def test_vanilla_step(self):
        params = scalar_params(0.5)
        config = TrainConfig(lr0=0.1, momentum=0.0, weight_decay=0.0)
        sgd_step(params, filled_grads(params, 1.0), OptimizerState.for_params(params, config), config)
        for _, tensor in params.named_tensors():
            self.assertAlmostEqual(float(tensor.ravel()[0]), 0.4, places=15)

    def test_zero_gradient_only_decays(self):
        params = scalar_params(2.0)
        config = TrainConfig(lr0=0.1, momentum=0.9, weight_decay=5e-3)
        sgd_step(params, filled_grads(params, 0.0), OptimizerState.for_params(params, config), config)
        for _, tensor in params.named_tensors():
            self.assertAlmostEqual(float(tensor.ravel()[0]), 2.0 - 0.1 * 5e-3 * 2.0, places=15)

    def test_momentum_accumulates(self):
        params = scalar_params(0.0)
        config = TrainConfig(lr0=0.1, momentum=0.9, weight_decay=0.0)
        state = OptimizerState.for_params(params, config)
        sgd_step(params, filled_grads(params, 1.0), state, config)
        self.assertAlmostEqual(float(params.global_head.weight[0, 0]), -0.1, places=15)
        sgd_step(params, filled_grads(params, 1.0), state, config)
        self.assertAlmostEqual(float(params.global_head.weight[0, 0]), -0.29, places=15)
        self.assertEqual(state.iteration, 2)

    def test_frozen_tensor_keeps_value(self):
        params = scalar_params(0.5)
        config = TrainConfig()
        sgd_step(params, filled_grads(params, 1.0), OptimizerState.for_params(params, config), config,
                 frozen=("global_head.weight",))
        self.assertEqual(float(params.global_head.weight[0, 0]), 0.5)

    def test_non_finite_gradient_names_tensor(self):
        params = scalar_params(0.5)
        grads = filled_grads(params, 1.0)
        grads["projection.0.bias"][0] = np.inf
        config = TrainConfig()
        with self.assertRaisesMessage(NonFiniteError, "projection.0.bias"):
            sgd_step(params, grads, OptimizerState.for_params(params, config), config)

    def test_step_decay_schedule(self):
        config = TrainConfig(lr0=0.1, decay_factor=10.0, decay_every=5)
        self.assertEqual(config.learning_rate(4), 0.1)
        for k in range(4):
            self.assertEqual(config.learning_rate(5 * k), 0.1 / 10.0 ** k)

    def test_config_validation(self):
        for bad in (dict(lr0=0.0), dict(momentum=1.0), dict(decay_every=0), dict(schedule_arm="both")):
            with self.assertRaises(ConfigError):
                TrainConfig(**bad)

    def test_pretrain_finetune_halves(self):
        config = TrainConfig(max_iters=10, schedule_arm=ScheduleArm.PRETRAIN_FINETUNE)
        self.assertEqual([config.arm_at(i) for i in (0, 4, 5, 9)],
                         [ScheduleArm.GLOBAL_ONLY, ScheduleArm.GLOBAL_ONLY, ScheduleArm.LOCAL_ONLY,
                          ScheduleArm.LOCAL_ONLY])


class EvalReportTestCase(SimpleTestCase):

    def test_confidence_interval(self):
        self.assertAlmostEqual(confidence_interval(0.5, 600), 0.04002, places=5)
        self.assertEqual(confidence_interval(0.5, 1), 0.0)

    def test_ci_recomputes_from_list(self):
        accuracies = list(make_rng(4).uniform(size=37))
        report = EvalReport.from_accuracies(accuracies, "x")
        expected = 1.96 * float(np.std(report.accuracies, ddof=1)) / math.sqrt(len(report.accuracies))
        self.assertAlmostEqual(report.ci95, expected, delta=1e-12)
        self.assertEqual(len(report.accuracies), report.n_episodes)

    def test_single_episode(self):
        report = EvalReport.from_accuracies([0.6], "x")
        self.assertEqual((report.std, report.ci95), (0.0, 0.0))


class EvaluateTestCase(SimpleTestCase):

    def setUp(self):
        self.dataset = small_dataset()
        self.params = build_params(SMALL_MODEL, 6, self.dataset.n_train_classes, 0)
        self.shape = EpisodeShape(2, 1, 3)

    def test_oracle_model_is_perfect(self):
        dataset = gen_synthetic(10, 10, 3, 0.0, 5.0, make_rng(2))
        params = init_params(3, [], 3, dataset.n_train_classes, make_rng(0))
        params.embedder.layers[0].weight[:] = np.eye(3)
        report = evaluate(dataset, params, 20, EpisodeShape(2, 1, 5), PropagationConfig(repulsion_enabled=False))
        self.assertEqual(report.mean, 1.0)
        self.assertEqual(report.ci95, 0.0)

    def test_does_not_mutate_params(self):
        before = self.params.checksum()
        evaluate(self.dataset, self.params, 5, self.shape, PropagationConfig())
        self.assertEqual(self.params.checksum(), before)

    def test_thread_count_does_not_change_report(self):
        config = PropagationConfig(layers_eval=3)
        single = evaluate(self.dataset, self.params, 9, self.shape, config, seed=5)
        pooled = evaluate(self.dataset, self.params, 9, self.shape, config, seed=5, threads=3)
        self.assertEqual(render_json(EvalReportSerializer, single), render_json(EvalReportSerializer, pooled))

    def test_bad_episode_count(self):
        with self.assertRaises(ConfigError):
            evaluate(self.dataset, self.params, 0, self.shape, PropagationConfig())


class TrainTestCase(SimpleTestCase):

    def setUp(self):
        self.dataset = small_dataset()
        self.params = build_params(SMALL_MODEL, 6, self.dataset.n_train_classes, 3)

    def test_zero_iterations_returns_initial_params(self):
        result = train(self.dataset, self.params, small_train_config(max_iters=0), PropagationConfig())
        self.assertEqual(result.best_params.checksum(), self.params.checksum())
        self.assertEqual(result.log, [])

    def test_same_seed_same_checkpoint(self):
        first = train(self.dataset, self.params, small_train_config(), PropagationConfig())
        second = train(self.dataset, self.params, small_train_config(), PropagationConfig())
        self.assertEqual(first.params.checksum(), second.params.checksum())
        self.assertEqual(first.best_params.checksum(), second.best_params.checksum())
        self.assertNotEqual(first.params.checksum(), self.params.checksum())

    def test_local_only_keeps_global_head(self):
        config = small_train_config(schedule_arm=ScheduleArm.LOCAL_ONLY)
        result = train(self.dataset, self.params, config, PropagationConfig())
        self.assertEqual(result.params.global_head.weight.tobytes(), self.params.global_head.weight.tobytes())

    def test_zero_alpha_log(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "train.jsonl"
            train(self.dataset, self.params, small_train_config(), PropagationConfig(), ObjectiveConfig(alpha=0.0),
                  log_path=path)
            lines = [json.loads(line) for line in path.read_text().splitlines()]
        self.assertEqual(len(lines), 12)
        self.assertEqual(set(lines[0]), {"iter", "lr", "global_loss", "local_loss", "full_loss", "query_acc",
                                         "wallclock_ms"})
        for line in lines:
            self.assertEqual(line["full_loss"], line["global_loss"])

    def test_loss_decreases_on_synthetic_data(self):
        dataset = gen_synthetic(10, 50, 16, 1.5, 3.0, make_rng(7))
        params = build_params(ModelConfig(), 16, dataset.n_train_classes, 7)
        config = TrainConfig(max_iters=500, episode=EpisodeShape(5, 1, 15), eval_every=0, log_every=0, seed=7)
        log = train(dataset, params, config, PropagationConfig()).log
        early = np.mean([entry["full_loss"] for entry in log[:100]])
        late = np.mean([entry["full_loss"] for entry in log[-100:]])
        self.assertLess(late, early)
        early_local = np.mean([entry["local_loss"] for entry in log[:100]])
        late_local = np.mean([entry["local_loss"] for entry in log[-100:]])
        self.assertLess(late_local, early_local)

    def test_head_must_match_training_classes(self):
        params = build_params(SMALL_MODEL, 6, 2, 0)
        with self.assertRaises(ConfigError):
            train(self.dataset, params, small_train_config(), PropagationConfig())


class AblationTestCase(SimpleTestCase):

    def setUp(self):
        self.dataset = small_dataset()
        self.experiment = ExperimentConfig(
            model=SMALL_MODEL,
            train=small_train_config(max_iters=4, eval_every=0),
            propagation=PropagationConfig(layers_eval=3),
            objective=ObjectiveConfig(),
            eval_shape=EpisodeShape(2, 1, 3),
            eval_episodes=3,
            metric_pairs=(("cosine", "neg_sq_euclidean"), ("cosine", "cosine")),
            alphas=(0.0, 1.0),
            n_ways=(2, 5),
            m_queries=(2, 30),
        )

    def test_arm_enumeration(self):
        names = [arm[0] for arm in ablation_arms(self.experiment)]
        self.assertEqual(len(names), 4 * 2 + 2)
        inductive = ablation_arms(self.experiment)[-1]
        self.assertEqual((inductive[0], inductive[2].layers_train, inductive[2].layers_eval), ("inductive", 0, 0))

    def test_ablation_table(self):
        rows, table = run_ablation(self.dataset, self.experiment)
        self.assertEqual(len(table), 10)
        self.assertTrue(((table["mean"] >= 0) & (table["mean"] <= 1)).all())
        self.assertEqual(rows[2]["alpha"], 1.0)

    def test_alpha_sweep(self):
        _, table = sweep_alpha(self.dataset, self.experiment)
        self.assertEqual(table["alpha"].tolist(), [0.0, 1.0])

    def test_shape_sweep_skips_infeasible(self):
        params = build_params(SMALL_MODEL, 6, self.dataset.n_train_classes, 0)
        _, table = sweep_shape(self.dataset, params, self.experiment)
        self.assertEqual(list(zip(table["n_way"], table["m_query"])), [(2, 2)])


class SplitCheckTestCase(SimpleTestCase):

    def test_validation_skipped_when_val_split_too_small(self):
        rng = make_rng(0)
        classes = [DatasetClass(i, Split.TRAIN, rng.normal(size=(5, 2))) for i in range(3)]
        classes.append(DatasetClass(3, Split.VAL, rng.normal(size=(5, 2))))
        dataset = Dataset("tiny", 2, classes)
        params = init_params(2, [], 2, 3, make_rng(1))
        config = TrainConfig(max_iters=2, episode=EpisodeShape(2, 1, 2), eval_every=1, log_every=0)
        result = train(dataset, params, config, PropagationConfig())
        self.assertEqual(result.best_iteration, 2)


class OrderingTestCase(SimpleTestCase):
    """Arm and depth orderings over ten seeds of well-separated data; ties count."""

    SEEDS = range(10)
    ARMS = (ScheduleArm.COOPERATIVE, ScheduleArm.LOCAL_ONLY, ScheduleArm.GLOBAL_ONLY)
    SHAPE = EpisodeShape(5, 1, 15)

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.datasets = {}
        cls.accuracy = {}
        cls.models = {}
        for seed in cls.SEEDS:
            dataset = gen_synthetic(25, 20, 8, 0.3, 5.0, make_rng(seed))
            params = build_params(ModelConfig(hidden_sizes=(16,), embedding_dim=8), 8, dataset.n_train_classes, seed)
            cls.datasets[seed] = dataset
            for arm in cls.ARMS:
                config = TrainConfig(lr0=0.01, max_iters=60, episode=cls.SHAPE, eval_every=0, log_every=0,
                                     seed=seed, schedule_arm=arm)
                trained = train(dataset, params, config, PropagationConfig()).params
                cls.models[seed, arm] = trained
                cls.accuracy[seed, arm] = evaluate(dataset, trained, 20, cls.SHAPE, PropagationConfig(),
                                                   seed=seed).mean

    def test_cooperative_matches_or_beats_each_single_arm(self):
        for arm in (ScheduleArm.LOCAL_ONLY, ScheduleArm.GLOBAL_ONLY):
            wins = sum(
                self.accuracy[seed, ScheduleArm.COOPERATIVE] >= self.accuracy[seed, arm] for seed in self.SEEDS
            )
            self.assertGreaterEqual(wins, 8, arm)

    def test_transductive_depth_matches_or_beats_inductive(self):
        wins = 0
        for seed in self.SEEDS:
            params = self.models[seed, ScheduleArm.COOPERATIVE]
            inductive = evaluate(self.datasets[seed], params, 20, self.SHAPE, PropagationConfig(), seed=seed,
                                 n_layers=0)
            wins += self.accuracy[seed, ScheduleArm.COOPERATIVE] >= inductive.mean
        self.assertGreaterEqual(wins, 8)

    def test_diagonal_dominance_does_not_drop_across_layers(self):
        dataset = self.datasets[0]
        params = self.models[0, ScheduleArm.COOPERATIVE]
        config = PropagationConfig()
        rng = make_rng(0, RngStream.INSPECT)
        steady = 0
        for _ in range(10):
            episode = sample_episode(dataset, Split.TEST, 5, 1, 15, rng)
            Z = embed_batch(params, episode.inputs)
            trace = propagate(params, Z[:5], Z[5:], config, Mode.EVAL, n_way=5)
            scores = [diagonal_dominance(heatmap, episode.query_labels)
                      for heatmap in layer_heatmaps(trace, config.metric)]
            self.assertEqual(len(scores), 11)
            steady += bool(np.all(np.diff(scores) >= 0))
        self.assertGreaterEqual(steady, 8)


class BestCheckpointTestCase(SimpleTestCase):

    def test_saved_best_params_are_the_validated_ones(self):
        dataset = gen_synthetic(20, 20, 6, 0.5, 3.0, make_rng(1))
        params = build_params(SMALL_MODEL, 6, dataset.n_train_classes, 3)
        result = train(dataset, params, small_train_config(), PropagationConfig())
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(result.best_params, Path(tmp) / "best.ckpt")
            restored = load_checkpoint(path)
        self.assertEqual(restored.checksum(), result.best_params.checksum())
        self.assertFalse(math.isnan(result.best_val_accuracy))
        reloaded = evaluate(dataset, restored, 4, EpisodeShape(3, 1, 3), PropagationConfig(), seed=3,
                            split=Split.VAL, stream=RngStream.VALIDATION)
        self.assertEqual(reloaded.mean, result.best_val_accuracy)

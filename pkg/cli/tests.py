import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from config.exceptions import ConfigError
from episodes.datasets import load_dataset
from networks.checkpoints import load_checkpoint
from networks.layers import build_params, embed_batch
from networks.models import ModelConfig
from .base import config_keys
from .management.commands.train import Command as TrainCommand
from .models import RunConfig, read_config_file

SMALL = [
    "--model.hidden_sizes", "8",
    "--model.embedding_dim", "4",
    "--n-way", "2",
    "--m-query", "3",
    "--train.max_iters", "6",
    "--train.eval_every", "0",
    "--train.log_every", "0",
    "--propagation.layers_eval", "3",
]


class CommandTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)
        self.dataset = self.tmp / "data" / "toy.csv"
        self.runs = self.tmp / "runs"

    def call(self, name, *args):
        out = StringIO()
        call_command(name, *args, stdout=out, stderr=StringIO())
        return out.getvalue()

    def gen_synth(self, *extra, path=None):
        return self.call(
            "gen_synth", "--classes", "10", "--per-class", "20", "--dim", "6", "--seed", "7",
            "--dataset", str(path or self.dataset), *extra,
        )

    def train(self, *extra):
        self.call("train", "--dataset", str(self.dataset), "--output-dir", str(self.runs), "--seed", "3",
                  *SMALL, *extra)

    def paths(self):
        return ["--dataset", str(self.dataset), "--checkpoint", str(self.runs / "best.ckpt"),
                "--output-dir", str(self.runs)]


class GenSynthTestCase(CommandTestCase):

    def test_round_trip_and_determinism(self):
        output = self.gen_synth()
        self.assertIn('"n_train_classes":6', output)
        first = self.dataset.read_bytes()
        self.gen_synth()
        self.assertEqual(self.dataset.read_bytes(), first)

        dataset = load_dataset(self.dataset)
        other = self.tmp / "copy.csv"
        self.gen_synth(path=other)
        self.assertEqual(other.read_bytes(), first)
        self.assertEqual(dataset.dim, 6)
        self.assertEqual(sum(c.n_rows for c in dataset.classes), 200)

    def test_two_classes_is_a_usage_error(self):
        with self.assertRaises(CommandError) as cm:
            self.call("gen_synth", "--classes", "2", "--dataset", str(self.dataset))
        self.assertEqual(cm.exception.returncode, 1)

    def test_unknown_flag_is_a_usage_error(self):
        with self.assertRaises(CommandError) as cm:
            self.call("gen_synth", "--no-such-flag", "1")
        self.assertEqual(cm.exception.returncode, 1)


class TrainCommandTestCase(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.gen_synth()

    def test_writes_outputs(self):
        self.train()
        for name in ("best.ckpt", "last.ckpt", "train.jsonl"):
            self.assertTrue((self.runs / name).is_file(), name)
        self.assertEqual(len((self.runs / "train.jsonl").read_text().splitlines()), 6)

    def test_zero_alpha_log(self):
        self.train("--alpha", "0")
        for line in (self.runs / "train.jsonl").read_text().splitlines():
            entry = json.loads(line)
            self.assertEqual(entry["full_loss"], entry["global_loss"])

    def test_local_only_keeps_global_head(self):
        self.train("--arm", "local_only")
        initial = build_params(ModelConfig(hidden_sizes=(8,), embedding_dim=4), 6, 6, 3)
        trained = load_checkpoint(self.runs / "last.ckpt")
        self.assertEqual(trained.global_head.weight.tobytes(), initial.global_head.weight.tobytes())
        self.assertNotEqual(trained.embedder.layers[0].weight.tobytes(),
                            initial.embedder.layers[0].weight.tobytes())

    def test_missing_dataset_is_a_runtime_error(self):
        with self.assertRaises(CommandError) as cm:
            self.call("train", "--dataset", str(self.tmp / "missing.csv"), *SMALL)
        self.assertEqual(cm.exception.returncode, 2)


class CheckpointCommandTestCase(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.gen_synth()
        self.train()

    def test_eval_report(self):
        output = self.call("eval", *self.paths(), *SMALL, "--episodes", "25")
        self.assertRegex(output, r"ACC \d\.\d{4} ± \d\.\d{4}")
        report = json.loads((self.runs / "eval.json").read_text())
        self.assertEqual(report["n_episodes"], 25)
        self.assertEqual(len(report["accuracies"]), 25)

        first = (self.runs / "eval.json").read_bytes()
        self.call("eval", *self.paths(), *SMALL, "--episodes", "25")
        self.assertEqual((self.runs / "eval.json").read_bytes(), first)

    def test_single_episode_has_zero_interval(self):
        self.call("eval", *self.paths(), *SMALL, "--episodes", "1")
        self.assertEqual(json.loads((self.runs / "eval.json").read_text())["ci95"], 0.0)

    def test_dimension_mismatch(self):
        other = self.tmp / "wide.csv"
        self.call("gen_synth", "--classes", "10", "--per-class", "20", "--dim", "5", "--dataset", str(other))
        with self.assertRaisesMessage(CommandError, "6-dim features"):
            self.call("eval", "--dataset", str(other), "--checkpoint", str(self.runs / "best.ckpt"),
                      "--output-dir", str(self.runs), *SMALL)

    def test_inspect_layer_count(self):
        self.call("inspect", *self.paths(), *SMALL, "--propagation.layers_eval", "0")
        self.assertEqual(len(list(self.runs.glob("heatmap_layer*.csv"))), 1)
        output = self.call("inspect", *self.paths(), *SMALL, "--propagation.layers_eval", "10")
        self.assertEqual(len(list(self.runs.glob("heatmap_layer*.csv"))), 11)
        self.assertIn("layer 10 diagonal_dominance", output)

    def test_export_embeddings(self):
        self.call("export_embeddings", *self.paths(), *SMALL)
        frame = pd.read_csv(self.runs / "embeddings.csv", float_precision="round_trip")
        self.assertEqual(len(frame), 2 * 20)
        self.assertEqual(list(frame.columns), ["class_id", "split", "z0", "z1", "z2", "z3"])
        dataset = load_dataset(self.dataset)
        params = load_checkpoint(self.runs / "best.ckpt")
        first = dataset.split_classes("test")[0]
        expected = embed_batch(params, first.features)
        np.testing.assert_array_equal(frame[["z0", "z1", "z2", "z3"]].to_numpy()[:20], expected)

    def test_shape_sweep(self):
        self.call("sweep_shape", *self.paths(), *SMALL, "--ablation.n_ways", "2", "--ablation.m_queries", "2,4",
                  "--episodes", "3")
        table = pd.read_csv(self.runs / "shape_sweep.csv")
        self.assertEqual(table["m_query"].tolist(), [2, 4])


class ExperimentCommandTestCase(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.gen_synth()

    def test_ablate(self):
        self.call("ablate", "--dataset", str(self.dataset), "--output-dir", str(self.runs), *SMALL,
                  "--train.max_iters", "2", "--episodes", "2")
        table = pd.read_csv(self.runs / "ablation.csv")
        self.assertEqual(table["arm"].tolist(), ["cooperative", "pretrain_finetune", "local_only", "global_only",
                                                 "no_repulsion", "inductive"])
        rows = json.loads((self.runs / "ablation.json").read_text())
        self.assertEqual(rows[-1]["layers_eval"], 0)

    def test_sweep_alpha(self):
        self.call("sweep_alpha", "--dataset", str(self.dataset), "--output-dir", str(self.runs), *SMALL,
                  "--train.max_iters", "2", "--episodes", "2", "--ablation.alphas", "0,1")
        self.assertEqual(pd.read_csv(self.runs / "alpha_sweep.csv")["alpha"].tolist(), [0.0, 1.0])

    def test_gradcheck(self):
        output = self.call("gradcheck", "--output-dir", str(self.runs))
        self.assertEqual(output.count("ok "), 18)
        self.assertEqual(len(json.loads((self.runs / "gradcheck.json").read_text())), 18)


class RunConfigTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)

    def write(self, text):
        path = self.tmp / "run.conf"
        path.write_text(text)
        return path

    def test_defaults(self):
        config = RunConfig.build()
        self.assertEqual(config.train["lr0"], 0.1)
        self.assertEqual(config.objective["alpha"], 0.1)
        self.assertEqual(config.propagation_config().layers_eval, 10)
        self.assertEqual(config.propagation_config().mask_source, "scores")
        self.assertEqual(config.train_config().episode.m_query, 15)

    def test_flag_beats_file_beats_default(self):
        path = self.write("# run\ntrain.lr0 = 0.5\neval.episodes = 7\n\nmodel.hidden_sizes = 16,8\n")
        config = RunConfig.build({"eval": {"episodes": "9"}}, path)
        self.assertEqual(config.train["lr0"], 0.5)
        self.assertEqual(config.eval["episodes"], 9)
        self.assertEqual(config.model_config().hidden_sizes, (16, 8))
        self.assertEqual(config.train["momentum"], 0.9)

    def test_environment_names_default_file(self):
        path = self.write("run.seed = 11\n")
        with override_settings(REMP_CONFIG_FILE=str(path)):
            self.assertEqual(RunConfig.build().seed, 11)

    def test_unknown_keys_rejected(self):
        with self.assertRaisesMessage(ConfigError, "train.learning_rate"):
            RunConfig.build({"train": {"learning_rate": "1"}})
        with self.assertRaisesMessage(ConfigError, "optimizer"):
            RunConfig.build({"optimizer": {"lr0": "1"}})

    def test_malformed_file(self):
        with self.assertRaisesMessage(ConfigError, ":1:"):
            read_config_file(self.write("lr0 0.1\n"))
        with self.assertRaisesMessage(ConfigError, "section.key"):
            read_config_file(self.write("lr0 = 0.1\n"))

    def test_bad_values(self):
        with self.assertRaises(ConfigError):
            RunConfig.build({"ablation": {"metric_pairs": "cosine"}})
        with self.assertRaises(ConfigError):
            RunConfig.build({"train": {"momentum": "1.5"}}).train_config()

    def test_help_lists_every_key_with_default(self):
        text = TrainCommand().create_parser("manage.py", "train").format_help()
        for section, key, _ in config_keys():
            self.assertIn(f"--{section}.{key}", text)
        self.assertIn("default: 0.1", text)

import logging

from cli.base import ReMPCommand
from episodes.datasets import load_dataset
from networks.checkpoints import save_checkpoint
from networks.layers import build_params
from training.loops import train

logger = logging.getLogger(__name__)


class Command(ReMPCommand):
    help = (
        "Train on the dataset's train split and write best.ckpt, last.ckpt and train.jsonl "
        "to the output directory. Losses are means over queries unless objective.reduction=sum."
    )

    def run(self, config):
        dataset = load_dataset(config.paths["dataset"])
        prop_config = config.propagation_config()
        params = build_params(
            config.model_config(), dataset.dim, dataset.n_train_classes, config.seed, prop_config.n_projections
        )
        output_dir = config.output_dir
        result = train(
            dataset, params, config.train_config(), prop_config, config.objective_config(),
            log_path=output_dir / "train.jsonl",
        )
        save_checkpoint(result.best_params, output_dir / "best.ckpt")
        save_checkpoint(result.params, output_dir / "last.ckpt")
        logger.info(f"Best checkpoint from iteration {result.best_iteration}")
        self.stdout.write(f"Wrote {output_dir / 'best.ckpt'}, {output_dir / 'last.ckpt'}, {output_dir / 'train.jsonl'}")

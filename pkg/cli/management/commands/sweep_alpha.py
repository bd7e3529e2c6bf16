from cli.base import ReMPCommand
from cli.reports import write_comparison
from episodes.datasets import load_dataset
from training.ablation import sweep_alpha


class Command(ReMPCommand):
    help = "Train and evaluate the cooperative arm for every ablation.alphas value; writes alpha_sweep.csv/json."

    def run(self, config):
        dataset = load_dataset(config.paths["dataset"])
        rows, table = sweep_alpha(dataset, config.experiment_config())
        write_comparison(self, config.output_dir, "alpha_sweep", rows, table)

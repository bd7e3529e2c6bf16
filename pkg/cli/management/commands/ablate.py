from cli.base import ReMPCommand
from cli.reports import write_comparison
from episodes.datasets import load_dataset
from training.ablation import run_ablation


class Command(ReMPCommand):
    help = (
        "Train and evaluate every schedule arm (cooperative, pretrain_finetune, local_only, global_only) "
        "for each ablation.metric_pairs entry, plus no_repulsion and inductive; writes ablation.csv/json."
    )

    def run(self, config):
        dataset = load_dataset(config.paths["dataset"])
        rows, table = run_ablation(dataset, config.experiment_config())
        write_comparison(self, config.output_dir, "ablation", rows, table)

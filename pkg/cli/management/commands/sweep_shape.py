from cli.base import ReMPCommand, load_dataset_and_checkpoint
from cli.reports import write_comparison
from training.ablation import sweep_shape


class Command(ReMPCommand):
    help = (
        "Evaluate a checkpoint for every ablation.n_ways x ablation.m_queries episode shape; "
        "writes shape_sweep.csv/json."
    )

    def run(self, config):
        dataset, params = load_dataset_and_checkpoint(config)
        rows, table = sweep_shape(dataset, params, config.experiment_config())
        write_comparison(self, config.output_dir, "shape_sweep", rows, table)

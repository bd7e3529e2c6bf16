from cli.base import ReMPCommand, load_dataset_and_checkpoint
from training.loops import evaluate
from training.serializers import EvalReportSerializer, render_json


class Command(ReMPCommand):
    help = "Evaluate a checkpoint on test-split episodes; prints ACC <mean> ± <ci95> and writes eval.json."

    def run(self, config):
        dataset, params = load_dataset_and_checkpoint(config)
        report = evaluate(
            dataset, params, config.eval["episodes"], config.episode_shape(), config.propagation_config(),
            config.objective_config(), seed=config.seed, threads=config.threads,
        )
        path = config.output_dir / "eval.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(render_json(EvalReportSerializer, report) + b"\n")
        self.stdout.write(f"ACC {report.mean:.4f} ± {report.ci95:.4f}")

from rest_framework.renderers import JSONRenderer

from cli.base import ReMPCommand
from episodes.datasets import gen_synthetic, save_dataset, summarize
from episodes.models import RngStream, make_rng
from episodes.serializers import DatasetSummarySerializer


class Command(ReMPCommand):
    help = "Generate a synthetic Gaussian-cluster dataset (CSV plus .meta manifest)."

    def run(self, config):
        data = config.data
        dataset = gen_synthetic(
            data["classes"],
            data["per_class"],
            data["dim"],
            data["spread"],
            data["separation"],
            make_rng(config.seed, RngStream.SYNTHETIC),
            split_fractions=tuple(data["split_fractions"]),
            name=data["name"],
        )
        path = save_dataset(dataset, config.paths["dataset"])
        summary = DatasetSummarySerializer(summarize(dataset)).data
        self.stdout.write(f"Wrote {path}")
        self.stdout.write(JSONRenderer().render(summary).decode("utf-8"))

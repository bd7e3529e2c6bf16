import pandas as pd

from cli.base import ReMPCommand, load_dataset_and_checkpoint
from episodes.datasets import FLOAT_FORMAT
from episodes.models import Split
from networks.layers import embed_batch


class Command(ReMPCommand):
    help = "Embed the test split and write embeddings.csv (class_id, split, z0..z{d-1})."

    def run(self, config):
        dataset, params = load_dataset_and_checkpoint(config)
        blocks = []
        for cls in dataset.split_classes(Split.TEST):
            Z = embed_batch(params, cls.features)
            block = pd.DataFrame(Z, columns=[f"z{j}" for j in range(Z.shape[1])])
            block.insert(0, "split", cls.split)
            block.insert(0, "class_id", cls.class_id)
            blocks.append(block)
        columns = ["class_id", "split"] + [f"z{j}" for j in range(params.embedding_dim)]
        frame = pd.concat(blocks, ignore_index=True) if blocks else pd.DataFrame(columns=columns)

        path = config.output_dir / "embeddings.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self.stdout.write(f"Wrote {len(frame)} embeddings of width {params.embedding_dim} to {path}")

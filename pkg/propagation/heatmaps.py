"""
Per-layer query/prototype similarity heatmaps of a propagation trace.

Rows are queries ordered by local class, columns are prototypes; for a
good layer the true-class column holds the largest value of each row.
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def layer_heatmaps(trace, metric):
    """kappa(Z_l^Q, C_l) for l = 0..L."""
    return [
        metric.similarity(trace.query_embeddings(layer), trace.prototypes[layer])
        for layer in range(trace.n_layers + 1)
    ]


def diagonal_dominance(heatmap, query_labels):
    """Fraction of query rows whose largest similarity is their own class."""
    if heatmap.shape[0] == 0:
        return 0.0
    return float(np.mean(heatmap.argmax(axis=1) == np.asarray(query_labels)))


def write_heatmaps(trace, query_labels, metric, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scores = []
    for layer, heatmap in enumerate(layer_heatmaps(trace, metric)):
        frame = pd.DataFrame(heatmap, columns=[f"p{n}" for n in range(heatmap.shape[1])])
        frame.insert(0, "query_class", np.asarray(query_labels))
        frame.to_csv(directory / f"heatmap_layer{layer}.csv", index=False, float_format="%.17g",
                     lineterminator="\n")
        scores.append(diagonal_dominance(heatmap, query_labels))

    lines = [f"layer {layer} diagonal_dominance {score:.6f}" for layer, score in enumerate(scores)]
    (directory / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(scores)} heatmaps to {directory}")
    return scores

from cli.base import ReMPCommand, load_dataset_and_checkpoint
from episodes.models import RngStream, Split, make_rng
from episodes.sampling import sample_episode
from networks.layers import embed_batch
from propagation.attention import propagate
from propagation.heatmaps import write_heatmaps
from propagation.models import Mode


class Command(ReMPCommand):
    help = (
        "Propagate one seeded test episode and write heatmap_layer<l>.csv for l = 0..layers_eval "
        "plus summary.txt with per-layer diagonal dominance."
    )

    def run(self, config):
        dataset, params = load_dataset_and_checkpoint(config)
        shape = config.episode_shape()
        episode = sample_episode(
            dataset, Split.TEST, shape.n_way, shape.k_shot, shape.m_query, make_rng(config.seed, RngStream.INSPECT)
        )
        Z = embed_batch(params, episode.inputs)
        n_support = episode.support.shape[0]
        trace = propagate(params, Z[:n_support], Z[n_support:], config.propagation_config(), Mode.EVAL,
                          n_way=episode.n_way)
        scores = write_heatmaps(trace, episode.query_labels, config.objective_config().local_metric,
                                config.output_dir)
        for layer, score in enumerate(scores):
            self.stdout.write(f"layer {layer} diagonal_dominance {score:.6f}")

"""
RunConfig: the validated union of every section, plus the config-file
reader and the conversion into each app's configuration objects.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings

from config.exceptions import ConfigError
from networks.models import ModelConfig
from numerics.models import MetricSpec
from objective.models import ObjectiveConfig
from propagation.models import PropagationConfig
from training.models import EpisodeShape, ExperimentConfig, TrainConfig
from .serializers import RunConfigSerializer

logger = logging.getLogger(__name__)


def read_config_file(path):
    """
    Parse `section.key = value` lines into {section: {key: value}}.
    Blank lines and lines starting with # are skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    values = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        section, dot, name = key.partition(".")
        if not dot or not section or not name:
            raise ConfigError(f"{path}:{number}: key '{key}' must look like section.key")
        values.setdefault(section, {})[name] = value
    return values


def merge_values(*layers):
    """Later layers win key by key."""
    merged = {}
    for layer in layers:
        for section, values in layer.items():
            merged.setdefault(section, {}).update(values)
    return merged


def _flatten_errors(errors, prefix=""):
    for key, value in errors.items():
        name = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict):
            yield from _flatten_errors(value, name)
        else:
            yield f"{name}: {' '.join(str(v) for v in value)}"


@dataclass(frozen=True)
class RunConfig:
    data: dict
    metric: dict
    model: dict
    propagation: dict
    attention: dict
    repulsion: dict
    objective: dict
    episode: dict
    train: dict
    eval: dict
    ablation: dict
    paths: dict
    run: dict

    @classmethod
    def build(cls, overrides=None, config_file=None):
        """Defaults, then the config file (or REMP_CONFIG), then `overrides`."""
        config_file = config_file or settings.REMP_CONFIG_FILE or None
        layers = []
        if config_file:
            logger.debug(f"Reading run config from {config_file}")
            layers.append(read_config_file(config_file))
        layers.append(overrides or {})

        serializer = RunConfigSerializer(data=merge_values(*layers))
        if not serializer.is_valid():
            raise ConfigError("invalid configuration: " + "; ".join(_flatten_errors(serializer.errors)))
        return cls(**{section: dict(values) for section, values in serializer.validated_data.items()})

    @property
    def seed(self):
        return self.run["seed"]

    @property
    def threads(self):
        return self.eval["threads"] or settings.REMP_THREADS

    @property
    def output_dir(self):
        return Path(self.paths["output_dir"])

    def metric_spec(self, kind):
        return MetricSpec(kind, squared=self.metric["squared"], temperature=self.metric["temperature"])

    def model_config(self):
        return ModelConfig(hidden_sizes=tuple(self.model["hidden_sizes"]), embedding_dim=self.model["embedding_dim"])

    def propagation_config(self):
        return PropagationConfig(
            layers_train=self.propagation["layers_train"],
            layers_eval=self.propagation["layers_eval"],
            repulsion_constant=self.repulsion["constant"],
            repulsion_enabled=self.repulsion["enabled"],
            repulsion_apply_in=self.repulsion["apply_in"],
            min_scope=self.repulsion["min_scope"],
            mask_source=self.repulsion["mask_source"],
            softmax_axis=self.attention["softmax_axis"],
            metric=self.metric_spec(self.attention["metric"]),
            share_projection=self.propagation["share_projection"],
            projection_relu=self.propagation["projection_relu"],
        )

    def objective_config(self):
        return ObjectiveConfig(
            alpha=self.objective["alpha"],
            global_metric=self.metric_spec(self.objective["global_metric"]),
            local_metric=self.metric_spec(self.objective["local_metric"]),
            reduction=self.objective["reduction"],
            local_on_raw_prototypes=self.objective["local_on_raw_prototypes"],
        )

    def episode_shape(self):
        return EpisodeShape(self.episode["n_way"], self.episode["k_shot"], self.episode["m_query"])

    def train_config(self):
        values = dict(self.train)
        arm = values.pop("arm")
        return TrainConfig(**values, seed=self.seed, schedule_arm=arm, episode=self.episode_shape())

    def experiment_config(self):
        return ExperimentConfig(
            model=self.model_config(),
            train=self.train_config(),
            propagation=self.propagation_config(),
            objective=self.objective_config(),
            eval_shape=self.episode_shape(),
            eval_episodes=self.eval["episodes"],
            eval_seed=self.seed,
            threads=self.threads,
            metric_pairs=tuple(tuple(pair.split(":")) for pair in self.ablation["metric_pairs"]),
            alphas=tuple(self.ablation["alphas"]),
            n_ways=tuple(self.ablation["n_ways"]),
            m_queries=tuple(self.ablation["m_queries"]),
        )

"""
Run configuration sections. Every field carries its default; the nested
RunConfigSerializer rejects unknown sections and keys by name.
"""
from rest_framework import serializers

from numerics.models import Metric
from objective.models import LossReduction, ScheduleArm
from propagation.models import MaskSource, MinScope, RepulsionPhase, SoftmaxAxis


class CommaSeparatedField(serializers.ListField):
    """A list that also accepts `a,b,c` strings from flags and config files."""

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item.strip() for item in data.split(",") if item.strip()]
        return super().to_internal_value(data)


class DataSectionSerializer(serializers.Serializer):
    name = serializers.CharField(default="synthetic")
    classes = serializers.IntegerField(default=10)
    per_class = serializers.IntegerField(min_value=1, default=50)
    dim = serializers.IntegerField(min_value=1, default=16)
    spread = serializers.FloatField(min_value=0.0, default=1.5)
    separation = serializers.FloatField(default=3.0)
    split_fractions = CommaSeparatedField(child=serializers.FloatField(), default=[0.6, 0.2, 0.2])


class MetricSectionSerializer(serializers.Serializer):
    """Knobs shared by every similarity"""
    temperature = serializers.FloatField(default=1.0)
    squared = serializers.BooleanField(default=True)


class ModelSectionSerializer(serializers.Serializer):
    hidden_sizes = CommaSeparatedField(child=serializers.IntegerField(min_value=1), default=[64], allow_empty=True)
    embedding_dim = serializers.IntegerField(min_value=1, default=32)


class PropagationSectionSerializer(serializers.Serializer):
    layers_train = serializers.IntegerField(min_value=0, default=2)
    layers_eval = serializers.IntegerField(min_value=0, default=10)
    share_projection = serializers.BooleanField(default=True)
    projection_relu = serializers.BooleanField(default=False)


class AttentionSectionSerializer(serializers.Serializer):
    metric = serializers.ChoiceField(choices=Metric.choices, default=Metric.NEG_SQ_EUCLIDEAN)
    softmax_axis = serializers.ChoiceField(choices=SoftmaxAxis.choices, default=SoftmaxAxis.COLUMN)


class RepulsionSectionSerializer(serializers.Serializer):
    enabled = serializers.BooleanField(default=True)
    constant = serializers.FloatField(default=1.5)
    apply_in = serializers.ChoiceField(choices=RepulsionPhase.choices, default=RepulsionPhase.BOTH)
    min_scope = serializers.ChoiceField(choices=MinScope.choices, default=MinScope.GLOBAL)
    mask_source = serializers.ChoiceField(
        choices=MaskSource.choices, default=MaskSource.SCORES,
        help_text="compare the threshold with the pre-renormalization scores or with the renormalized attention",
    )


class ObjectiveSectionSerializer(serializers.Serializer):
    alpha = serializers.FloatField(min_value=0.0, default=0.1)
    global_metric = serializers.ChoiceField(choices=Metric.choices, default=Metric.COSINE)
    local_metric = serializers.ChoiceField(choices=Metric.choices, default=Metric.NEG_SQ_EUCLIDEAN)
    reduction = serializers.ChoiceField(
        choices=LossReduction.choices, default=LossReduction.MEAN,
        help_text="mean over queries (default) or the per-episode sum",
    )
    local_on_raw_prototypes = serializers.BooleanField(default=False)


class EpisodeSectionSerializer(serializers.Serializer):
    n_way = serializers.IntegerField(min_value=1, default=5)
    k_shot = serializers.IntegerField(min_value=1, default=1)
    m_query = serializers.IntegerField(min_value=1, default=15)


class TrainSectionSerializer(serializers.Serializer):
    lr0 = serializers.FloatField(default=0.1)
    momentum = serializers.FloatField(default=0.9)
    weight_decay = serializers.FloatField(default=5e-3)
    decay_factor = serializers.FloatField(default=10.0)
    decay_every = serializers.IntegerField(default=1000)
    max_iters = serializers.IntegerField(default=3000)
    arm = serializers.ChoiceField(choices=ScheduleArm.choices, default=ScheduleArm.COOPERATIVE)
    log_every = serializers.IntegerField(min_value=0, default=100)
    eval_every = serializers.IntegerField(min_value=0, default=500)
    val_episodes = serializers.IntegerField(min_value=1, default=100)


class EvalSectionSerializer(serializers.Serializer):
    episodes = serializers.IntegerField(min_value=1, default=600)
    threads = serializers.IntegerField(min_value=1, allow_null=True, default=None,
                                       help_text="worker threads; REMP_THREADS when unset")


class AblationSectionSerializer(serializers.Serializer):
    metric_pairs = CommaSeparatedField(child=serializers.CharField(), default=["cosine:neg_sq_euclidean"])
    alphas = CommaSeparatedField(child=serializers.FloatField(min_value=0.0), default=[0.0, 0.01, 0.1, 1.0, 10.0])
    n_ways = CommaSeparatedField(child=serializers.IntegerField(min_value=1), default=[5])
    m_queries = CommaSeparatedField(child=serializers.IntegerField(min_value=1), default=[15])

    def validate_metric_pairs(self, value):
        pairs = []
        for item in value:
            parts = item.split(":")
            if len(parts) != 2 or any(part not in Metric.values for part in parts):
                raise serializers.ValidationError(
                    f"'{item}' is not a global:local pair of {Metric.values}"
                )
            pairs.append(item)
        return pairs


class PathsSectionSerializer(serializers.Serializer):
    dataset = serializers.CharField(default="data/synthetic.csv")
    checkpoint = serializers.CharField(default="runs/best.ckpt")
    output_dir = serializers.CharField(default="runs")


class RunSectionSerializer(serializers.Serializer):
    seed = serializers.IntegerField(min_value=0, default=0)


class RunConfigSerializer(serializers.Serializer):
    data = DataSectionSerializer(required=False)
    metric = MetricSectionSerializer(required=False)
    model = ModelSectionSerializer(required=False)
    propagation = PropagationSectionSerializer(required=False)
    attention = AttentionSectionSerializer(required=False)
    repulsion = RepulsionSectionSerializer(required=False)
    objective = ObjectiveSectionSerializer(required=False)
    episode = EpisodeSectionSerializer(required=False)
    train = TrainSectionSerializer(required=False)
    eval = EvalSectionSerializer(required=False)
    ablation = AblationSectionSerializer(required=False)
    paths = PathsSectionSerializer(required=False)
    run = RunSectionSerializer(required=False)

    def to_internal_value(self, data):
        errors = {}
        for section, values in data.items():
            if section not in self.fields:
                errors[section] = ["unknown section"]
                continue
            unknown = sorted(set(values) - set(self.fields[section].fields))
            if unknown:
                errors[section] = {key: ["unknown key"] for key in unknown}
        if errors:
            raise serializers.ValidationError(errors)
        return super().to_internal_value({section: dict(data.get(section, {})) for section in self.fields})

from rest_framework import serializers
from rest_framework.renderers import JSONRenderer


class TrainLogEntrySerializer(serializers.Serializer):
    """One line of train.jsonl"""
    iter = serializers.IntegerField()
    lr = serializers.FloatField()
    global_loss = serializers.FloatField()
    local_loss = serializers.FloatField()
    full_loss = serializers.FloatField()
    query_acc = serializers.FloatField()
    wallclock_ms = serializers.FloatField()


class EvalReportSerializer(serializers.Serializer):
    n_episodes = serializers.IntegerField()
    n_way = serializers.IntegerField()
    k_shot = serializers.IntegerField()
    m_query = serializers.IntegerField()
    n_layers = serializers.IntegerField()
    mean = serializers.FloatField()
    std = serializers.FloatField()
    ci95 = serializers.FloatField()
    fingerprint = serializers.CharField()
    accuracies = serializers.ListField(child=serializers.FloatField())


class ComparisonRowSerializer(serializers.Serializer):
    """One arm of an ablation or sweep, report included"""
    arm = serializers.CharField()
    global_metric = serializers.CharField()
    local_metric = serializers.CharField()
    alpha = serializers.FloatField()
    layers_eval = serializers.IntegerField()
    repulsion = serializers.BooleanField()
    report = EvalReportSerializer()


def render_json(serializer_class, instance, many=False):
    """Compact UTF-8 JSON bytes; identical content gives identical bytes."""
    return JSONRenderer().render(serializer_class(instance, many=many).data)

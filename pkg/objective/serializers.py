from rest_framework import serializers


class LossReportSerializer(serializers.Serializer):
    global_loss = serializers.FloatField()
    local_loss = serializers.FloatField()
    full_loss = serializers.FloatField()
    alpha = serializers.FloatField()
    query_accuracy_local = serializers.FloatField()


class GradientCheckResultSerializer(serializers.Serializer):
    """One case of the gradcheck report"""
    case = serializers.CharField()
    n_checked = serializers.IntegerField()
    max_abs_error = serializers.FloatField()
    max_rel_error = serializers.FloatField()
    worst_tensor = serializers.CharField(allow_blank=True)
    passed = serializers.BooleanField()
    failures = serializers.ListField(child=serializers.CharField())

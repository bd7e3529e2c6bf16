from rest_framework import serializers


class DatasetMetaSerializer(serializers.Serializer):
    """Validates the `<name>.meta` sidecar written next to a dataset CSV"""
    name = serializers.CharField(max_length=200)
    dim = serializers.IntegerField(min_value=1)
    n_train_classes = serializers.IntegerField(min_value=0)

    def validate(self, attrs):
        unknown = set(self.initial_data) - set(self.fields)
        if unknown:
            raise serializers.ValidationError(f"unknown manifest keys: {sorted(unknown)}")
        return attrs


class DatasetSummarySerializer(serializers.Serializer):
    """Per-split class and sample counts, printed by gen-synth"""
    name = serializers.CharField()
    dim = serializers.IntegerField()
    n_train_classes = serializers.IntegerField()
    splits = serializers.DictField(child=serializers.DictField(child=serializers.IntegerField()))

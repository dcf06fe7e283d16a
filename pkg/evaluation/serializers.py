from typing import Any, Dict

from rest_framework import serializers

from feature_store.serializers import VersionedSerializer

from .flops import FlopsComparison, FlopsReport
from .reports import MetricReport


# ==============================
# METRIC REPORT SERIALIZER
# ==============================
class MetricReportSerializer(VersionedSerializer):
    run_id = serializers.CharField(max_length=200)
    variant = serializers.CharField(max_length=50)
    auc = serializers.FloatField(min_value=0.0, max_value=1.0, allow_null=True)
    recall_at_k = serializers.FloatField(min_value=0.0, max_value=1.0, allow_null=True)
    ectr = serializers.FloatField(min_value=0.0)
    erpm = serializers.FloatField(min_value=0.0)
    deviation = serializers.FloatField(min_value=0.0, allow_null=True)
    psi = serializers.FloatField(allow_null=True)
    psi_skipped = serializers.IntegerField(min_value=0)
    mean_regret = serializers.FloatField(min_value=0.0)
    realized_ctr = serializers.FloatField(min_value=0.0, allow_null=True)
    realized_rpm = serializers.FloatField(min_value=0.0, allow_null=True)
    requests = serializers.IntegerField(min_value=0)

    def to_record(self) -> MetricReport:
        data = dict(self.validated_data)
        data.pop("schema_version", None)
        return MetricReport(**data)


# ==============================
# FLOPS REPORT SERIALIZER
# ==============================
class FlopsComparisonSerializer(serializers.Serializer):
    module = serializers.CharField()
    closed_form = serializers.FloatField(min_value=0.0)
    measured = serializers.IntegerField(min_value=0)
    ratio = serializers.FloatField(allow_null=True)
    flagged = serializers.BooleanField()
    note = serializers.CharField(allow_blank=True, default="")


class FlopsReportSerializer(VersionedSerializer):
    closed_form = serializers.DictField(child=serializers.FloatField())
    measured = serializers.DictField(child=serializers.IntegerField(min_value=0), default=dict)
    ratio = serializers.FloatField()
    approx_ratio = serializers.FloatField()
    comparisons = FlopsComparisonSerializer(many=True, default=list)

    def validate_closed_form(self, value: Dict[str, float]) -> Dict[str, float]:
        bad = sorted(key for key, total in value.items() if total <= 0)
        if bad:
            raise serializers.ValidationError(f"closed-form totals must be positive: {bad}")
        return value

    def to_record(self) -> FlopsReport:
        data: Dict[str, Any] = self.validated_data
        return FlopsReport(
            closed_form=dict(data["closed_form"]),
            measured=dict(data["measured"]),
            ratio=data["ratio"],
            approx_ratio=data["approx_ratio"],
            comparisons=[FlopsComparison(**dict(item)) for item in data["comparisons"]],
        )

from typing import Any, Dict

from rest_framework import serializers

from .records import AccessCounters, AdFeatureRecord, UserFeatureRecord

SCHEMA_VERSION = 1


class VersionedSerializer(serializers.Serializer):
    """Adds and checks the `schema_version` field of line-delimited records."""

    schema_version = serializers.IntegerField(default=SCHEMA_VERSION)

    def to_representation(self, instance) -> Dict[str, Any]:
        data = super().to_representation(instance)
        data["schema_version"] = SCHEMA_VERSION
        return data

    def validate_schema_version(self, value: int) -> int:
        if value != SCHEMA_VERSION:
            raise serializers.ValidationError(
                f"unsupported schema version {value}, expected {SCHEMA_VERSION}"
            )
        return value


# ==============================
# AD FEATURE RECORD SERIALIZER
# ==============================
class AdFeatureRecordSerializer(VersionedSerializer):
    ad_id = serializers.IntegerField(min_value=1)
    features = serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=False)
    bid = serializers.FloatField()
    private_value = serializers.FloatField()

    def validate_bid(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("bid must be positive")
        return value

    def validate_private_value(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("private value must be positive")
        return value

    def to_record(self) -> AdFeatureRecord:
        data = self.validated_data
        return AdFeatureRecord(
            ad_id=data["ad_id"],
            features=tuple(data["features"]),
            bid=data["bid"],
            private_value=data["private_value"],
        )


# ==============================
# USER FEATURE RECORD SERIALIZER
# ==============================
class UserFeatureRecordSerializer(VersionedSerializer):
    user_id = serializers.IntegerField(min_value=0)
    features = serializers.ListField(child=serializers.IntegerField(min_value=0))
    behaviors = serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=True)
    timestamps = serializers.ListField(child=serializers.IntegerField(), allow_empty=True)
    context = serializers.ListField(child=serializers.IntegerField(min_value=0))

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        if len(attrs["behaviors"]) != len(attrs["timestamps"]):
            raise serializers.ValidationError("behaviors and timestamps must have equal length")
        return attrs

    def to_record(self) -> UserFeatureRecord:
        data = self.validated_data
        return UserFeatureRecord(
            user_id=data["user_id"],
            features=tuple(data["features"]),
            behaviors=tuple(data["behaviors"]),
            timestamps=tuple(data["timestamps"]),
            context=tuple(data["context"]),
        )


class AccessCountersSerializer(serializers.Serializer):
    local_fetches = serializers.IntegerField(min_value=0)
    remote_calls = serializers.IntegerField(min_value=0)
    bytes_local = serializers.IntegerField(min_value=0)
    bytes_remote = serializers.IntegerField(min_value=0)

    def to_record(self) -> AccessCounters:
        return AccessCounters(**self.validated_data)

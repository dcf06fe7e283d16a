from typing import Any, Dict

from rest_framework import serializers

from feature_store.serializers import VersionedSerializer

from .model import PHASES
from .samples import RequestSample


# ==============================
# REQUEST SAMPLE SERIALIZER
# ==============================
class RequestSampleSerializer(VersionedSerializer):
    request_id = serializers.IntegerField(min_value=0)
    user_id = serializers.IntegerField(min_value=0)
    candidates = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_empty=False)
    exposed = serializers.ListField(child=serializers.IntegerField(min_value=1))
    exposed_clicks = serializers.ListField(child=serializers.IntegerField(min_value=0, max_value=1))
    unexposed = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_empty=True)
    unexposed_clicks = serializers.ListField(child=serializers.IntegerField(min_value=0, max_value=1),
                                             allow_empty=True)

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        if len(attrs["exposed"]) != len(attrs["exposed_clicks"]):
            raise serializers.ValidationError("exposed ads and clicks must have equal length")
        if len(attrs["unexposed"]) != len(attrs["unexposed_clicks"]):
            raise serializers.ValidationError("unexposed ads and labels must have equal length")
        if len(set(attrs["exposed"])) != len(attrs["exposed"]):
            raise serializers.ValidationError("an ad is exposed twice")
        missing = set(attrs["exposed"]) - set(attrs["candidates"])
        if missing:
            raise serializers.ValidationError(f"exposed ads {sorted(missing)} are not candidates")
        return attrs

    def to_record(self) -> RequestSample:
        data = self.validated_data
        return RequestSample(
            request_id=data["request_id"],
            user_id=data["user_id"],
            candidates=tuple(data["candidates"]),
            exposed=tuple(data["exposed"]),
            exposed_clicks=tuple(data["exposed_clicks"]),
            unexposed=tuple(data["unexposed"]),
            unexposed_clicks=tuple(data["unexposed_clicks"]),
        )


# ==============================
# STEP LOG SERIALIZER
# ==============================
class StepLogSerializer(VersionedSerializer):
    phase = serializers.ChoiceField(choices=PHASES)
    step = serializers.IntegerField(min_value=0)
    loss = serializers.FloatField()
    extras = serializers.DictField(child=serializers.FloatField(), default=dict)

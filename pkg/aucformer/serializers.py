from typing import Any, Dict

from rest_framework import serializers

from feature_store.serializers import VersionedSerializer

from .mechanisms import AllocationRecord


# ==============================
# ALLOCATION RECORD SERIALIZER
# ==============================
class AllocationRecordSerializer(VersionedSerializer):
    request_id = serializers.IntegerField(min_value=0)
    ad_ids = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_empty=True)
    bids = serializers.ListField(child=serializers.FloatField(), allow_empty=True)
    payments = serializers.ListField(child=serializers.FloatField(min_value=0.0), allow_empty=True)
    ctr = serializers.ListField(child=serializers.FloatField(min_value=0.0, max_value=1.0), allow_empty=True)

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        slots = len(attrs["ad_ids"])
        if not (len(attrs["bids"]) == len(attrs["payments"]) == len(attrs["ctr"]) == slots):
            raise serializers.ValidationError("ad_ids, bids, payments and ctr must have one entry per slot")
        if len(set(attrs["ad_ids"])) != slots:
            raise serializers.ValidationError("an ad may occupy at most one slot")
        for bid, payment in zip(attrs["bids"], attrs["payments"]):
            if payment > bid:
                raise serializers.ValidationError(f"payment {payment} exceeds bid {bid}")
        return attrs

    def to_record(self) -> AllocationRecord:
        data = self.validated_data
        return AllocationRecord(
            request_id=data["request_id"],
            ad_ids=list(data["ad_ids"]),
            bids=list(data["bids"]),
            payments=list(data["payments"]),
            ctr=list(data["ctr"]),
        )

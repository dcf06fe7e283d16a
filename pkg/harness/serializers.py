from typing import Any, Dict

from rest_framework import serializers

from evaluation.flops import FlopsComparison, FlopsReport
from evaluation.reports import MetricReport
from evaluation.serializers import FlopsReportSerializer, MetricReportSerializer
from feature_store.serializers import VersionedSerializer
from recformer.config import FUSION_MODES

from .config import RunConfig
from .exceptions import WorldConfigError
from .report import RunReport
from .world import WorldConfig

ALLOCATORS = ("ega", "gsp")


# ==============================
# RUN CONFIG SERIALIZER
# ==============================
class RunConfigSerializer(serializers.Serializer):
    run_name = serializers.RegexField(r"^[A-Za-z0-9_.-]+$", max_length=100)
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1)

    n_total = serializers.IntegerField(min_value=1)
    n = serializers.IntegerField(min_value=1)
    k = serializers.IntegerField(min_value=1)
    l = serializers.IntegerField(min_value=0)  # noqa: E741
    n_s = serializers.IntegerField(min_value=0)
    n_users = serializers.IntegerField(min_value=1)
    latent_dim = serializers.IntegerField(min_value=0)
    latent_scale = serializers.FloatField(min_value=0.0)
    ad_features = serializers.IntegerField(min_value=1)
    ad_vocab = serializers.IntegerField(min_value=2)
    user_features = serializers.IntegerField(min_value=0)
    user_vocab = serializers.IntegerField(min_value=2)
    context_features = serializers.IntegerField(min_value=0)
    context_vocab = serializers.IntegerField(min_value=2)
    bid_mean = serializers.FloatField()
    bid_sigma = serializers.FloatField(min_value=0.0)
    value_scale = serializers.FloatField(min_value=1.0)
    position_decay = serializers.FloatField()
    noise_temperature = serializers.FloatField(min_value=0.0)
    popularity_rate = serializers.FloatField(min_value=0.0)
    check_requests = serializers.IntegerField(min_value=0)

    n_train = serializers.IntegerField(min_value=1)
    n_test = serializers.IntegerField(min_value=1)

    d = serializers.IntegerField(min_value=1)
    n_clusters = serializers.IntegerField(min_value=1)
    n_heads = serializers.IntegerField(min_value=1)
    m = serializers.IntegerField(min_value=0)
    m_c = serializers.IntegerField(min_value=1)
    m_e = serializers.IntegerField(min_value=0)
    fusion_mode = serializers.ChoiceField(choices=FUSION_MODES)
    allocator = serializers.ChoiceField(choices=ALLOCATORS)

    lr = serializers.FloatField(min_value=0.0)
    batch_size = serializers.IntegerField(min_value=1)
    pretrain_steps = serializers.IntegerField(min_value=0)
    reward_steps = serializers.IntegerField(min_value=0)
    rlaf_steps = serializers.IntegerField(min_value=0)
    payment_steps = serializers.IntegerField(min_value=0)
    rho = serializers.FloatField(min_value=0.0)
    dual_period = serializers.IntegerField(min_value=1)

    recall_k = serializers.IntegerField(min_value=1)

    def validate_lr(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("learning rate must be positive")
        return value

    def validate_rho(self, value: float) -> float:
        if value <= 0:
            raise serializers.ValidationError("rho must be positive")
        return value

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        if attrs["d"] % attrs["n_heads"]:
            raise serializers.ValidationError({"n_heads": f"d={attrs['d']} is not divisible by N_h={attrs['n_heads']}"})
        world_keys = WorldConfig.__dataclass_fields__.keys()
        try:
            WorldConfig(**{k: v for k, v in attrs.items() if k in world_keys})
        except WorldConfigError as exc:
            raise serializers.ValidationError({"world": str(exc)}) from None
        return attrs

    def to_config(self) -> RunConfig:
        return RunConfig(**self.validated_data)


# ==============================
# RUN REPORT SERIALIZER
# ==============================
class RunReportSerializer(VersionedSerializer):
    run_id = serializers.CharField(max_length=200)
    phase = serializers.CharField(max_length=50)
    seed = serializers.IntegerField(min_value=0)
    wall_time = serializers.FloatField(min_value=0.0)
    metrics = MetricReportSerializer(many=True, default=list)
    flops = FlopsReportSerializer(allow_null=True, default=None)
    losses = serializers.DictField(child=serializers.FloatField(), default=dict)

    def to_record(self) -> RunReport:
        data = self.validated_data
        metrics = [
            MetricReport(**{key: value for key, value in item.items() if key != "schema_version"})
            for item in data["metrics"]
        ]
        flops = None
        if data["flops"] is not None:
            flops = FlopsReport(
                closed_form=dict(data["flops"]["closed_form"]),
                measured=dict(data["flops"]["measured"]),
                ratio=data["flops"]["ratio"],
                approx_ratio=data["flops"]["approx_ratio"],
                comparisons=[FlopsComparison(**dict(item)) for item in data["flops"]["comparisons"]],
            )
        return RunReport(
            run_id=data["run_id"],
            phase=data["phase"],
            seed=data["seed"],
            wall_time=data["wall_time"],
            metrics=metrics,
            flops=flops,
            losses=dict(data["losses"]),
        )

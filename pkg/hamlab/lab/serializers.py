from rest_framework import serializers

from . import acceptance
from .errors import ModulusParseError
from .models import ExperimentRun
from .modulus import ModulusFn, parse_modulus
from .sde_lab import PRESETS


class ModulusField(serializers.Field):
    """Modulus config string such as ``bracket(1/3, logpow(2))``."""

    def to_internal_value(self, data):
        if isinstance(data, ModulusFn):
            return data
        try:
            return parse_modulus(str(data))
        except (ModulusParseError, ValueError) as exc:
            raise serializers.ValidationError(str(exc))

    def to_representation(self, value):
        return value.config()


class FloatListField(serializers.Field):
    """Comma separated floats, e.g. ``1,4,16,64``."""

    def to_internal_value(self, data):
        if isinstance(data, (list, tuple)):
            items = data
        else:
            items = [v for v in str(data).split(",") if v.strip()]
        try:
            values = [float(v) for v in items]
        except (TypeError, ValueError):
            raise serializers.ValidationError("expected a comma separated list of numbers")
        if not values:
            raise serializers.ValidationError("list must not be empty")
        return values

    def to_representation(self, value):
        return ",".join(repr(float(v)) for v in value)


class ExperimentParamsSerializer(serializers.Serializer):
    """Base schema: rejects keys the subcommand does not declare."""

    def validate(self, attrs):
        unknown = sorted(set(self.initial_data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: "unknown parameter" for key in unknown})
        return attrs


class ModulusParamsSerializer(ExperimentParamsSerializer):
    phi = ModulusField(default=lambda: parse_modulus("logpow(2)"))
    lambdas = FloatListField(default=[0.5, 2.0])
    alpha = serializers.FloatField(default=0.5, min_value=0.0, max_value=1.0)
    delta = serializers.FloatField(default=0.1, min_value=0.0)
    grid_points = serializers.IntegerField(default=61, min_value=5)
    class_c = serializers.IntegerField(default=1, min_value=1, max_value=3)
    expect = serializers.ChoiceField(choices=["any", "converges", "diverges"], default="any")


class ResolventParamsSerializer(ExperimentParamsSerializer):
    phi = ModulusField()
    T = serializers.FloatField(default=1.0, min_value=1e-6)
    n_steps = serializers.IntegerField(default=4096, min_value=64)
    expect = serializers.FloatField(default=None, allow_null=True)
    tol = serializers.FloatField(default=1e-5, min_value=0.0)
    doubling = serializers.BooleanField(default=False)


class LinearParamsSerializer(ExperimentParamsSerializer):
    probe = serializers.ChoiceField(choices=["covariance", "bismut", "null_shift", "scaling", "q_inverse", "commutation", "flow"])
    N = serializers.IntegerField(default=100_000, min_value=10)
    B = serializers.FloatField(default=1.0)
    sigma = serializers.FloatField(default=1.0)
    t = serializers.FloatField(default=1.0, min_value=1e-9)
    k_min = serializers.IntegerField(default=3, min_value=0)
    k_max = serializers.IntegerField(default=10, min_value=1)
    trials = serializers.IntegerField(default=4, min_value=1)
    eps = serializers.FloatField(default=1e-2, min_value=1e-8)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        if attrs["k_max"] - attrs["k_min"] < 5:
            raise serializers.ValidationError({"k_max": "the ladder needs at least 6 rungs"})
        return attrs


class HeatParamsSerializer(ExperimentParamsSerializer):
    probe = serializers.ChoiceField(choices=["modulus", "commutator", "moment", "gradient", "semigroup"])
    function = serializers.ChoiceField(choices=["sqrt_abs", "sign", "cos"], default="sqrt_abs")
    grid_file = serializers.CharField(default="", allow_blank=True)
    n = serializers.IntegerField(default=1025, min_value=129)
    L = serializers.FloatField(default=3.0, min_value=0.5)
    alpha = serializers.FloatField(default=0.5, min_value=0.0, max_value=1.0)
    beta = serializers.FloatField(default=1.0, min_value=0.0)
    k_min = serializers.IntegerField(default=2, min_value=0)
    k_max = serializers.IntegerField(default=8, min_value=1)

    def validate_n(self, value):
        if value % 2 == 0:
            raise serializers.ValidationError("n must be odd")
        return value


class SdeParamsSerializer(ExperimentParamsSerializer):
    preset = serializers.ChoiceField(choices=list(PRESETS), default="example_1_1")
    probe = serializers.ChoiceField(choices=["lyapunov", "moment", "gap", "jacobian", "law"], default="lyapunov")
    alpha = serializers.FloatField(default=1.0)
    m = serializers.IntegerField(default=1, min_value=1)
    c1 = serializers.FloatField(default=1.0)
    c2 = serializers.FloatField(default=0.0)
    gamma = serializers.FloatField(default=2.0 / 3.0)
    c = serializers.FloatField(default=1.0)
    delta = serializers.FloatField(default=0.0, min_value=0.0)
    sigma = serializers.FloatField(default=1.0)
    B = serializers.FloatField(default=1.0)
    x1 = serializers.FloatField(default=0.5)
    x2 = serializers.FloatField(default=0.0)
    T = serializers.FloatField(default=1.0, min_value=1e-6)
    N = serializers.IntegerField(default=2000, min_value=2)
    levels = serializers.IntegerField(default=5, min_value=2, max_value=12)
    eps_prime = serializers.FloatField(default=0.25)
    cap = serializers.FloatField(default=50.0, min_value=1.0)
    radius = serializers.FloatField(default=10.0, min_value=0.0)
    grid_n = serializers.IntegerField(default=21, min_value=2)


class StabilityParamsSerializer(ExperimentParamsSerializer):
    gamma = serializers.FloatField(default=2.0 / 3.0)
    c = serializers.FloatField(default=1.0)
    x1 = serializers.FloatField(default=0.0)
    x2 = serializers.FloatField(default=0.0)
    T = serializers.FloatField(default=1.0, min_value=1e-6)
    eps = serializers.FloatField(default=0.02, min_value=0.0)
    N = serializers.IntegerField(default=2000, min_value=2)
    k_min = serializers.IntegerField(default=1, min_value=0)
    k_max = serializers.IntegerField(default=8, min_value=1)
    steps = serializers.IntegerField(default=256, min_value=2)


class ZvonkinParamsSerializer(ExperimentParamsSerializer):
    probe = serializers.ChoiceField(choices=["sweep", "transform", "envelope"], default="sweep")
    alpha = serializers.FloatField(default=0.8)
    c1 = serializers.FloatField(default=1.0)
    delta = serializers.FloatField(default=0.1, min_value=0.0)
    lambdas = FloatListField(default=[1.0, 4.0, 16.0, 64.0, 256.0])
    lam = serializers.FloatField(default=64.0, min_value=1e-9)
    phi = ModulusField(default=lambda: parse_modulus("pow(1/3)"))
    T = serializers.FloatField(default=1.0, min_value=1e-6)
    N = serializers.IntegerField(default=500, min_value=2)
    steps = serializers.IntegerField(default=64, min_value=2)
    radius = serializers.FloatField(default=1.0, min_value=1e-3)
    grid_n = serializers.IntegerField(default=9, min_value=3)

    def validate_lambdas(self, value):
        if len(value) < 4 or value != sorted(value) or value[0] <= 0.0 or value[-1] / value[0] < 100.0:
            raise serializers.ValidationError("need at least 4 ascending positive values spanning two decades")
        return value

    def validate_grid_n(self, value):
        if value % 2 == 0:
            raise serializers.ValidationError("grid_n must be odd so the origin is a node")
        return value


class AcceptanceParamsSerializer(ExperimentParamsSerializer):
    tolerance_scale = serializers.FloatField(default=1.0, min_value=0.0)
    criteria = serializers.CharField(default="all")
    quick = serializers.BooleanField(default=False)

    def validate_criteria(self, value):
        try:
            acceptance.select_criteria(value)
        except KeyError as exc:
            raise serializers.ValidationError(f"unknown criterion {exc.args[0]!r}")
        return value


SCHEMAS = {
    "modulus": ModulusParamsSerializer,
    "resolvent": ResolventParamsSerializer,
    "linear": LinearParamsSerializer,
    "heat": HeatParamsSerializer,
    "sde": SdeParamsSerializer,
    "stability": StabilityParamsSerializer,
    "zvonkin": ZvonkinParamsSerializer,
    "acceptance": AcceptanceParamsSerializer,
}


class ExperimentRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = ExperimentRun
        fields = '__all__'
        read_only_fields = ['run_id', 'created_at']

"""
Dispel Data Models
Typed configuration, parameter and report structures with validation
"""

from enum import Enum
from typing import Optional, List, Dict, Tuple, Union, Literal, Any, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from models.dataset import GroupId, ModelWeights, format_group
from models.errors import ValidationError

U64_MAX = 2**64 - 1

M = TypeVar("M", bound=BaseModel)


def build(model: Type[M], **values: Any) -> M:
    """Construct a model, reporting bad values as a library ValidationError"""
    try:
        return model(**values)
    except PydanticValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model.__name__}: {err['msg']}"
            for err in e.errors()
        )
        raise ValidationError(f"invalid {model.__name__}: {problems}") from e


# ==================== ENUMS ====================

class SpuriousMode(str, Enum):
    """Whether the spurious coordinate carries the attribute"""
    PRESENT = "present"
    ABSENT = "absent"


class TheoryVariant(str, Enum):
    """Second term of the worst-group closed form"""
    AS_PRINTED = "as_printed"
    DERIVATION_CONSISTENT = "derivation_consistent"

    @classmethod
    def from_flag(cls, flag: str) -> "TheoryVariant":
        aliases = {"printed": cls.AS_PRINTED, "derived": cls.DERIVATION_CONSISTENT}
        if flag in aliases:
            return aliases[flag]
        return cls(flag)


class Decision(str, Enum):
    """How scores become class predictions"""
    SIGN = "sign"
    THRESHOLD = "threshold"
    ARGMAX = "argmax"


class Metric(str, Enum):
    ACCURACY = "acc"
    MSE = "mse"


class SplitSource(str, Enum):
    VALIDATION_HALF = "validation_half"
    TRAINING = "training"


class ClassBalance(str, Enum):
    UPSAMPLE_MINOR_CLASS = "upsample_minor_class"
    AS_IS = "as_is"
    QUOTA = "quota"


class Optimizer(str, Enum):
    SGD_EARLY_STOP = "sgd_early_stop"
    L1_LOGREG_AVERAGED = "l1_logreg_averaged"

    @classmethod
    def from_flag(cls, flag: str) -> "Optimizer":
        aliases = {"sgd": cls.SGD_EARLY_STOP, "l1avg": cls.L1_LOGREG_AVERAGED}
        if flag in aliases:
            return aliases[flag]
        return cls(flag)


# ==================== SYNTHETIC DATA ====================

class DistSpec(BaseModel):
    """Gaussian family with core, spurious and noise coordinates"""
    model_config = ConfigDict(frozen=True)

    mu: float = Field(ge=0.0, le=1.0, allow_inf_nan=False)
    sigma1: float = Field(ge=0.0, allow_inf_nan=False)
    sigma2: float = Field(default=0.0, ge=0.0, allow_inf_nan=False)
    sigma_xi: float = Field(ge=0.0, allow_inf_nan=False)
    d: int = Field(ge=3)
    spurious_mode: SpuriousMode = SpuriousMode.PRESENT

    @property
    def tail_std(self) -> float:
        """Per-coordinate std of the d-2 noise coordinates"""
        return self.sigma_xi / (self.d - 2) ** 0.5

    @property
    def groups(self) -> List[GroupId]:
        if self.spurious_mode == SpuriousMode.ABSENT:
            return [(0, 1), (0, -1)]
        return [(1, 1), (-1, -1), (-1, 1), (1, -1)]


class PlantedSpec(BaseModel):
    """Embedding-like benchmark with a planted core and spurious direction"""
    model_config = ConfigDict(frozen=True)

    dim: int = Field(default=64, ge=3)
    mu: float = Field(default=0.95, ge=0.0, le=1.0)
    sigma_core: float = Field(default=0.75, ge=0.0)
    sigma_spu: float = Field(default=0.1, ge=0.0)
    sigma_noise: float = Field(default=0.5, ge=0.0)
    core_scale: float = Field(default=1.0, gt=0.0)
    spu_scale: float = Field(default=1.0, gt=0.0)


# ==================== MIXING ====================

class MixConfig(BaseModel):
    """Mix probability, mix weight and seed"""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(ge=0.0, le=1.0, allow_inf_nan=False)
    s: float = Field(ge=0.0, le=1.0, allow_inf_nan=False)
    seed: int = Field(default=0, ge=0, le=U64_MAX)


# ==================== LINEAR MODELS ====================

class RidgeConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(alias="lambda", ge=0.0, allow_inf_nan=False)


class GdConfig(BaseModel):
    """Full-batch gradient descent on the (optionally decayed) MSE"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    init: ModelWeights
    epochs: int = Field(ge=0)
    # None picks STEP_SAFETY * 2 / L with L from power iteration
    step_size: Optional[float] = Field(default=None, ge=0.0, allow_inf_nan=False)
    record_every: int = Field(default=1, ge=1)
    weight_decay: float = Field(default=0.0, ge=0.0)
    tol: float = Field(default=0.0, ge=0.0)
    divergence_factor: Optional[float] = Field(default=None, gt=1.0)


# ==================== THEORY ====================

class TheoryParams(BaseModel):
    """Inputs of the asymptotic worst-group closed form"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    p: float = Field(gt=0.5, le=1.0)
    s: float = Field(ge=0.0, le=1.0)
    r: float = Field(gt=0.0)
    sigma1: float = Field(ge=0.0)
    lam: float = Field(alias="lambda", gt=0.0)


class PsiValues(BaseModel):
    model_config = ConfigDict(frozen=True)

    q: float
    psi1: float
    psi2: float
    psi3: float

    @property
    def delta(self) -> float:
        return self.psi1 * self.psi3 - self.psi2 ** 2


# ==================== GROUP EVALUATION ====================

class GroupUniverse(BaseModel):
    """Declared groups and the subset used for worst-group reduction"""
    model_config = ConfigDict(frozen=True)

    groups: List[GroupId] = Field(min_length=1)
    restriction: Optional[List[GroupId]] = None

    @model_validator(mode="after")
    def _restriction_subset(self):
        if self.restriction is not None:
            missing = [g for g in self.restriction if g not in self.groups]
            if missing:
                raise ValueError(f"restriction groups {missing} are not in the universe")
            if not self.restriction:
                raise ValueError("restriction must name at least one group")
        return self

    @property
    def reduction_groups(self) -> List[GroupId]:
        return list(self.restriction) if self.restriction is not None else list(self.groups)

    @classmethod
    def minority(cls) -> "GroupUniverse":
        """Synthetic universe restricted to the a != y groups"""
        return cls(groups=[(1, 1), (-1, -1), (-1, 1), (1, -1)], restriction=[(-1, 1), (1, -1)])


class GroupStat(BaseModel):
    model_config = ConfigDict(frozen=True)

    count: int
    value: float


class GroupReport(BaseModel):
    """Per-group, worst-group and row-average metric values"""
    model_config = ConfigDict(frozen=True)

    metric: Metric
    per_group: Dict[GroupId, GroupStat]
    worst_group: GroupId
    worst_value: float
    average: float
    reduction: List[GroupId]

    def rows(self) -> List[Tuple[str, int, float]]:
        out = [(format_group(g), st.count, st.value) for g, st in self.per_group.items()]
        total = sum(st.count for st in self.per_group.values())
        out.append(("worst", self.per_group[self.worst_group].count, self.worst_value))
        out.append(("avg", total, self.average))
        return out


# ==================== LAST-LAYER RETRAINING ====================

class SplitPlan(BaseModel):
    """How D_FT is drawn from a source split"""
    model_config = ConfigDict(frozen=True)

    source: SplitSource = SplitSource.VALIDATION_HALF
    class_balance: ClassBalance = ClassBalance.UPSAMPLE_MINOR_CLASS
    class_quota: Optional[Dict[int, int]] = None
    group_quota: Optional[Dict[GroupId, int]] = None
    l_per_group: Union[int, Literal["max"]] = "max"
    seed: int = Field(default=0, ge=0, le=U64_MAX)

    @field_validator("class_quota", "group_quota")
    @classmethod
    def _nonneg(cls, v):
        if v is not None and any(c < 0 for c in v.values()):
            raise ValueError("quota counts must be >= 0")
        return v

    @field_validator("l_per_group")
    @classmethod
    def _positive_l(cls, v):
        if v != "max" and v < 1:
            raise ValueError("l_per_group must be >= 1 or 'max'")
        return v

    @model_validator(mode="after")
    def _quota_present(self):
        if self.class_balance == ClassBalance.QUOTA and not (self.class_quota or self.group_quota):
            raise ValueError("quota balancing needs class_quota or group_quota")
        return self


class RetrainConfig(BaseModel):
    """Logistic head retraining options"""
    model_config = ConfigDict(frozen=True)

    optimizer: Optimizer = Optimizer.SGD_EARLY_STOP
    learning_rate: float = Field(default=0.01, gt=0.0)
    l1_strength: float = Field(default=0.0, ge=0.0)
    epochs: int = Field(default=50, ge=1)
    patience: int = Field(default=10, ge=1)
    subset_repeats: int = Field(default=10, ge=1)
    subset_fraction: float = Field(default=0.5, gt=0.0, le=1.0)
    batch_size: Optional[int] = Field(default=None, ge=1)
    class_weights: Optional[Dict[int, float]] = None
    seed: int = Field(default=0, ge=0, le=U64_MAX)

    @model_validator(mode="after")
    def _patience_within_epochs(self):
        if self.patience > self.epochs:
            raise ValueError("patience must not exceed epochs")
        return self


class SweepGrid(BaseModel):
    model_config = ConfigDict(frozen=True)

    alphas: List[float] = Field(min_length=1)
    s_values: List[float] = Field(min_length=1)

    @field_validator("alphas", "s_values")
    @classmethod
    def _unit_interval(cls, v):
        if any(not 0.0 <= x <= 1.0 for x in v):
            raise ValueError("grid values must lie in [0, 1]")
        return v

    @classmethod
    def preset(cls, name: str) -> "SweepGrid":
        presets = {
            "civilcomments": ([1.0, 0.8, 0.6, 0.4, 0.2], [1.0, 0.99, 0.97, 0.95, 0.9]),
            "civilcomments_training": (
                [1.0, 0.8, 0.6, 0.4, 0.2], [0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0],
            ),
            "waterbirds_lmax": ([1.0], [1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7]),
            "waterbirds_l10": ([1.0], [0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1]),
            "celeba_l10": ([1.0], [0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5, 0.45, 0.4]),
        }
        if name not in presets:
            raise ValidationError(f"unknown grid preset {name!r}; choose from {sorted(presets)}")
        alphas, s_values = presets[name]
        return cls(alphas=alphas, s_values=s_values)


# Inverse-regularisation strengths tuned for l1 heads
L1_INVERSE_GRID: Tuple[float, ...] = (1.0, 0.7, 0.3, 0.1, 0.07, 0.03, 0.01)


# ==================== RUN MANIFEST ====================

class RunManifest(BaseModel):
    """Everything needed to reproduce one CLI run"""
    command: str
    params: Dict[str, Any]
    seed: Optional[int] = None
    version: str
    duration_s: float = 0.0
    digests: Dict[str, str] = Field(default_factory=dict)
    partial: bool = False

    def flat(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "command": self.command,
            "seed": self.seed,
            "version": self.version,
            "duration_s": round(self.duration_s, 3),
            "partial": self.partial,
        }
        for k, v in self.params.items():
            out[f"param.{k}"] = v if isinstance(v, (int, float, str, bool, type(None))) else str(v)
        for k, v in self.digests.items():
            out[f"sha256.{k}"] = v
        return out

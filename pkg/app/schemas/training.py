from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator
from typing import Optional, List, Literal
from enum import Enum
from app.schemas.data import SyntheticConfig
from app.schemas.network import ArchId, Scale
from app.schemas.transforms import ALL_TRANSFORMS, LabelMode, TransformKind, TRANSFORM_SLUGS

PRETEXT_LR = 0.01
DOWNSTREAM_LR = 0.001


class Phase(str, Enum):
    PRETEXT = "pretext"
    DOWNSTREAM = "downstream"


class DataSource(str, Enum):
    SYNTHETIC = "synthetic"
    MANIFEST = "manifest"


def parse_transform_kind(value) -> TransformKind:
    if isinstance(value, TransformKind):
        return value
    text = str(value).strip().lower()
    if text.isdigit():
        return TransformKind(int(text))
    for kind, slug in TRANSFORM_SLUGS.items():
        if text in (slug, kind.name.lower()):
            return kind
    raise ValueError(f'Unknown transform {value!r}; expected one of {", ".join(TRANSFORM_SLUGS.values())}')


class TrainConfig(BaseModel):
    """Settings for one pretext or downstream run"""
    phase: Phase = Phase.PRETEXT
    arch: ArchId = ArchId.C3D
    scale: Scale = Scale()
    label_mode: LabelMode = LabelMode.MULTI_CLASS
    allowed: List[TransformKind] = list(ALL_TRANSFORMS)
    batch_size: int = Field(default=16, ge=2)
    lr: Optional[float] = None
    momentum: float = Field(default=0.9, ge=0, lt=1)
    epochs: int = Field(default=100, ge=1)
    seed: int = 0
    eval_every: int = Field(default=1, ge=1)
    val_fraction: float = Field(default=0.1, ge=0, lt=1)
    short_edge: int = Field(default=256, ge=1)
    eval_stride: Optional[int] = None
    freeze_backbone: bool = False
    data_source: DataSource = DataSource.SYNTHETIC
    manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    init_checkpoint: Optional[str] = None
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None
    synthetic: SyntheticConfig = SyntheticConfig()

    model_config = ConfigDict(extra="forbid")

    @field_validator('arch', mode='before')
    def parse_arch(cls, v):
        if isinstance(v, str):
            text = v.strip().upper()
            if text.isdigit():
                return ArchId(int(text))
            try:
                return ArchId[text]
            except KeyError:
                raise ValueError(f'Unknown architecture {v!r}; expected C3D or R3D18')
        return v

    @field_validator('allowed', mode='before')
    def parse_allowed(cls, v):
        if isinstance(v, str):
            v = [part for part in v.split(",") if part.strip()]
        kinds = [parse_transform_kind(item) for item in v]
        if not kinds:
            raise ValueError('At least one transform must be allowed')
        if TransformKind.IDENTITY in kinds:
            raise ValueError('Identity is not a selectable transform')
        if len(set(kinds)) != len(kinds):
            raise ValueError('Duplicate transforms are not allowed')
        return sorted(kinds)

    @field_serializer('allowed')
    def serialize_allowed(self, kinds: List[TransformKind]):
        return [kind.slug for kind in kinds]

    @field_serializer('arch')
    def serialize_arch(self, arch: ArchId):
        return arch.name

    @model_validator(mode="after")
    def resolve_defaults(self):
        if self.lr is None:
            self.lr = PRETEXT_LR if self.phase == Phase.PRETEXT else DOWNSTREAM_LR
        if self.lr < 0:
            raise ValueError('Learning rate cannot be negative')
        if self.eval_stride is None:
            self.eval_stride = self.scale.frames
        if self.eval_stride < 1:
            raise ValueError('eval_stride must be at least 1')
        if self.short_edge < self.scale.crop:
            raise ValueError('short_edge must be at least the crop size')
        return self


class StepRecord(BaseModel):
    step: int
    loss: float


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    per_transform: Optional[List[float]] = None


class TrainLog(BaseModel):
    """Per-step and per-epoch training history"""
    steps: List[StepRecord] = []
    epochs: List[EpochRecord] = []
    wall_clock_seconds: float = 0.0


class EvaluationResult(BaseModel):
    """Video-level top-1 accuracy with a confusion matrix (rows: true class)"""
    accuracy: float
    confusion: List[List[int]]
    num_videos: int


class ExperimentRow(BaseModel):
    seed: int
    variant: str
    top1: float


class ExperimentSummary(BaseModel):
    kind: Literal["transfer", "ablation"]
    rows: List[ExperimentRow] = []
    means: dict = {}
    ranges: dict = {}
    verdict: bool = False
    notes: Optional[str] = None


class LossValue(BaseModel):
    """Batch-mean loss; per_transform holds the seven binary terms in multilabel mode"""
    value: float = Field(ge=0)
    per_transform: Optional[List[float]] = None

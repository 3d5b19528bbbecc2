from pydantic import BaseModel, field_validator, model_validator
from typing import Optional, List, Literal
from enum import Enum, IntEnum

NUM_TRANSFORMS = 7
NOISE_SIGMA_RANGE = (0.1, 0.3)
ROTATION_ANGLES = (90, 180, 270)


class TransformKind(IntEnum):
    """Pseudo-label ids; 0 is the untouched clip."""
    IDENTITY = 0
    ROTATION = 1
    COLOR_SWITCH = 2
    NOISE_ADDITION = 3
    FRAME_REPLACEMENT = 4
    CLIP_INVERSION = 5
    SPLIT_JOIN = 6
    PERMUTATION = 7

    @property
    def slug(self) -> str:
        return TRANSFORM_SLUGS[self]


TRANSFORM_SLUGS = {
    TransformKind.IDENTITY: "identity",
    TransformKind.ROTATION: "rotation",
    TransformKind.COLOR_SWITCH: "color_switch",
    TransformKind.NOISE_ADDITION: "noise",
    TransformKind.FRAME_REPLACEMENT: "frame_replacement",
    TransformKind.CLIP_INVERSION: "inversion",
    TransformKind.SPLIT_JOIN: "split_join",
    TransformKind.PERMUTATION: "permutation",
}

ALL_TRANSFORMS = [kind for kind in TransformKind if kind != TransformKind.IDENTITY]


class LabelMode(str, Enum):
    """Pseudo-label encodings"""
    MULTI_CLASS = "multiclass"
    MULTI_LABEL = "multilabel"


class TransformSpec(BaseModel):
    """One sampled transform with its kind-specific parameters"""
    kind: TransformKind
    angle: Optional[int] = None
    channel_perm: Optional[List[int]] = None
    sigma: Optional[float] = None
    frame_index: Optional[int] = None
    partner_id: Optional[int] = None
    replaced_half: Optional[Literal["first", "second"]] = None
    frame_perm: Optional[List[int]] = None

    @model_validator(mode="after")
    def validate_parameters(self):
        kind = self.kind
        if kind == TransformKind.IDENTITY:
            raise ValueError('Identity is a label, not a transform spec')
        if kind == TransformKind.ROTATION and self.angle not in ROTATION_ANGLES:
            raise ValueError(f'Rotation angle must be one of {ROTATION_ANGLES}')
        if kind == TransformKind.COLOR_SWITCH:
            if self.channel_perm is None or sorted(self.channel_perm) != [0, 1, 2]:
                raise ValueError('Color switch needs a permutation of (0, 1, 2)')
            if list(self.channel_perm) == [0, 1, 2]:
                raise ValueError('Color switch permutation cannot be the identity')
        if kind == TransformKind.NOISE_ADDITION:
            lo, hi = NOISE_SIGMA_RANGE
            if self.sigma is None or not lo <= self.sigma <= hi:
                raise ValueError(f'Noise sigma must lie in [{lo}, {hi}]')
        if kind == TransformKind.FRAME_REPLACEMENT and (self.frame_index is None or self.frame_index < 0):
            raise ValueError('Frame replacement needs a non-negative frame index')
        if kind == TransformKind.SPLIT_JOIN and (self.partner_id is None or self.replaced_half is None):
            raise ValueError('Split-join needs a partner id and the replaced half')
        if kind == TransformKind.PERMUTATION:
            perm = self.frame_perm
            if perm is None or sorted(perm) != list(range(len(perm))):
                raise ValueError('Permutation must be a permutation of 0..T-1')
            if perm == list(range(len(perm))) or perm == list(range(len(perm)))[::-1]:
                raise ValueError('Permutation cannot be the identity or the full reversal')
        return self

    def to_text(self) -> str:
        return self.model_dump_json(exclude_none=True)


class TransformLabel(BaseModel):
    """Applied-transform record: a class id (multiclass) or indicator vector z (multilabel)"""
    mode: LabelMode
    class_id: Optional[int] = None
    indicator: Optional[List[int]] = None

    @field_validator('class_id')
    def validate_class_id(cls, v):
        if v is not None and not 0 <= v <= NUM_TRANSFORMS:
            raise ValueError(f'Class id must lie in [0, {NUM_TRANSFORMS}]')
        return v

    @field_validator('indicator')
    def validate_indicator(cls, v):
        if v is not None:
            if len(v) != NUM_TRANSFORMS:
                raise ValueError(f'Indicator must have {NUM_TRANSFORMS} entries')
            if any(bit not in (0, 1) for bit in v):
                raise ValueError('Indicator entries must be 0 or 1')
        return v

    @model_validator(mode="after")
    def validate_mode(self):
        if self.mode == LabelMode.MULTI_CLASS and self.class_id is None:
            raise ValueError('Multiclass labels need a class id')
        if self.mode == LabelMode.MULTI_LABEL and self.indicator is None:
            raise ValueError('Multilabel labels need an indicator vector')
        return self

    def to_text(self) -> str:
        if self.mode == LabelMode.MULTI_CLASS:
            return str(self.class_id)
        return ",".join(str(bit) for bit in self.indicator)

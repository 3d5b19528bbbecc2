from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, Tuple, Literal
from enum import Enum
import numpy as np


class FrameLayout(str, Enum):
    """On-disk image format of a frame directory"""
    PPM = "ppm"
    PNG = "png"


class VideoRecord(BaseModel):
    """One video: frames (L, H, W, 3) in [0, 1] and an optional action label"""
    id: str
    frames: np.ndarray
    label: Optional[int] = None

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @field_validator('frames')
    def validate_frames(cls, v):
        if v.ndim != 4 or v.shape[-1] != 3:
            raise ValueError(f'Frames must have shape (L, H, W, 3), got {v.shape}')
        return v

    @field_validator('label')
    def validate_label(cls, v):
        if v is not None and v < 0:
            raise ValueError('Action label cannot be negative')
        return v

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])


class SyntheticConfig(BaseModel):
    """Moving-square dataset: direction of motion is the action class"""
    num_videos: int = Field(default=512, ge=1)
    test_videos: int = Field(default=128, ge=0)
    frames_per_video: int = Field(default=16, ge=2)
    height: int = Field(default=40, ge=4)
    width: int = Field(default=40, ge=4)
    num_classes: int = 4
    shape_size: float = Field(default=8.0, gt=0)
    speed_min: float = 1.0
    speed_max: float = 1.5
    background: float = Field(default=0.05, ge=0, le=1)
    seed: int = 0

    model_config = ConfigDict(extra="forbid")

    @field_validator('num_classes')
    def validate_num_classes(cls, v):
        if v not in (2, 4, 8):
            raise ValueError('num_classes must be 2, 4 or 8')
        return v

    @model_validator(mode="after")
    def validate_motion(self):
        if self.speed_min <= 0 or self.speed_max < self.speed_min:
            raise ValueError('Speeds must satisfy 0 < speed_min <= speed_max')
        travel = self.speed_max * (self.frames_per_video - 1)
        if self.shape_size + travel > min(self.height, self.width):
            raise ValueError('Shape path does not fit inside the frame; lower speed_max or shape_size')
        return self


class ManifestEntry(BaseModel):
    """One manifest line: `<id>\\t<path>\\t<label|->`"""
    id: str
    path: str
    label: Optional[int] = None

    @field_validator('id', 'path')
    def validate_text(cls, v):
        if not v or "\t" in v or "\n" in v:
            raise ValueError('Manifest fields must be non-empty and contain no tabs or newlines')
        return v

    def to_line(self) -> str:
        label = "-" if self.label is None else str(self.label)
        return f"{self.id}\t{self.path}\t{label}"

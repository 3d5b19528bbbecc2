from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import Optional, List, Dict, Literal, Tuple, Union
from enum import Enum, IntEnum
import numpy as np

Triple = Tuple[int, int, int]


class ArchId(IntEnum):
    """Backbone topologies; the value is the checkpoint arch byte"""
    C3D = 0
    R3D18 = 1


class Scale(BaseModel):
    """Width/resolution knob; the defaults reproduce the published tables"""
    channel_div: int = Field(default=1, ge=1)
    frames: int = Field(default=16, ge=2)
    crop: int = Field(default=224, ge=1)
    fc_width: int = Field(default=4096, ge=1)

    model_config = ConfigDict(extra="forbid")

    @field_validator('channel_div')
    def validate_channel_div(cls, v):
        if 64 % v != 0:
            raise ValueError('channel_div must divide 64')
        return v

    @classmethod
    def desk(cls) -> "Scale":
        return cls(channel_div=8, frames=8, crop=32, fc_width=64)

    def width(self, channels: int) -> int:
        return channels // self.channel_div


class Conv3dSpec(BaseModel):
    type: Literal["conv3d"] = "conv3d"
    kernel: Triple
    in_ch: int
    out_ch: int
    stride: Triple = (1, 1, 1)

    @field_validator('kernel')
    def validate_kernel(cls, v):
        if any(k < 1 or k % 2 == 0 for k in v):
            raise ValueError('Convolution kernels must have odd sizes')
        return v

    @property
    def padding(self) -> Triple:
        return tuple((k - 1) // 2 for k in self.kernel)


class MaxPool3dSpec(BaseModel):
    type: Literal["maxpool3d"] = "maxpool3d"
    window: Triple
    stride: Triple
    padding: Triple = (0, 0, 0)


class BatchNorm3dSpec(BaseModel):
    type: Literal["batchnorm3d"] = "batchnorm3d"
    channels: int
    epsilon: float = 1e-5
    momentum: float = 0.1


class ReluSpec(BaseModel):
    type: Literal["relu"] = "relu"


class LinearSpec(BaseModel):
    type: Literal["linear"] = "linear"
    in_dim: int
    out_dim: int


class SpatialAvgPoolSpec(BaseModel):
    type: Literal["spatial_avg_pool"] = "spatial_avg_pool"


class FlattenSpec(BaseModel):
    type: Literal["flatten"] = "flatten"


class ResidualSpec(BaseModel):
    """Two conv-BN stages with an identity or 1x1x1 projection shortcut"""
    type: Literal["residual"] = "residual"
    in_ch: int
    out_ch: int
    stride: Triple = (1, 1, 1)

    @property
    def projected(self) -> bool:
        return self.stride != (1, 1, 1) or self.in_ch != self.out_ch


LayerSpec = Union[Conv3dSpec, MaxPool3dSpec, BatchNorm3dSpec, ReluSpec, LinearSpec,
                  SpatialAvgPoolSpec, FlattenSpec, ResidualSpec]


class CheckpointMeta(BaseModel):
    """Training metadata stored next to a checkpoint"""
    phase: str = "pretext"
    label_mode: Optional[str] = None
    allowed: List[str] = []
    epochs: int = 0
    steps: int = 0
    seed: int = 0
    source_checkpoint: Optional[str] = None


class Checkpoint(BaseModel):
    """Serialized parameters plus architecture; momentum buffers are not part of it"""
    arch: ArchId
    scale: Scale
    num_outputs: int
    tensors: Dict[str, np.ndarray]
    meta: CheckpointMeta = CheckpointMeta()

    model_config = ConfigDict(arbitrary_types_allowed=True)

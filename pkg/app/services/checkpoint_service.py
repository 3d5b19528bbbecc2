"""SSLC checkpoint files.

Layout (little-endian): magic "SSLC", u32 version, u8 arch, u32 channel_div,
u32 frames, u32 crop, u32 fc_width, u32 num_outputs, u32 tensor count, then
per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 data.
Training metadata goes to a JSON side-car at "<path>.json".
"""
from pathlib import Path
from typing import Dict, Optional, Union
import json
import math
import logging
import struct
import numpy as np
from pydantic import ValidationError
from app.core.exceptions import FormatError, InvalidDatasetError, ShapeError
from app.schemas.network import ArchId, Checkpoint, CheckpointMeta, Scale
from app.services.network_service import Network, ParameterSet, build_network
from app.services.tensor_service import Rng, get_dtype

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_MAGIC = b"SSLC"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIB6I")


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    scale = checkpoint.scale
    parts = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, int(checkpoint.arch),
                          scale.channel_div, scale.frames, scale.crop, scale.fc_width,
                          checkpoint.num_outputs, len(checkpoint.tensors))]
    for name, tensor in checkpoint.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{tensor.ndim}I", tensor.ndim, *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise FormatError(f"Checkpoint truncated while reading {what}", offset=self.offset)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def raw(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(f"Checkpoint truncated while reading {what}", offset=self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk


def decode_checkpoint(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError("Not a checkpoint file: bad magic", offset=0)
    _, version, arch, channel_div, frames, crop, fc_width, num_outputs, count = reader.take(
        _HEADER.format, "header")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"Unsupported checkpoint version {version}", offset=4)
    if arch not in {a.value for a in ArchId}:
        raise FormatError(f"Unknown architecture byte {arch}", offset=8)
    try:
        scale = Scale(channel_div=channel_div, frames=frames, crop=crop, fc_width=fc_width)
    except ValidationError:
        raise FormatError(f"Invalid scale fields {(channel_div, frames, crop, fc_width)}", offset=9)

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        start = reader.offset
        (length,) = reader.take("<H", "tensor name length")
        try:
            name = reader.raw(length, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("Tensor name is not valid UTF-8", offset=start + 2)
        if name in tensors:
            raise FormatError(f"Duplicate tensor '{name}'", offset=start)
        (rank,) = reader.take("<B", "tensor rank")
        dims = reader.take(f"<{rank}I", "tensor dims") if rank else ()
        size = math.prod(dims) * 4
        payload = reader.raw(size, f"tensor '{name}'")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(get_dtype())
    if reader.offset != len(data):
        raise FormatError(f"{len(data) - reader.offset} trailing bytes after the last tensor", offset=reader.offset)
    return Checkpoint(arch=ArchId(arch), scale=scale, num_outputs=num_outputs, tensors=tensors)


def meta_path(path: PathLike) -> Path:
    return Path(f"{path}.json")


def save_checkpoint(source: Union[Network, Checkpoint], path: PathLike, meta: Optional[CheckpointMeta] = None) -> Path:
    """Write parameters (momentum excluded) and, when given, the metadata side-car.

    A Checkpoint source brings its own metadata unless `meta` overrides it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(source, Checkpoint):
        checkpoint, meta = source, meta or source.meta
    else:
        checkpoint = Checkpoint(arch=source.arch, scale=source.scale, num_outputs=source.num_outputs,
                                tensors=dict(source.params.values))
    path.write_bytes(encode_checkpoint(checkpoint))
    if meta is not None:
        meta_path(path).write_text(json.dumps(meta.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    logger.info(f"Checkpoint saved to {path} ({len(checkpoint.tensors)} tensors)")
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        logger.error(f"Error reading checkpoint {path}: {e}")
        raise InvalidDatasetError(f"Cannot read checkpoint {path}: {e.strerror}")
    checkpoint = decode_checkpoint(data)
    side_car = meta_path(path)
    if side_car.exists():
        try:
            checkpoint.meta = CheckpointMeta.model_validate_json(side_car.read_text(encoding="utf-8"))
        except ValidationError as e:
            logger.error(f"Malformed checkpoint metadata {side_car}: {e}")
            raise FormatError(f"Checkpoint metadata {side_car} is malformed ({e.error_count()} errors)")
    return checkpoint


def restore_network(checkpoint: Checkpoint) -> Network:
    """Rebuild the network a checkpoint was taken from and load its tensors."""
    net = build_network(checkpoint.arch, checkpoint.scale, checkpoint.num_outputs, Rng(0))
    load_parameters(net.params, checkpoint.tensors)
    return net


def load_parameters(params: ParameterSet, tensors: Dict[str, np.ndarray], strict: bool = True) -> None:
    """Copy named tensors into a ParameterSet; strict requires the same names."""
    missing = [name for name in params if name not in tensors]
    unknown = [name for name in tensors if name not in params]
    if strict and (missing or unknown):
        raise ShapeError(f"Checkpoint tensors do not match the network (missing {missing[:3]}, unknown {unknown[:3]})")
    for name, value in tensors.items():
        if name in params:
            params[name] = value.astype(params[name].dtype)

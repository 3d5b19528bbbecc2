"""Clip extraction, clip/frame/manifest I/O and the moving-square generator."""
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
import logging
import math
import re
import struct
import numpy as np
from PIL import Image, UnidentifiedImageError
from app.core.exceptions import (
    FormatError,
    InsufficientDataError,
    InsufficientFramesError,
    InvalidDatasetError,
    InvalidParameterError,
    MissingFrameError,
    ShapeError,
    ToolkitError,
)
from app.schemas.data import FrameLayout, ManifestEntry, SyntheticConfig, VideoRecord
from app.services.tensor_service import Rng, get_dtype

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CLIP_MAGIC = b"SSLV"
CLIP_VERSION = 1
_CLIP_HEADER = struct.Struct("<4sI4I")
MANIFEST_NAME = "manifest.tsv"

SHAPE_COLOR = np.array([1.0, 0.55, 0.15])
RAMP_START, RAMP_END = 0.6, 1.0

_AXES = {"up": (-1.0, 0.0), "down": (1.0, 0.0), "left": (0.0, -1.0), "right": (0.0, 1.0)}
_DIAG = float(np.sqrt(0.5))
DIRECTIONS = {
    2: ["left", "right"],
    4: ["up", "down", "left", "right"],
    8: ["up", "down", "left", "right", "up_left", "up_right", "down_left", "down_right"],
}


def direction_vector(name: str) -> Tuple[float, float]:
    """Unit (dy, dx) for a direction name; diagonals are normalised."""
    if name in _AXES:
        return _AXES[name]
    vertical, horizontal = name.split("_")
    dy, dx = _AXES[vertical][0], _AXES[horizontal][1]
    return dy * _DIAG, dx * _DIAG


# clip extraction

def _check_length(video: VideoRecord, frames: int) -> None:
    if frames < 1:
        raise InvalidParameterError(f"Clip length must be >= 1, got {frames}")
    if video.length < frames:
        raise InsufficientFramesError(f"Video '{video.id}' has {video.length} frames, clips need {frames}")


def sample_offset(length: int, frames: int, rng: Rng) -> int:
    return rng.integers(0, length - frames + 1)


def sample_clip(video: VideoRecord, frames: int, rng: Rng) -> np.ndarray:
    """`frames` contiguous frames from a uniform random offset."""
    _check_length(video, frames)
    offset = sample_offset(video.length, frames, rng)
    return video.frames[offset:offset + frames]


def clip_offsets(length: int, frames: int, stride: int) -> List[int]:
    if stride < 1:
        raise InvalidParameterError(f"Clip stride must be >= 1, got {stride}")
    return list(range(0, length - frames + 1, stride))


def enumerate_clips(video: VideoRecord, frames: int, stride: int) -> List[np.ndarray]:
    """Non-random tiling at offsets 0, stride, 2 * stride, ..."""
    _check_length(video, frames)
    return [video.frames[o:o + frames] for o in clip_offsets(video.length, frames, stride)]


# synthetic data

def _coverage(start: float, size: float, pixels: int) -> np.ndarray:
    """Fraction of each unit pixel covered by the interval [start, start + size)."""
    edges = np.arange(pixels, dtype=np.float64)
    return np.clip(np.minimum(edges + 1.0, start + size) - np.maximum(edges, start), 0.0, 1.0)


def render_square(height: int, width: int, top: float, left: float, size: float) -> np.ndarray:
    """Area-coverage mask of an axis-aligned square; for integer sizes its
    pixel-centre centroid is exactly (top + size / 2, left + size / 2)."""
    return np.outer(_coverage(top, size, height), _coverage(left, size, width))


def _synthetic_video(config: SyntheticConfig, rng: Rng, label: int) -> np.ndarray:
    frames, height, width, size = config.frames_per_video, config.height, config.width, config.shape_size
    dy, dx = direction_vector(DIRECTIONS[config.num_classes][label])
    speed = config.speed_min + (config.speed_max - config.speed_min) * float(rng.random(1, dtype=np.float64)[0])
    travel_y, travel_x = dy * speed * (frames - 1), dx * speed * (frames - 1)
    lo_y, hi_y = max(0.0, -travel_y), height - size - max(0.0, travel_y)
    lo_x, hi_x = max(0.0, -travel_x), width - size - max(0.0, travel_x)
    top = lo_y + (hi_y - lo_y) * float(rng.random(1, dtype=np.float64)[0])
    left = lo_x + (hi_x - lo_x) * float(rng.random(1, dtype=np.float64)[0])

    video = np.empty((frames, height, width, 3), dtype=np.float64)
    for t in range(frames):
        ramp = RAMP_START + (RAMP_END - RAMP_START) * t / (frames - 1)
        mask = render_square(height, width, top + dy * speed * t, left + dx * speed * t, size)[..., None]
        video[t] = config.background * (1.0 - mask) + SHAPE_COLOR * ramp * mask
    return video.astype(get_dtype())


def generate_synthetic(config: SyntheticConfig, split: str = "train") -> List[VideoRecord]:
    """Moving-square videos labelled by direction, assigned round-robin.

    The dataset is a pure function of the config; the test split uses seed + 1.
    """
    if split == "train":
        count, seed = config.num_videos, config.seed
    elif split == "test":
        count, seed = config.test_videos, config.seed + 1
    else:
        raise InvalidParameterError(f"Unknown synthetic split '{split}'")
    root = Rng(seed).child("synthetic")
    records = []
    for i in range(count):
        label = i % config.num_classes
        frames = _synthetic_video(config, root.fork(i), label)
        records.append(VideoRecord(id=f"{split}_{i:05d}", frames=frames, label=label))
    logger.info(f"Generated {count} synthetic {split} videos ({config.num_classes} classes, seed {seed})")
    return records


def shape_centroid(frame: np.ndarray, background: float) -> Tuple[float, float]:
    """Pixel-centre centroid of the foreground (red channel above background)."""
    weight = frame[..., 0].astype(np.float64) - background
    total = weight.sum()
    if total <= 0:
        raise ShapeError("Frame has no foreground")
    rows = np.arange(frame.shape[0]) + 0.5
    cols = np.arange(frame.shape[1]) + 0.5
    return float(weight.sum(axis=1) @ rows / total), float(weight.sum(axis=0) @ cols / total)


def classify_direction(video: np.ndarray, num_classes: int, background: float) -> int:
    """Nearest direction class of the first two-frame centroid displacement."""
    y0, x0 = shape_centroid(video[0], background)
    y1, x1 = shape_centroid(video[1], background)
    step = np.array([y1 - y0, x1 - x0])
    scores = [step @ np.array(direction_vector(name)) for name in DIRECTIONS[num_classes]]
    return int(np.argmax(scores))


# clip files

def save_clip(clip: np.ndarray, path: PathLike) -> None:
    if clip.ndim != 4:
        raise ShapeError(f"Clip files hold (T, H, W, C) tensors, got shape {clip.shape}")
    header = _CLIP_HEADER.pack(CLIP_MAGIC, CLIP_VERSION, *clip.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(clip, dtype="<f4").tobytes())


def decode_clip(data: bytes) -> np.ndarray:
    if len(data) < 4 or data[:4] != CLIP_MAGIC:
        raise FormatError("Not a clip file: bad magic", offset=0)
    if len(data) < _CLIP_HEADER.size:
        raise FormatError("Clip header is truncated", offset=len(data))
    _, version, *dims = _CLIP_HEADER.unpack_from(data)
    if version != CLIP_VERSION:
        raise FormatError(f"Unsupported clip version {version}", offset=4)
    if any(d == 0 for d in dims):
        raise FormatError(f"Clip dims {tuple(dims)} contain a zero", offset=8)
    expected = math.prod(dims) * 4
    payload = len(data) - _CLIP_HEADER.size
    if payload != expected:
        raise FormatError(f"Clip dims {tuple(dims)} need {expected} payload bytes, found {payload}",
                          offset=_CLIP_HEADER.size + min(payload, expected))
    values = np.frombuffer(data, dtype="<f4", offset=_CLIP_HEADER.size).reshape(dims)
    return values.astype(get_dtype())


def load_clip(path: PathLike) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        logger.error(f"Error reading clip {path}: {e}")
        raise InvalidDatasetError(f"Cannot read clip file {path}: {e.strerror}")
    return decode_clip(data)


# frame directories

def _frame_pattern(layout: FrameLayout) -> re.Pattern:
    return re.compile(rf"^(\d{{6}})\.{layout.value}$")


def load_frame_dir(directory: PathLike, layout: FrameLayout = FrameLayout.PPM,
                   label: Optional[int] = None, video_id: Optional[str] = None) -> VideoRecord:
    """Frames named 000000.<ext>, 000001.<ext>, ... scaled to [0, 1]."""
    directory = Path(directory)
    layout = FrameLayout(layout)
    if not directory.is_dir():
        raise InvalidDatasetError(f"Frame directory {directory} does not exist")
    pattern = _frame_pattern(layout)
    numbers = sorted(int(m.group(1)) for m in (pattern.match(p.name) for p in directory.iterdir()) if m)
    if not numbers:
        raise InsufficientFramesError(f"No .{layout.value} frames found in {directory}")
    for expected, number in enumerate(numbers):
        if number != expected:
            raise MissingFrameError(f"Frame {expected:06d}.{layout.value} is missing from {directory}")

    frames = []
    for number in numbers:
        path = directory / f"{number:06d}.{layout.value}"
        try:
            with Image.open(path) as image:
                pixels = np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0
        except (OSError, UnidentifiedImageError) as e:
            logger.error(f"Error decoding frame {path}: {e}")
            raise FormatError(f"Cannot decode frame {path.name}", offset=0)
        if frames and pixels.shape != frames[0].shape:
            raise ShapeError(f"Frame {path.name} is {pixels.shape[1]}x{pixels.shape[0]}, "
                             f"expected {frames[0].shape[1]}x{frames[0].shape[0]}")
        frames.append(pixels)
    return VideoRecord(id=video_id or directory.name, frames=np.stack(frames).astype(get_dtype()), label=label)


def to_uint8(frames: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_frame_dir(record: VideoRecord, directory: PathLike, layout: FrameLayout = FrameLayout.PPM) -> Path:
    directory = Path(directory)
    layout = FrameLayout(layout)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(to_uint8(record.frames)):
        Image.fromarray(frame).save(directory / f"{t:06d}.{layout.value}")
    return directory


# manifests

def read_manifest(path: PathLike) -> List[ManifestEntry]:
    """Entries with paths resolved against the manifest's directory."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        logger.error(f"Error reading manifest {path}: {e}")
        raise InvalidDatasetError(f"Cannot read manifest {path}: {e.strerror}")
    entries = []
    for number, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise InvalidDatasetError(f"{path}:{number}: expected 3 tab-separated fields, got {len(fields)}")
        video_id, clip_path, label = fields
        if label != "-" and not label.isdigit():
            raise InvalidDatasetError(f"{path}:{number}: label must be a non-negative integer or '-'")
        resolved = Path(clip_path) if Path(clip_path).is_absolute() else path.parent / clip_path
        entries.append(ManifestEntry(id=video_id, path=str(resolved), label=None if label == "-" else int(label)))
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path: PathLike, append: bool = False) -> Path:
    path = Path(path)
    text = "".join(entry.to_line() + "\n" for entry in entries)
    with open(path, "a" if append else "w", encoding="utf-8") as f:
        f.write(text)
    return path


def load_entry(entry: ManifestEntry, layout: FrameLayout = FrameLayout.PPM) -> VideoRecord:
    path = Path(entry.path)
    if path.is_dir():
        return load_frame_dir(path, layout, label=entry.label, video_id=entry.id)
    frames = load_clip(path)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise InvalidDatasetError(f"Clip {path} holds shape {frames.shape}; videos need 3 colour channels")
    return VideoRecord(id=entry.id, frames=frames, label=entry.label)


def load_manifest(path: PathLike, layout: FrameLayout = FrameLayout.PPM) -> List[VideoRecord]:
    records = []
    for entry in read_manifest(path):
        try:
            records.append(load_entry(entry, layout))
        except ToolkitError:
            logger.error(f"Error loading video '{entry.id}' from {entry.path}")
            raise
    return records


def write_dataset(records: Sequence[VideoRecord], out_dir: PathLike,
                  layout: Optional[FrameLayout] = None) -> Path:
    """One .sslv file (or, with a layout, one frame directory) per video plus
    manifest.tsv; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for record in records:
        if layout is None:
            name = f"{record.id}.sslv"
            save_clip(record.frames, out_dir / name)
        else:
            name = record.id
            save_frame_dir(record, out_dir / name, layout)
        entries.append(ManifestEntry(id=record.id, path=name, label=record.label))
    manifest = write_manifest(entries, out_dir / MANIFEST_NAME)
    logger.info(f"Wrote {len(entries)} videos to {out_dir}")
    return manifest


def split_train_val(records: Sequence[VideoRecord], fraction: float,
                    rng: Rng) -> Tuple[List[VideoRecord], List[VideoRecord]]:
    """Seeded hold-out; both parts keep the input order."""
    if not 0 <= fraction < 1:
        raise InvalidParameterError(f"Validation fraction must lie in [0, 1), got {fraction}")
    count = len(records)
    if count == 0:
        raise InsufficientDataError("Cannot split an empty dataset")
    held_out = int(round(count * fraction))
    if count - held_out < 1:
        raise InsufficientDataError(f"Validation fraction {fraction} leaves no training videos out of {count}")
    val_index = set(rng.permutation(count)[:held_out])
    train = [r for i, r in enumerate(records) if i not in val_index]
    val = [r for i, r in enumerate(records) if i in val_index]
    return train, val

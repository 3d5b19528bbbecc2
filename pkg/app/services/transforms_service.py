from typing import Dict, List, Optional, Sequence, Tuple
import logging
import numpy as np
from scipy.ndimage import zoom
from app.core.exceptions import (
    FrameIndexError,
    InvalidParameterError,
    InvalidShapeError,
    ShapeError,
)
from app.core.metrics import get_metrics
from app.schemas.transforms import (
    NOISE_SIGMA_RANGE,
    NUM_TRANSFORMS,
    ROTATION_ANGLES,
    LabelMode,
    TransformKind,
    TransformLabel,
    TransformSpec,
)
from app.schemas.training import parse_transform_kind
from app.services.tensor_service import Rng, clamp, get_dtype, rand_gaussian, rand_uniform

logger = logging.getLogger(__name__)

IDENTITY_CHANNELS = (0, 1, 2)
COLOR_PERMUTATIONS = [(0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
MULTILABEL_NONE_PROBABILITY = 1.0 / 8.0
MULTILABEL_MAX_TRANSFORMS = 3


def check_clip(clip: np.ndarray) -> None:
    if clip.ndim != 4 or clip.shape[-1] != 3:
        raise InvalidShapeError(f"Clip must have shape (T, H, W, 3), got {clip.shape}")
    if clip.shape[0] < 2:
        raise InvalidShapeError(f"Clip needs at least 2 frames, got {clip.shape[0]}")


def rotate(clip: np.ndarray, angle: int) -> np.ndarray:
    """Rotate every frame clockwise by 90, 180 or 270 degrees."""
    check_clip(clip)
    if angle not in ROTATION_ANGLES:
        raise InvalidParameterError(f"Rotation angle must be one of {ROTATION_ANGLES}, got {angle}")
    if angle != 180 and clip.shape[1] != clip.shape[2]:
        raise ShapeError(f"{angle} degree rotation needs square frames, got {clip.shape[1]}x{clip.shape[2]}")
    return np.ascontiguousarray(np.rot90(clip, k=-(angle // 90), axes=(1, 2)))


def color_switch(clip: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """Output channel c takes input channel perm[c]."""
    check_clip(clip)
    perm = tuple(int(c) for c in perm)
    if sorted(perm) != [0, 1, 2]:
        raise InvalidParameterError(f"Channel permutation must permute (0, 1, 2), got {perm}")
    if perm == IDENTITY_CHANNELS:
        raise InvalidParameterError("Channel permutation cannot be the identity")
    return np.ascontiguousarray(clip[..., list(perm)])


def add_noise(clip: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    check_clip(clip)
    lo, hi = NOISE_SIGMA_RANGE
    if not lo <= sigma <= hi:
        raise InvalidParameterError(f"Noise sigma must lie in [{lo}, {hi}], got {sigma}")
    noise = rand_gaussian(rng, clip.shape, 0.0, sigma).astype(clip.dtype)
    return clamp(clip + noise, 0.0, 1.0)


def replace_frame(clip: np.ndarray, t: int, rng: Rng) -> np.ndarray:
    """Swap frame t for uniform [0, 1) noise; all other frames are untouched."""
    check_clip(clip)
    if not 0 <= t < clip.shape[0]:
        raise FrameIndexError(f"Frame index {t} out of range for a {clip.shape[0]}-frame clip")
    out = clip.copy()
    out[t] = rand_uniform(rng, clip.shape[1:], 0.0, 1.0).astype(clip.dtype)
    return out


def invert_clip(clip: np.ndarray) -> np.ndarray:
    check_clip(clip)
    return np.ascontiguousarray(clip[::-1])


def split_join(clip: np.ndarray, partner: np.ndarray, replaced_half: str) -> np.ndarray:
    """Replace one temporal half of `clip` with the same-index half of `partner`."""
    check_clip(clip)
    if clip.shape != partner.shape:
        raise ShapeError(f"Split-join partner shape {partner.shape} differs from clip shape {clip.shape}")
    frames = clip.shape[0]
    if frames % 2:
        raise InvalidShapeError(f"Split-join needs an even clip length, got {frames}")
    half = frames // 2
    out = clip.copy()
    if replaced_half == "first":
        out[:half] = partner[:half]
    elif replaced_half == "second":
        out[half:] = partner[half:]
    else:
        raise InvalidParameterError(f"replaced_half must be 'first' or 'second', got {replaced_half!r}")
    return out


def _check_frame_perm(perm: Sequence[int], frames: int) -> List[int]:
    perm = [int(i) for i in perm]
    if sorted(perm) != list(range(frames)):
        raise InvalidParameterError(f"Frame permutation {perm} is not a permutation of 0..{frames - 1}")
    if perm == list(range(frames)):
        raise InvalidParameterError("Frame permutation cannot be the identity")
    if perm == list(range(frames))[::-1]:
        raise InvalidParameterError("Frame permutation cannot be the full reversal (that is clip inversion)")
    return perm


def permute_frames(clip: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """Output frame i is input frame perm[i]."""
    check_clip(clip)
    perm = _check_frame_perm(perm, clip.shape[0])
    return np.ascontiguousarray(clip[perm])


def transform_by_name(name: str) -> TransformKind:
    try:
        kind = parse_transform_kind(name)
    except ValueError as e:
        raise InvalidParameterError(str(e))
    if kind == TransformKind.IDENTITY:
        raise InvalidParameterError("Identity is not a transform")
    return kind


def class_index_map(allowed: Sequence[TransformKind]) -> Dict[int, int]:
    """Class id -> head index for a multiclass head over {original} + allowed."""
    return {0: 0, **{int(kind): i + 1 for i, kind in enumerate(sorted(allowed))}}


def _sample_frame_perm(rng: Rng, frames: int) -> List[int]:
    if frames < 3:
        raise InvalidParameterError(f"Permutation needs at least 3 frames, got {frames}")
    while True:
        perm = rng.permutation(frames)
        if perm != list(range(frames)) and perm != list(range(frames))[::-1]:
            return perm


def sample_parameters(kind: TransformKind, rng: Rng, frames: int, *, square: bool = True,
                      num_partners: int = 1, self_index: int = 0) -> TransformSpec:
    """Draw the kind-specific parameters for one transform."""
    if kind == TransformKind.ROTATION:
        angle = ROTATION_ANGLES[rng.integers(0, 3)] if square else 180
        return TransformSpec(kind=kind, angle=angle)
    if kind == TransformKind.COLOR_SWITCH:
        perm = COLOR_PERMUTATIONS[rng.integers(0, len(COLOR_PERMUTATIONS))]
        return TransformSpec(kind=kind, channel_perm=list(perm))
    if kind == TransformKind.NOISE_ADDITION:
        lo, hi = NOISE_SIGMA_RANGE
        sigma = float(lo + (hi - lo) * rng.random(1, dtype=np.float64)[0])
        return TransformSpec(kind=kind, sigma=sigma)
    if kind == TransformKind.FRAME_REPLACEMENT:
        return TransformSpec(kind=kind, frame_index=rng.integers(0, frames))
    if kind == TransformKind.CLIP_INVERSION:
        return TransformSpec(kind=kind)
    if kind == TransformKind.SPLIT_JOIN:
        if num_partners < 2:
            raise InvalidParameterError("Split-join needs a partner clip other than the clip itself")
        partner = rng.integers(0, num_partners - 1)
        partner = partner + 1 if partner >= self_index else partner
        half = "first" if rng.integers(0, 2) == 0 else "second"
        return TransformSpec(kind=kind, partner_id=partner, replaced_half=half)
    if kind == TransformKind.PERMUTATION:
        return TransformSpec(kind=kind, frame_perm=_sample_frame_perm(rng, frames))
    raise InvalidParameterError(f"Cannot sample parameters for {kind!r}")


def sample_specs(rng: Rng, mode: LabelMode, frames: int, allowed: Sequence[TransformKind], *,
                 square: bool = True, num_partners: int = 1, self_index: int = 0,
                 force_transform: bool = False) -> List[TransformSpec]:
    """Pick which transforms to apply to one clip.

    Multiclass returns zero or one spec; the empty draw has probability
    1/(|allowed| + 1), i.e. 1/8 for the full set. Multilabel returns nothing
    with probability 1/8, otherwise k ~ Uniform{1, 2, 3} distinct kinds
    (capped at |allowed|). Split-join is only drawn when another clip can be
    the partner (num_partners >= 2).
    """
    allowed = sorted(set(TransformKind(k) for k in allowed))
    if not allowed:
        raise InvalidParameterError("At least one transform must be allowed")
    if TransformKind.IDENTITY in allowed:
        raise InvalidParameterError("Identity cannot be sampled as a transform")
    if TransformKind.SPLIT_JOIN in allowed and frames % 2:
        raise InvalidParameterError(f"Split-join needs an even clip length, got {frames}")
    pool = [kind for kind in allowed if kind != TransformKind.SPLIT_JOIN or num_partners > 1]
    if not pool:
        if force_transform:
            raise InvalidParameterError("Split-join is the only allowed transform and there is no partner clip")
        return []

    if mode == LabelMode.MULTI_CLASS:
        if not force_transform and rng.integers(0, len(pool) + 1) == 0:
            return []
        kinds = [pool[rng.integers(0, len(pool))]]
    else:
        if not force_transform and rng.random(1, dtype=np.float64)[0] < MULTILABEL_NONE_PROBABILITY:
            return []
        k = min(rng.integers(1, MULTILABEL_MAX_TRANSFORMS + 1), len(pool))
        kinds = sorted(rng.choice(pool, k))

    return [
        sample_parameters(kind, rng, frames, square=square, num_partners=num_partners, self_index=self_index)
        for kind in kinds
    ]


def make_label(kinds: Sequence[TransformKind], mode: LabelMode) -> TransformLabel:
    if mode == LabelMode.MULTI_CLASS:
        return TransformLabel(mode=mode, class_id=int(kinds[0]) if kinds else 0)
    indicator = [0] * NUM_TRANSFORMS
    for kind in kinds:
        indicator[int(kind) - 1] = 1
    return TransformLabel(mode=mode, indicator=indicator)


def apply_spec(clip: np.ndarray, spec: TransformSpec, rng: Rng,
               partners: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    kind = spec.kind
    if kind == TransformKind.ROTATION:
        return rotate(clip, spec.angle)
    if kind == TransformKind.COLOR_SWITCH:
        return color_switch(clip, spec.channel_perm)
    if kind == TransformKind.NOISE_ADDITION:
        return add_noise(clip, spec.sigma, rng)
    if kind == TransformKind.FRAME_REPLACEMENT:
        return replace_frame(clip, spec.frame_index, rng)
    if kind == TransformKind.CLIP_INVERSION:
        return invert_clip(clip)
    if kind == TransformKind.SPLIT_JOIN:
        if partners is None or not 0 <= spec.partner_id < len(partners):
            raise InvalidParameterError(f"Split-join partner {spec.partner_id} is not available")
        return split_join(clip, partners[spec.partner_id], spec.replaced_half)
    if kind == TransformKind.PERMUTATION:
        return permute_frames(clip, spec.frame_perm)
    raise InvalidParameterError(f"Unsupported transform {kind!r}")


def apply_specs(clip: np.ndarray, specs: Sequence[TransformSpec], rng: Rng,
                mode: LabelMode = LabelMode.MULTI_CLASS,
                partners: Optional[Sequence[np.ndarray]] = None) -> Tuple[np.ndarray, TransformLabel]:
    """Apply specs in ascending kind order and return the clip with its pseudo-label."""
    check_clip(clip)
    kinds = [spec.kind for spec in specs]
    if len(set(kinds)) != len(kinds):
        raise InvalidParameterError(f"Duplicate transform kinds in {[k.slug for k in kinds]}")
    if mode == LabelMode.MULTI_CLASS and len(specs) > 1:
        raise InvalidParameterError("Multiclass labels allow at most one transform per clip")

    out = clip
    metrics = get_metrics()
    for spec in sorted(specs, key=lambda s: int(s.kind)):
        out = apply_spec(out, spec, rng, partners)
        metrics.clips_transformed.labels(kind=spec.kind.slug).inc()
    return out, make_label(sorted(kinds), mode)


def resize_short_edge(clip: np.ndarray, short_edge: int) -> np.ndarray:
    """Bilinear resize so min(H, W) == short_edge, keeping the aspect ratio."""
    frames, height, width, channels = clip.shape
    scale = short_edge / min(height, width)
    if height <= width:
        new_h, new_w = short_edge, int(round(width * scale))
    else:
        new_h, new_w = int(round(height * scale)), short_edge
    if (new_h, new_w) == (height, width):
        return clip
    factors = (1.0, new_h / height, new_w / width, 1.0)
    resized = zoom(clip, factors, order=1, mode="nearest", grid_mode=True)
    return np.clip(resized, 0.0, 1.0).astype(clip.dtype)


def preprocess(frames: np.ndarray, short_edge: int, crop: int, mode: str = "center",
               rng: Optional[Rng] = None) -> np.ndarray:
    """Resize, then take one crop x crop window shared by all frames."""
    check_clip(frames)
    if crop > short_edge:
        raise InvalidParameterError(f"Crop {crop} exceeds the resized short edge {short_edge}")
    clip = resize_short_edge(frames.astype(get_dtype(), copy=False), short_edge)
    height, width = clip.shape[1:3]
    if crop > height or crop > width:
        raise InvalidParameterError(f"Crop {crop} exceeds resized frames {height}x{width}")
    if mode == "random":
        if rng is None:
            raise InvalidParameterError("Random cropping needs an rng")
        top = rng.integers(0, height - crop + 1)
        left = rng.integers(0, width - crop + 1)
    elif mode == "center":
        top = (height - crop) // 2
        left = (width - crop) // 2
    else:
        raise InvalidParameterError(f"Crop mode must be 'random' or 'center', got {mode!r}")
    return np.ascontiguousarray(clip[:, top:top + crop, left:left + crop, :])

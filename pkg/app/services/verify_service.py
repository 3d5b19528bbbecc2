"""Self-checks behind `mtvideo verify`.

Gradient checks compare analytic backward passes with central finite
differences in 64-bit mode; the scalar under test is sum(output * R) for a
fixed random R. Relative error is max|a - n| / max(max|a|, max|n|).
"""
from typing import Callable, Dict, Iterator, List, Sequence, Tuple
import logging
import math
import numpy as np
from app.core.exceptions import ToolkitError, UsageError, VerificationError
from app.schemas.data import SyntheticConfig
from app.schemas.network import ArchId, BatchNorm3dSpec, Conv3dSpec, MaxPool3dSpec, Scale
from app.schemas.transforms import LabelMode, ALL_TRANSFORMS, TransformKind
from app.schemas.verification import SUITES, CheckResult, VerificationReport
from app.services import data_service, loss_service, network_service
from app.services import nn_service as nn
from app.services import transforms_service as tf
from app.services.network_service import ParameterSet
from app.services.tensor_service import Rng, float64_mode, rand_uniform

logger = logging.getLogger(__name__)

Check = Callable[[Rng], Tuple[bool, str]]

LAYER_TOLERANCE = 1e-5
BATCHNORM_TOLERANCE = 1e-4
LOSS_TOLERANCE = 1e-6
NETWORK_TOLERANCE = 1e-4
LAYER_STEP = 1e-4
NETWORK_STEP = 1e-6
NETWORK_SAMPLES = 20
ORACLE_CASES = 50
ORACLE_TOLERANCE = 1e-5
TRANSFORM_CLIPS = 1000
TRANSFORM_FRAMES = (4, 8, 16)
TRANSFORM_SIZES = (4, 8, 32)
PIXEL_CONSERVING = {int(kind) for kind in (TransformKind.ROTATION, TransformKind.COLOR_SWITCH,
                                           TransformKind.CLIP_INVERSION, TransformKind.PERMUTATION)}

C3D_TABLE = {
    "conv1": (16, 224, 224, 64), "pool1": (16, 112, 112, 64),
    "conv2": (16, 112, 112, 128), "pool2": (8, 56, 56, 128),
    "conv3a": (8, 56, 56, 256), "conv3b": (8, 56, 56, 256), "pool3": (4, 28, 28, 256),
    "conv4a": (4, 28, 28, 512), "conv4b": (4, 28, 28, 512), "pool4": (2, 14, 14, 512),
    "conv5a": (2, 14, 14, 512), "conv5b": (2, 14, 14, 512), "pool5": (1, 7, 7, 512),
    "fc1": (4096,), "fc2": (4096,),
}
R3D18_TABLE = {
    "conv1": (16, 112, 112, 64), "pool": (16, 56, 56, 64),
    "block2b": (16, 56, 56, 64), "block3b": (8, 28, 28, 128),
    "block4b": (4, 14, 14, 256), "block5b": (2, 7, 7, 512),
    "avgpool": (2, 1, 1, 512), "flatten": (1024,),
}
TINY_SCALE = Scale(channel_div=16, frames=4, crop=16, fc_width=8)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central differences of f() with respect to x, perturbed in place."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        original = x[idx]
        x[idx] = original + h
        plus = f()
        x[idx] = original - h
        minus = f()
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def naive_conv3d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride=(1, 1, 1)) -> np.ndarray:
    """Loop-by-loop cross-correlation with same padding, one clip (T, H, W, Cin)."""
    kt, kh, kw, cin, cout = weights.shape
    pt, ph, pw = (kt - 1) // 2, (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((pt, pt), (ph, ph), (pw, pw), (0, 0)))
    st, sh, sw = stride
    out_t = (x.shape[0] + 2 * pt - kt) // st + 1
    out_h = (x.shape[1] + 2 * ph - kh) // sh + 1
    out_w = (x.shape[2] + 2 * pw - kw) // sw + 1
    out = np.zeros((out_t, out_h, out_w, cout))
    for t in range(out_t):
        for i in range(out_h):
            for j in range(out_w):
                for o in range(cout):
                    total = bias[o]
                    for a in range(kt):
                        for b in range(kh):
                            for c in range(kw):
                                for k in range(cin):
                                    total += xp[t * st + a, i * sh + b, j * sw + c, k] * weights[a, b, c, k, o]
                    out[t, i, j, o] = total
    return out


def _result(error: float, tolerance: float) -> Tuple[bool, str]:
    return error < tolerance, f"relative error {error:.2e} (tolerance {tolerance:.0e})"


def _worst(*errors: float) -> float:
    return max(errors)


# gradients

def _check_conv(rng: Rng) -> Tuple[bool, str]:
    spec = Conv3dSpec(kernel=(3, 3, 3), in_ch=2, out_ch=3, stride=(1, 2, 1))
    x = rand_uniform(rng.child("x"), (2, 4, 5, 5, 2), -1, 1)
    w = rand_uniform(rng.child("w"), (3, 3, 3, 2, 3), -1, 1)
    b = rand_uniform(rng.child("b"), (3,), -1, 1)
    r = rand_uniform(rng.child("r"), nn.conv3d_output_shape(x.shape, spec), -1, 1)
    gx, gw, gb = nn.conv3d_backward(r, x, spec, w)
    loss = lambda: float(np.sum(nn.conv3d_forward(x, spec, w, b) * r))
    return _result(_worst(relative_error(gx, numeric_gradient(loss, x, LAYER_STEP)),
                          relative_error(gw, numeric_gradient(loss, w, LAYER_STEP)),
                          relative_error(gb, numeric_gradient(loss, b, LAYER_STEP))), LAYER_TOLERANCE)


def _distinct(rng: Rng, shape) -> np.ndarray:
    """Values 0.01 apart in random order, so no pooling window has a tie."""
    n = int(np.prod(shape))
    return ((np.array(rng.permutation(n), dtype=np.float64) - n / 2) * 0.01).reshape(shape)


def _check_maxpool(rng: Rng) -> Tuple[bool, str]:
    errors = []
    for spec in (MaxPool3dSpec(window=(2, 2, 2), stride=(2, 2, 2)),
                 MaxPool3dSpec(window=(3, 3, 3), stride=(1, 2, 2), padding=(1, 1, 1))):
        x = _distinct(rng.child(f"x{spec.window}"), (2, 4, 6, 6, 2))
        y, argmax = nn.maxpool3d_forward(x, spec)
        r = rand_uniform(rng.child(f"r{spec.window}"), y.shape, -1, 1)
        gx = nn.maxpool3d_backward(r, argmax, x.shape, spec)
        loss = lambda: float(np.sum(nn.maxpool3d_forward(x, spec)[0] * r))
        errors.append(relative_error(gx, numeric_gradient(loss, x, LAYER_STEP)))
    return _result(_worst(*errors), LAYER_TOLERANCE)


def _check_batchnorm(rng: Rng) -> Tuple[bool, str]:
    spec = BatchNorm3dSpec(channels=2)
    x = rand_uniform(rng.child("x"), (3, 2, 3, 3, 2), -1, 1)
    gamma = rand_uniform(rng.child("g"), (2,), 0.5, 1.5)
    beta = rand_uniform(rng.child("b"), (2,), -1, 1)
    mean, var = np.zeros(2), np.ones(2)
    r = rand_uniform(rng.child("r"), x.shape, -1, 1)
    _, cache, _ = nn.batchnorm3d_forward(x, spec, gamma, beta, mean, var, train=True)
    gx, gg, gb = nn.batchnorm3d_backward(r, cache)
    loss = lambda: float(np.sum(nn.batchnorm3d_forward(x, spec, gamma, beta, mean, var, train=True)[0] * r))
    return _result(_worst(relative_error(gx, numeric_gradient(loss, x, LAYER_STEP)),
                          relative_error(gg, numeric_gradient(loss, gamma, LAYER_STEP)),
                          relative_error(gb, numeric_gradient(loss, beta, LAYER_STEP))), BATCHNORM_TOLERANCE)


def _check_relu(rng: Rng) -> Tuple[bool, str]:
    u = rand_uniform(rng.child("x"), (4, 6), -1, 1)
    x = np.sign(u) * (0.05 + np.abs(u))
    r = rand_uniform(rng.child("r"), x.shape, -1, 1)
    _, mask = nn.relu_forward(x)
    gx = nn.relu_backward(r, mask)
    loss = lambda: float(np.sum(nn.relu_forward(x)[0] * r))
    return _result(relative_error(gx, numeric_gradient(loss, x, LAYER_STEP)), LAYER_TOLERANCE)


def _check_linear(rng: Rng) -> Tuple[bool, str]:
    x = rand_uniform(rng.child("x"), (3, 5), -1, 1)
    w = rand_uniform(rng.child("w"), (5, 4), -1, 1)
    b = rand_uniform(rng.child("b"), (4,), -1, 1)
    r = rand_uniform(rng.child("r"), (3, 4), -1, 1)
    gx, gw, gb = nn.linear_backward(r, x, w)
    loss = lambda: float(np.sum(nn.linear_forward(x, w, b) * r))
    return _result(_worst(relative_error(gx, numeric_gradient(loss, x, LAYER_STEP)),
                          relative_error(gw, numeric_gradient(loss, w, LAYER_STEP)),
                          relative_error(gb, numeric_gradient(loss, b, LAYER_STEP))), LAYER_TOLERANCE)


def _check_pool_and_flatten(rng: Rng) -> Tuple[bool, str]:
    x = rand_uniform(rng.child("x"), (2, 2, 3, 3, 2), -1, 1)
    r = rand_uniform(rng.child("r"), (2, 4), -1, 1)
    pooled = nn.spatial_avg_pool_forward(x)
    g = nn.spatial_avg_pool_backward(nn.flatten_backward(r, pooled.shape), x.shape)
    loss = lambda: float(np.sum(nn.flatten_forward(nn.spatial_avg_pool_forward(x)) * r))
    return _result(relative_error(g, numeric_gradient(loss, x, LAYER_STEP)), LAYER_TOLERANCE)


def _check_losses(rng: Rng) -> Tuple[bool, str]:
    errors = []
    logits = rand_uniform(rng.child("ml"), (4, 7), -3, 3)
    z = (rand_uniform(rng.child("z"), (4, 7), 0, 1) > 0.5).astype(np.int64)
    _, grad = loss_service.pretext_loss_multilabel(logits, z)
    errors.append(relative_error(grad, numeric_gradient(
        lambda: loss_service.pretext_loss_multilabel(logits, z)[0].value, logits, LAYER_STEP)))
    for classes, fn in ((8, loss_service.pretext_loss_multiclass), (4, loss_service.downstream_loss)):
        logits = rand_uniform(rng.child(f"mc{classes}"), (4, classes), -3, 3)
        labels = [rng.integers(0, classes) for _ in range(4)]
        _, grad = fn(logits, labels)
        errors.append(relative_error(grad, numeric_gradient(lambda: fn(logits, labels)[0].value,
                                                            logits, LAYER_STEP)))
    return _result(_worst(*errors), LOSS_TOLERANCE)


def _network_spot_check(arch: ArchId) -> Check:
    def check(rng: Rng) -> Tuple[bool, str]:
        net = network_service.build_network(arch, TINY_SCALE, 5, rng.child("net"))
        batch = rand_uniform(rng.child("batch"), (2, *net.input_shape), 0, 1)
        logits, caches = network_service.forward(net, batch, train=True)
        r = rand_uniform(rng.child("r"), logits.shape, -1, 1)
        grads = network_service.backward(net, caches, r)
        candidates = [name for name in net.params.trainable_names() if name.endswith(("weight", "gamma", "beta"))]
        pick = rng.child("pick")
        analytic, numeric = [], []
        for _ in range(NETWORK_SAMPLES):
            name = candidates[pick.integers(0, len(candidates))]
            tensor = net.params.values[name]
            idx = tuple(pick.integers(0, d) for d in tensor.shape)
            loss = lambda: float(np.sum(network_service.forward(net, batch, train=True)[0] * r))
            analytic.append(grads[name][idx])
            original = tensor[idx]
            tensor[idx] = original + NETWORK_STEP
            plus = loss()
            tensor[idx] = original - NETWORK_STEP
            minus = loss()
            tensor[idx] = original
            numeric.append((plus - minus) / (2 * NETWORK_STEP))
        return _result(relative_error(np.array(analytic), np.array(numeric)), NETWORK_TOLERANCE)
    return check


def _check_zero_gradients(rng: Rng) -> Tuple[bool, str]:
    net = network_service.build_network(ArchId.R3D18, TINY_SCALE, 3, rng.child("net"))
    batch = rand_uniform(rng.child("batch"), (2, *net.input_shape), 0, 1)
    logits, caches = network_service.forward(net, batch, train=True)
    grads = network_service.backward(net, caches, np.zeros_like(logits))
    shapes_match = all(grads[name].shape == net.params[name].shape for name in net.params.trainable_names())
    all_zero = all(not np.any(g) for g in grads.values())
    return shapes_match and all_zero, f"shapes match: {shapes_match}, all zero: {all_zero}"


# transforms

ClipCheck = Callable[[np.ndarray, Rng], List[str]]


def clip_cases(rng: Rng, clips: int) -> Iterator[np.ndarray]:
    """Seeded clips; T cycles through TRANSFORM_FRAMES and the edge through TRANSFORM_SIZES."""
    for k in range(clips):
        frames = TRANSFORM_FRAMES[k % len(TRANSFORM_FRAMES)]
        size = TRANSFORM_SIZES[(k // len(TRANSFORM_FRAMES)) % len(TRANSFORM_SIZES)]
        yield rand_uniform(rng.fork(k), (frames, size, size, 3), 0, 1)


def _changed_frames(before: np.ndarray, after: np.ndarray) -> List[int]:
    return [t for t in range(before.shape[0]) if not np.array_equal(before[t], after[t])]


def _involutions(clip: np.ndarray, rng: Rng) -> List[str]:
    perm = tf._sample_frame_perm(rng.child("perm"), clip.shape[0])
    colour = tf.COLOR_PERMUTATIONS[rng.integers(0, len(tf.COLOR_PERMUTATIONS))]
    outcomes = {
        "inversion": tf.invert_clip(tf.invert_clip(clip)),
        "rotation 180 twice": tf.rotate(tf.rotate(clip, 180), 180),
        "rotation 90 four times": tf.rotate(tf.rotate(tf.rotate(tf.rotate(clip, 90), 90), 90), 90),
        "rotation 90 then 270": tf.rotate(tf.rotate(clip, 90), 270),
        "colour switch inverse": tf.color_switch(tf.color_switch(clip, colour), list(np.argsort(colour))),
        "permutation inverse": tf.permute_frames(tf.permute_frames(clip, perm), list(np.argsort(perm))),
    }
    return [name for name, value in outcomes.items() if not np.array_equal(value, clip)]


def _conservation(clip: np.ndarray, rng: Rng) -> List[str]:
    frames = clip.shape[0]
    reference = np.sort(clip, axis=None)
    outputs = {
        "rotation": tf.rotate(clip, 90),
        "colour switch": tf.color_switch(clip, (2, 0, 1)),
        "inversion": tf.invert_clip(clip),
        "permutation": tf.permute_frames(clip, tf._sample_frame_perm(rng.child("perm"), frames)),
    }
    broken = [f"{name} changed the pixel multiset" for name, out in outputs.items()
              if not np.array_equal(np.sort(out, axis=None), reference)]
    t = rng.integers(0, frames)
    changed = _changed_frames(clip, tf.replace_frame(clip, t, rng.child("replace")))
    if changed != [t]:
        broken.append(f"frame replacement of {t} changed frames {changed}")
    partner = rand_uniform(rng.child("partner"), clip.shape, 0, 1)
    for half, expected in (("first", list(range(frames // 2))), ("second", list(range(frames // 2, frames)))):
        changed = _changed_frames(clip, tf.split_join(clip, partner, half))
        if changed != expected:
            broken.append(f"split-join of the {half} half changed frames {changed}")
    noisy = tf.add_noise(clip, 0.3, rng.child("noise"))
    if noisy.min() < 0 or noisy.max() > 1:
        broken.append("noise left [0, 1]")
    return broken


def _decoded_kinds(label) -> List[int]:
    if label.mode == LabelMode.MULTI_CLASS:
        return [label.class_id] if label.class_id else []
    return [i + 1 for i, bit in enumerate(label.indicator) if bit]


def _label_soundness(clip: np.ndarray, rng: Rng) -> List[str]:
    """Apply sampled specs, then check the result against what the label says was done."""
    problems = []
    frames = clip.shape[0]
    partners = [clip, rand_uniform(rng.child("partner"), clip.shape, 0, 1)]
    for mode in LabelMode:
        specs = tf.sample_specs(rng.child(mode.value), mode, frames, ALL_TRANSFORMS, num_partners=2, self_index=0)
        out, label = tf.apply_specs(clip, specs, rng.child(f"apply {mode.value}"), mode, partners)
        kinds = _decoded_kinds(label)
        if kinds != sorted(int(spec.kind) for spec in specs) or len(kinds) > tf.MULTILABEL_MAX_TRANSFORMS:
            problems.append(f"{mode.value} label {kinds} does not match {[s.kind.slug for s in specs]}")
            continue
        if not kinds:
            if not np.array_equal(out, clip):
                problems.append(f"{mode.value} label says original but the clip changed")
            continue
        if np.array_equal(out, clip):
            problems.append(f"{mode.value} label {kinds} but the clip is unchanged")
        if set(kinds) <= PIXEL_CONSERVING and not np.array_equal(np.sort(out, axis=None), np.sort(clip, axis=None)):
            problems.append(f"{mode.value} label {kinds} only moves pixels but the multiset changed")
        if kinds == [int(TransformKind.FRAME_REPLACEMENT)] and _changed_frames(clip, out) != [specs[0].frame_index]:
            problems.append(f"frame replacement label but frames {_changed_frames(clip, out)} changed")
        if kinds == [int(TransformKind.SPLIT_JOIN)] and len(_changed_frames(clip, out)) != frames // 2:
            problems.append(f"split-join label but {len(_changed_frames(clip, out))} of {frames} frames changed")
    return problems


def clip_check(per_clip: ClipCheck, passed: str, clips: int) -> Check:
    def check(rng: Rng) -> Tuple[bool, str]:
        for k, clip in enumerate(clip_cases(rng.child("clips"), clips)):
            broken = per_clip(clip, rng.child("draws").fork(k))
            if broken:
                return False, f"clip {k} of shape {clip.shape}: " + "; ".join(broken[:3])
        return True, f"{clips} clips: {passed}"
    return check


def transform_checks(clips: int = TRANSFORM_CLIPS) -> List[Tuple[str, Check]]:
    if clips < 1:
        raise UsageError(f"The transforms suite needs at least one clip, got {clips}")
    return [
        ("involutions", clip_check(_involutions, "round trips exact", clips)),
        ("conservation", clip_check(_conservation, "multisets and locality hold", clips)),
        ("label soundness", clip_check(_label_soundness, "labels match the applied transforms", clips)),
    ]


# oracles

def naive_maxpool3d(x: np.ndarray, spec: MaxPool3dSpec) -> np.ndarray:
    """Loop-by-loop max pooling of one clip (T, H, W, C); padded positions never win."""
    (kt, kh, kw), (st, sh, sw), (pt, ph, pw) = spec.window, spec.stride, spec.padding
    frames, height, width, channels = x.shape
    out_t = (frames + 2 * pt - kt) // st + 1
    out_h = (height + 2 * ph - kh) // sh + 1
    out_w = (width + 2 * pw - kw) // sw + 1
    out = np.full((out_t, out_h, out_w, channels), -np.inf)
    for t in range(out_t):
        for i in range(out_h):
            for j in range(out_w):
                for c in range(channels):
                    for a in range(kt):
                        for b in range(kh):
                            for d in range(kw):
                                src_t, src_h, src_w = t * st - pt + a, i * sh - ph + b, j * sw - pw + d
                                if 0 <= src_t < frames and 0 <= src_h < height and 0 <= src_w < width:
                                    out[t, i, j, c] = max(out[t, i, j, c], x[src_t, src_h, src_w, c])
    return out


def _check_naive_conv(rng: Rng) -> Tuple[bool, str]:
    worst = 0.0
    for case in range(ORACLE_CASES):
        draw = rng.fork(case)
        kernel = tuple(draw.choice([1, 3])[0] for _ in range(3))
        stride = tuple(draw.integers(1, 3) for _ in range(3))
        in_ch, out_ch = draw.integers(1, 4), draw.integers(1, 4)
        shape = (draw.integers(1, 3), draw.integers(1, 5), draw.integers(2, 6), draw.integers(2, 6), in_ch)
        spec = Conv3dSpec(kernel=kernel, in_ch=in_ch, out_ch=out_ch, stride=stride)
        x = rand_uniform(draw.child("x"), shape, -1, 1)
        w = rand_uniform(draw.child("w"), (*kernel, in_ch, out_ch), -1, 1)
        b = rand_uniform(draw.child("b"), (out_ch,), -1, 1)
        fast = nn.conv3d_forward(x, spec, w, b)
        for item in range(shape[0]):
            worst = max(worst, float(np.max(np.abs(fast[item] - naive_conv3d(x[item], w, b, stride)))))
    return worst < ORACLE_TOLERANCE, f"{ORACLE_CASES} cases, max abs diff {worst:.2e}"


def _check_naive_maxpool(rng: Rng) -> Tuple[bool, str]:
    worst, padded, ragged = 0.0, 0, 0
    for case in range(ORACLE_CASES):
        draw = rng.fork(case)
        window = tuple(draw.integers(1, 4) for _ in range(3))
        stride = tuple(draw.integers(1, 3) for _ in range(3))
        padding = tuple(draw.integers(0, k // 2 + 1) for k in window)
        dims = tuple(draw.integers(k, 7) for k in window)
        spec = MaxPool3dSpec(window=window, stride=stride, padding=padding)
        x = rand_uniform(draw.child("x"), (draw.integers(1, 3), *dims, draw.integers(1, 4)), -1, 1)
        fast, _ = nn.maxpool3d_forward(x, spec)
        for item in range(x.shape[0]):
            worst = max(worst, float(np.max(np.abs(fast[item] - naive_maxpool3d(x[item], spec)))))
        padded += any(padding)
        ragged += any((n + 2 * p - k) % s for n, k, s, p in zip(dims, window, stride, padding))
    return (worst < ORACLE_TOLERANCE,
            f"{ORACLE_CASES} cases ({padded} padded, {ragged} with dropped edges), max abs diff {worst:.2e}")


def _check_sgd(rng: Rng) -> Tuple[bool, str]:
    params = ParameterSet()
    params.add("theta", np.zeros(1))
    grads = {"theta": np.array([2.0])}
    network_service.sgd_step(params, grads, 0.1, 0.9)
    first = (float(params.momentum["theta"][0]), float(params["theta"][0]))
    network_service.sgd_step(params, grads, 0.1, 0.9)
    second = (float(params.momentum["theta"][0]), float(params["theta"][0]))
    ok = np.allclose(first, (2.0, -0.2)) and np.allclose(second, (3.8, -0.58))
    frozen = params["theta"].copy()
    network_service.sgd_step(params, grads, 0.0, 0.9)
    ok = ok and np.array_equal(frozen, params["theta"])
    return ok, f"steps gave (v, theta) = {first} then {second}"


def _check_closed_forms(rng: Rng) -> Tuple[bool, str]:
    multilabel = loss_service.pretext_loss_multilabel(np.zeros((3, 7)), np.eye(3, 7, dtype=np.int64))[0].value
    multiclass = loss_service.pretext_loss_multiclass(np.zeros((3, 8)), [0, 3, 7])[0].value
    downstream = loss_service.downstream_loss(np.zeros((2, 4)), [1, 2])[0].value
    ok = (math.isclose(multilabel, 7 * math.log(2), rel_tol=1e-9)
          and math.isclose(multiclass, math.log(8), rel_tol=1e-9)
          and math.isclose(downstream, math.log(4), rel_tol=1e-9))
    return ok, f"7 ln 2 -> {multilabel:.6f}, ln 8 -> {multiclass:.6f}, ln 4 -> {downstream:.6f}"


def _check_batchnorm_modes(rng: Rng) -> Tuple[bool, str]:
    spec = BatchNorm3dSpec(channels=3, momentum=1.0)
    x = rand_uniform(rng.child("x"), (4, 2, 3, 3, 3), -1, 1)
    gamma = rand_uniform(rng.child("g"), (3,), 0.5, 1.5)
    beta = rand_uniform(rng.child("b"), (3,), -1, 1)
    train_out, _, (mean, var) = nn.batchnorm3d_forward(x, spec, gamma, beta, np.zeros(3), np.ones(3), True)
    eval_out, _, _ = nn.batchnorm3d_forward(x, spec, gamma, beta, mean, var, False)
    diff = float(np.max(np.abs(train_out - eval_out)))
    return diff < 1e-5, f"train vs eval max diff {diff:.2e}"


def _check_clip_tiling(rng: Rng) -> Tuple[bool, str]:
    cases = {(32, 16, 16): [0, 16], (16, 16, 16): [0], (40, 16, 8): [0, 8, 16, 24]}
    wrong = {k: data_service.clip_offsets(*k) for k, v in cases.items() if data_service.clip_offsets(*k) != v}
    return not wrong, f"wrong offsets {wrong}" if wrong else "offsets match"


def _check_synthetic_separable(rng: Rng) -> Tuple[bool, str]:
    config = SyntheticConfig(num_videos=16, test_videos=0, frames_per_video=6, height=24, width=24,
                             num_classes=8, shape_size=6.0, speed_min=1.0, speed_max=2.0,
                             seed=rng.integers(0, 2**31))
    videos = data_service.generate_synthetic(config)
    hits = sum(data_service.classify_direction(v.frames, config.num_classes, config.background) == v.label
               for v in videos)
    return hits == len(videos), f"{hits}/{len(videos)} directions recovered from centroids"


# shapes

def _check_table(arch: ArchId, table: Dict[str, tuple]) -> Check:
    def check(rng: Rng) -> Tuple[bool, str]:
        layers = network_service.network_layers(arch, Scale(), 8)
        trace = dict(network_service.shape_trace(layers, (16, 224, 224, 3)))
        wrong = {name: trace.get(name) for name, shape in table.items() if trace.get(name) != shape}
        if trace[layers[-1][0]] != (8,):
            wrong["head"] = trace[layers[-1][0]]
        return not wrong, f"mismatched rows {wrong}" if wrong else f"{len(table) + 1} rows match"
    return check


def _check_parameter_counts(rng: Rng) -> Tuple[bool, str]:
    details = []
    ok = True
    for arch in ArchId:
        layers = network_service.network_layers(arch, Scale(), 101)
        by_spec = network_service.parameter_count(layers)
        by_tensor = sum(int(np.prod(shape)) for _, shape, trainable in network_service.parameter_shapes(layers)
                        if trainable)
        ok = ok and by_spec == by_tensor
        details.append(f"{arch.name} {by_spec} vs {by_tensor}")
    desk = network_service.build_network(ArchId.C3D, Scale.desk(), 8, rng.child("desk"))
    ok = ok and desk.params.count() == network_service.parameter_count(desk)
    conv1 = dict(network_service.shape_trace(desk))["conv1"]
    ok = ok and conv1 == (8, 32, 32, 8)
    details.append(f"desk conv1 {conv1}")
    return ok, ", ".join(details)


CHECKS: Dict[str, List[Tuple[str, Check]]] = {
    "transforms": transform_checks(),
    "gradients": [
        ("conv3d", _check_conv),
        ("maxpool3d", _check_maxpool),
        ("batchnorm3d", _check_batchnorm),
        ("relu", _check_relu),
        ("linear", _check_linear),
        ("avgpool+flatten", _check_pool_and_flatten),
        ("losses", _check_losses),
        ("zero gradients", _check_zero_gradients),
        ("c3d spot check", _network_spot_check(ArchId.C3D)),
        ("r3d18 spot check", _network_spot_check(ArchId.R3D18)),
    ],
    "oracles": [
        ("naive conv3d", _check_naive_conv),
        ("naive maxpool3d", _check_naive_maxpool),
        ("sgd update", _check_sgd),
        ("loss closed forms", _check_closed_forms),
        ("batchnorm train/eval", _check_batchnorm_modes),
        ("clip tiling", _check_clip_tiling),
        ("synthetic separability", _check_synthetic_separable),
    ],
    "shapes": [
        ("c3d table", _check_table(ArchId.C3D, C3D_TABLE)),
        ("r3d18 table", _check_table(ArchId.R3D18, R3D18_TABLE)),
        ("parameter counts", _check_parameter_counts),
    ],
}


def run_verification(suites: Sequence[str] = SUITES, cases: int = 1, seed: int = 0,
                     clips: int = TRANSFORM_CLIPS) -> VerificationReport:
    """Run each check `cases` times on independent random streams (64-bit mode).

    `clips` sets how many random clips each transforms check covers.
    """
    report = VerificationReport()
    root = Rng(seed).child("verify")
    with float64_mode():
        for suite in suites:
            checks = CHECKS[suite]
            if suite == "transforms" and clips != TRANSFORM_CLIPS:
                checks = transform_checks(clips)
            for name, check in checks:
                passed, detail = True, ""
                for case in range(max(cases, 1)):
                    try:
                        passed, detail = check(root.child(suite).child(name).fork(case))
                    except ToolkitError as e:
                        passed, detail = False, f"{type(e).__name__}: {e.detail}"
                    if not passed:
                        detail = f"case {case}: {detail}"
                        break
                report.checks.append(CheckResult(suite=suite, name=name, passed=passed, detail=detail))
                log = logger.info if passed else logger.error
                log(f"[{suite}] {name}: {'ok' if passed else 'FAILED'} ({detail})")
    return report


def raise_on_failure(report: VerificationReport) -> VerificationReport:
    if not report.passed:
        names = ", ".join(f"{c.suite}/{c.name}" for c in report.failures)
        raise VerificationError(f"{len(report.failures)} of {len(report.checks)} checks failed: {names}")
    return report

"""Forward and analytic backward kernels for the 3D CNN layers.

Activations are (B, T, H, W, C). Convolution is cross-correlation with
"same" zero padding for odd kernels, computed as one matmul per kernel
offset over a strided view of the padded input. Max pooling breaks ties
toward the first element in (t, h, w) scan order.
"""
from typing import Tuple
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from app.core.exceptions import InvalidBatchError, ShapeError
from app.schemas.network import BatchNorm3dSpec, Conv3dSpec, MaxPool3dSpec, Triple
from app.services.tensor_service import Rng, rand_gaussian


def _check_rank(x: np.ndarray, rank: int, what: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{what} expects a rank-{rank} input, got shape {x.shape}")


def output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _offset_view(xp: np.ndarray, offset: Triple, out_dims: Triple, stride: Triple) -> np.ndarray:
    """Strided view of the padded input seen by one kernel offset."""
    (dt, dh, dw), (ot, oh, ow), (st, sh, sw) = offset, out_dims, stride
    return xp[:,
              dt:dt + st * (ot - 1) + 1:st,
              dh:dh + sh * (oh - 1) + 1:sh,
              dw:dw + sw * (ow - 1) + 1:sw,
              :]


def _pad(x: np.ndarray, padding: Triple, value: float = 0.0) -> np.ndarray:
    pt, ph, pw = padding
    if not (pt or ph or pw):
        return x
    return np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)), constant_values=value)


def conv3d_output_shape(in_shape: Tuple[int, ...], spec: Conv3dSpec) -> Tuple[int, ...]:
    dims = tuple(
        output_size(n, k, s, p)
        for n, k, s, p in zip(in_shape[-4:-1], spec.kernel, spec.stride, spec.padding)
    )
    if any(d < 1 for d in dims):
        raise ShapeError(f"Convolution {spec.kernel} does not fit input {in_shape}")
    return (*in_shape[:-4], *dims, spec.out_ch)


def conv3d_forward(x: np.ndarray, spec: Conv3dSpec, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    _check_rank(x, 5, "conv3d")
    if x.shape[-1] != spec.in_ch:
        raise ShapeError(f"conv3d expects {spec.in_ch} input channels, got {x.shape[-1]}")
    if weights.shape != (*spec.kernel, spec.in_ch, spec.out_ch) or bias.shape != (spec.out_ch,):
        raise ShapeError(f"conv3d weights {weights.shape} / bias {bias.shape} do not match {spec.kernel}")
    out_shape = conv3d_output_shape(x.shape, spec)
    xp = _pad(x, spec.padding)
    out = np.zeros(out_shape, dtype=np.result_type(x, weights))
    for offset in np.ndindex(*spec.kernel):
        out += _offset_view(xp, offset, out_shape[1:4], spec.stride) @ weights[offset]
    out += bias
    return out


def conv3d_backward(grad_out: np.ndarray, x: np.ndarray, spec: Conv3dSpec,
                    weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_weights, grad_bias)."""
    expected = conv3d_output_shape(x.shape, spec)
    if grad_out.shape != expected:
        raise ShapeError(f"conv3d gradient shape {grad_out.shape} does not match output {expected}")
    xp = _pad(x, spec.padding)
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(weights)
    out_dims = grad_out.shape[1:4]
    flat_grad = grad_out.reshape(-1, spec.out_ch)
    for offset in np.ndindex(*spec.kernel):
        window = _offset_view(xp, offset, out_dims, spec.stride)
        grad_w[offset] = window.reshape(-1, spec.in_ch).T @ flat_grad
        _offset_view(grad_xp, offset, out_dims, spec.stride)[...] += grad_out @ weights[offset].T
    grad_b = grad_out.sum(axis=(0, 1, 2, 3))
    pt, ph, pw = spec.padding
    _, t, h, w, _ = x.shape
    grad_x = grad_xp[:, pt:pt + t, ph:ph + h, pw:pw + w, :]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def maxpool3d_output_shape(in_shape: Tuple[int, ...], spec: MaxPool3dSpec) -> Tuple[int, ...]:
    padded = [n + 2 * p for n, p in zip(in_shape[-4:-1], spec.padding)]
    if any(w > n for w, n in zip(spec.window, padded)):
        raise ShapeError(f"Pooling window {spec.window} is larger than input {tuple(in_shape[-4:-1])}")
    dims = tuple(output_size(n, k, s, p) for n, k, s, p in
                 zip(in_shape[-4:-1], spec.window, spec.stride, spec.padding))
    return (*in_shape[:-4], *dims, in_shape[-1])


def maxpool3d_forward(x: np.ndarray, spec: MaxPool3dSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (output, argmax cache); argmax indexes the flattened window."""
    _check_rank(x, 5, "maxpool3d")
    out_shape = maxpool3d_output_shape(x.shape, spec)
    xp = _pad(x, spec.padding, value=-np.inf)
    st, sh, sw = spec.stride
    windows = sliding_window_view(xp, spec.window, axis=(1, 2, 3))[:, ::st, ::sh, ::sw]
    flat = windows.reshape(*windows.shape[:5], -1)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    assert out.shape == out_shape
    return np.ascontiguousarray(out), argmax


def maxpool3d_backward(grad_out: np.ndarray, argmax: np.ndarray, in_shape: Tuple[int, ...],
                       spec: MaxPool3dSpec) -> np.ndarray:
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"maxpool3d gradient shape {grad_out.shape} does not match cache {argmax.shape}")
    pt, ph, pw = spec.padding
    b, t, h, w, c = in_shape
    grad_xp = np.zeros((b, t + 2 * pt, h + 2 * ph, w + 2 * pw, c), dtype=grad_out.dtype)
    out_dims = grad_out.shape[1:4]
    for k, offset in enumerate(np.ndindex(*spec.window)):
        routed = np.where(argmax == k, grad_out, 0)
        _offset_view(grad_xp, offset, out_dims, spec.stride)[...] += routed
    return np.ascontiguousarray(grad_xp[:, pt:pt + t, ph:ph + h, pw:pw + w, :])


_BN_AXES = (0, 1, 2, 3)


def batchnorm3d_forward(x: np.ndarray, spec: BatchNorm3dSpec, gamma: np.ndarray, beta: np.ndarray,
                        running_mean: np.ndarray, running_var: np.ndarray, train: bool):
    """Returns (output, cache, (running_mean, running_var)).

    Train mode normalizes with batch statistics over (B, T, H, W) and blends
    them into the running statistics; eval mode uses the running statistics.
    """
    _check_rank(x, 5, "batchnorm3d")
    if x.shape[-1] != spec.channels:
        raise ShapeError(f"batchnorm3d expects {spec.channels} channels, got {x.shape[-1]}")
    if train:
        if x.shape[0] < 2:
            raise InvalidBatchError("Train-mode batch norm needs a batch of at least 2 clips")
        mean = x.mean(axis=_BN_AXES)
        var = x.var(axis=_BN_AXES)
        m = spec.momentum
        running = ((1 - m) * running_mean + m * mean, (1 - m) * running_var + m * var)
    else:
        mean, var = running_mean, running_var
        running = (running_mean, running_var)
    inv_std = 1.0 / np.sqrt(var + spec.epsilon)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    cache = (xhat, inv_std, gamma) if train else None
    return out, cache, running


def batchnorm3d_backward(grad_out: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_gamma, grad_beta) for a train-mode forward."""
    xhat, inv_std, gamma = cache
    if grad_out.shape != xhat.shape:
        raise ShapeError(f"batchnorm3d gradient shape {grad_out.shape} does not match {xhat.shape}")
    count = xhat.size // xhat.shape[-1]
    grad_gamma = (grad_out * xhat).sum(axis=_BN_AXES)
    grad_beta = grad_out.sum(axis=_BN_AXES)
    dxhat = grad_out * gamma
    grad_x = (inv_std / count) * (
        count * dxhat
        - dxhat.sum(axis=_BN_AXES)
        - xhat * (dxhat * xhat).sum(axis=_BN_AXES)
    )
    return grad_x, grad_gamma, grad_beta


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Subgradient at 0 is 0."""
    if grad_out.shape != mask.shape:
        raise ShapeError(f"relu gradient shape {grad_out.shape} does not match {mask.shape}")
    return np.where(mask, grad_out, 0).astype(grad_out.dtype, copy=False)


def linear_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    _check_rank(x, 2, "linear")
    if x.shape[1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(f"linear input {x.shape} does not match weights {weights.shape}")
    return x @ weights + bias


def linear_backward(grad_out: np.ndarray, x: np.ndarray,
                    weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if grad_out.shape != (x.shape[0], weights.shape[1]):
        raise ShapeError(f"linear gradient shape {grad_out.shape} does not match output")
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


def spatial_avg_pool_forward(x: np.ndarray) -> np.ndarray:
    """(B, T, H, W, C) -> (B, T, 1, 1, C)"""
    _check_rank(x, 5, "spatial_avg_pool")
    return x.mean(axis=(2, 3), keepdims=True)


def spatial_avg_pool_backward(grad_out: np.ndarray, in_shape: Tuple[int, ...]) -> np.ndarray:
    b, t, h, w, c = in_shape
    if grad_out.shape != (b, t, 1, 1, c):
        raise ShapeError(f"spatial_avg_pool gradient shape {grad_out.shape} does not match input {in_shape}")
    return np.broadcast_to(grad_out / (h * w), in_shape).copy()


def flatten_forward(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def flatten_backward(grad_out: np.ndarray, in_shape: Tuple[int, ...]) -> np.ndarray:
    if grad_out.size != int(np.prod(in_shape)):
        raise ShapeError(f"flatten gradient shape {grad_out.shape} does not match input {in_shape}")
    return grad_out.reshape(in_shape)


def he_normal(rng: Rng, shape: Tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    return rand_gaussian(rng, shape, 0.0, float(np.sqrt(2.0 / fan_in))).astype(dtype)

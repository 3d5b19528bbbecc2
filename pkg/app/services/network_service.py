"""C3D and 3D ResNet-18 backbones built from the nn_service kernels.

A network is an ordered list of named layer specs plus a ParameterSet.
Parameter names are "<layer>.<tensor>", with residual sub-layers nested as
"<block>.<part>.<tensor>", so checkpoints and transfer copies can address
tensors without knowing the topology.
"""
from typing import Dict, Iterator, List, Optional, Sequence, Tuple
import logging
import numpy as np
from scipy.special import softmax
from app.core.exceptions import InvalidParameterError, ShapeError, StateError
from app.schemas.network import (
    ArchId,
    BatchNorm3dSpec,
    Conv3dSpec,
    FlattenSpec,
    LayerSpec,
    LinearSpec,
    MaxPool3dSpec,
    ReluSpec,
    ResidualSpec,
    Scale,
    SpatialAvgPoolSpec,
)
from app.services import nn_service as nn
from app.services.tensor_service import Rng, get_dtype, rand_gaussian

logger = logging.getLogger(__name__)

Layer = Tuple[str, LayerSpec]
Gradients = Dict[str, np.ndarray]

HEAD_INIT_STD = 0.01


class ParameterSet:
    """Named tensors plus one zero-initialised momentum buffer per trainable tensor."""

    def __init__(self):
        self.values: Dict[str, np.ndarray] = {}
        self.momentum: Dict[str, np.ndarray] = {}
        self._trainable: Dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self.values:
            raise InvalidParameterError(f"Duplicate parameter name '{name}'")
        self.values[name] = value
        self._trainable[name] = trainable
        if trainable:
            self.momentum[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self.values:
            raise InvalidParameterError(f"Unknown parameter '{name}'")
        if value.shape != self.values[name].shape:
            raise ShapeError(f"Parameter '{name}' expects shape {self.values[name].shape}, got {value.shape}")
        self.values[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def trainable_names(self) -> List[str]:
        return [name for name, flag in self._trainable.items() if flag]

    def freeze(self, keep: Sequence[str] = ()) -> None:
        """Mark every tensor frozen except names starting with a prefix in `keep`."""
        for name in self.values:
            if self._trainable[name] and not any(name.startswith(prefix) for prefix in keep):
                self._trainable[name] = False
                self.momentum.pop(name, None)

    def count(self, trainable_only: bool = True) -> int:
        return sum(
            int(value.size) for name, value in self.values.items()
            if self._trainable[name] or not trainable_only
        )


class Network:
    def __init__(self, arch: ArchId, scale: Scale, num_outputs: int, layers: List[Layer], params: ParameterSet):
        self.arch = arch
        self.scale = scale
        self.num_outputs = num_outputs
        self.layers = layers
        self.params = params

    @property
    def input_shape(self) -> Tuple[int, int, int, int]:
        return (self.scale.frames, self.scale.crop, self.scale.crop, 3)

    @property
    def head_name(self) -> str:
        return self.layers[-1][0]

    def __repr__(self) -> str:
        return (f"Network(arch={self.arch.name}, frames={self.scale.frames}, crop={self.scale.crop}, "
                f"channel_div={self.scale.channel_div}, outputs={self.num_outputs})")


# topology

def residual_parts(spec: ResidualSpec) -> List[Tuple[str, LayerSpec]]:
    parts = [
        ("conv1", Conv3dSpec(kernel=(3, 3, 3), in_ch=spec.in_ch, out_ch=spec.out_ch, stride=spec.stride)),
        ("bn1", BatchNorm3dSpec(channels=spec.out_ch)),
        ("conv2", Conv3dSpec(kernel=(3, 3, 3), in_ch=spec.out_ch, out_ch=spec.out_ch)),
        ("bn2", BatchNorm3dSpec(channels=spec.out_ch)),
    ]
    if spec.projected:
        parts += [
            ("proj", Conv3dSpec(kernel=(1, 1, 1), in_ch=spec.in_ch, out_ch=spec.out_ch, stride=spec.stride)),
            ("proj_bn", BatchNorm3dSpec(channels=spec.out_ch)),
        ]
    return parts


def _output_shape(shape: Tuple[int, ...], spec: LayerSpec) -> Tuple[int, ...]:
    """Per-clip shape inference, (T, H, W, C) in and out."""
    if isinstance(spec, Conv3dSpec):
        if shape[-1] != spec.in_ch:
            raise ShapeError(f"Convolution expects {spec.in_ch} channels, got shape {shape}")
        return nn.conv3d_output_shape(shape, spec)
    if isinstance(spec, MaxPool3dSpec):
        return nn.maxpool3d_output_shape(shape, spec)
    if isinstance(spec, ResidualSpec):
        if shape[-1] != spec.in_ch:
            raise ShapeError(f"Residual block expects {spec.in_ch} channels, got shape {shape}")
        return nn.conv3d_output_shape(shape, residual_parts(spec)[0][1])
    if isinstance(spec, (BatchNorm3dSpec, ReluSpec)):
        return shape
    if isinstance(spec, SpatialAvgPoolSpec):
        return (shape[0], 1, 1, shape[-1])
    if isinstance(spec, FlattenSpec):
        return (int(np.prod(shape)),)
    if isinstance(spec, LinearSpec):
        if shape != (spec.in_dim,):
            raise ShapeError(f"Linear layer expects {spec.in_dim} features, got shape {shape}")
        return (spec.out_dim,)
    raise InvalidParameterError(f"Unknown layer spec {spec!r}")


def _fit_pool(shape: Tuple[int, ...], window, stride, padding=(0, 0, 0)) -> MaxPool3dSpec:
    """Clip window and stride on any axis shorter than the window."""
    window, stride = list(window), list(stride)
    for axis, extent in enumerate(shape[:3]):
        if extent + 2 * padding[axis] < window[axis]:
            window[axis] = stride[axis] = extent
    return MaxPool3dSpec(window=tuple(window), stride=tuple(stride), padding=tuple(padding))


class _Builder:
    """Appends layers while tracking the per-clip output shape."""

    def __init__(self, input_shape: Tuple[int, ...]):
        self.layers: List[Layer] = []
        self.shape = input_shape

    def add(self, name: str, spec: LayerSpec) -> None:
        self.shape = _output_shape(self.shape, spec)
        self.layers.append((name, spec))

    def conv_block(self, name: str, kernel, out_ch: int, stride=(1, 1, 1)) -> None:
        self.add(f"conv{name}", Conv3dSpec(kernel=kernel, in_ch=self.shape[-1], out_ch=out_ch, stride=stride))
        self.add(f"bn{name}", BatchNorm3dSpec(channels=out_ch))
        self.add(f"relu{name}", ReluSpec())

    def pool(self, name: str, window, stride, padding=(0, 0, 0)) -> None:
        self.add(name, _fit_pool(self.shape, window, stride, padding))


def _c3d_layers(scale: Scale, num_outputs: int) -> List[Layer]:
    b = _Builder((scale.frames, scale.crop, scale.crop, 3))
    w = scale.width
    b.conv_block("1", (7, 7, 7), w(64))
    b.pool("pool1", (1, 2, 2), (1, 2, 2))
    b.conv_block("2", (3, 3, 3), w(128))
    b.pool("pool2", (2, 2, 2), (2, 2, 2))
    for stage, width in (("3", 256), ("4", 512), ("5", 512)):
        b.conv_block(f"{stage}a", (3, 3, 3), w(width))
        b.conv_block(f"{stage}b", (3, 3, 3), w(width))
        b.pool(f"pool{stage}", (2, 2, 2), (2, 2, 2))
    b.add("flatten", FlattenSpec())
    b.add("fc1", LinearSpec(in_dim=b.shape[0], out_dim=scale.fc_width))
    b.add("relu_fc1", ReluSpec())
    b.add("fc2", LinearSpec(in_dim=scale.fc_width, out_dim=scale.fc_width))
    b.add("relu_fc2", ReluSpec())
    b.add("fc3", LinearSpec(in_dim=scale.fc_width, out_dim=num_outputs))
    return b.layers


def _r3d18_layers(scale: Scale, num_outputs: int) -> List[Layer]:
    b = _Builder((scale.frames, scale.crop, scale.crop, 3))
    w = scale.width
    b.conv_block("1", (7, 7, 7), w(64), stride=(1, 2, 2))
    b.pool("pool", (3, 3, 3), (1, 2, 2), padding=(1, 1, 1))
    for stage, width in ((2, 64), (3, 128), (4, 256), (5, 512)):
        stride = (1, 1, 1) if stage == 2 else (2, 2, 2)
        b.add(f"block{stage}a", ResidualSpec(in_ch=b.shape[-1], out_ch=w(width), stride=stride))
        b.add(f"block{stage}b", ResidualSpec(in_ch=w(width), out_ch=w(width)))
    b.add("avgpool", SpatialAvgPoolSpec())
    b.add("flatten", FlattenSpec())
    b.add("fc", LinearSpec(in_dim=b.shape[0], out_dim=num_outputs))
    return b.layers


def network_layers(arch: ArchId, scale: Scale, num_outputs: int) -> List[Layer]:
    """Layer list for an architecture; no tensors are allocated."""
    if num_outputs < 1:
        raise InvalidParameterError(f"num_outputs must be >= 1, got {num_outputs}")
    try:
        if arch == ArchId.C3D:
            return _c3d_layers(scale, num_outputs)
        if arch == ArchId.R3D18:
            return _r3d18_layers(scale, num_outputs)
    except ShapeError as e:
        raise InvalidParameterError(f"Scale {scale.model_dump()} does not fit {ArchId(arch).name}: {e.detail}")
    raise InvalidParameterError(f"Unknown architecture {arch!r}")


def parameter_shapes(layers: Sequence[Layer]) -> List[Tuple[str, Tuple[int, ...], bool]]:
    """(name, shape, trainable) for every tensor the layers own, in build order."""
    entries = []
    for name, spec in layers:
        if isinstance(spec, Conv3dSpec):
            entries += [(f"{name}.weight", (*spec.kernel, spec.in_ch, spec.out_ch), True),
                        (f"{name}.bias", (spec.out_ch,), True)]
        elif isinstance(spec, BatchNorm3dSpec):
            entries += [(f"{name}.gamma", (spec.channels,), True),
                        (f"{name}.beta", (spec.channels,), True),
                        (f"{name}.running_mean", (spec.channels,), False),
                        (f"{name}.running_var", (spec.channels,), False)]
        elif isinstance(spec, LinearSpec):
            entries += [(f"{name}.weight", (spec.in_dim, spec.out_dim), True),
                        (f"{name}.bias", (spec.out_dim,), True)]
        elif isinstance(spec, ResidualSpec):
            entries += parameter_shapes([(f"{name}.{part}", sub) for part, sub in residual_parts(spec)])
    return entries


def spec_parameter_count(spec: LayerSpec) -> int:
    """Trainable parameter count of one layer from its hyper-parameters."""
    if isinstance(spec, Conv3dSpec):
        kt, kh, kw = spec.kernel
        return kt * kh * kw * spec.in_ch * spec.out_ch + spec.out_ch
    if isinstance(spec, BatchNorm3dSpec):
        return 2 * spec.channels
    if isinstance(spec, LinearSpec):
        return spec.in_dim * spec.out_dim + spec.out_dim
    if isinstance(spec, ResidualSpec):
        return sum(spec_parameter_count(sub) for _, sub in residual_parts(spec))
    return 0


def parameter_count(net_or_layers) -> int:
    layers = net_or_layers.layers if isinstance(net_or_layers, Network) else net_or_layers
    return sum(spec_parameter_count(spec) for _, spec in layers)


def shape_trace(net_or_layers, input_shape: Optional[Tuple[int, ...]] = None) -> List[Tuple[str, Tuple[int, ...]]]:
    """(layer name, per-clip output shape) for every layer."""
    if isinstance(net_or_layers, Network):
        layers, shape = net_or_layers.layers, net_or_layers.input_shape
    else:
        layers, shape = net_or_layers, input_shape
    trace = []
    for name, spec in layers:
        shape = _output_shape(shape, spec)
        trace.append((name, shape))
    return trace


def build_network(arch: ArchId, scale: Scale, num_outputs: int, rng: Rng) -> Network:
    """He-initialised weights, zero biases, BN gamma 1 and beta 0.

    The classification head draws from N(0, HEAD_INIT_STD^2) so initial
    predictions are close to uniform.
    """
    layers = network_layers(arch, scale, num_outputs)
    head = f"{layers[-1][0]}."
    dtype = get_dtype()
    params = ParameterSet()
    for name, shape, trainable in parameter_shapes(layers):
        tensor = name.rsplit(".", 1)[1]
        if tensor == "weight" and name.startswith(head):
            value = rand_gaussian(rng.child(name), shape, 0.0, HEAD_INIT_STD).astype(dtype)
        elif tensor == "weight":
            fan_in = int(np.prod(shape[:-1]))
            value = nn.he_normal(rng.child(name), shape, fan_in, dtype)
        elif tensor in ("gamma", "running_var"):
            value = np.ones(shape, dtype=dtype)
        else:
            value = np.zeros(shape, dtype=dtype)
        params.add(name, value, trainable)
    net = Network(ArchId(arch), scale, num_outputs, layers, params)
    logger.debug(f"Built {net} with {params.count()} trainable parameters")
    return net


# forward / backward

def _forward_layer(params: ParameterSet, name: str, spec: LayerSpec, x: np.ndarray, train: bool):
    if isinstance(spec, Conv3dSpec):
        return nn.conv3d_forward(x, spec, params[f"{name}.weight"], params[f"{name}.bias"]), x
    if isinstance(spec, BatchNorm3dSpec):
        y, cache, (mean, var) = nn.batchnorm3d_forward(
            x, spec, params[f"{name}.gamma"], params[f"{name}.beta"],
            params[f"{name}.running_mean"], params[f"{name}.running_var"], train)
        if train:
            params[f"{name}.running_mean"] = mean.astype(x.dtype, copy=False)
            params[f"{name}.running_var"] = var.astype(x.dtype, copy=False)
        return y, cache
    if isinstance(spec, ReluSpec):
        return nn.relu_forward(x)
    if isinstance(spec, MaxPool3dSpec):
        y, argmax = nn.maxpool3d_forward(x, spec)
        return y, (argmax, x.shape)
    if isinstance(spec, LinearSpec):
        return nn.linear_forward(x, params[f"{name}.weight"], params[f"{name}.bias"]), x
    if isinstance(spec, SpatialAvgPoolSpec):
        return nn.spatial_avg_pool_forward(x), x.shape
    if isinstance(spec, FlattenSpec):
        return nn.flatten_forward(x), x.shape
    if isinstance(spec, ResidualSpec):
        return _residual_forward(params, name, spec, x, train)
    raise InvalidParameterError(f"Unknown layer spec {spec!r}")


def _residual_forward(params: ParameterSet, name: str, spec: ResidualSpec, x: np.ndarray, train: bool):
    parts = dict(residual_parts(spec))
    caches = {}
    h = x
    for part in ("conv1", "bn1", "relu", "conv2", "bn2"):
        sub = ReluSpec() if part == "relu" else parts[part]
        h, caches[part] = _forward_layer(params, f"{name}.{part}", sub, h, train)
    shortcut = x
    if spec.projected:
        for part in ("proj", "proj_bn"):
            shortcut, caches[part] = _forward_layer(params, f"{name}.{part}", parts[part], shortcut, train)
    out, caches["out"] = nn.relu_forward(h + shortcut)
    return out, caches


def _backward_layer(params: ParameterSet, name: str, spec: LayerSpec, cache, grad: np.ndarray,
                    grads: Gradients) -> np.ndarray:
    if isinstance(spec, Conv3dSpec):
        grad_x, grads[f"{name}.weight"], grads[f"{name}.bias"] = nn.conv3d_backward(
            grad, cache, spec, params[f"{name}.weight"])
        return grad_x
    if isinstance(spec, BatchNorm3dSpec):
        if cache is None:
            raise StateError(f"Layer '{name}' ran in eval mode; no batch statistics to differentiate")
        grad_x, grads[f"{name}.gamma"], grads[f"{name}.beta"] = nn.batchnorm3d_backward(grad, cache)
        return grad_x
    if isinstance(spec, ReluSpec):
        return nn.relu_backward(grad, cache)
    if isinstance(spec, MaxPool3dSpec):
        argmax, in_shape = cache
        return nn.maxpool3d_backward(grad, argmax, in_shape, spec)
    if isinstance(spec, LinearSpec):
        grad_x, grads[f"{name}.weight"], grads[f"{name}.bias"] = nn.linear_backward(
            grad, cache, params[f"{name}.weight"])
        return grad_x
    if isinstance(spec, SpatialAvgPoolSpec):
        return nn.spatial_avg_pool_backward(grad, cache)
    if isinstance(spec, FlattenSpec):
        return nn.flatten_backward(grad, cache)
    if isinstance(spec, ResidualSpec):
        return _residual_backward(params, name, spec, cache, grad, grads)
    raise InvalidParameterError(f"Unknown layer spec {spec!r}")


def _residual_backward(params: ParameterSet, name: str, spec: ResidualSpec, caches, grad: np.ndarray,
                       grads: Gradients) -> np.ndarray:
    parts = dict(residual_parts(spec))
    grad_sum = nn.relu_backward(grad, caches["out"])
    h = grad_sum
    for part in ("bn2", "conv2", "relu", "bn1", "conv1"):
        sub = ReluSpec() if part == "relu" else parts[part]
        h = _backward_layer(params, f"{name}.{part}", sub, caches[part], h, grads)
    shortcut = grad_sum
    if spec.projected:
        for part in ("proj_bn", "proj"):
            shortcut = _backward_layer(params, f"{name}.{part}", parts[part], caches[part], shortcut, grads)
    return h + shortcut


def _check_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    if batch.ndim != 5 or batch.shape[1:] != net.input_shape:
        raise ShapeError(f"Network expects batches of shape (B, {', '.join(map(str, net.input_shape))}), "
                         f"got {batch.shape}")
    return batch.astype(get_dtype(), copy=False)


def forward(net: Network, batch: np.ndarray, train: bool = False):
    """Returns (logits, caches); caches is None in eval mode."""
    x = _check_batch(net, batch)
    caches = [] if train else None
    for name, spec in net.layers:
        x, cache = _forward_layer(net.params, name, spec, x, train)
        if train:
            caches.append(cache)
    return x, caches


def extract_features(net: Network, batch: np.ndarray) -> np.ndarray:
    """Eval-mode activations entering the classification head."""
    x = _check_batch(net, batch)
    for name, spec in net.layers[:-1]:
        x, _ = _forward_layer(net.params, name, spec, x, False)
    return x


def backward(net: Network, caches, grad_logits: np.ndarray) -> Gradients:
    """Gradients for every trainable tensor of a train-mode forward."""
    if caches is None or len(caches) != len(net.layers):
        raise StateError("backward needs the caches of a train-mode forward pass")
    grads: Gradients = {}
    grad = grad_logits
    for (name, spec), cache in zip(reversed(net.layers), reversed(caches)):
        grad = _backward_layer(net.params, name, spec, cache, grad, grads)
    return {name: grads[name] for name in net.params.trainable_names()}


def sgd_step(params: ParameterSet, grads: Gradients, lr: float, momentum: float) -> ParameterSet:
    """v <- momentum * v + g; theta <- theta - lr * v, for each trainable tensor."""
    if lr < 0:
        raise InvalidParameterError(f"Learning rate must be >= 0, got {lr}")
    if not 0 <= momentum < 1:
        raise InvalidParameterError(f"Momentum must lie in [0, 1), got {momentum}")
    for name in params.trainable_names():
        if name not in grads:
            continue
        value, grad = params.values[name], grads[name]
        if grad.shape != value.shape:
            raise ShapeError(f"Gradient for '{name}' has shape {grad.shape}, expected {value.shape}")
        velocity = momentum * params.momentum[name] + grad
        params.momentum[name] = velocity.astype(value.dtype, copy=False)
        if lr:
            params.values[name] = (value - lr * velocity).astype(value.dtype, copy=False)
    return params


def predict_proba(net: Network, batch: np.ndarray) -> np.ndarray:
    logits, _ = forward(net, batch, train=False)
    return softmax(logits.astype(np.float64), axis=1)

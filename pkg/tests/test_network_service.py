import math
import numpy as np
import pytest
from app.core.exceptions import InvalidParameterError, ShapeError, StateError
from app.schemas.network import ArchId, Scale
from app.services import loss_service, network_service as ns
from app.services.network_service import ParameterSet
from app.services.tensor_service import Rng, rand_uniform
from app.services.verify_service import C3D_TABLE, R3D18_TABLE


@pytest.mark.parametrize("arch,table", [(ArchId.C3D, C3D_TABLE), (ArchId.R3D18, R3D18_TABLE)])
def test_full_scale_trace_matches_architecture_tables(arch, table):
    layers = ns.network_layers(arch, Scale(), 101)
    trace = dict(ns.shape_trace(layers, (16, 224, 224, 3)))
    for name, shape in table.items():
        assert trace[name] == shape, name
    assert trace[layers[-1][0]] == (101,)


def test_c3d_layer_order():
    names = [name for name, _ in ns.network_layers(ArchId.C3D, Scale(), 8)]
    convs = [n for n in names if n.startswith(("conv", "pool", "fc"))]
    assert convs == ["conv1", "pool1", "conv2", "pool2", "conv3a", "conv3b", "pool3", "conv4a", "conv4b",
                     "pool4", "conv5a", "conv5b", "pool5", "fc1", "fc2", "fc3"]


def test_desk_scale_conv1():
    layers = ns.network_layers(ArchId.C3D, Scale.desk(), 8)
    assert dict(ns.shape_trace(layers, (8, 32, 32, 3)))["conv1"] == (8, 32, 32, 8)


@pytest.mark.parametrize("arch", list(ArchId))
def test_parameter_count_agrees_with_tensors(arch, tiny_scale):
    layers = ns.network_layers(arch, Scale(), 101)
    by_tensor = sum(math.prod(shape) for _, shape, trainable in ns.parameter_shapes(layers) if trainable)
    assert ns.parameter_count(layers) == by_tensor
    net = ns.build_network(arch, tiny_scale, 5, Rng(0))
    assert net.params.count() == ns.parameter_count(net)
    assert net.params.count(trainable_only=False) > net.params.count()


def test_r3d18_residual_blocks():
    layers = dict(ns.network_layers(ArchId.R3D18, Scale(), 10))
    assert not layers["block2a"].projected
    assert layers["block3a"].projected and layers["block3a"].stride == (2, 2, 2)
    names = [name for name, _, _ in ns.parameter_shapes([("block3a", layers["block3a"])])]
    assert "block3a.proj.weight" in names and "block3a.proj_bn.gamma" in names


def test_head_needs_an_output():
    with pytest.raises(InvalidParameterError):
        ns.network_layers(ArchId.C3D, Scale(), 0)


def test_build_is_deterministic(tiny_scale):
    a = ns.build_network(ArchId.R3D18, tiny_scale, 4, Rng(11))
    b = ns.build_network(ArchId.R3D18, tiny_scale, 4, Rng(11))
    assert list(a.params) == list(b.params)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])


def test_initial_values(tiny_scale):
    net = ns.build_network(ArchId.C3D, tiny_scale, 8, Rng(0))
    assert np.all(net.params["bn1.gamma"] == 1) and np.all(net.params["bn1.beta"] == 0)
    assert np.all(net.params["bn1.running_var"] == 1) and np.all(net.params["conv1.bias"] == 0)
    assert np.abs(net.params["fc3.weight"]).max() < 0.1


@pytest.mark.parametrize("arch", list(ArchId))
def test_initial_loss_is_near_uniform(arch, tiny_scale):
    net = ns.build_network(arch, tiny_scale, 8, Rng(3))
    batch = rand_uniform(Rng(4), (4, *net.input_shape), 0, 1)
    logits, _ = ns.forward(net, batch, train=True)
    loss, _ = loss_service.pretext_loss_multiclass(logits, [0, 1, 2, 3])
    assert loss.value == pytest.approx(math.log(8), abs=0.1)


def test_forward_checks_input_shape(tiny_scale):
    net = ns.build_network(ArchId.C3D, tiny_scale, 3, Rng(0))
    with pytest.raises(ShapeError):
        ns.forward(net, np.zeros((2, 4, 8, 8, 3), dtype=np.float32))


def test_eval_forward_has_no_caches(tiny_scale):
    net = ns.build_network(ArchId.C3D, tiny_scale, 3, Rng(0))
    batch = rand_uniform(Rng(1), (2, *net.input_shape), 0, 1)
    logits, caches = ns.forward(net, batch)
    assert logits.shape == (2, 3) and caches is None
    with pytest.raises(StateError):
        ns.backward(net, caches, logits)


def test_eval_mode_leaves_running_stats(tiny_scale):
    net = ns.build_network(ArchId.R3D18, tiny_scale, 3, Rng(0))
    before = net.params["bn1.running_mean"].copy()
    batch = rand_uniform(Rng(1), (2, *net.input_shape), 0, 1)
    ns.forward(net, batch)
    assert np.array_equal(before, net.params["bn1.running_mean"])
    ns.forward(net, batch, train=True)
    assert not np.array_equal(before, net.params["bn1.running_mean"])


def test_zero_upstream_gradient(tiny_scale):
    net = ns.build_network(ArchId.R3D18, tiny_scale, 3, Rng(0))
    batch = rand_uniform(Rng(1), (2, *net.input_shape), 0, 1)
    logits, caches = ns.forward(net, batch, train=True)
    grads = ns.backward(net, caches, np.zeros_like(logits))
    assert set(grads) == set(net.params.trainable_names())
    assert all(not np.any(g) for g in grads.values())


def test_sgd_momentum_examples():
    params = ParameterSet()
    params.add("theta", np.zeros(1))
    grads = {"theta": np.array([2.0])}
    ns.sgd_step(params, grads, 0.1, 0.9)
    assert params.momentum["theta"][0] == pytest.approx(2.0)
    assert params["theta"][0] == pytest.approx(-0.2)
    ns.sgd_step(params, grads, 0.1, 0.9)
    assert params.momentum["theta"][0] == pytest.approx(3.8)
    assert params["theta"][0] == pytest.approx(-0.58)


def test_sgd_zero_lr_keeps_parameters():
    params = ParameterSet()
    params.add("w", np.ones(3))
    ns.sgd_step(params, {"w": np.full(3, 5.0)}, 0.0, 0.5)
    assert np.array_equal(params["w"], np.ones(3))
    assert np.array_equal(params.momentum["w"], np.full(3, 5.0))


def test_sgd_validation():
    params = ParameterSet()
    params.add("w", np.ones(3))
    with pytest.raises(InvalidParameterError):
        ns.sgd_step(params, {}, -0.1, 0.9)
    with pytest.raises(InvalidParameterError):
        ns.sgd_step(params, {}, 0.1, 1.0)
    with pytest.raises(ShapeError):
        ns.sgd_step(params, {"w": np.ones(2)}, 0.1, 0.9)


def test_frozen_tensors_are_not_updated():
    params = ParameterSet()
    params.add("body.w", np.ones(2))
    params.add("fc.w", np.ones(2))
    params.freeze(keep=["fc."])
    assert params.trainable_names() == ["fc.w"]
    ns.sgd_step(params, {"body.w": np.ones(2), "fc.w": np.ones(2)}, 0.5, 0.0)
    assert np.array_equal(params["body.w"], np.ones(2))
    assert np.array_equal(params["fc.w"], np.full(2, 0.5))


def test_parameter_set_rules():
    params = ParameterSet()
    params.add("a", np.zeros(2))
    with pytest.raises(InvalidParameterError):
        params.add("a", np.zeros(2))
    with pytest.raises(ShapeError):
        params["a"] = np.zeros(3)
    with pytest.raises(InvalidParameterError):
        params["b"] = np.zeros(2)


def test_predict_proba_rows_sum_to_one(tiny_scale):
    net = ns.build_network(ArchId.C3D, tiny_scale, 4, Rng(0))
    batch = rand_uniform(Rng(1), (3, *net.input_shape), 0, 1)
    probabilities = ns.predict_proba(net, batch)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)

from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from nn.gradcheck import gradient_check, numeric_gradient, relative_error, sample_indices
from nn.layers import BatchNormSpec, ConvSpec, DenseSpec, DropoutSpec, ReLUSpec
from nn.vgg import VGGConfig, build_vgg, build_vgg20bn, desk_config, scaled_width, vgg_spec

# whole-network step; a 1e-4 step moves train-mode BN/ReLU units across their kinks
NETWORK_STEP = 1e-6


@pytest.mark.parametrize("depth", [14, 17, 20])
def test_weight_layer_count_matches_depth(depth):
    spec = vgg_spec(VGGConfig(depth=depth))
    weights = [layer for layer in spec.layers if isinstance(layer, ConvSpec | DenseSpec)]
    assert len(weights) == depth


def test_full_size_vgg20bn_layout():
    spec = vgg_spec(VGGConfig())
    convs = [layer for layer in spec.layers if isinstance(layer, ConvSpec)]
    dense = [layer for layer in spec.layers if isinstance(layer, DenseSpec)]
    assert len(convs) == 16
    assert convs[0].kernel_size == 19
    assert {c.kernel_size for c in convs[1:]} == {3}
    assert [d.out_features for d in dense] == [4096, 4096, 1000, 1]
    assert dense[0].in_features == 512 * 7 * 7
    assert sum(isinstance(layer, BatchNormSpec) for layer in spec.layers) == 16
    assert isinstance(spec.layers[-3], DropoutSpec)
    assert isinstance(spec.layers[-1], ReLUSpec)
    assert spec.input_shape == (3, 224, 224)


def test_desk_config_scales_widths():
    spec = vgg_spec(desk_config(input_channels=2))
    convs = [layer for layer in spec.layers if isinstance(layer, ConvSpec)]
    dense = [layer for layer in spec.layers if isinstance(layer, DenseSpec)]
    assert sorted({c.out_channels for c in convs}) == [4, 8, 16, 32]
    assert [d.out_features for d in dense] == [256, 256, 63, 1]
    assert spec.input_shape == (2, 64, 64)


def test_scaled_width_rounds_half_up_and_keeps_one_channel():
    assert scaled_width(1000, 1 / 16) == 63
    assert scaled_width(64, 0.001) == 1


def test_config_validation():
    with pytest.raises(ValidationError, match="odd"):
        VGGConfig(first_kernel_size=8)
    with pytest.raises(ValidationError, match="divisible by 32"):
        VGGConfig(input_hw=100)


def test_without_batch_norm_has_no_bn_layers():
    spec = vgg_spec(desk_config(batch_norm=False))
    assert not any(isinstance(layer, BatchNormSpec) for layer in spec.layers)


def test_build_vgg20bn_forces_depth_and_bn():
    net = build_vgg20bn(desk_config(depth=14, batch_norm=False), seed=1)
    assert sum(isinstance(layer, BatchNormSpec) for layer in net.spec.layers) == 16


def test_desk_network_outputs_nonnegative_volumes():
    net = build_vgg(desk_config(input_channels=3), seed=0)
    out = net.forward(np.random.default_rng(0).normal(size=(3, 3, 64, 64)), train=False)
    assert out.shape == (3, 1)
    assert np.all(out >= 0.0)


def test_same_seed_same_initialization():
    a = build_vgg(desk_config(), seed=5).parameters()
    b = build_vgg(desk_config(), seed=5).parameters()
    assert all(np.array_equal(a[k], b[k]) for k in a)


@pytest.mark.parametrize("seed", range(10))
def test_desk_vgg20bn_gradients(seed):
    net = build_vgg(desk_config(input_channels=3), seed=seed)
    net.output_layer.params["bias"][...] = 10.0
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 64, 64))

    def run() -> np.ndarray:
        net.seed_dropout(seed)
        return net.forward(x, train=True)

    g = rng.normal(size=run().shape)
    run()
    dx = net.backward(g)
    grads = {k: v.copy() for k, v in net.gradients().items()}
    params = net.parameters()

    def loss() -> float:
        return float(np.sum(run() * g))

    assert gradient_check(loss, x, dx, step=NETWORK_STEP, samples=8, seed=seed) < 1e-4
    analytic, numeric = [], []
    for key, value in params.items():
        indices = sample_indices(value.shape, 1, seed)
        numeric.append(numeric_gradient(loss, value, indices, NETWORK_STEP))
        analytic.append([grads[key][idx] for idx in indices])
    assert len(analytic) == len(grads)
    assert relative_error(np.concatenate(analytic), np.concatenate(numeric)) < 1e-4

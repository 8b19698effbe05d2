import numpy as np
import pytest

from codebook import CODEBOOK
from gate_types import Method, WiringScheme
from netarch import (
    Network,
    NetworkConfig,
    build_network_wiring,
    build_wiring,
    eval_layer,
    group_sum,
    validate_network_config,
    validate_wiring,
)
from optim import cross_entropy


def small_config(method=Method.MULTILINEAR_COVJAC, **changes):
    fields = dict(input_dim=6, depth=2, width=8, classes=2, method=method)
    fields.update(changes)
    return NetworkConfig(**fields)


class TestWiring:
    def test_stride_pairs_are_distinct_and_local(self):
        pairs = build_wiring(4, 6)
        assert [tuple(p) for p in pairs] == [(0, 1), (2, 3), (1, 2), (0, 2), (1, 3), (0, 3)]

    def test_stride_cycles_when_k_exceeds_pairs(self, caplog):
        pairs = build_wiring(3, 5)
        assert [tuple(p) for p in pairs] == [(0, 1), (1, 2), (0, 2), (0, 1), (1, 2)]
        assert "cycling" in caplog.text

    def test_random_wiring_reproducible(self):
        first = build_wiring(10, 50, WiringScheme.RANDOM, seed=7, stream=1)
        second = build_wiring(10, 50, WiringScheme.RANDOM, seed=7, stream=1)
        other = build_wiring(10, 50, WiringScheme.RANDOM, seed=7, stream=2)
        assert np.array_equal(first, second)
        assert not np.array_equal(first, other)

    def test_random_wiring_never_repeats_an_input(self):
        pairs = build_wiring(2, 200, WiringScheme.RANDOM, seed=3)
        assert np.all(pairs[:, 0] != pairs[:, 1])
        assert pairs.min() >= 0 and pairs.max() < 2

    def test_source_width_too_small(self):
        with pytest.raises(ValueError):
            build_wiring(1, 4)

    def test_network_wiring_reads_input_then_width(self):
        config = small_config(input_dim=3, width=10)
        wiring = build_network_wiring(config)
        assert wiring[0].max() < 3
        assert wiring[1].max() < 10
        assert validate_wiring(wiring, config) == []

    def test_validate_wiring_flags_self_loop(self):
        config = small_config()
        wiring = build_network_wiring(config)
        wiring[1][0] = (4, 4)
        assert any("same input" in e for e in validate_wiring(wiring, config))


class TestConfig:
    def test_width_must_divide_classes(self):
        errors = validate_network_config(small_config(width=9, classes=2))
        assert any("divisible" in e for e in errors)

    def test_deep_network_needs_width_two(self):
        errors = validate_network_config(small_config(width=1, classes=1))
        assert any(">= 2" in e for e in errors)

    def test_single_layer_width_one_is_allowed(self):
        assert validate_network_config(small_config(depth=1, width=1, classes=1)) == []

    def test_network_rejects_invalid_config(self):
        with pytest.raises(ValueError, match="Invalid network configuration"):
            Network(small_config(tau=0.0))

    def test_dict_roundtrip(self):
        config = small_config(method=Method.SOFT_MIX, wiring_scheme=WiringScheme.RANDOM)
        assert NetworkConfig.from_dict(config.to_dict()) == config

    def test_param_count_by_method(self):
        assert small_config(method=Method.SOFT_MIX).param_count == 16
        assert small_config(method=Method.IWP_STE).param_count == 4


class TestForward:
    def test_eval_layer_with_codebook_rows(self):
        inputs = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.float32)
        pairs = np.array([[0, 1], [0, 1]])
        coeffs = CODEBOOK[[6, 8]]
        out = eval_layer(coeffs, inputs, pairs)
        assert out[:, 0].tolist() == [0, 1, 1, 0]
        assert out[:, 1].tolist() == [0, 0, 0, 1]

    def test_group_sum_contiguous_blocks(self):
        acts = np.arange(12, dtype=np.float64).reshape(2, 6)
        logits = group_sum(acts, 3)
        assert logits.tolist() == [[1, 5, 9], [13, 17, 21]]

    def test_group_sum_rejects_uneven_groups(self):
        with pytest.raises(ValueError):
            group_sum(np.zeros((2, 5)), 2)

    def test_forward_shapes(self, rng):
        network = Network(small_config(), rng=rng)
        x = rng.integers(0, 2, size=(5, 6)).astype(np.float32)
        activations, logits, caches = network.forward(x, mode="train")
        assert len(activations) == 2 and len(caches) == 2
        assert activations[-1].shape == (5, 8)
        assert logits.shape == (5, 2)

    def test_hard_forward_is_binary(self, rng):
        network = Network(small_config(method=Method.SOFT_MIX), rng=rng)
        x = rng.integers(0, 2, size=(20, 6)).astype(np.float32)
        activations, logits, _ = network.forward(x, mode="hard")
        for h in activations:
            assert set(np.unique(h)).issubset({0.0, 1.0})
        assert np.all(logits == np.round(logits))

    def test_feature_width_mismatch(self, rng):
        network = Network(small_config(), rng=rng)
        with pytest.raises(ValueError, match="input_dim"):
            network.forward(np.zeros((2, 5)), mode="hard")

    def test_unknown_mode(self, rng):
        network = Network(small_config(), rng=rng)
        with pytest.raises(ValueError, match="mode"):
            network.forward(np.zeros((2, 6)), mode="soft")

    def test_params_shape_checked(self):
        with pytest.raises(ValueError, match="params shape"):
            Network(small_config(method=Method.SOFT_MIX), params=[np.zeros((8, 4))] * 2)


@pytest.mark.parametrize("method", [
    Method.SOFT_MIX,
    Method.MULTILINEAR_COVJAC,
    Method.IWP_FREE,
    Method.MULTILINEAR_FREE,
])
def test_backward_matches_finite_differences(method, rng):
    config = small_config(method=method, tau=0.7)
    params = [rng.normal(0.0, 0.5, size=(8, config.param_count)) for _ in range(2)]
    network = Network(config, params=params)
    x = rng.integers(0, 2, size=(16, 6)).astype(np.float64)
    y = rng.integers(0, 2, size=16)

    _, logits, caches = network.forward(x, mode="train")
    _, dlogits = cross_entropy(logits, y)
    grads = network.backward(caches, dlogits)

    def loss_at():
        _, out, _ = network.forward(x, mode="train")
        return cross_entropy(out, y)[0]

    h = 1e-6
    for layer in range(2):
        for index in [(0, 0), (3, 1), (7, config.param_count - 1)]:
            original = network.params[layer][index]
            network.params[layer][index] = original + h
            plus = loss_at()
            network.params[layer][index] = original - h
            minus = loss_at()
            network.params[layer][index] = original
            numeric = (plus - minus) / (2 * h)
            assert grads[layer][index] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


def test_backward_scatters_shared_inputs(rng):
    # Every layer-1 neuron reads neurons 0 and 1 of layer 0
    config = small_config(method=Method.MULTILINEAR_FREE)
    wiring = build_network_wiring(config)
    wiring[1] = np.tile(np.array([[0, 1]]), (8, 1))
    params = [rng.normal(size=(8, 4)) for _ in range(2)]
    network = Network(config, params=params, wiring=wiring)
    x = rng.integers(0, 2, size=(4, 6)).astype(np.float64)
    _, logits, caches = network.forward(x, mode="train")
    grads = network.backward(caches, np.ones_like(logits))
    # Layer-0 neurons 2..7 feed nothing downstream
    assert np.all(grads[0][2:] == 0)
    assert np.any(grads[0][:2] != 0)

"""
netarch.py

Network topology and the method-independent forward machinery: wiring
construction (stride and seeded random), per-neuron polynomial layer
evaluation, GroupSum readout, and the train/hard forward pass.
"""

import logging
from dataclasses import dataclass, asdict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from codebook import CODEBOOK, poly_eval
from gate_types import Method, WiringScheme, METHOD_PARAM_COUNT
import trainers

logger = logging.getLogger(__name__)


@dataclass
class NetworkConfig:
    """Shape and training mechanism of one network."""
    input_dim: int
    depth: int
    width: int
    classes: int
    method: Method = Method.MULTILINEAR_COVJAC
    tau: float = 1.0
    init_sigma: float = 1.0
    seed: int = 0
    wiring_scheme: WiringScheme = WiringScheme.STRIDE

    @property
    def param_count(self) -> int:
        """Learnable reals per neuron."""
        return METHOD_PARAM_COUNT[self.method]

    def source_width(self, layer: int) -> int:
        return self.input_dim if layer == 0 else self.width

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["method"] = self.method.value
        data["wiring_scheme"] = self.wiring_scheme.value
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "NetworkConfig":
        fields = dict(data)
        fields["method"] = Method(fields["method"])
        fields["wiring_scheme"] = WiringScheme(fields["wiring_scheme"])
        return cls(**fields)


def validate_network_config(config: NetworkConfig) -> List[str]:
    """
    Check structural invariants of a network configuration.

    Returns:
        List of error messages (empty if valid)
    """
    errors = []
    if config.input_dim < 2:
        errors.append(f"input_dim must be >= 2, got {config.input_dim}")
    if config.depth < 1:
        errors.append(f"depth L must be >= 1, got {config.depth}")
    if config.width < 1:
        errors.append(f"width k must be >= 1, got {config.width}")
    if config.classes < 1:
        errors.append(f"classes C must be >= 1, got {config.classes}")
    elif config.width % config.classes != 0:
        errors.append(
            f"width k={config.width} is not divisible by classes C={config.classes} "
            f"(GroupSum needs equal groups)")
    if config.depth > 1 and config.width < 2:
        errors.append("width k must be >= 2 when depth > 1 (each gate needs two distinct inputs)")
    if not config.tau > 0:
        errors.append(f"tau must be > 0, got {config.tau}")
    if not config.init_sigma > 0:
        errors.append(f"init_sigma must be > 0, got {config.init_sigma}")
    return errors


def _stride_pairs(width: int) -> Iterator[Tuple[int, int]]:
    """
    Enumerate distinct stride pairs by increasing gap.

    For gap g: even chains start at offsets 0..g-1, odd chains at g..2g-1;
    each chain steps by 2g and pairs (x_i, x_{i+g}).
    """
    for gap in range(1, width):
        for first_offset in (0, gap):
            for start in range(first_offset, first_offset + gap):
                i = start
                while i + gap < width:
                    yield (i, i + gap)
                    i += 2 * gap


def build_wiring(source_width: int, k: int, scheme: WiringScheme = WiringScheme.STRIDE,
                 seed: int = 0, stream: int = 0) -> np.ndarray:
    """
    Build the input-pair indices of one layer.

    Args:
        source_width: Width of the layer being read from
        k: Number of neurons (pairs) to produce
        scheme: stride (locality-preserving, deterministic) or random
        seed: Wiring seed (random scheme)
        stream: Extra key separating layers under one seed

    Returns:
        int64 array of shape (k, 2) with in0 != in1

    Raises:
        ValueError: source_width < 2
    """
    if source_width < 2:
        raise ValueError(f"source_width must be >= 2, got {source_width}")

    if scheme == WiringScheme.RANDOM:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))
        in0 = rng.integers(0, source_width, size=k, dtype=np.int64)
        in1 = rng.integers(0, source_width - 1, size=k, dtype=np.int64)
        in1 = in1 + (in1 >= in0)
        return np.stack([in0, in1], axis=1)

    pairs: List[Tuple[int, int]] = []
    while len(pairs) < k:
        for pair in _stride_pairs(source_width):
            pairs.append(pair)
            if len(pairs) == k:
                break
        else:
            logger.warning(
                f"Stride wiring: k={k} exceeds the {source_width * (source_width - 1) // 2} "
                f"distinct pairs of width {source_width}; cycling")
    return np.array(pairs, dtype=np.int64).reshape(k, 2)


def build_network_wiring(config: NetworkConfig) -> List[np.ndarray]:
    """Wiring for every layer; layer 0 reads the input features."""
    return [
        build_wiring(config.source_width(layer), config.width, config.wiring_scheme,
                     seed=config.seed, stream=layer)
        for layer in range(config.depth)
    ]


def validate_wiring(wiring: List[np.ndarray], config: NetworkConfig) -> List[str]:
    errors = []
    if len(wiring) != config.depth:
        return [f"Wiring has {len(wiring)} layers, config depth is {config.depth}"]
    for layer, pairs in enumerate(wiring):
        width = config.source_width(layer)
        if pairs.shape != (config.width, 2):
            errors.append(f"Layer {layer}: wiring shape {pairs.shape}, expected ({config.width}, 2)")
            continue
        if np.any(pairs[:, 0] == pairs[:, 1]):
            errors.append(f"Layer {layer}: a neuron is wired to the same input twice")
        if pairs.min() < 0 or pairs.max() >= width:
            errors.append(f"Layer {layer}: wiring index outside [0, {width})")
    return errors


def gather_inputs(inputs: np.ndarray, pairs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Wired (a, b) for every neuron, each of shape (B, k)."""
    return inputs[:, pairs[:, 0]], inputs[:, pairs[:, 1]]


def eval_layer(coeffs: np.ndarray, inputs: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """
    Evaluate z = c0 + ca*a + cb*b + cab*a*b for every neuron of one layer.

    Args:
        coeffs: (k, 4) per-neuron coefficients
        inputs: (B, w) source activations
        pairs: (k, 2) wiring into the source layer

    Returns:
        (B, k) activations
    """
    dtype = np.result_type(coeffs.dtype, inputs.dtype, np.float32)
    a, b = gather_inputs(inputs.astype(dtype, copy=False), pairs)
    return poly_eval(coeffs.astype(dtype, copy=False), a, b)


def group_sum(final_acts: np.ndarray, classes: int) -> np.ndarray:
    """
    Sum contiguous blocks of k/C neurons into C class logits.

    Raises:
        ValueError: k not divisible by C
    """
    batch, k = final_acts.shape
    if k % classes != 0:
        raise ValueError(f"GroupSum: width k={k} not divisible by classes C={classes}")
    return final_acts.reshape(batch, classes, k // classes).sum(axis=2)


class Network:
    """A configured network: wiring plus raw per-neuron parameters."""

    def __init__(self, config: NetworkConfig, params: Optional[List[np.ndarray]] = None,
                 wiring: Optional[List[np.ndarray]] = None, rng: Optional[np.random.Generator] = None):
        errors = validate_network_config(config)
        if errors:
            raise ValueError("Invalid network configuration:\n  " + "\n  ".join(errors))

        self.config = config
        self.wiring = wiring if wiring is not None else build_network_wiring(config)
        wiring_errors = validate_wiring(self.wiring, config)
        if wiring_errors:
            raise ValueError("Invalid wiring:\n  " + "\n  ".join(wiring_errors))

        if params is None:
            if rng is None:
                rng = np.random.default_rng(0)
            params = [
                trainers.init_params(config.method, config.width, config.init_sigma, rng)
                for _ in range(config.depth)
            ]
        self.params = params
        self._check_params()

    def _check_params(self) -> None:
        expected = (self.config.width, self.config.param_count)
        for layer, raw in enumerate(self.params):
            if raw.shape != expected:
                raise ValueError(
                    f"Layer {layer}: params shape {raw.shape} does not match method "
                    f"{self.config.method.value} (expected {expected})")

    def gate_ids(self) -> List[np.ndarray]:
        """Deployed GateId of every neuron, per layer."""
        return [trainers.hard_gate_ids(self.config.method, raw) for raw in self.params]

    def forward(self, features: np.ndarray, mode: str = "train",
                rng: Optional[np.random.Generator] = None,
                basis=None) -> Tuple[List[np.ndarray], np.ndarray, List]:
        """
        Run the network on a batch.

        Args:
            features: (B, input_dim) binary features
            mode: "train" (method forward) or "hard" (snapped circuit)
            rng: Noise generator for stochastic methods in train mode
            basis: Backward basis stored in the caches (multilinear_ste)

        Returns:
            (per-layer activations, (B, C) logits, per-layer backward caches)
        """
        if features.shape[1] != self.config.input_dim:
            raise ValueError(
                f"Feature width {features.shape[1]} does not match network input_dim "
                f"{self.config.input_dim}")

        activations = []
        caches = []
        h = features
        for layer in range(self.config.depth):
            pairs = self.wiring[layer]
            if mode == "hard":
                coeffs = CODEBOOK[trainers.hard_gate_ids(self.config.method, self.params[layer])]
                h = eval_layer(coeffs, h, pairs)
                caches.append(None)
            elif mode == "train":
                dtype = np.result_type(self.params[layer].dtype, np.float32)
                a, b = gather_inputs(h.astype(dtype, copy=False), pairs)
                h, cache = trainers.layer_forward(
                    self.config.method, self.params[layer], a, b,
                    tau=self.config.tau, rng=rng, basis=basis)
                caches.append(cache)
            else:
                raise ValueError(f"Unknown forward mode '{mode}' (expected 'train' or 'hard')")
            activations.append(h)

        logits = group_sum(h, self.config.classes)
        return activations, logits, caches

    def backward(self, caches: List, dlogits: np.ndarray) -> List[np.ndarray]:
        """
        Chain method backward rules from the GroupSum output to every layer.

        Returns:
            Per-layer parameter gradients, shaped like params
        """
        batch = dlogits.shape[0]
        group = self.config.width // self.config.classes
        # GroupSum: every neuron in group c receives dlogits[:, c]
        delta = np.repeat(dlogits, group, axis=1)

        grads: List[Optional[np.ndarray]] = [None] * self.config.depth
        for layer in reversed(range(self.config.depth)):
            need_inputs = layer > 0
            grad, da, db = trainers.layer_backward(caches[layer], delta, need_input_grads=need_inputs)
            grads[layer] = grad
            if need_inputs:
                pairs = self.wiring[layer]
                # Scatter-add: a source neuron may feed several gates
                upstream = np.zeros((self.config.width, batch), dtype=delta.dtype)
                np.add.at(upstream, pairs[:, 0], da.T)
                np.add.at(upstream, pairs[:, 1], db.T)
                delta = upstream.T
        return grads


def forward(network: Network, features: np.ndarray, mode: str = "train",
            rng: Optional[np.random.Generator] = None) -> Tuple[List[np.ndarray], np.ndarray]:
    """Activations and logits of a network on a batch (caches discarded)."""
    activations, logits, _ = network.forward(features, mode=mode, rng=rng)
    return activations, logits

"""
diagnostics.py

Measurement instruments for a network snapshot: gate entropy, signal
survival, gradient coverage ratio, commitment, gate-type histogram,
discretization/generalization gaps, and the last-10 / best summaries.
Also holds the Monte Carlo helpers for the coverage and near-uniform
statistics and the width power-law fit.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from codebook import CODEBOOK, GATE_CLASSES, NUM_GATES, corner_basis, gate_name
from gate_types import (
    BasisSpec,
    DiagnosticsRecord,
    GateClass,
    Method,
    COEFFICIENT_METHODS,
)
import trainers

logger = logging.getLogger(__name__)

# Elements per chunk for (B, k, 16) intermediates
_CHUNK_ELEMENTS = 1 << 22


def gate_entropy(weights: np.ndarray) -> float:
    """Mean natural-log entropy of per-neuron selection weights (k, 16)."""
    w = np.asarray(weights, dtype=np.float64)
    plogp = np.where(w > 0, w * np.log(np.where(w > 0, w, 1.0)), 0.0)
    return float(np.mean(-plogp.sum(axis=-1)))


def survival_weights(method: Method, raw: np.ndarray, tau: float) -> np.ndarray:
    """
    Selection weights used by signal survival.

    soft_mix uses pi; CovJac and the continuous free/IWP variants use omega;
    single-gate methods use the one-hot of the deployed gate.
    """
    if method == Method.SOFT_MIX:
        return trainers.softmax(raw.astype(np.float64))
    if method in (Method.MULTILINEAR_COVJAC, Method.MULTILINEAR_FREE, Method.IWP_FREE):
        return trainers.selection_weights(method, raw.astype(np.float64), tau)
    ids = trainers.hard_gate_ids(method, raw)
    return np.eye(NUM_GATES)[ids]


def signal_survival(weights: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """
    Coherent over incoherent gate-derivative mass, averaged over neurons and samples.

    Per neuron and sample:
        s = (|sum_j w_j dg_j/da| + |sum_j w_j dg_j/db|)
            / sum_j w_j (|dg_j/da| + |dg_j/db|)
    with s = 1 where the denominator is 0.

    Args:
        weights: (k, 16) selection weights
        a, b: (B, k) wired probe inputs
    """
    G = CODEBOOK.astype(np.float64)
    ca, cb, cab = G[:, 1], G[:, 2], G[:, 3]
    mean_c = weights @ G

    batch, k = a.shape
    chunk = max(1, _CHUNK_ELEMENTS // (k * NUM_GATES))
    total = 0.0
    for start in range(0, batch, chunk):
        ac = a[start:start + chunk].astype(np.float64)
        bc = b[start:start + chunk].astype(np.float64)
        coherent = np.abs(mean_c[:, 1] + mean_c[:, 3] * bc) + np.abs(mean_c[:, 2] + mean_c[:, 3] * ac)
        per_gate = np.abs(ca + cab * bc[..., None]) + np.abs(cb + cab * ac[..., None])
        incoherent = np.einsum('nkj,kj->nk', per_gate, weights)
        ratio = np.where(incoherent > 0, coherent / np.where(incoherent > 0, incoherent, 1.0), 1.0)
        total += ratio.sum()
    return float(total / (batch * k))


class GradWindow:
    """Accumulates |dL/dc0| and |dL/dcab| per neuron between checkpoints."""

    def __init__(self, depth: int):
        self.depth = depth
        self.reset()

    def reset(self) -> None:
        self.c0 = [None] * self.depth
        self.cab = [None] * self.depth
        self.batches = 0

    def add(self, grads: List[np.ndarray]) -> None:
        for layer, g in enumerate(grads):
            c0 = np.abs(g[:, 0]).astype(np.float64)
            cab = np.abs(g[:, 3]).astype(np.float64)
            self.c0[layer] = c0 if self.c0[layer] is None else self.c0[layer] + c0
            self.cab[layer] = cab if self.cab[layer] is None else self.cab[layer] + cab
        self.batches += 1

    def ratio(self) -> Optional[float]:
        if self.batches == 0:
            return None
        return grad_coverage_ratio(np.concatenate(self.cab), np.concatenate(self.c0))


def grad_coverage_ratio(cab_magnitudes: np.ndarray, c0_magnitudes: np.ndarray) -> Optional[float]:
    """
    Mean over neurons of |dL/dcab| / |dL/dc0| (window-accumulated magnitudes).

    Neurons with a zero c0 magnitude are skipped; None when no neuron has one.
    """
    cab_magnitudes = np.asarray(cab_magnitudes, dtype=np.float64)
    c0_magnitudes = np.asarray(c0_magnitudes, dtype=np.float64)
    valid = c0_magnitudes > 0
    if not valid.any():
        return None
    return float(np.mean(cab_magnitudes[valid] / c0_magnitudes[valid]))


def commitment(method: Method, params: List[np.ndarray]) -> float:
    """Population std of the continuous cab coordinate across all neurons."""
    cab = np.concatenate([
        trainers.continuous_coeffs(method, raw.astype(np.float64))[:, 3] for raw in params
    ])
    return float(np.std(cab))


def gate_histogram(gate_ids: List[np.ndarray]) -> List[Dict]:
    """
    Per-layer counts by GateClass and by gate name.

    Returns:
        One dict per layer: {"classes": {class: n}, "gates": {name: n}}
    """
    layers = []
    for ids in gate_ids:
        counts = np.bincount(np.asarray(ids, dtype=np.int64), minlength=NUM_GATES)
        classes = {gate_class.value: 0 for gate_class in GateClass}
        gates = {}
        for j in range(NUM_GATES):
            classes[GATE_CLASSES[j].value] += int(counts[j])
            gates[gate_name(j)] = int(counts[j])
        layers.append({"classes": classes, "gates": gates})
    return layers


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Argmax accuracy; ties go to the smallest class index."""
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(network, features: np.ndarray, labels: np.ndarray, mode: str = "hard",
             rng: Optional[np.random.Generator] = None, batch_size: int = 4096) -> float:
    """Accuracy of a network on a split, evaluated in chunks."""
    correct = 0
    for start in range(0, len(labels), batch_size):
        x = features[start:start + batch_size]
        _, logits, _ = network.forward(x, mode=mode, rng=rng)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + batch_size]))
    return correct / max(len(labels), 1)


def gaps(train_forward_acc: float, hard_acc_test: float, hard_acc_train: float) -> Tuple[float, float]:
    """(DG, Gen) = (train-forward - hard on test, hard train - hard test)."""
    return train_forward_acc - hard_acc_test, hard_acc_train - hard_acc_test


def last10(history: Sequence[float]) -> float:
    if len(history) == 0:
        raise ValueError("last10 needs at least one checkpoint")
    return float(np.mean(history[-10:]))


def best(history: Sequence[float]) -> float:
    if len(history) == 0:
        raise ValueError("best needs at least one checkpoint")
    return float(np.max(history))


def probe_survival(network, probe: np.ndarray) -> List[float]:
    """Per-layer signal survival on the hard activations of a probe batch."""
    activations, _, _ = network.forward(probe, mode="hard")
    sources = [probe] + activations[:-1]
    values = []
    for layer in range(network.config.depth):
        pairs = network.wiring[layer]
        a = sources[layer][:, pairs[:, 0]]
        b = sources[layer][:, pairs[:, 1]]
        weights = survival_weights(network.config.method, network.params[layer], network.config.tau)
        values.append(signal_survival(weights, a, b))
    return values


def compute_record(network, dataset, probe: np.ndarray, iteration: int, loss: float,
                   grad_window: Optional[GradWindow] = None,
                   eval_rng: Optional[np.random.Generator] = None) -> DiagnosticsRecord:
    """Measure every per-checkpoint metric of a network snapshot."""
    config = network.config
    hard_acc_test = evaluate(network, dataset.test_x, dataset.test_y, mode="hard")
    hard_acc_train = evaluate(network, dataset.train_x, dataset.train_y, mode="hard")
    train_forward_acc = evaluate(network, dataset.test_x, dataset.test_y, mode="train", rng=eval_rng)

    entropy = [
        gate_entropy(trainers.selection_weights(config.method, raw.astype(np.float64), config.tau))
        for raw in network.params
    ]
    histogram = gate_histogram(network.gate_ids())

    grad_ratio = None
    if config.method in COEFFICIENT_METHODS and grad_window is not None:
        grad_ratio = grad_window.ratio()
        if grad_ratio is None:
            logger.warning(f"iter {iteration}: gradient coverage ratio undefined (zero c0 gradients)")

    return DiagnosticsRecord(
        iter=iteration,
        loss=float(loss),
        hard_acc_test=hard_acc_test,
        hard_acc_train=hard_acc_train,
        train_forward_acc=train_forward_acc,
        entropy=entropy,
        survival=probe_survival(network, probe),
        grad_ratio_cab_c0=grad_ratio,
        commitment_std_cab=commitment(config.method, network.params),
        gate_class_counts=[layer["classes"] for layer in histogram],
    )


# --- Monte Carlo helpers --------------------------------------------------

def expected_l1_from_uniform(sigma: float = 1.0, draws: int = 100_000,
                             rng: Optional[np.random.Generator] = None) -> float:
    """E ||softmax(l) - u||_1 for logits l ~ Normal(0, sigma^2) over 16 gates."""
    rng = rng or np.random.default_rng(0)
    pi = trainers.softmax(rng.normal(0.0, sigma, size=(draws, NUM_GATES)))
    return float(np.abs(pi - 1.0 / NUM_GATES).sum(axis=1).mean())


def expected_active_count(basis: Union[BasisSpec, str], draws: int = 100_000,
                          rng: Optional[np.random.Generator] = None) -> float:
    """
    E ||psi~(a, b)||_0 under Bernoulli(1/2) inputs.

    Args:
        basis: A BasisSpec, or "corner" for the one-hot corner basis
    """
    rng = rng or np.random.default_rng(0)
    a = rng.integers(0, 2, size=draws).astype(np.float64)
    b = rng.integers(0, 2, size=draws).astype(np.float64)
    if basis == "corner":
        values = corner_basis(a, b)
    else:
        values = trainers.basis_values(basis, a, b)
    return float(np.mean(np.count_nonzero(np.abs(values) > 1e-12, axis=-1)))


def fit_width_power_law(widths: Sequence[int], accuracies: Sequence[float]) -> Tuple[float, float]:
    """
    Fit A(k) = 100 - B * k^(-alpha) by least squares in log space.

    Args:
        widths: Layer widths k
        accuracies: Accuracies in percent, all below 100

    Returns:
        (alpha, B)
    """
    widths = np.asarray(widths, dtype=np.float64)
    accuracies = np.asarray(accuracies, dtype=np.float64)
    if len(widths) < 2 or len(widths) != len(accuracies):
        raise ValueError("power-law fit needs at least two (width, accuracy) pairs")
    if np.any(accuracies >= 100):
        raise ValueError("power-law fit needs accuracies below 100")
    slope, intercept = np.polyfit(np.log(widths), np.log(100.0 - accuracies), 1)
    return float(-slope), float(np.exp(intercept))

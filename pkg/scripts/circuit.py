"""
circuit.py

Deployment path: snap a trained network to a hard Boolean circuit, write and
read it as a line-oriented netlist, and evaluate it with word-parallel
bitwise operations on uint64 lanes.

Netlist format:
    DLGN v1
    config <input_dim> <L> <k> <C>
    g <layer> <index> <GATE_NAME> <in0> <in1>     (one line per gate)
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from codebook import CODEBOOK, NUM_GATES, gate_id, gate_name, poly_eval
from file_utils import atomic_write_csv, atomic_write_text

logger = logging.getLogger(__name__)

NETLIST_HEADER = "DLGN v1"
WORD_BITS = 64
ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


class NetlistError(ValueError):
    """Malformed or invalid netlist; carries the 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(eq=False)
class HardCircuit:
    """Wiring plus one GateId per neuron, read out by contiguous GroupSum."""
    input_dim: int
    classes: int
    gates: List[np.ndarray]
    wiring: List[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.gates)

    @property
    def width(self) -> int:
        return int(len(self.gates[0])) if self.gates else 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, HardCircuit):
            return NotImplemented
        return (self.input_dim == other.input_dim
                and self.classes == other.classes
                and self.depth == other.depth
                and all(np.array_equal(x, y) for x, y in zip(self.gates, other.gates))
                and all(np.array_equal(x, y) for x, y in zip(self.wiring, other.wiring)))


def export(network) -> HardCircuit:
    """Snap every neuron of a trained network to its deployed gate."""
    config = network.config
    return HardCircuit(
        input_dim=config.input_dim,
        classes=config.classes,
        gates=[np.asarray(ids, dtype=np.int64) for ids in network.gate_ids()],
        wiring=[np.asarray(pairs, dtype=np.int64) for pairs in network.wiring],
    )


def validate_circuit(circuit: HardCircuit) -> List[str]:
    """
    Check wiring ranges, gate ids and GroupSum divisibility.

    Returns:
        List of error messages (empty if valid)
    """
    errors = []
    if circuit.depth == 0:
        return ["Circuit has no layers"]
    if len(circuit.wiring) != circuit.depth:
        errors.append(f"{circuit.depth} gate layers but {len(circuit.wiring)} wiring layers")

    k = circuit.width
    for layer, (ids, pairs) in enumerate(zip(circuit.gates, circuit.wiring)):
        if len(ids) == 0:
            errors.append(f"Layer {layer} is empty")
            continue
        if len(ids) != k:
            errors.append(f"Layer {layer} has {len(ids)} gates, expected {k}")
        if pairs.shape != (len(ids), 2):
            errors.append(f"Layer {layer}: wiring shape {pairs.shape} does not match {len(ids)} gates")
            continue
        if ids.min() < 0 or ids.max() >= NUM_GATES:
            errors.append(f"Layer {layer}: gate id outside [0, 15]")
        source = circuit.input_dim if layer == 0 else k
        if pairs.min() < 0 or pairs.max() >= source:
            errors.append(f"Layer {layer}: wiring index outside [0, {source})")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            errors.append(f"Layer {layer}: a gate reads the same input twice")

    if circuit.classes < 1 or k % circuit.classes != 0:
        errors.append(f"Final width k={k} not divisible by classes C={circuit.classes}")
    return errors


# --- bit packing ----------------------------------------------------------

def pack_bits(features: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Pack a binary (B, d) matrix column-wise into uint64 lanes.

    Sample i lives in word i // 64, bit i % 64; padding lanes are zero.

    Returns:
        ((d, W) uint64 words, B)
    """
    features = np.asarray(features, dtype=np.uint8)
    batch, dim = features.shape
    words = max(1, -(-batch // WORD_BITS))
    padded = np.zeros((dim, words * WORD_BITS), dtype=np.uint8)
    padded[:, :batch] = features.T
    packed = np.packbits(padded, axis=1, bitorder='little')
    return np.ascontiguousarray(packed).view('<u8').astype(np.uint64, copy=False), batch


def unpack_bits(words: np.ndarray, batch: int) -> np.ndarray:
    """Inverse of pack_bits for a (rows, W) word array; returns (rows, B) uint8."""
    as_bytes = np.ascontiguousarray(words.astype('<u8', copy=False)).view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, bitorder='little')[:, :batch]


def _truth_masks(ids: np.ndarray) -> List[np.ndarray]:
    """All-ones/all-zeros word per gate for each truth bit, shaped (k, 1)."""
    return [
        np.where((ids >> bit) & 1, ALL_ONES, np.uint64(0)).astype(np.uint64)[:, None]
        for bit in range(4)
    ]


def apply_gates(ids: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out = (t0 & ~a & ~b) | (t1 & a & ~b) | (t2 & ~a & b) | (t3 & a & b) per word."""
    t0, t1, t2, t3 = _truth_masks(ids)
    not_a = ~a
    not_b = ~b
    return (t0 & not_a & not_b) | (t1 & a & not_b) | (t2 & not_a & b) | (t3 & a & b)


def _eval_words(circuit: HardCircuit, packed: np.ndarray) -> np.ndarray:
    h = packed
    for ids, pairs in zip(circuit.gates, circuit.wiring):
        h = apply_gates(ids, h[pairs[:, 0]], h[pairs[:, 1]])
    return h


def packed_scores(circuit: HardCircuit, packed: np.ndarray, batch: int,
                  workers: int = 1) -> np.ndarray:
    """
    Per-class GroupSum counts of the circuit on packed inputs.

    Args:
        packed: (input_dim, W) uint64 words from pack_bits
        batch: Number of real samples (lanes beyond it are ignored)
        workers: Threads over word chunks; output does not depend on it

    Returns:
        (B, C) int64 counts
    """
    if packed.shape[0] != circuit.input_dim:
        raise ValueError(
            f"Dimension mismatch: circuit expects input_dim={circuit.input_dim}, "
            f"data has {packed.shape[0]} features")

    n_words = packed.shape[1]
    if workers > 1 and n_words > 1:
        bounds = np.linspace(0, n_words, min(workers, n_words) + 1).astype(int)
        chunks = [packed[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda chunk: _eval_words(circuit, chunk), chunks))
        final = np.concatenate(outputs, axis=1)
    else:
        final = _eval_words(circuit, packed)

    bits = unpack_bits(final, batch).astype(np.int64)
    k = bits.shape[0]
    group = k // circuit.classes
    return bits.reshape(circuit.classes, group, batch).sum(axis=1).T


def eval_packed(circuit: HardCircuit, packed: np.ndarray, batch: int, workers: int = 1) -> np.ndarray:
    """Class predictions; argmax ties go to the smallest class."""
    return np.argmax(packed_scores(circuit, packed, batch, workers), axis=1)


def predict(circuit: HardCircuit, features: np.ndarray, workers: int = 1) -> np.ndarray:
    """Pack a binary feature matrix and return class predictions."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != circuit.input_dim:
        raise ValueError(
            f"Dimension mismatch: circuit expects input_dim={circuit.input_dim}, "
            f"data has {features.shape[-1]} features")
    packed, batch = pack_bits(features)
    return eval_packed(circuit, packed, batch, workers)


def scalar_scores(circuit: HardCircuit, features: np.ndarray) -> np.ndarray:
    """Reference evaluation with integer polynomial arithmetic, (B, C) counts."""
    h = np.asarray(features, dtype=np.int64)
    for ids, pairs in zip(circuit.gates, circuit.wiring):
        h = poly_eval(CODEBOOK[ids], h[:, pairs[:, 0]], h[:, pairs[:, 1]])
    batch, k = h.shape
    return h.reshape(batch, circuit.classes, k // circuit.classes).sum(axis=2)


def eval_scalar(circuit: HardCircuit, features: np.ndarray) -> np.ndarray:
    return np.argmax(scalar_scores(circuit, features), axis=1)


# --- netlist I/O ----------------------------------------------------------

def format_netlist(circuit: HardCircuit) -> str:
    lines = [NETLIST_HEADER,
             f"config {circuit.input_dim} {circuit.depth} {circuit.width} {circuit.classes}"]
    for layer, (ids, pairs) in enumerate(zip(circuit.gates, circuit.wiring)):
        for index, (g, (in0, in1)) in enumerate(zip(ids, pairs)):
            lines.append(f"g {layer} {index} {gate_name(g)} {int(in0)} {int(in1)}")
    return "\n".join(lines) + "\n"


def write_netlist(circuit: HardCircuit, path) -> None:
    """Validate and atomically write a circuit as a netlist."""
    errors = validate_circuit(circuit)
    if errors:
        raise NetlistError("Refusing to write invalid circuit:\n  " + "\n  ".join(errors))
    atomic_write_text(path, format_netlist(circuit))
    logger.info(f"Wrote netlist {path} ({circuit.depth} x {circuit.width} gates)")


def _parse_ints(tokens: List[str], line: int, what: str) -> List[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise NetlistError(f"non-integer field in {what}: {' '.join(tokens)}", line)


def parse_netlist(text: str) -> HardCircuit:
    """
    Parse netlist text, validating every invariant.

    Raises:
        NetlistError: version mismatch, malformed line, unknown gate name,
            index out of range, duplicate or missing gates
    """
    lines = [(n, raw.strip()) for n, raw in enumerate(text.splitlines(), start=1)]
    lines = [(n, s) for n, s in lines if s and not s.startswith("#")]
    if not lines:
        raise NetlistError("empty netlist")

    header_line, header = lines[0]
    if header != NETLIST_HEADER:
        raise NetlistError(f"expected header '{NETLIST_HEADER}', got '{header}'", header_line)

    if len(lines) < 2 or lines[1][1].split()[0] != "config":
        raise NetlistError("missing 'config input_dim L k C' line",
                           lines[1][0] if len(lines) > 1 else header_line)
    config_line, config_text = lines[1]
    config_tokens = config_text.split()
    if len(config_tokens) != 5:
        raise NetlistError("config needs exactly 4 integers: input_dim L k C", config_line)
    input_dim, depth, k, classes = _parse_ints(config_tokens[1:], config_line, "config")
    if input_dim < 2 or depth < 1 or k < 1 or classes < 1:
        raise NetlistError("config values out of range (input_dim >= 2, L, k, C >= 1)", config_line)
    if k % classes != 0:
        raise NetlistError(f"width k={k} not divisible by classes C={classes}", config_line)

    gates = np.full((depth, k), -1, dtype=np.int64)
    wiring = np.zeros((depth, k, 2), dtype=np.int64)

    for line, content in lines[2:]:
        tokens = content.split()
        if tokens[0] != "g" or len(tokens) != 6:
            raise NetlistError(f"expected 'g layer index GATE_NAME in0 in1', got '{content}'", line)
        layer, index = _parse_ints(tokens[1:3], line, "gate position")
        in0, in1 = _parse_ints(tokens[4:6], line, "gate inputs")

        if not 0 <= layer < depth:
            raise NetlistError(f"layer {layer} out of range [0, {depth})", line)
        if not 0 <= index < k:
            raise NetlistError(f"gate index {index} out of range [0, {k})", line)
        source = input_dim if layer == 0 else k
        for value in (in0, in1):
            if not 0 <= value < source:
                raise NetlistError(f"input index {value} out of range [0, {source})", line)
        if in0 == in1:
            raise NetlistError(f"gate reads the same input {in0} twice", line)
        if tokens[3].lstrip("-").isdigit():
            raise NetlistError(f"gate must be named, not numbered: '{tokens[3]}'", line)
        try:
            g = gate_id(tokens[3])
        except ValueError as e:
            raise NetlistError(str(e), line)
        if gates[layer, index] != -1:
            raise NetlistError(f"duplicate gate {layer}/{index}", line)

        gates[layer, index] = g
        wiring[layer, index] = (in0, in1)

    for layer in range(depth):
        missing = np.where(gates[layer] < 0)[0]
        if len(missing) == k:
            raise NetlistError(f"layer {layer} is empty")
        if len(missing):
            raise NetlistError(f"layer {layer} is missing gates {missing[:5].tolist()}")

    return HardCircuit(input_dim=input_dim, classes=classes,
                       gates=list(gates), wiring=list(wiring))


def read_netlist(path) -> HardCircuit:
    path = Path(path)
    if not path.exists():
        raise NetlistError(f"netlist not found: {path}")
    return parse_netlist(path.read_text())


def write_predictions(path, predictions: np.ndarray) -> None:
    """Write `sample_index,predicted_class` CSV."""
    df = pd.DataFrame({
        "sample_index": np.arange(len(predictions)),
        "predicted_class": np.asarray(predictions, dtype=np.int64),
    })
    atomic_write_csv(df, path)
    logger.info(f"Wrote {len(df)} predictions to {path}")

"""
codebook.py

The 16-gate multilinear codebook. Builds the coefficient rows from truth
tables, quantizes continuous coefficient vectors to the nearest gate, converts
between the corner and polynomial bases, and exposes the symmetry facts
(zero column sums, complementation pairing) as checkable functions.

Gate ids follow the truth-table bit pattern: bit i of the id is the gate
output at corner i, corners ordered (a,b) = (0,0), (1,0), (0,1), (1,1).
"""

import numpy as np
import yaml
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from rapidfuzz import process

from gate_types import GateClass

NUM_GATES = 16

# Corner order shared by truth tables, corner vectors and the matrices below
CORNERS = ((0, 0), (1, 0), (0, 1), (1, 1))

# c = M s  (corner values -> multilinear coefficients)
M = np.array([
    [1, 0, 0, 0],
    [-1, 1, 0, 0],
    [-1, 0, 1, 0],
    [1, -1, -1, 1],
], dtype=np.int64)

# s = M_INV c  (row k holds the monomials (1, a, b, ab) evaluated at corner k)
M_INV = np.array([
    [1, 0, 0, 0],
    [1, 1, 0, 0],
    [1, 0, 1, 0],
    [1, 1, 1, 1],
], dtype=np.int64)

GateLike = Union[int, str]


def load_gate_names(path: Optional[str] = None) -> Dict[int, str]:
    """
    Load the GateId -> canonical name table.

    Args:
        path: Path to gate_names.yaml (defaults to schemas/gate_names.yaml)

    Returns:
        Dictionary mapping gate id to uppercase gate name
    """
    if path is None:
        current_dir = Path(__file__).parent
        path = current_dir.parent / "schemas" / "gate_names.yaml"

    with open(path, 'r') as f:
        table = yaml.safe_load(f)

    names = {int(entry['id']): str(entry['name']) for entry in table['gates']}
    if sorted(names) != list(range(NUM_GATES)):
        raise ValueError(f"Gate name table {path} must list ids 0..15 exactly once")
    return names


GATE_NAMES = load_gate_names()
NAME_TO_GATE = {name: gate_id for gate_id, name in GATE_NAMES.items()}


def gate_name(gate_id: int) -> str:
    return GATE_NAMES[int(gate_id)]


def gate_id(name: GateLike) -> int:
    """
    Resolve a gate name (case-insensitive) or integer id to a GateId.

    Raises:
        ValueError: unknown name, with the closest known name suggested
    """
    if isinstance(name, (int, np.integer)):
        if not 0 <= int(name) < NUM_GATES:
            raise ValueError(f"Gate id {name} out of range [0, 15]")
        return int(name)

    key = str(name).strip().upper()
    if key in NAME_TO_GATE:
        return NAME_TO_GATE[key]
    if key.isdigit():
        return gate_id(int(key))

    match = process.extractOne(key, list(NAME_TO_GATE))
    hint = f" (did you mean {match[0]}?)" if match and match[1] >= 60 else ""
    raise ValueError(f"Unknown gate name '{name}'{hint}")


def truth_table(gate: int) -> np.ndarray:
    """Output bits of a gate at the four corners, in corner order."""
    return np.array([(int(gate) >> i) & 1 for i in range(4)], dtype=np.int64)


def build_codebook() -> np.ndarray:
    """
    Build the 16x4 integer codebook by forward substitution on truth tables.

    Row j is [c0, ca, cb, cab] of gate j:
        c0 = g(0,0), ca = g(1,0) - g(0,0), cb = g(0,1) - g(0,0),
        cab = g(1,1) - g(1,0) - g(0,1) + g(0,0)

    Returns:
        Read-only int64 array of shape (16, 4), rows ordered by GateId
    """
    rows = []
    for j in range(NUM_GATES):
        g00, g10, g01, g11 = truth_table(j)
        rows.append([g00, g10 - g00, g01 - g00, g11 - g10 - g01 + g00])

    codebook = np.array(rows, dtype=np.int64)
    codebook.setflags(write=False)
    return codebook


CODEBOOK = build_codebook()


def psi(a, b) -> np.ndarray:
    """Canonical basis (1, a, b, ab), stacked on a new last axis."""
    a = np.asarray(a)
    b = np.asarray(b)
    return np.stack(np.broadcast_arrays(np.ones_like(a * b), a, b, a * b), axis=-1)


def corner_basis(a, b) -> np.ndarray:
    """Corner basis (phi00, phi10, phi01, phi11), stacked on a new last axis."""
    a = np.asarray(a)
    b = np.asarray(b)
    return np.stack(np.broadcast_arrays(
        (1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b), axis=-1)


def poly_eval(coeffs, a, b):
    """
    Evaluate z = c0 + ca*a + cb*b + cab*a*b.

    Args:
        coeffs: (..., 4) coefficient vectors, broadcast against a and b
        a, b: input values
    """
    coeffs = np.asarray(coeffs)
    return coeffs[..., 0] + coeffs[..., 1] * a + coeffs[..., 2] * b + coeffs[..., 3] * (a * b)


def gate_outputs(a, b, codebook: np.ndarray = CODEBOOK) -> np.ndarray:
    """All 16 gate outputs g_j(a, b), shape (..., 16)."""
    return psi(a, b) @ codebook.T.astype(np.result_type(np.asarray(a), np.float64))


def squared_distances(c, codebook: np.ndarray = CODEBOOK) -> np.ndarray:
    """Squared Euclidean distance from each c (..., 4) to every row, shape (..., 16)."""
    c = np.asarray(c)
    dtype = np.result_type(c.dtype, np.float32) if c.dtype.kind == 'f' else np.float64
    c = c.astype(dtype, copy=False)
    diff = c[..., None, :] - codebook.astype(dtype)
    return np.einsum('...jk,...jk->...j', diff, diff)


def snap(c, codebook: np.ndarray = CODEBOOK):
    """
    Quantize coefficient vectors to the nearest codebook row.

    Ties go to the smallest GateId (argmin returns the first minimum).

    Args:
        c: (4,) vector or (..., 4) array of coefficient vectors

    Returns:
        (gate ids, codebook rows); a plain int for a single vector

    Raises:
        ValueError: non-finite input
    """
    c = np.asarray(c)
    if not np.all(np.isfinite(c)):
        raise ValueError("snap() requires finite coefficients")

    ids = np.argmin(squared_distances(c, codebook), axis=-1)
    if c.ndim == 1:
        return int(ids), codebook[int(ids)]
    return ids, codebook[ids]


def _matrix_dtype(x: np.ndarray):
    return x.dtype if x.dtype.kind == 'f' else np.int64


def corner_to_poly(s):
    """c = M s for corner vectors s (..., 4)."""
    s = np.asarray(s)
    return s @ M.T.astype(_matrix_dtype(s))


def poly_to_corner(c):
    """s = M_INV c for coefficient vectors c (..., 4)."""
    c = np.asarray(c)
    return c @ M_INV.T.astype(_matrix_dtype(c))


def classify(gate: int, codebook: np.ndarray = CODEBOOK) -> GateClass:
    """Classify a gate by its linear and interaction coefficients."""
    _, ca, cb, cab = codebook[int(gate)]
    if cab == 0 and ca == 0 and cb == 0:
        return GateClass.CONSTANT
    if cab == 0:
        return GateClass.SEPARABLE
    if abs(cab) == 1:
        return GateClass.WEAK_INTERACTION
    return GateClass.STRONG_INTERACTION


GATE_CLASSES = np.array([classify(j) for j in range(NUM_GATES)], dtype=object)


def complement(gate: int) -> int:
    """The gate with every truth bit flipped."""
    return int(gate) ^ 0b1111


def ste_derivative_table(codebook: np.ndarray = CODEBOOK) -> List[Dict]:
    """
    STE input derivative dz/da = ca + cab*b for every a-dependent gate.

    Returns:
        One dict per gate with (ca, cab) != (0, 0), in GateId order
    """
    rows = []
    for j in range(NUM_GATES):
        ca, cab = int(codebook[j, 1]), int(codebook[j, 3])
        if ca == 0 and cab == 0:
            continue
        rows.append({
            "gate": gate_name(j),
            "ca": ca,
            "cab": cab,
            "at_b0": ca,
            "at_b1": ca + cab,
        })
    return rows


def validate_codebook(codebook: np.ndarray) -> List[str]:
    """
    Check a codebook against the structural facts the training theory uses.

    Args:
        codebook: Candidate 16x4 integer matrix

    Returns:
        List of error messages (empty if valid)
    """
    errors = []
    codebook = np.asarray(codebook)

    if codebook.shape != (NUM_GATES, 4):
        return [f"Codebook must have shape (16, 4), got {codebook.shape}"]

    if np.linalg.matrix_rank(codebook.astype(np.float64)) != 4:
        errors.append("Codebook rank is not 4")

    # Zero-sum symmetry, exact integer arithmetic
    column_sums = codebook.astype(np.int64).sum(axis=0)
    for col, label in zip((1, 2, 3), ("ca", "cb", "cab")):
        if column_sums[col] != 0:
            errors.append(f"Column {label} sums to {column_sums[col]}, expected 0")

    ranges = {0: (0, 1), 1: (-1, 1), 2: (-1, 1), 3: (-2, 2)}
    for col, (low, high) in ranges.items():
        bad = np.where((codebook[:, col] < low) | (codebook[:, col] > high))[0]
        for j in bad:
            errors.append(f"Gate {j}: coefficient {col} = {codebook[j, col]} outside [{low}, {high}]")

    # Polynomial collapse: row j reproduces truth bits of j at every corner
    for j in range(NUM_GATES):
        bits = truth_table(j)
        for corner, (a, b) in enumerate(CORNERS):
            value = poly_eval(codebook[j], a, b)
            if value != bits[corner]:
                errors.append(
                    f"Gate {j} ({gate_name(j)}): polynomial gives {value} at {(a, b)}, "
                    f"truth table says {bits[corner]}")

    # Every a-dependent gate passes a derivative of magnitude >= 1 for some b
    for j in range(NUM_GATES):
        ca, cab = codebook[j, 1], codebook[j, 3]
        if (ca, cab) != (0, 0) and max(abs(ca), abs(ca + cab)) < 1:
            errors.append(f"Gate {j}: max_b |ca + cab*b| < 1")

    return errors

"""
Type definitions for deep logic gate network training.

This module provides enums and small data structures shared by every other
module: gate classes, training methods, wiring schemes, backward bases and
the per-checkpoint diagnostics row.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple


class GateClass(Enum):
    """Partition of the 16 two-input gates by interaction strength."""
    CONSTANT = "constant"                      # ca = cb = cab = 0
    SEPARABLE = "separable"                    # cab = 0, (ca, cb) != (0, 0)
    WEAK_INTERACTION = "weak_interaction"      # |cab| = 1
    STRONG_INTERACTION = "strong_interaction"  # |cab| = 2


class Method(Enum):
    """Gate-selection training mechanism."""
    SOFT_MIX = "soft_mix"
    GUMBEL_ST = "gumbel_st"
    HARD_ST = "hard_st"
    MULTILINEAR_STE = "multilinear_ste"
    MULTILINEAR_COVJAC = "multilinear_covjac"
    IWP_FREE = "iwp_free"
    IWP_STE = "iwp_ste"
    MULTILINEAR_FREE = "multilinear_free"


class WiringScheme(Enum):
    STRIDE = "stride"
    RANDOM = "random"


class BasisKind(Enum):
    """Backward basis used by the straight-through estimator."""
    CANONICAL = "canonical"
    WALSH = "walsh"
    SMOOTHED = "smoothed"
    EXPECTED_VALUE = "expected_value"
    UNIFORM = "uniform"
    AFFINE = "affine"


# Learnable reals per neuron
METHOD_PARAM_COUNT = {
    Method.SOFT_MIX: 16,
    Method.GUMBEL_ST: 16,
    Method.HARD_ST: 16,
    Method.MULTILINEAR_STE: 4,
    Method.MULTILINEAR_COVJAC: 4,
    Method.IWP_FREE: 4,
    Method.IWP_STE: 4,
    Method.MULTILINEAR_FREE: 4,
}

LOGIT_METHODS = (Method.SOFT_MIX, Method.GUMBEL_ST, Method.HARD_ST)

# Methods whose raw parameters are multilinear coefficients [c0, ca, cb, cab]
COEFFICIENT_METHODS = (
    Method.MULTILINEAR_STE,
    Method.MULTILINEAR_COVJAC,
    Method.MULTILINEAR_FREE,
)

CORNER_METHODS = (Method.IWP_FREE, Method.IWP_STE)


@dataclass(frozen=True)
class BasisSpec:
    """
    Backward basis psi~(a, b) for the straight-through estimator.

    Affine kinds use phi(x) = alpha + beta * x and
    psi~ = (1, phi(a), phi(b), phi(a) * phi(b)).
    """
    kind: BasisKind = BasisKind.CANONICAL
    alpha: float = 0.0
    beta: float = 1.0
    epsilon: float = 0.2

    def affine(self) -> Optional[Tuple[float, float]]:
        """Return (alpha, beta) for affine kinds, None for degenerate ones."""
        if self.kind == BasisKind.CANONICAL:
            return (0.0, 1.0)
        if self.kind == BasisKind.WALSH:
            return (-1.0, 2.0)
        if self.kind == BasisKind.SMOOTHED:
            return (float(self.epsilon), 1.0)
        if self.kind == BasisKind.AFFINE:
            return (float(self.alpha), float(self.beta))
        return None

    def label(self) -> str:
        if self.kind == BasisKind.SMOOTHED:
            return f"smoothed:{self.epsilon:g}"
        if self.kind == BasisKind.AFFINE:
            return f"affine:{self.alpha:g},{self.beta:g}"
        return self.kind.value


def parse_basis(text: str) -> BasisSpec:
    """
    Parse a basis flag such as ``walsh``, ``smoothed:0.2`` or ``affine:-1,2``.

    Raises:
        ValueError: unknown kind or malformed numbers
    """
    name, _, arg = text.strip().lower().partition(":")
    try:
        kind = BasisKind(name)
    except ValueError:
        valid = ", ".join(k.value for k in BasisKind)
        raise ValueError(f"Unknown basis '{text}'. Must be one of: {valid}")

    if kind == BasisKind.SMOOTHED:
        return BasisSpec(kind=kind, epsilon=float(arg) if arg else 0.2)
    if kind == BasisKind.AFFINE:
        parts = arg.split(",")
        if len(parts) != 2:
            raise ValueError(f"affine basis needs 'affine:alpha,beta', got '{text}'")
        return BasisSpec(kind=kind, alpha=float(parts[0]), beta=float(parts[1]))
    if arg:
        raise ValueError(f"Basis '{name}' takes no argument, got '{text}'")
    return BasisSpec(kind=kind)


@dataclass
class DiagnosticsRecord:
    """One metrics row, emitted at every evaluation checkpoint."""
    iter: int
    loss: float
    hard_acc_test: float
    hard_acc_train: float
    train_forward_acc: float
    entropy: List[float] = field(default_factory=list)
    survival: List[float] = field(default_factory=list)
    grad_ratio_cab_c0: Optional[float] = None
    commitment_std_cab: float = 0.0
    gate_class_counts: List[Dict[str, int]] = field(default_factory=list)

    @property
    def dg(self) -> float:
        return self.train_forward_acc - self.hard_acc_test

    @property
    def gen(self) -> float:
        return self.hard_acc_train - self.hard_acc_test

    def to_row(self) -> Dict:
        """Flatten to the documented metrics CSV column order."""
        row = {
            "iter": self.iter,
            "loss": self.loss,
            "hard_acc_test": self.hard_acc_test,
            "hard_acc_train": self.hard_acc_train,
            "train_forward_acc": self.train_forward_acc,
            "dg": self.dg,
            "gen": self.gen,
        }
        for layer, value in enumerate(self.entropy):
            row[f"entropy_l{layer}"] = value
        for layer, value in enumerate(self.survival):
            row[f"survival_l{layer}"] = value
        row["grad_ratio"] = self.grad_ratio_cab_c0
        row["commitment"] = self.commitment_std_cab
        for layer, counts in enumerate(self.gate_class_counts):
            for gate_class in GateClass:
                row[f"{gate_class.value}_l{layer}"] = counts.get(gate_class.value, 0)
        return row

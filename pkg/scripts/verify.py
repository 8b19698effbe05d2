"""
verify.py

Executable property suite for the codebook, the training mechanisms and the
diagnostics. Each check returns a PropertyResult with the measured value so
the command-line report can print what was observed next to the expectation.

Fault injection (`fault="sign_flip"`) flips the sign of one codebook entry
before the codebook checks run; the zero-sum and collapse checks must fail.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from circuit import export, pack_bits, packed_scores, scalar_scores, HardCircuit
from codebook import (
    CODEBOOK,
    CORNERS,
    M,
    M_INV,
    NAME_TO_GATE,
    poly_eval,
    ste_derivative_table,
    truth_table,
)
from diagnostics import expected_active_count, expected_l1_from_uniform, signal_survival, survival_weights
from gate_types import BasisKind, BasisSpec, Method, WiringScheme
from netarch import Network, NetworkConfig
import trainers

logger = logging.getLogger(__name__)

FAULTS = ("sign_flip",)

# Soft-VQ temperature at which CovJac survival is reported
SURVIVAL_COVJAC_TAU = 0.1


@dataclass
class PropertyResult:
    name: str
    anchor: str
    passed: bool
    detail: str
    exact: bool = False


def faulty_codebook(fault: Optional[str]) -> np.ndarray:
    codebook = CODEBOOK.copy()
    if fault is None:
        return codebook
    if fault == "sign_flip":
        # AND's interaction coefficient +1 -> -1
        codebook[NAME_TO_GATE["AND"], 3] *= -1
        return codebook
    raise ValueError(f"Unknown fault '{fault}' (expected one of {', '.join(FAULTS)})")


# --- codebook -------------------------------------------------------------

def check_printed_rows(G: np.ndarray) -> PropertyResult:
    expected = {"AND": [0, 0, 0, 1], "OR": [0, 1, 1, -1], "XOR": [0, 1, 1, -2],
                "A": [0, 1, 0, 0], "FALSE": [0, 0, 0, 0]}
    wrong = [name for name, row in expected.items() if list(G[NAME_TO_GATE[name]]) != row]
    return PropertyResult("codebook rows AND/OR/XOR/A/FALSE", "multilinear form examples",
                          not wrong, f"mismatched: {wrong}" if wrong else "all 5 rows match", exact=True)


def check_zero_sums(G: np.ndarray) -> PropertyResult:
    sums = G.astype(np.int64).sum(axis=0)[1:]
    return PropertyResult("zero-sum columns ca, cb, cab", "codebook symmetry lemma",
                          bool(np.all(sums == 0)), f"column sums {sums.tolist()}", exact=True)


def check_collapse(G: np.ndarray) -> PropertyResult:
    bad = []
    for j in range(16):
        bits = truth_table(j)
        for corner, (a, b) in enumerate(CORNERS):
            if poly_eval(G[j], a, b) != bits[corner]:
                bad.append((j, (a, b)))
    return PropertyResult("polynomial collapse at the 4 corners", "zero discretization gap identity",
                          not bad, f"{len(bad)} corner mismatches" if bad else "64/64 corners exact",
                          exact=True)


def check_derivative_table(G: np.ndarray) -> PropertyResult:
    rows = ste_derivative_table(G)
    weak = [r["gate"] for r in rows if max(abs(r["at_b0"]), abs(r["at_b1"])) < 1]
    ok = len(rows) == 12 and not weak
    return PropertyResult("max_b |ca + cab*b| >= 1 for a-dependent gates", "STE derivative enumeration",
                          ok, f"{len(rows)} a-dependent gates, failing {weak}", exact=True)


def check_bijection() -> PropertyResult:
    identity = M @ M_INV
    ok = np.array_equal(identity, np.eye(4, dtype=np.int64))
    return PropertyResult("M . M_INV = I", "corner/polynomial bijection", ok,
                          "exact integer identity" if ok else f"product {identity.tolist()}", exact=True)


# --- training mechanisms --------------------------------------------------

def check_uniform_cancellation(rng: np.random.Generator) -> PropertyResult:
    a = rng.random((1000, 1))
    b = rng.random((1000, 1))
    pi = np.full((1, 16), 1.0 / 16)
    _, (da, db) = trainers.softmix_backward(pi, a, b, np.ones_like(a))
    worst = float(max(np.abs(da).max(), np.abs(db).max()))
    return PropertyResult("uniform mixture input gradient vanishes", "soft-mix cancellation (exact)",
                          worst < 1e-12, f"max |dz/da|, |dz/db| = {worst:.2e} over 1000 (a,b)", exact=True)


def check_near_uniform_bound(rng: np.random.Generator) -> PropertyResult:
    n = 10_000
    scale = rng.uniform(0.0, 2.0, size=(n, 1))
    pi = trainers.softmax(rng.normal(size=(n, 16)) * scale)
    b = rng.integers(0, 2, size=n).astype(np.float64)
    c = pi @ CODEBOOK.astype(np.float64)
    grad = np.abs(c[:, 1] + c[:, 3] * b)
    bound = np.abs(pi - 1.0 / 16).sum(axis=1)
    slack = float((grad - bound).max())
    return PropertyResult("|dz/da| <= ||pi - u||_1", "near-uniform bound",
                          slack <= 1e-9, f"max(grad - bound) = {slack:.2e} over {n} draws")


def check_covjac_jacobian(rng: np.random.Generator) -> PropertyResult:
    h = 1e-4
    worst_fd = worst_sym = 0.0
    min_eig = np.inf
    min_diag = np.inf
    for tau in (0.5, 1.0, 2.0):
        for _ in range(100):
            c = rng.normal(0.0, 1.0, size=4) + rng.choice(CODEBOOK).astype(np.float64) * 0.5
            omega, _ = trainers.covjac_effective(c, tau)
            jac = trainers.covjac_jacobian(omega, tau)
            fd = np.empty((4, 4))
            for i in range(4):
                step = np.zeros(4)
                step[i] = h
                _, plus = trainers.covjac_effective(c + step, tau)
                _, minus = trainers.covjac_effective(c - step, tau)
                fd[:, i] = (plus - minus) / (2 * h)
            worst_fd = max(worst_fd, float(np.abs(fd - jac).max() / max(1.0, np.abs(jac).max())))
            worst_sym = max(worst_sym, float(np.abs(jac - jac.T).max()))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(jac).min()))
            min_diag = min(min_diag, float(np.diag(jac).min()))
    ok = worst_fd < 1e-5 and worst_sym < 1e-10 and min_eig >= -1e-8 and min_diag > 0
    detail = (f"fd rel err {worst_fd:.1e}, asymmetry {worst_sym:.1e}, "
              f"min eig {min_eig:.1e}, min diag {min_diag:.2e}")
    return PropertyResult("covariance Jacobian: finite differences, symmetric, PSD, diag > 0",
                          "covariance Jacobian", ok, detail)


def check_zero_gap(rng: np.random.Generator, networks: int = 50) -> PropertyResult:
    mismatches = 0
    for n in range(networks):
        classes = int(rng.choice([1, 2, 4]))
        width = classes * max(int(rng.integers(1, 256 // classes + 1)), 2)
        config = NetworkConfig(input_dim=int(rng.integers(2, 40)), depth=int(rng.integers(1, 7)),
                               width=width, classes=classes, method=Method.MULTILINEAR_STE,
                               seed=n, wiring_scheme=WiringScheme.RANDOM)
        network = Network(config, rng=rng)
        x = rng.integers(0, 2, size=(int(rng.integers(1, 300)), config.input_dim)).astype(np.uint8)
        _, logits, _ = network.forward(x.astype(np.float32), mode="train")
        packed, batch = pack_bits(x)
        scores = packed_scores(export(network), packed, batch)
        if not np.array_equal(logits.astype(np.int64), scores) or not np.all(logits == scores):
            mismatches += 1
    return PropertyResult("STE train forward == packed hard circuit", "zero discretization gap",
                          mismatches == 0, f"{mismatches}/{networks} random networks differ", exact=True)


def random_circuit(rng: np.random.Generator) -> HardCircuit:
    classes = int(rng.choice([1, 2, 3]))
    width = classes * int(rng.integers(2, 9))
    input_dim = int(rng.integers(2, 20))
    depth = int(rng.integers(1, 5))
    gates, wiring = [], []
    for layer in range(depth):
        source = input_dim if layer == 0 else width
        in0 = rng.integers(0, source, size=width)
        in1 = rng.integers(0, source - 1, size=width)
        in1 = in1 + (in1 >= in0)
        gates.append(rng.integers(0, 16, size=width).astype(np.int64))
        wiring.append(np.stack([in0, in1], axis=1).astype(np.int64))
    return HardCircuit(input_dim=input_dim, classes=classes, gates=gates, wiring=wiring)


def check_packed_vs_scalar(rng: np.random.Generator, circuits: int = 1000) -> PropertyResult:
    mismatches = 0
    for _ in range(circuits):
        circuit = random_circuit(rng)
        x = rng.integers(0, 2, size=(int(rng.integers(1, 150)), circuit.input_dim)).astype(np.uint8)
        packed, batch = pack_bits(x)
        if not np.array_equal(packed_scores(circuit, packed, batch), scalar_scores(circuit, x)):
            mismatches += 1
    return PropertyResult("packed evaluation == scalar polynomial evaluation", "deployment equivalence",
                          mismatches == 0, f"{mismatches}/{circuits} random circuits differ", exact=True)


# --- coverage and diagnostics ---------------------------------------------

def check_coverage(rng: np.random.Generator) -> PropertyResult:
    canonical = expected_active_count(BasisSpec(), draws=100_000, rng=rng)
    corner = expected_active_count("corner", draws=10_000, rng=rng)

    a = rng.integers(0, 2, size=(4096, 1)).astype(np.float64)
    b = rng.integers(0, 2, size=(4096, 1)).astype(np.float64)
    grad, _ = trainers.ste_backward(np.zeros((1, 4)), BasisSpec(), a, b, np.ones_like(a))
    ratio = float(abs(grad[0, 3]) / abs(grad[0, 0]))

    l1 = expected_l1_from_uniform(1.0, draws=100_000, rng=rng)
    ok = abs(canonical - 2.25) <= 0.02 and corner == 1.0 and abs(ratio - 0.25) <= 0.02 and abs(l1 - 0.72) <= 0.02
    detail = (f"E||psi||_0 = {canonical:.3f}, corner = {corner:.3f}, "
              f"STE cab/c0 ratio = {ratio:.3f}, E||pi-u||_1 = {l1:.3f}")
    return PropertyResult("coverage statistics", "coverage lemma / near-uniform init", ok, detail)


def check_basis_metrics() -> PropertyResult:
    canonical = trainers.basis_metrics(BasisSpec(BasisKind.CANONICAL))
    walsh = trainers.basis_metrics(BasisSpec(BasisKind.WALSH))
    smoothed = trainers.basis_metrics(BasisSpec(BasisKind.SMOOTHED, epsilon=0.2))

    grid = np.linspace(-2.0, 2.0, 100)
    ideal = 0
    for alpha in grid:
        for beta in grid:
            rho, kappa, bias = trainers.basis_metrics(BasisSpec(BasisKind.AFFINE, alpha=alpha, beta=beta))
            if rho == 1.0 and abs(kappa - 1.0) < 1e-9 and bias < 1e-9:
                ideal += 1

    ok = (canonical == (0.25, 1.0, 0.0)
          and walsh[0] == 1.0 and abs(walsh[1]) < 1e-12 and walsh[2] > 0
          and smoothed[0] == 1.0 and abs(smoothed[1] - 1.0) < 1e-12 and smoothed[2] > 0
          and ideal == 0)
    detail = (f"canonical {canonical}, walsh ({walsh[0]:g}, {walsh[1]:g}, {walsh[2]:.3f}), "
              f"smoothed ({smoothed[0]:g}, {smoothed[1]:g}, {smoothed[2]:.3f}), "
              f"(1,1,0) attained on {ideal} grid points")
    return PropertyResult("backward basis coverage/coherence/bias", "basis futility", ok, detail)


def init_survival(method: Method, rng: np.random.Generator, neurons: int = 10_000,
                  probes: int = 64, tau: float = 1.0) -> float:
    raw = trainers.init_params(method, neurons, 1.0, rng).astype(np.float64)
    a = rng.integers(0, 2, size=(probes, neurons)).astype(np.float64)
    b = rng.integers(0, 2, size=(probes, neurons)).astype(np.float64)
    return signal_survival(survival_weights(method, raw, tau), a, b)


def check_survival(rng: np.random.Generator) -> PropertyResult:
    softmix = init_survival(Method.SOFT_MIX, rng)
    ste = init_survival(Method.MULTILINEAR_STE, rng)
    covjac = init_survival(Method.MULTILINEAR_COVJAC, rng, tau=SURVIVAL_COVJAC_TAU)
    ok = abs(softmix - 0.29) <= 0.05 and ste == 1.0 and covjac >= 0.95
    detail = (f"soft_mix {softmix:.3f} (reference 0.29), multilinear_ste {ste:.3f}, "
              f"multilinear_covjac {covjac:.3f} at tau={SURVIVAL_COVJAC_TAU:g}")
    return PropertyResult("signal survival at init", "gradient cancellation diagnostic", ok, detail)


def run_property_suite(fault: Optional[str] = None, seed: int = 0,
                       quick: bool = False) -> List[PropertyResult]:
    """
    Run every property check.

    Args:
        fault: Optional fault to inject into the codebook checks
        seed: Seed for the Monte Carlo checks
        quick: Fewer random networks/circuits

    Returns:
        One PropertyResult per check, in report order
    """
    G = faulty_codebook(fault)
    rng = np.random.default_rng(seed)

    checks: List[Callable[[], PropertyResult]] = [
        lambda: check_printed_rows(G),
        lambda: check_zero_sums(G),
        lambda: check_collapse(G),
        lambda: check_derivative_table(G),
        check_bijection,
        lambda: check_uniform_cancellation(rng),
        lambda: check_near_uniform_bound(rng),
        lambda: check_covjac_jacobian(rng),
        lambda: check_zero_gap(rng, networks=10 if quick else 50),
        lambda: check_packed_vs_scalar(rng, circuits=100 if quick else 1000),
        lambda: check_coverage(rng),
        check_basis_metrics,
        lambda: check_survival(rng),
    ]

    results = []
    for check in checks:
        result = check()
        logger.debug(f"{result.name}: {'pass' if result.passed else 'FAIL'} ({result.detail})")
        results.append(result)
    return results

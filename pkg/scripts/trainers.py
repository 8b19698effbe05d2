"""
trainers.py

Gate-selection training mechanisms. Every method turns a neuron's raw
parameters into effective coefficients for the minibatch, evaluates the
multilinear polynomial, and maps the upstream derivative delta = dL/dz back
to parameter and input gradients with its own hand-derived rule.

Methods:
- soft_mix: softmax over 16 logits, c_eff = pi^T G
- gumbel_st / hard_st: one gate per neuron per minibatch, straight-through softmax backward
- multilinear_ste: snap(c) forward, delta * psi~(a, b) backward
- multilinear_covjac: soft-VQ forward, covariance-Jacobian backward
- iwp_free / iwp_ste / multilinear_free: the corner and free factorial variants

Gradients returned by the backward functions are sums over the batch rows of
delta; the loss already divides delta by the batch size.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from codebook import CODEBOOK, M, NUM_GATES, poly_eval, snap, corner_to_poly, poly_to_corner
from gate_types import (
    BasisKind,
    BasisSpec,
    Method,
    METHOD_PARAM_COUNT,
    LOGIT_METHODS,
)

CANONICAL = BasisSpec()

# Corner bit weights: GateId = sum_i bit_i << i
_BIT_WEIGHTS = np.array([1, 2, 4, 8], dtype=np.int64)


def init_params(method: Method, k: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Raw parameters for one layer, i.i.d. Normal(0, sigma^2), float32."""
    return rng.normal(0.0, sigma, size=(k, METHOD_PARAM_COUNT[method])).astype(np.float32)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Two-sided form avoids overflow in exp for large |x|
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _codebook(dtype) -> np.ndarray:
    return CODEBOOK.astype(dtype)


def monomial_sums(delta: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum over the batch of delta * (1, a, b, ab); inputs (B, k), output (k, 4)."""
    return np.stack([
        delta.sum(axis=0),
        (delta * a).sum(axis=0),
        (delta * b).sum(axis=0),
        (delta * a * b).sum(axis=0),
    ], axis=-1)


def input_grads(coeffs: np.ndarray, a: np.ndarray, b: np.ndarray,
                delta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """delta * dz/da and delta * dz/db for z = c^T psi(a, b)."""
    da = delta * (coeffs[:, 1] + coeffs[:, 3] * b)
    db = delta * (coeffs[:, 2] + coeffs[:, 3] * a)
    return da, db


# --- backward bases -------------------------------------------------------

def basis_values(basis: BasisSpec, a, b) -> np.ndarray:
    """psi~(a, b) stacked on a new last axis."""
    a = np.asarray(a)
    b = np.asarray(b)
    if basis.kind == BasisKind.EXPECTED_VALUE:
        const = np.array([1.0, 0.5, 0.5, 0.25])
    elif basis.kind == BasisKind.UNIFORM:
        const = np.ones(4)
    else:
        alpha, beta = basis.affine()
        phi_a = alpha + beta * a
        phi_b = alpha + beta * b
        return np.stack(np.broadcast_arrays(np.ones_like(phi_a * phi_b), phi_a, phi_b, phi_a * phi_b), axis=-1)
    shape = np.broadcast(a, b).shape + (4,)
    return np.broadcast_to(const.astype(np.result_type(a, np.float32)), shape)


def basis_sums(basis: BasisSpec, delta: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum over the batch of delta * psi~(a, b), shape (k, 4)."""
    if basis.kind == BasisKind.CANONICAL:
        return monomial_sums(delta, a, b)
    alpha, beta = basis.affine() or (None, None)
    if alpha is None:
        const = basis_values(basis, 0.0, 0.0)
        return delta.sum(axis=0)[:, None] * const.astype(delta.dtype)
    phi_a = alpha + beta * a
    phi_b = alpha + beta * b
    return monomial_sums(delta, phi_a, phi_b)


def basis_metrics(spec: BasisSpec) -> Tuple[float, float, float]:
    """
    Coverage, coherence and STE bias of an affine backward basis.

    Computed over the four Boolean corners with equal weight:
        rho   = fraction of corners where psi~_3 != 0
        kappa = |mean psi~_3| / mean |psi~_3|
        B     = sum_k min_{d_k > 0} E[(psi~_k - d_k psi_k)^2]

    Raises:
        ValueError: degenerate basis (expected_value, uniform) or beta == 0
    """
    affine = spec.affine()
    if affine is None:
        raise ValueError(f"Basis '{spec.label()}' is degenerate; coverage metrics need an affine basis")
    alpha, beta = affine
    if beta == 0:
        raise ValueError("Affine basis with beta = 0 is degenerate; coverage metrics need beta != 0")

    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    a, b = corners[:, 0], corners[:, 1]
    psi_true = np.stack([np.ones(4), a, b, a * b], axis=-1)
    psi_tilde = basis_values(spec, a, b).astype(np.float64)

    interaction = psi_tilde[:, 3]
    active = np.abs(interaction) > 1e-12
    rho = float(np.mean(active))
    kappa = float(abs(interaction.mean()) / np.abs(interaction).mean())

    bias = 0.0
    for k in range(4):
        cross = np.mean(psi_tilde[:, k] * psi_true[:, k])
        tilde_sq = np.mean(psi_tilde[:, k] ** 2)
        true_sq = np.mean(psi_true[:, k] ** 2)
        if cross > 0:
            bias += tilde_sq - cross ** 2 / true_sq
        else:
            # infimum over d > 0 is approached as d -> 0
            bias += tilde_sq
    return rho, kappa, max(float(bias), 0.0)


# --- soft_mix -------------------------------------------------------------

def softmix_effective(logits: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """pi = softmax(logits), c_eff = pi^T G."""
    pi = softmax(logits)
    return pi, pi @ _codebook(pi.dtype)


def softmix_backward(pi: np.ndarray, a: np.ndarray, b: np.ndarray,
                     delta: np.ndarray) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """
    Logit and input gradients of the soft mixture.

    Args:
        pi: (k, 16) mixture weights
        a, b, delta: (B, k)

    Returns:
        ((k, 16) logit grads, (da, db))
    """
    G = _codebook(pi.dtype)
    gate_grads = monomial_sums(delta, a, b) @ G.T
    dlogits = pi * (gate_grads - np.sum(pi * gate_grads, axis=-1, keepdims=True))
    return dlogits, input_grads(pi @ G, a, b, delta)


# --- gumbel_st / hard_st --------------------------------------------------

def gumbel_st_forward(logits: np.ndarray, rng: Optional[np.random.Generator] = None,
                      noise: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Select one gate per neuron by Gumbel-max.

    Args:
        logits: (k, 16)
        rng: Noise generator; one draw per neuron per call
        noise: Explicit noise (zeros give the argmax selection of hard_st)

    Returns:
        (selected GateIds (k,), soft_probs = softmax(logits + noise))
    """
    if noise is None:
        noise = rng.gumbel(size=logits.shape).astype(logits.dtype)
    perturbed = logits + noise
    return np.argmax(perturbed, axis=-1), softmax(perturbed)


def straight_through_backward(soft_probs: np.ndarray, selected: np.ndarray, a: np.ndarray,
                              b: np.ndarray, delta: np.ndarray):
    """Logit grads as if the forward were the soft_probs mixture; input grads through the selected gate."""
    G = _codebook(soft_probs.dtype)
    gate_grads = monomial_sums(delta, a, b) @ G.T
    dlogits = soft_probs * (gate_grads - np.sum(soft_probs * gate_grads, axis=-1, keepdims=True))
    return dlogits, input_grads(G[selected], a, b, delta)


# --- multilinear_ste ------------------------------------------------------

def ste_effective(c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(GateIds, snapped coefficients) for raw coefficient vectors."""
    ids, rows = snap(c)
    return ids, rows.astype(np.result_type(c.dtype, np.float32))


def ste_backward(c_hat: np.ndarray, basis: BasisSpec, a: np.ndarray, b: np.ndarray,
                 delta: np.ndarray):
    """Param grad = sum delta * psi~(a, b); input grads use the snapped coefficients."""
    return basis_sums(basis, delta, a, b), input_grads(c_hat, a, b, delta)


# --- multilinear_covjac ---------------------------------------------------

def covjac_effective(c: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Soft-VQ weights and coefficients.

    omega_j = softmax(-||c - G_j||^2 / tau), c_soft = sum_j omega_j G_j.
    """
    diff = c[..., None, :] - _codebook(np.result_type(c.dtype, np.float32))
    logits = -np.sum(diff * diff, axis=-1) / tau
    omega = softmax(logits)
    return omega, omega @ _codebook(omega.dtype)


def covjac_jacobian(omega: np.ndarray, tau: float) -> np.ndarray:
    """J = (2 / tau) Cov_omega(G), shape (..., 4, 4)."""
    G = _codebook(omega.dtype)
    centered = G - (omega @ G)[..., None, :]
    cov = np.einsum('...j,...jk,...jl->...kl', omega, centered, centered)
    return (2.0 / tau) * cov


def covjac_backward(omega: np.ndarray, tau: float, a: np.ndarray, b: np.ndarray,
                    c_soft: np.ndarray, delta: np.ndarray):
    """Param grad = J (sum delta * psi); input grads use c_soft."""
    jac = covjac_jacobian(omega, tau)
    grad = np.einsum('kij,kj->ki', jac, monomial_sums(delta, a, b))
    return grad, input_grads(c_soft, a, b, delta)


# --- factorial variants ---------------------------------------------------

def iwp_free_effective(raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-corner logistic squashing: s = sigmoid(raw), c = M s."""
    s = sigmoid(raw)
    return s, corner_to_poly(s)


def iwp_free_backward(s: np.ndarray, c_eff: np.ndarray, a, b, delta):
    # dL/ds = M^T (sum delta * psi) = sum delta * phi(a, b)
    ds = monomial_sums(delta, a, b) @ M.astype(s.dtype)
    return s * (1.0 - s) * ds, input_grads(c_eff, a, b, delta)


def iwp_ste_effective(raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Round each corner value to the nearest of {0, 1} (0.5 -> 0)."""
    bits = (raw > 0.5).astype(np.int64)
    ids = bits @ _BIT_WEIGHTS
    s_hat = bits.astype(np.result_type(raw.dtype, np.float32))
    return s_hat, ids, corner_to_poly(s_hat)


def iwp_ste_backward(c_eff: np.ndarray, a, b, delta):
    """Param grad = sum delta * phi(a, b): one active corner per binary sample."""
    return monomial_sums(delta, a, b) @ M.astype(c_eff.dtype), input_grads(c_eff, a, b, delta)


def multilinear_free_forward(c: np.ndarray, a, b) -> np.ndarray:
    """z = sigmoid(c^T psi(a, b)) with raw, unsnapped c."""
    return sigmoid(poly_eval(c, a, b))


def multilinear_free_backward(c: np.ndarray, z: np.ndarray, a, b, delta):
    delta_pre = delta * z * (1.0 - z)
    return monomial_sums(delta_pre, a, b), input_grads(c, a, b, delta_pre)


# --- per-method dispatch --------------------------------------------------

def continuous_coeffs(method: Method, raw: np.ndarray) -> np.ndarray:
    """The continuous coefficient vector a neuron currently represents."""
    if method in LOGIT_METHODS:
        return softmax(raw) @ _codebook(np.result_type(raw.dtype, np.float32))
    if method == Method.IWP_FREE:
        return corner_to_poly(sigmoid(raw))
    if method == Method.IWP_STE:
        return corner_to_poly(raw)
    return raw


def selection_weights(method: Method, raw: np.ndarray, tau: float) -> np.ndarray:
    """pi for logit methods, omega at tau from L2 distances for 4-parameter methods."""
    if method in LOGIT_METHODS:
        return softmax(raw)
    omega, _ = covjac_effective(continuous_coeffs(method, raw), tau)
    return omega


def hard_gate_ids(method: Method, raw: np.ndarray) -> np.ndarray:
    """Deployed GateId of every neuron in a layer."""
    if method in LOGIT_METHODS:
        # argmax returns the first maximum: ties go to the smallest GateId
        return np.argmax(raw, axis=-1)
    if method == Method.IWP_STE:
        return (raw > 0.5).astype(np.int64) @ _BIT_WEIGHTS
    if method == Method.IWP_FREE:
        return (raw > 0).astype(np.int64) @ _BIT_WEIGHTS
    if method == Method.MULTILINEAR_FREE:
        # corner bit set where sigmoid(c^T psi) > 0.5
        return (poly_to_corner(raw) > 0).astype(np.int64) @ _BIT_WEIGHTS
    ids, _ = snap(raw)
    return np.asarray(ids)


@dataclass
class LayerCache:
    """Forward quantities one layer's backward pass needs."""
    method: Method
    coeffs: np.ndarray
    a: np.ndarray
    b: np.ndarray
    tau: float = 1.0
    basis: BasisSpec = CANONICAL
    weights: Optional[np.ndarray] = None
    selected: Optional[np.ndarray] = None
    corners: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None
    extras: Dict = field(default_factory=dict)


def layer_forward(method: Method, raw: np.ndarray, a: np.ndarray, b: np.ndarray,
                  tau: float = 1.0, rng: Optional[np.random.Generator] = None,
                  basis: Optional[BasisSpec] = None) -> Tuple[np.ndarray, LayerCache]:
    """
    Train-mode forward of one layer.

    Args:
        method: Training mechanism
        raw: (k, P) raw parameters
        a, b: (B, k) wired inputs
        tau: Soft-VQ temperature
        rng: Gumbel noise generator (gumbel_st)
        basis: Backward basis (multilinear_ste)

    Returns:
        ((B, k) activations, cache for layer_backward)
    """
    basis = basis or CANONICAL
    cache = LayerCache(method=method, coeffs=None, a=a, b=b, tau=tau, basis=basis)

    if method == Method.SOFT_MIX:
        cache.weights, cache.coeffs = softmix_effective(raw)
    elif method in (Method.GUMBEL_ST, Method.HARD_ST):
        if method == Method.GUMBEL_ST:
            if rng is None:
                raise ValueError("gumbel_st forward needs a noise generator")
            selected, probs = gumbel_st_forward(raw, rng)
        else:
            selected, probs = gumbel_st_forward(raw, noise=np.zeros_like(raw))
        cache.selected, cache.weights = selected, probs
        cache.coeffs = _codebook(np.result_type(raw.dtype, np.float32))[selected]
    elif method == Method.MULTILINEAR_STE:
        cache.selected, cache.coeffs = ste_effective(raw)
    elif method == Method.MULTILINEAR_COVJAC:
        cache.weights, cache.coeffs = covjac_effective(raw, tau)
    elif method == Method.IWP_FREE:
        cache.corners, cache.coeffs = iwp_free_effective(raw)
    elif method == Method.IWP_STE:
        cache.corners, cache.selected, cache.coeffs = iwp_ste_effective(raw)
    elif method == Method.MULTILINEAR_FREE:
        cache.coeffs = raw
        cache.output = multilinear_free_forward(raw, a, b)
        return cache.output, cache
    else:
        raise ValueError(f"Unsupported method: {method}")

    z = poly_eval(cache.coeffs, a, b)
    return z, cache


def layer_backward(cache: LayerCache, delta: np.ndarray,
                   need_input_grads: bool = True):
    """
    Parameter and input gradients of one layer.

    Returns:
        ((k, P) parameter grads, da, db); da/db are None when not requested
    """
    method = cache.method
    a, b = cache.a, cache.b

    if method == Method.SOFT_MIX:
        grad, (da, db) = softmix_backward(cache.weights, a, b, delta)
    elif method in (Method.GUMBEL_ST, Method.HARD_ST):
        grad, (da, db) = straight_through_backward(cache.weights, cache.selected, a, b, delta)
    elif method == Method.MULTILINEAR_STE:
        grad, (da, db) = ste_backward(cache.coeffs, cache.basis, a, b, delta)
    elif method == Method.MULTILINEAR_COVJAC:
        grad, (da, db) = covjac_backward(cache.weights, cache.tau, a, b, cache.coeffs, delta)
    elif method == Method.IWP_FREE:
        grad, (da, db) = iwp_free_backward(cache.corners, cache.coeffs, a, b, delta)
    elif method == Method.IWP_STE:
        grad, (da, db) = iwp_ste_backward(cache.coeffs, a, b, delta)
    elif method == Method.MULTILINEAR_FREE:
        grad, (da, db) = multilinear_free_backward(cache.coeffs, cache.output, a, b, delta)
    else:
        raise ValueError(f"Unsupported method: {method}")

    if not need_input_grads:
        return grad, None, None
    return grad, da, db

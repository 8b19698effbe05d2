"""
optim.py

Softmax cross-entropy loss and the Adam optimizer over per-layer parameter
arrays.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean softmax cross-entropy over a batch.

    Args:
        logits: (B, C) class logits
        labels: (B,) integer class indices

    Returns:
        (mean loss, dlogits = (softmax - onehot) / B)
    """
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    batch = logits.shape[0]

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    return float(loss), dlogits / batch


@dataclass
class AdamState:
    """First/second moment buffers and hyperparameters, one buffer per layer."""
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: List[np.ndarray], **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,
        )

    def scalars(self) -> Dict:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}


def adam_step(state: AdamState, params: List[np.ndarray], grads: List[np.ndarray]) -> List[np.ndarray]:
    """
    One bias-corrected Adam update, in place.

    Args:
        state: Optimizer state (t is incremented)
        params: Per-layer parameter arrays, updated in place
        grads: Gradients shaped like params

    Returns:
        The updated params list
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("adam_step: params, grads and state must have one entry per layer")

    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t

    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} does not match param shape {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return params

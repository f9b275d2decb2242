"""Adam optimizer state and update step."""

from __future__ import annotations

import math

import numpy as np


class AdamState:
    """First/second moment accumulators plus the shared step counter.

    Defaults follow the usual (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    ``lr`` is mutable so a schedule can adjust it between steps.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> None:
    """One in-place Adam update.

    m_t = b1*m + (1-b1)*g; v_t = b2*v + (1-b2)*g^2; with bias correction
    m_hat = m_t/(1-b1^t), v_hat = v_t/(1-b2^t); then
    w <- w - lr * m_hat / (sqrt(v_hat) + eps).
    """
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def lr_at_epoch(initial_lr: float, epoch: int, halving_period: int) -> float:
    """Step schedule lr(epoch) = lr0 * 2^(-floor(epoch / period)), 0-indexed."""
    if halving_period <= 0:
        return initial_lr
    return initial_lr * math.pow(2.0, -(epoch // halving_period))

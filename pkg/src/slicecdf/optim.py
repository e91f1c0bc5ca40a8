"""First-order update rules: plain gradient descent and AdamW."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatchError, DomainError


def gd_step(params, grads, rho: float) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise DimensionMismatchError(f"params {params.shape} and grads {grads.shape} differ")
    return params - rho * grads


@dataclass(frozen=True)
class OptimizerState:
    """Optimizer hyperparameters plus AdamW moment buffers.

    ``kind`` is ``"gd"`` or ``"adamw"``. Moments are created lazily on the first
    AdamW step with the shape of the parameters.
    """

    kind: str = "gd"
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("gd", "adamw"):
            raise DomainError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise DomainError("step size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DomainError("betas must lie in [0, 1)")

    def step(self, params, grads) -> tuple["OptimizerState", np.ndarray]:
        if self.kind == "gd":
            return self, gd_step(params, grads, self.lr)
        return adamw_step(self, params, grads)


def adamw_step(state: OptimizerState, params, grads) -> tuple[OptimizerState, np.ndarray]:
    """One AdamW update with bias correction and decoupled weight decay."""
    if state.kind != "adamw":
        raise DomainError("adamw_step needs an AdamW optimizer state")
    p = np.asarray(params, dtype=float)
    g = np.asarray(grads, dtype=float)
    if p.shape != g.shape:
        raise DimensionMismatchError(f"params {p.shape} and grads {g.shape} differ")
    m = np.zeros_like(p) if state.m is None else state.m
    v = np.zeros_like(p) if state.v is None else state.v
    if m.shape != p.shape:
        raise DimensionMismatchError("optimizer moments do not match the parameter shape")
    t = state.t + 1
    m = state.beta1 * m + (1 - state.beta1) * g
    v = state.beta2 * v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new = p - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p)
    return replace(state, m=m, v=v, t=t), new

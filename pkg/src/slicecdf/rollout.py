"""Differentiable rollouts of discrete-time dynamics with reverse-mode gradients.

States and controls are batched along leading axes: a model's ``step`` maps
``(..., n_x)`` states and ``(..., n_u)`` controls to ``(..., n_x)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import SampleSet
from .errors import DimensionMismatchError, DomainError, RolloutDivergenceError


class DynamicsModel:
    """Base class. Subclasses set ``n_x``/``n_u`` and implement ``step``.

    ``jacobians`` defaults to central finite differences; override it when an
    analytic form is available.
    """

    n_x: int
    n_u: int
    name = "custom"
    fd_step = 1e-6

    def step(self, x, u):
        raise NotImplementedError

    def jacobians(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        A = np.empty(batch + (self.n_x, self.n_x))
        B = np.empty(batch + (self.n_x, self.n_u))
        h = self.fd_step
        for i in range(self.n_x):
            e = np.zeros(self.n_x)
            e[i] = h
            A[..., :, i] = (self.step(x + e, u) - self.step(x - e, u)) / (2 * h)
        for i in range(self.n_u):
            e = np.zeros(self.n_u)
            e[i] = h
            B[..., :, i] = (self.step(x, u + e) - self.step(x, u - e)) / (2 * h)
        return A, B


def unicycle_step(state, control, dt: float = 0.1):
    """Advance (x, y, heading) under (speed, turn rate) for one step of length ``dt``."""
    s = np.asarray(state, dtype=float)
    c = np.asarray(control, dtype=float)
    chi, psi, theta = s[..., 0], s[..., 1], s[..., 2]
    u1, u2 = c[..., 0], c[..., 1]
    return np.stack(
        [chi + u1 * dt * np.cos(theta), psi + u1 * dt * np.sin(theta), theta + u2 * dt], axis=-1
    )


class UnicycleModel(DynamicsModel):
    """Planar unicycle; the heading is left unwrapped."""

    n_x = 3
    n_u = 2
    name = "unicycle"

    def __init__(self, dt: float = 0.1):
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt}")
        self.dt = float(dt)

    def step(self, x, u):
        return unicycle_step(x, u, self.dt)

    def jacobians(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        theta = np.broadcast_to(x[..., 2], batch)
        u1 = np.broadcast_to(u[..., 0], batch)
        cos, sin = np.cos(theta), np.sin(theta)
        A = np.zeros(batch + (3, 3))
        A[..., 0, 0] = A[..., 1, 1] = A[..., 2, 2] = 1.0
        A[..., 0, 2] = -u1 * self.dt * sin
        A[..., 1, 2] = u1 * self.dt * cos
        B = np.zeros(batch + (3, 2))
        B[..., 0, 0] = self.dt * cos
        B[..., 1, 0] = self.dt * sin
        B[..., 2, 1] = self.dt
        return A, B


class SingleIntegrator(DynamicsModel):
    """x+ = x + dt * u in ``dim`` dimensions."""

    name = "single_integrator"

    def __init__(self, dim: int = 2, dt: float = 1.0):
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt}")
        self.n_x = self.n_u = int(dim)
        self.dt = float(dt)

    def step(self, x, u):
        return np.asarray(x, dtype=float) + self.dt * np.asarray(u, dtype=float)

    def jacobians(self, x, u):
        batch = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1])
        A = np.broadcast_to(np.eye(self.n_x), batch + (self.n_x, self.n_x)).copy()
        return A, self.dt * A.copy()


MODELS = {"unicycle": UnicycleModel, "single_integrator": SingleIntegrator}


@dataclass
class AffineController:
    """u = K x + b."""

    k_matrix: np.ndarray
    b_vector: np.ndarray

    def __post_init__(self):
        self.k_matrix = np.atleast_2d(np.asarray(self.k_matrix, dtype=float))
        self.b_vector = np.asarray(self.b_vector, dtype=float).reshape(-1)
        if self.k_matrix.shape[0] != self.b_vector.size:
            raise DimensionMismatchError("K has %d rows but b has %d entries" % (self.k_matrix.shape[0], self.b_vector.size))
        if not (np.all(np.isfinite(self.k_matrix)) and np.all(np.isfinite(self.b_vector))):
            raise DomainError("controller entries must be finite")

    @classmethod
    def zeros(cls, n_u: int, n_x: int) -> "AffineController":
        return cls(np.zeros((n_u, n_x)), np.zeros(n_u))

    def __call__(self, x):
        return x @ self.k_matrix.T + self.b_vector

    def to_json(self) -> dict:
        return {"K": self.k_matrix.tolist(), "b": self.b_vector.tolist()}


@dataclass
class RolloutTape:
    """Recorded forward pass.

    Closed-loop tapes hold ``states`` of shape ``(steps + 1, N, n_x)`` and
    ``controls`` of shape ``(steps, N, n_u)``. Open-loop tapes drop the sample
    axis: ``(T + 2, n_x)`` and ``(T + 1, n_u)``.
    """

    states: np.ndarray
    controls: np.ndarray
    model: DynamicsModel
    controller: AffineController | None = field(default=None)

    @property
    def final_states(self) -> np.ndarray:
        return self.states[-1]


def _check_finite(x, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise RolloutDivergenceError(step)


def rollout_closed_loop(model: DynamicsModel, controller: AffineController, initial_states,
                        steps: int) -> RolloutTape:
    if steps < 1:
        raise DomainError("steps must be >= 1")
    x = initial_states.points if isinstance(initial_states, SampleSet) else np.atleast_2d(
        np.asarray(initial_states, dtype=float))
    if x.shape[1] != model.n_x or controller.k_matrix.shape != (model.n_u, model.n_x):
        raise DimensionMismatchError("initial states, controller and model dimensions disagree")
    states = np.empty((steps + 1,) + x.shape)
    controls = np.empty((steps, x.shape[0], model.n_u))
    states[0] = x
    for t in range(steps):
        u = controller(states[t])
        controls[t] = u
        states[t + 1] = model.step(states[t], u)
        _check_finite(states[t + 1], t + 1)
    return RolloutTape(states, controls, model, controller)


def rollout_open_loop(model: DynamicsModel, controls, initial_state) -> RolloutTape:
    U = np.atleast_2d(np.asarray(controls, dtype=float))
    x0 = np.asarray(initial_state, dtype=float).reshape(-1)
    if U.shape[1] != model.n_u or x0.size != model.n_x:
        raise DimensionMismatchError("controls, initial state and model dimensions disagree")
    states = np.empty((U.shape[0] + 1, model.n_x))
    states[0] = x0
    for t in range(U.shape[0]):
        states[t + 1] = model.step(states[t], U[t])
        _check_finite(states[t + 1], t + 1)
    return RolloutTape(states, U, model)


def backward_controller(tape: RolloutTape, loss_grad_final) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of a loss on the final states with respect to (K, b), summed over samples."""
    if tape.controller is None or tape.states.ndim != 3:
        raise DimensionMismatchError("backward_controller needs a closed-loop tape")
    lam = np.asarray(loss_grad_final, dtype=float)
    if lam.shape != tape.states.shape[1:]:
        raise DimensionMismatchError(f"upstream gradient shape {lam.shape} != {tape.states.shape[1:]}")
    K = tape.controller.k_matrix
    grad_K = np.zeros_like(K)
    grad_b = np.zeros(K.shape[0])
    for t in range(tape.controls.shape[0] - 1, -1, -1):
        x = tape.states[t]
        A, B = tape.model.jacobians(x, tape.controls[t])
        mu = np.einsum("nij,ni->nj", B, lam)  # dL/du_t per sample
        grad_b += mu.sum(axis=0)
        grad_K += mu.T @ x
        lam = np.einsum("nij,ni->nj", A, lam) + mu @ K
    return grad_K, grad_b


def backward_controls(tape: RolloutTape, loss_grads_states) -> np.ndarray:
    """Backpropagate per-state gradients ``(T + 2, n_x)`` to the controls ``(T + 1, n_u)``."""
    g = np.asarray(loss_grads_states, dtype=float)
    if tape.states.ndim != 2 or g.shape != tape.states.shape:
        raise DimensionMismatchError(f"expected upstream gradients of shape {tape.states.shape}, got {g.shape}")
    A, B = tape.model.jacobians(tape.states[:-1], tape.controls)
    grads = np.empty_like(tape.controls)
    lam = g[-1].copy()
    for t in range(tape.controls.shape[0] - 1, -1, -1):
        grads[t] = B[t].T @ lam
        lam = g[t] + A[t].T @ lam
    return grads


def write_trajectory_csv(path, states) -> None:
    """Rows ``step, sample_id, state components``; accepts ``(steps, n_x)`` or ``(steps, N, n_x)``."""
    S = np.asarray(states, dtype=float)
    if S.ndim == 2:
        S = S[:, None, :]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "sample_id"] + [f"x{i}" for i in range(S.shape[2])])
        for t in range(S.shape[0]):
            for i in range(S.shape[1]):
                w.writerow([t, i] + [repr(float(v)) for v in S[t, i]])

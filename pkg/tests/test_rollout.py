import csv
import math

import numpy as np
import pytest

from slicecdf.core import SampleSet
from slicecdf.errors import DimensionMismatchError, RolloutDivergenceError
from slicecdf.mixtures import GaussianMixture
from slicecdf.rollout import (
    AffineController,
    DynamicsModel,
    SingleIntegrator,
    UnicycleModel,
    backward_controller,
    backward_controls,
    rollout_closed_loop,
    rollout_open_loop,
    unicycle_step,
    write_trajectory_csv,
)
from slicecdf.sliced import SmoothingConfig, build_slice_plan, smooth_distance, smooth_distance_gradient


class Pendulum(DynamicsModel):
    """User model without analytic jacobians."""

    n_x, n_u = 2, 1

    def step(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.stack([x[..., 0] + 0.1 * x[..., 1], x[..., 1] - 0.1 * np.sin(x[..., 0]) + 0.1 * u[..., 0]], axis=-1)


def test_unicycle_step_examples():
    assert np.allclose(unicycle_step((0, 0, 0), (1, 0), 0.1), (0.1, 0, 0), atol=1e-15)
    assert np.allclose(unicycle_step((0, 0, 0), (0, 1), 0.1), (0, 0, 0.1), atol=1e-15)
    assert np.allclose(unicycle_step((0, 0, math.pi / 2), (1, 0), 0.1), (0, 0.1, math.pi / 2), atol=1e-12)


@pytest.mark.parametrize("model", [UnicycleModel(0.1), SingleIntegrator(3, 0.5), Pendulum()])
def test_jacobians_match_finite_differences(model):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, model.n_x))
    u = rng.normal(size=(8, model.n_u))
    A, B = model.jacobians(x, u)
    h = 1e-6
    for i in range(model.n_x):
        e = np.zeros(model.n_x)
        e[i] = h
        fd = (model.step(x + e, u) - model.step(x - e, u)) / (2 * h)
        assert np.allclose(A[..., i], fd, rtol=1e-5, atol=1e-8)
    for i in range(model.n_u):
        e = np.zeros(model.n_u)
        e[i] = h
        fd = (model.step(x, u + e) - model.step(x, u - e)) / (2 * h)
        assert np.allclose(B[..., i], fd, rtol=1e-5, atol=1e-8)


def test_zero_controller_fixed_point():
    x0 = SampleSet(np.random.default_rng(1).normal(size=(10, 2)))
    tape = rollout_closed_loop(SingleIntegrator(2), AffineController.zeros(2, 2), x0, 5)
    assert np.all(tape.states == x0.points)


def test_single_step_rollout():
    model = UnicycleModel()
    x0 = np.random.default_rng(2).normal(size=(4, 3))
    ctrl = AffineController(np.full((2, 3), 0.1), [0.5, -0.2])
    tape = rollout_closed_loop(model, ctrl, x0, 1)
    assert np.array_equal(tape.final_states, model.step(x0, ctrl(x0)))


def test_straight_line_rollout():
    ctrl = AffineController(np.zeros((2, 3)), [1.0, 0.0])
    tape = rollout_closed_loop(UnicycleModel(0.1), ctrl, np.zeros((1, 3)), 25)
    assert np.allclose(tape.final_states[0], [2.5, 0.0, 0.0], atol=1e-12)
    open_tape = rollout_open_loop(UnicycleModel(0.1), np.tile([1.0, 0.0], (25, 1)), [0.0, 0.0, 0.0])
    assert np.allclose(open_tape.states, tape.states[:, 0, :], atol=0)


def test_open_loop_base_cases():
    model = UnicycleModel()
    tape = rollout_open_loop(model, np.zeros((7, 2)), [1.0, 2.0, 0.3])
    assert np.all(tape.states == [1.0, 2.0, 0.3])
    assert rollout_open_loop(model, [[1.0, 0.5]], [0, 0, 0]).states.shape == (2, 3)


def test_tape_replay_is_exact():
    model = UnicycleModel()
    rng = np.random.default_rng(3)
    tape = rollout_closed_loop(model, AffineController(rng.normal(size=(2, 3)) * 0.1, rng.normal(size=2)),
                               rng.normal(size=(6, 3)), 12)
    for t in range(12):
        assert np.array_equal(tape.states[t + 1], model.step(tape.states[t], tape.controls[t]))


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_divergence_names_step():
    ctrl = AffineController(np.eye(2) * 1e300, [0.0, 0.0])
    with pytest.raises(RolloutDivergenceError) as info:
        rollout_closed_loop(SingleIntegrator(2), ctrl, np.ones((1, 2)), 10)
    assert info.value.step == 2
    assert "step 2" in str(info.value)


def test_backward_controller_zero_upstream():
    rng = np.random.default_rng(4)
    tape = rollout_closed_loop(UnicycleModel(), AffineController(rng.normal(size=(2, 3)), rng.normal(size=2)),
                               rng.normal(size=(5, 3)), 4)
    gK, gb = backward_controller(tape, np.zeros((5, 3)))
    assert not gK.any() and not gb.any()


def test_backward_controller_single_integrator_closed_form():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(7, 2))
    K, b = rng.normal(size=(2, 2)), rng.normal(size=2)
    tape = rollout_closed_loop(SingleIntegrator(2, 1.0), AffineController(K, b), x, 1)
    x_next = tape.final_states  # loss = sum 0.5 |x+|^2 -> upstream gradient x+
    gK, gb = backward_controller(tape, x_next)
    resid = x + x @ K.T + b
    assert np.allclose(gb, resid.sum(axis=0), atol=1e-12)
    assert np.allclose(gK, resid.T @ x, atol=1e-12)


def test_backward_controller_shape_check():
    tape = rollout_closed_loop(SingleIntegrator(2), AffineController.zeros(2, 2), np.zeros((3, 2)), 2)
    with pytest.raises(DimensionMismatchError):
        backward_controller(tape, np.zeros((4, 2)))


def closed_loop_fd_check(seed, steps=6, N=5):
    rng = np.random.default_rng(seed)
    model = UnicycleModel(0.1)
    x0 = rng.normal(size=(N, 3))
    K, b = 0.3 * rng.normal(size=(2, 3)), rng.normal(size=2)
    W = rng.normal(size=(N, 3))

    def loss(K_, b_):
        return np.sum(W * rollout_closed_loop(model, AffineController(K_, b_), x0, steps).final_states)

    gK, gb = backward_controller(rollout_closed_loop(model, AffineController(K, b), x0, steps), W)
    h = 1e-6
    fdK = np.zeros_like(K)
    for idx in np.ndindex(*K.shape):
        Kp, Km = K.copy(), K.copy()
        Kp[idx] += h
        Km[idx] -= h
        fdK[idx] = (loss(Kp, b) - loss(Km, b)) / (2 * h)
    fdb = np.array([(loss(K, b + h * e) - loss(K, b - h * e)) / (2 * h) for e in np.eye(2)])
    return np.concatenate([gK.ravel(), gb]), np.concatenate([fdK.ravel(), fdb])


@pytest.mark.parametrize("seed", range(5))
def test_backward_controller_finite_differences(seed):
    g, fd = closed_loop_fd_check(seed)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-8)) < 1e-4


def test_backward_controls_zero_and_closed_form():
    model = SingleIntegrator(2, 1.0)
    U = np.array([[0.5, -1.0], [2.0, 0.3]])
    x0 = np.array([1.0, 1.0])
    tape = rollout_open_loop(model, U, x0)
    assert not backward_controls(tape, np.zeros((3, 2))).any()
    x2 = tape.states[2]
    g = np.zeros((3, 2))
    g[2] = x2  # loss 0.5 |x_2|^2
    grads = backward_controls(tape, g)
    assert np.allclose(grads, [x2, x2])


def test_backward_passes_are_linear():
    rng = np.random.default_rng(6)
    model = UnicycleModel()
    tape = rollout_open_loop(model, rng.normal(size=(9, 2)), [0.0, 0.0, 0.0])
    g = rng.normal(size=(10, 3))
    assert np.allclose(backward_controls(tape, 3.7 * g), 3.7 * backward_controls(tape, g), rtol=1e-14, atol=0)
    ctape = rollout_closed_loop(model, AffineController(rng.normal(size=(2, 3)), [0.1, 0.2]), rng.normal(size=(4, 3)), 5)
    G = rng.normal(size=(4, 3))
    a = backward_controller(ctape, -2.5 * G)
    b = backward_controller(ctape, G)
    assert np.allclose(a[0], -2.5 * b[0], rtol=1e-13) and np.allclose(a[1], -2.5 * b[1], rtol=1e-13)


def open_loop_fd_check(seed, T=10):
    """Gradient of a smooth trajectory-vs-target distance with respect to the controls."""
    rng = np.random.default_rng(seed)
    model = UnicycleModel(0.1)
    U = rng.normal(size=(T + 1, 2)) * 2
    gmm = GaussianMixture([0.5, 0.5], [[0.5, 0.2], [-0.3, -0.1]], [0.2 * np.eye(2), 0.1 * np.eye(2)])
    plan = build_slice_plan(rng, 6, 8, "target-grid", gmm)
    cfg = SmoothingConfig(10.0)

    def loss(U_):
        return smooth_distance(SampleSet(rollout_open_loop(model, U_, [0, 0, 0]).states[:, :2]), gmm, plan, cfg)

    tape = rollout_open_loop(model, U, [0.0, 0.0, 0.0])
    _, gpos = smooth_distance_gradient(SampleSet(tape.states[:, :2]), gmm, plan, cfg)
    g = backward_controls(tape, np.pad(gpos, ((0, 0), (0, 1))))
    h = 1e-6
    fd = np.zeros_like(U)
    for idx in np.ndindex(*U.shape):
        Up, Um = U.copy(), U.copy()
        Up[idx] += h
        Um[idx] -= h
        fd[idx] = (loss(Up) - loss(Um)) / (2 * h)
    return g, fd


@pytest.mark.parametrize("seed", range(3))
def test_backward_controls_finite_differences(seed):
    g, fd = open_loop_fd_check(seed)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-8)) < 1e-4


def test_trajectory_csv(tmp_path):
    states = np.arange(12, dtype=float).reshape(2, 2, 3)
    write_trajectory_csv(tmp_path / "t.csv", states)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["step", "sample_id", "x0", "x1", "x2"]
    assert rows[1:] == [["0", "0", "0.0", "1.0", "2.0"], ["0", "1", "3.0", "4.0", "5.0"],
                        ["1", "0", "6.0", "7.0", "8.0"], ["1", "1", "9.0", "10.0", "11.0"]]

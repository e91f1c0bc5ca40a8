"""Receding-horizon distribution steering and ergodic trajectory optimisation."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import substream
from .core import SampleSet
from .errors import ConfigError, MalformedInputError
from .mixtures import GaussianMixture
from .optim import OptimizerState
from .rollout import (
    MODELS,
    AffineController,
    DynamicsModel,
    backward_controller,
    backward_controls,
    rollout_closed_loop,
    rollout_open_loop,
    write_trajectory_csv,
)
from .sliced import SmoothingConfig, ThresholdRule, build_slice_plan, hard_distance, smooth_distance_gradient

log = logging.getLogger(__name__)

# Stand-in two-component target for the ergodic task; not taken from published values.
DEFAULT_ERGODIC_TARGET = GaussianMixture([0.5, 0.5], [[2.0, 1.0], [-2.0, -1.0]], [np.eye(2), np.eye(2)])


@dataclass
class ObservationMap:
    """Select state coordinates that enter the distance (default: planar position)."""

    indices: tuple[int, ...] = (0, 1)

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return states[..., list(self.indices)]

    def pad(self, grad: np.ndarray, n_x: int) -> np.ndarray:
        """Lift a gradient on observations back to state space, zeros elsewhere."""
        out = np.zeros(grad.shape[:-1] + (n_x,))
        out[..., list(self.indices)] = grad
        return out


def make_model(name: str, dt: float, dim: int = 2) -> DynamicsModel:
    if name not in MODELS:
        raise ConfigError(f"unknown dynamics model {name!r}; available: {', '.join(sorted(MODELS))}")
    if name == "single_integrator":
        return MODELS[name](dim=dim, dt=dt)
    return MODELS[name](dt=dt)


# --------------------------------------------------------------------------- #
# configuration parsing
# --------------------------------------------------------------------------- #


def _mixture(value, name: str) -> GaussianMixture:
    if isinstance(value, GaussianMixture):
        return value
    try:
        return GaussianMixture.from_json(value)
    except (MalformedInputError, ValueError, TypeError) as exc:
        raise ConfigError(f"field {name!r}: {exc}") from exc


def _build(cls, payload: dict, mixtures: tuple[str, ...] = ()):
    if not isinstance(payload, dict):
        raise ConfigError("configuration must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    kwargs = {}
    for name, f in fields.items():
        if name in payload:
            value = payload[name]
            kwargs[name] = _mixture(value, name) if name in mixtures and value is not None else value
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"missing required config field {name!r}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _config_json(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, GaussianMixture):
            v = v.to_json()
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


# --------------------------------------------------------------------------- #
# distribution steering
# --------------------------------------------------------------------------- #


@dataclass
class SteeringConfig:
    """Receding-horizon steering setup. ``mu_start`` and ``target`` are position distributions."""

    mu_start: GaussianMixture
    target: GaussianMixture
    seed: int
    model: str = "unicycle"
    dt: float = 0.1
    n_samples: int = 3000
    horizon: int = 25
    replan_interval: int = 20
    duration: int = 200
    train_h: int = 50
    train_n_values: int = 50
    eval_h: int = 300
    eval_n_values: int = 100
    inner_iterations: int = 50
    step_size: float = 0.05
    optimizer: str = "gd"
    weight_decay: float = 0.0
    smoothing_v: float = 100.0
    observe: tuple[int, ...] = (0, 1)

    def __post_init__(self):
        self.observe = tuple(int(i) for i in self.observe)
        if not self.horizon >= self.replan_interval >= 1:
            raise ConfigError("need horizon >= replan_interval >= 1")
        if self.n_samples < 1 or self.duration < 1 or self.inner_iterations < 0:
            raise ConfigError("n_samples and duration must be >= 1, inner_iterations >= 0")
        if self.mu_start.n != len(self.observe) or self.target.n != len(self.observe):
            raise ConfigError("mu_start and target must live in the observed coordinates")

    @classmethod
    def from_dict(cls, payload: dict) -> "SteeringConfig":
        return _build(cls, payload, mixtures=("mu_start", "target"))

    def to_dict(self) -> dict:
        return _config_json(self)


@dataclass
class SteeringReport:
    distances: np.ndarray  # eval distance at every executed step, including step 0
    controllers: list[AffineController]
    states: np.ndarray  # (duration + 1, N, n_x)
    train_losses: list[list[float]] = field(default_factory=list)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        write_distances_csv(out / "distances.csv", self.distances, "step")
        write_trajectory_csv(out / "trajectory.csv", self.states)
        (out / "controller.json").write_text(json.dumps(
            {"replans": [c.to_json() for c in self.controllers]}, indent=1))


def _initial_states(model: DynamicsModel, positions: np.ndarray, obs: ObservationMap) -> np.ndarray:
    x = np.zeros((positions.shape[0], model.n_x))  # unobserved coordinates (heading) start at 0
    x[:, list(obs.indices)] = positions
    return x


def steer(config: SteeringConfig, threads: int = 1) -> SteeringReport:
    """Repeatedly optimise an affine controller over a lookahead and execute it.

    Every ``replan_interval`` steps the controller ``(K, b)`` is improved by
    ``inner_iterations`` gradient steps on the smooth distance between the
    observed states after a ``horizon``-step rollout and the target, using a
    freshly drawn training plan. The evaluation distance uses a separate plan
    frozen for the whole run.
    """
    obs = ObservationMap(config.observe)
    model = make_model(config.model, config.dt, dim=len(obs.indices))
    seed = config.seed
    start = config.mu_start.sample(config.n_samples, substream(seed, "sampling", "start"))
    x = _initial_states(model, start.points, obs)
    eval_plan = build_slice_plan(substream(seed, "directions", "eval"), config.eval_h, config.eval_n_values,
                                 ThresholdRule.TARGET_PERCENTILE_GRID, config.target)
    smoothing = SmoothingConfig(config.smoothing_v)

    def evaluate(states):
        return hard_distance(SampleSet(obs(states)), config.target, eval_plan, threads=threads)

    controller = AffineController.zeros(model.n_u, model.n_x)
    distances = [evaluate(x)]
    states = [x]
    controllers = []
    losses = []
    t = 0
    replan = 0
    while t < config.duration:
        plan = build_slice_plan(substream(seed, "directions", "train", replan), config.train_h,
                                config.train_n_values, ThresholdRule.TARGET_PERCENTILE_GRID, config.target)
        opt = OptimizerState(config.optimizer, config.step_size, weight_decay=config.weight_decay)
        params = np.concatenate([controller.k_matrix.ravel(), controller.b_vector])
        run_losses = []
        for _ in range(config.inner_iterations):
            tape = rollout_closed_loop(model, controller, x, config.horizon)
            value, g_obs = smooth_distance_gradient(SampleSet(obs(tape.final_states)), config.target, plan,
                                                    smoothing, threads=threads)
            gK, gb = backward_controller(tape, obs.pad(g_obs, model.n_x))
            opt, params = opt.step(params, np.concatenate([gK.ravel(), gb]))
            controller = AffineController(params[: gK.size].reshape(gK.shape), params[gK.size:])
            run_losses.append(value)
        losses.append(run_losses)
        controllers.append(controller)
        log.info("replan %d at step %d: train loss %s", replan, t, run_losses[-1] if run_losses else None)

        n_exec = min(config.replan_interval, config.duration - t)
        tape = rollout_closed_loop(model, controller, x, n_exec)
        for k in range(1, n_exec + 1):
            states.append(tape.states[k])
            distances.append(evaluate(tape.states[k]))
        x = tape.final_states
        t += n_exec
        replan += 1
    return SteeringReport(np.asarray(distances), controllers, np.stack(states), losses)


# --------------------------------------------------------------------------- #
# ergodic control
# --------------------------------------------------------------------------- #


@dataclass
class ErgodicConfig:
    """Open-loop ergodic trajectory setup; the trajectory x_0..x_{T+1} is the sample set."""

    seed: int
    target: GaussianMixture = field(default_factory=lambda: DEFAULT_ERGODIC_TARGET)
    model: str = "unicycle"
    dt: float = 0.1
    x0: tuple[float, ...] = (0.0, 0.0, 0.0)
    horizon: int = 5000
    train_h: int = 50
    train_n_values: int = 400
    eval_h: int = 400
    eval_n_values: int = 400
    iterations: int = 500
    optimizer: str = "adamw"
    step_size: float = 0.01
    weight_decay: float = 0.0
    smoothing_v: float = 100.0
    init_noise: float = 0.01
    resample_plan: bool = True
    observe: tuple[int, ...] = (0, 1)

    def __post_init__(self):
        self.observe = tuple(int(i) for i in self.observe)
        self.x0 = tuple(float(v) for v in self.x0)
        if self.horizon < 1:
            raise ConfigError("horizon T must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.target.n != len(self.observe):
            raise ConfigError("target must live in the observed coordinates")

    @classmethod
    def from_dict(cls, payload: dict) -> "ErgodicConfig":
        return _build(cls, payload, mixtures=("target",))

    def to_dict(self) -> dict:
        return _config_json(self)


@dataclass
class ErgodicReport:
    distances: np.ndarray  # eval distance before each update and after the last one
    controls: np.ndarray  # (T + 1, n_u)
    states: np.ndarray  # (T + 2, n_x)
    train_losses: list[float] = field(default_factory=list)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        write_distances_csv(out / "distances.csv", self.distances, "iteration")
        write_trajectory_csv(out / "trajectory.csv", self.states)
        with open(out / "controls.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + [f"u{i}" for i in range(self.controls.shape[1])])
            for t, u in enumerate(self.controls):
                w.writerow([t] + [repr(float(v)) for v in u])


def ergodic(config: ErgodicConfig, threads: int = 1) -> ErgodicReport:
    """Optimise an open-loop control sequence so the visited positions match the target."""
    obs = ObservationMap(config.observe)
    model = make_model(config.model, config.dt, dim=len(obs.indices))
    if len(config.x0) != model.n_x:
        raise ConfigError(f"x0 has {len(config.x0)} entries, model state has {model.n_x}")
    seed = config.seed
    controls = config.init_noise * substream(seed, "sampling", "init").standard_normal(
        (config.horizon + 1, model.n_u))
    eval_plan = build_slice_plan(substream(seed, "directions", "eval"), config.eval_h, config.eval_n_values,
                                 ThresholdRule.TARGET_PERCENTILE_GRID, config.target)
    smoothing = SmoothingConfig(config.smoothing_v)
    opt = OptimizerState(config.optimizer, config.step_size, weight_decay=config.weight_decay)
    plan = None
    distances = []
    losses = []
    for it in range(config.iterations + 1):
        tape = rollout_open_loop(model, controls, config.x0)
        positions = SampleSet(obs(tape.states))
        distances.append(hard_distance(positions, config.target, eval_plan, threads=threads))
        if it == config.iterations:
            break
        if plan is None or config.resample_plan:
            plan = build_slice_plan(substream(seed, "directions", "train", it), config.train_h,
                                    config.train_n_values, ThresholdRule.TARGET_PERCENTILE_GRID, config.target)
        value, g_obs = smooth_distance_gradient(positions, config.target, plan, smoothing, threads=threads)
        losses.append(value)
        grads = backward_controls(tape, obs.pad(g_obs, model.n_x))
        opt, controls = opt.step(controls, grads)
        if it % 50 == 0:
            log.info("ergodic iteration %d: eval %.4f train %.4f", it, distances[-1], value)
    return ErgodicReport(np.asarray(distances), controls, tape.states, losses)


def write_distances_csv(path, values, index_name: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([index_name, "distance"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])

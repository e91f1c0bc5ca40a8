"""Half-space distance estimate between samples and a target, plus its smooth relaxation.

The estimate averages ``|P_X(q^T x >= b) - P_Y(q^T y >= b)|`` over a frozen
plan of directions ``q_k`` and thresholds ``b_kj``. Work is split into fixed
chunks of directions so results are bit-identical for any worker count.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import expit

from ._rng import as_generator
from .core import SampleSet, sample_directions
from .errors import DimensionMismatchError, DomainError, MalformedInputError
from .mixtures import GaussianMixture

CHUNK = 16
DEFAULT_SHARPNESS = 100.0
PERCENTILE_LO = 0.005
PERCENTILE_HI = 0.995


class ThresholdRule(str, Enum):
    SAMPLE_QUANTILES = "sample-quantiles"
    TARGET_PERCENTILE_GRID = "target-grid"
    EXPLICIT = "explicit"


@dataclass(frozen=True, eq=False)
class SlicePlan:
    """Frozen directions ``(H, n)`` and per-direction thresholds ``(H, n_values)``."""

    directions: np.ndarray
    thresholds: np.ndarray
    threshold_rule: ThresholdRule = ThresholdRule.EXPLICIT

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.directions, dtype=float))
        B = np.atleast_2d(np.asarray(self.thresholds, dtype=float))
        if Q.shape[0] < 1 or B.shape[1] < 1:
            raise DomainError("a plan needs H >= 1 and n_values >= 1")
        if B.shape[0] != Q.shape[0]:
            raise DimensionMismatchError(f"{Q.shape[0]} directions but {B.shape[0]} threshold rows")
        if np.any(np.abs(np.linalg.norm(Q, axis=1) - 1.0) > 1e-12):
            raise DomainError("plan directions must be unit norm")
        if not np.all(np.isfinite(B)):
            raise DomainError("thresholds must be finite")
        if np.any(np.diff(B, axis=1) < 0):
            raise DomainError("thresholds must be nondecreasing within a slice")
        Q.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "directions", Q)
        object.__setattr__(self, "thresholds", B)
        object.__setattr__(self, "threshold_rule", ThresholdRule(self.threshold_rule))

    @property
    def h(self) -> int:
        return self.directions.shape[0]

    @property
    def n_values(self) -> int:
        return self.thresholds.shape[1]

    @property
    def n(self) -> int:
        return self.directions.shape[1]

    def to_json(self) -> dict:
        return {
            "threshold_rule": self.threshold_rule.value,
            "directions": self.directions.tolist(),
            "thresholds": self.thresholds.tolist(),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SlicePlan":
        try:
            return cls(payload["directions"], payload["thresholds"], payload.get("threshold_rule", "explicit"))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedInputError(f"invalid slice plan JSON: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "SlicePlan":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SmoothingConfig:
    v: float = DEFAULT_SHARPNESS
    enabled: bool = True

    def __post_init__(self):
        if not self.v > 0:
            raise DomainError(f"sharpness v must be positive, got {self.v}")


def build_slice_plan(rng, h: int, n_values: int, threshold_rule, context=None, n: int | None = None,
                     thresholds=None) -> SlicePlan:
    """Draw ``h`` uniform directions and choose ``n_values`` thresholds for each.

    ``sample-quantiles`` takes the empirical quantiles of the projected
    ``context`` samples at probabilities ``(j - 0.5) / n_values``;
    ``target-grid`` spaces thresholds evenly between the 0.5th and 99.5th
    percentiles of the projected ``context`` mixture; ``explicit`` uses the
    given ``thresholds`` (a row shared by all directions, or one row each).
    """
    if h < 1 or n_values < 1:
        raise DomainError("h and n_values must be >= 1")
    rule = ThresholdRule(threshold_rule)
    if n is None:
        if context is None:
            raise DomainError("dimension n is required when no context is given")
        n = context.n
    elif context is not None and context.n != n:
        raise DimensionMismatchError(f"context dimension {context.n} != n={n}")
    Q = sample_directions(as_generator(rng), n, h)

    if rule is ThresholdRule.SAMPLE_QUANTILES:
        if not isinstance(context, SampleSet):
            raise DomainError("sample-quantiles thresholds need a non-empty sample set")
        probs = (np.arange(1, n_values + 1) - 0.5) / n_values
        proj = context.points @ Q.T
        B = np.quantile(proj, probs, axis=0, method="inverted_cdf").T
    elif rule is ThresholdRule.TARGET_PERCENTILE_GRID:
        if not isinstance(context, GaussianMixture):
            raise DomainError("target-grid thresholds need a Gaussian mixture")
        ends = context.quantiles(Q, [PERCENTILE_LO, PERCENTILE_HI])
        frac = np.linspace(0.0, 1.0, n_values)
        B = ends[:, :1] + (ends[:, 1:] - ends[:, :1]) * frac
    else:
        if thresholds is None:
            raise DomainError("explicit rule needs thresholds")
        B = np.asarray(thresholds, dtype=float)
        B = np.broadcast_to(B, (h, n_values)) if B.ndim == 1 else B
    return SlicePlan(Q, np.sort(B, axis=1), rule)


# --------------------------------------------------------------------------- #
# evaluation
# --------------------------------------------------------------------------- #


def _check_dims(samples: SampleSet, other, plan: SlicePlan) -> None:
    if samples.n != plan.n:
        raise DimensionMismatchError(f"samples have dimension {samples.n}, plan has {plan.n}")
    if other.n != plan.n:
        raise DimensionMismatchError(f"target has dimension {other.n}, plan has {plan.n}")


def _tail_probabilities(target, Q: np.ndarray, B: np.ndarray) -> np.ndarray:
    if isinstance(target, GaussianMixture):
        return target.upper_tail(Q, B)
    proj = target.points @ Q.T
    return (proj[:, :, None] >= B[None, :, :]).mean(axis=0)


def _chunks(h: int):
    return [slice(s, min(s + CHUNK, h)) for s in range(0, h, CHUNK)]


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _hard(samples: SampleSet, target, plan: SlicePlan, threads: int) -> float:
    _check_dims(samples, target, plan)
    X = samples.points

    def chunk(sl):
        Q, B = plan.directions[sl], plan.thresholds[sl]
        proj = X @ Q.T
        p_samples = (proj[:, :, None] >= B[None, :, :]).mean(axis=0)
        return np.abs(p_samples - _tail_probabilities(target, Q, B)).sum(axis=1)

    per_slice = np.concatenate(_map(chunk, _chunks(plan.h), threads))
    return float(per_slice.sum() / (plan.h * plan.n_values))


def hard_distance(samples: SampleSet, target: GaussianMixture, plan: SlicePlan, threads: int = 1) -> float:
    """Mean absolute gap between sample and target half-space probabilities, in [0, 1]."""
    return _hard(samples, target, plan, threads)


def hard_distance_two_sample(a: SampleSet, b: SampleSet, plan: SlicePlan, threads: int = 1) -> float:
    """Two-sample variant; the target probabilities are frequencies over ``b``."""
    return _hard(a, b, plan, threads)


def _smooth(samples: SampleSet, target, plan: SlicePlan, v: float, threads: int, with_grad: bool):
    _check_dims(samples, target, plan)
    X = samples.points
    N = X.shape[0]
    scale = 1.0 / (plan.h * plan.n_values)

    def chunk(sl):
        Q, B = plan.directions[sl], plan.thresholds[sl]
        S = expit(v * ((X @ Q.T)[:, :, None] - B[None, :, :]))  # (N, c, m)
        diff = S.mean(axis=0) - _tail_probabilities(target, Q, B)
        per_slice = np.abs(diff).sum(axis=1)
        if not with_grad:
            return per_slice, None
        coef = np.sign(diff) * (scale * v / N)  # sign(0) = 0
        G = np.einsum("ikj,kj->ik", S * (1.0 - S), coef)
        return per_slice, G @ Q

    parts = _map(chunk, _chunks(plan.h), threads)
    value = float(np.concatenate([p[0] for p in parts]).sum() * scale)
    if not with_grad:
        return value
    grad = np.zeros_like(X)
    for _, g in parts:
        grad += g
    return value, grad


def smooth_distance(samples: SampleSet, target: GaussianMixture, plan: SlicePlan,
                    smoothing: SmoothingConfig | None = None, threads: int = 1) -> float:
    """Distance with each sample indicator replaced by ``sigmoid(v * (q^T x - b))``."""
    smoothing = smoothing or SmoothingConfig()
    return _smooth(samples, target, plan, smoothing.v, threads, with_grad=False)


def smooth_distance_gradient(samples: SampleSet, target: GaussianMixture, plan: SlicePlan,
                             smoothing: SmoothingConfig | None = None,
                             threads: int = 1) -> tuple[float, np.ndarray]:
    """Smooth distance and its gradient with respect to every sample, shape ``(N, n)``."""
    smoothing = smoothing or SmoothingConfig()
    return _smooth(samples, target, plan, smoothing.v, threads, with_grad=True)


def distance(samples: SampleSet, target, plan: SlicePlan, smoothing: SmoothingConfig | None = None,
             threads: int = 1) -> float:
    """Dispatch on ``smoothing.enabled``; ``target`` may be a mixture or a sample set."""
    if smoothing is not None and smoothing.enabled:
        return _smooth(samples, target, plan, smoothing.v, threads, with_grad=False)
    return _hard(samples, target, plan, threads)

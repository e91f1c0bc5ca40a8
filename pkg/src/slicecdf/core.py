"""Projections, empirical CDFs, slice discrepancies and the projection-averaged estimator.

A distance between two n-dimensional distributions is obtained by projecting
both onto random unit directions, comparing the resulting univariate CDFs with
a discrepancy ``d`` and averaging over directions.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from ._rng import as_generator
from .errors import (
    DimensionMismatchError,
    DomainError,
    InvalidDimensionError,
    MalformedInputError,
)

UNIT_NORM_TOL = 1e-12


# --------------------------------------------------------------------------- #
# Sample sets
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class SampleSet:
    """N points in R^n stored as an ``(N, n)`` float array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise InvalidDimensionError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise InvalidDimensionError("a sample set needs at least one point")
        if pts.shape[1] < 1:
            raise InvalidDimensionError("points must have at least one coordinate")
        if not np.all(np.isfinite(pts)):
            raise DomainError("sample coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def N(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.N

    def to_json(self) -> dict:
        return {"n": self.n, "points": self.points.tolist()}

    @classmethod
    def from_json(cls, payload: dict) -> "SampleSet":
        try:
            n = int(payload["n"])
            pts = np.asarray(payload["points"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedInputError(f"invalid sample-set JSON: {exc}") from exc
        if pts.ndim != 2 or pts.shape[1] != n:
            raise MalformedInputError(f"sample-set JSON declares n={n} but points have shape {pts.shape}")
        return cls(pts)


def load_samples(path) -> SampleSet:
    """Read a sample set from ``.json`` or headerless CSV (one point per row)."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            return SampleSet.from_json(json.loads(path.read_text()))
        pts = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
        return SampleSet(pts)
    except MalformedInputError as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc
    except (OSError, ValueError) as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc


def save_samples_csv(samples: SampleSet, path) -> None:
    np.savetxt(path, samples.points, delimiter=",", fmt="%.17g")


def save_samples_json(samples: SampleSet, path) -> None:
    Path(path).write_text(json.dumps(samples.to_json()))


# --------------------------------------------------------------------------- #
# Directions and projections
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class Direction:
    """Unit-norm projection vector."""

    coords: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.coords, dtype=float).reshape(-1)
        if v.size < 1:
            raise InvalidDimensionError("direction must have at least one coordinate")
        if abs(np.linalg.norm(v) - 1.0) > UNIT_NORM_TOL:
            raise DomainError(f"direction is not unit norm (|q| = {np.linalg.norm(v)!r})")
        v.setflags(write=False)
        object.__setattr__(self, "coords", v)

    @classmethod
    def from_vector(cls, v) -> "Direction":
        v = np.asarray(v, dtype=float).reshape(-1)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise DomainError("cannot normalise the zero vector")
        return cls(v / norm)

    @property
    def n(self) -> int:
        return self.coords.size

    def __neg__(self):
        return Direction(-self.coords)


def sample_directions(rng, n: int, count: int) -> np.ndarray:
    """Draw ``count`` directions uniformly on the unit sphere as a ``(count, n)`` array."""
    if n < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {n}")
    rng = as_generator(rng)
    g = rng.standard_normal((count, n))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero draw has probability 0; redraw to keep the contract anyway
    while np.any(norms == 0):
        bad = norms[:, 0] == 0
        g[bad] = rng.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms


def sample_direction(rng, n: int) -> Direction:
    return Direction(sample_directions(rng, n, 1)[0])


def project(samples: SampleSet, q: Direction) -> np.ndarray:
    if samples.n != q.n:
        raise DimensionMismatchError(f"samples have dimension {samples.n}, direction has {q.n}")
    return samples.points @ q.coords


# --------------------------------------------------------------------------- #
# Univariate CDFs
# --------------------------------------------------------------------------- #


class UnivariateCdf(Protocol):
    """Anything evaluable as a CDF.

    ``breakpoints`` lists the jump locations (empty for continuous CDFs) and
    ``left(t)`` returns the left limit F(t-).
    """

    breakpoints: np.ndarray

    def __call__(self, t): ...

    def left(self, t): ...


class EmpiricalCdf:
    """Right-continuous step CDF of a finite list of reals."""

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=float).reshape(-1))
        if v.size == 0:
            raise DomainError("empirical CDF needs at least one value")
        if not np.all(np.isfinite(v)):
            raise DomainError("empirical CDF values must be finite")
        self.sorted_values = v
        self.N = v.size
        self.breakpoints = np.unique(v)

    def counts(self, t) -> np.ndarray:
        return np.searchsorted(self.sorted_values, t, side="right")

    def left_counts(self, t) -> np.ndarray:
        return np.searchsorted(self.sorted_values, t, side="left")

    def __call__(self, t):
        return self.counts(t) / self.N

    def left(self, t):
        return self.left_counts(t) / self.N

    def __repr__(self):
        return f"EmpiricalCdf(N={self.N})"


def empirical_cdf(projected) -> EmpiricalCdf:
    return EmpiricalCdf(projected)


class ContinuousCdf:
    """Wrap a vectorised continuous CDF.

    ``lo``/``hi`` bound the region where the CDF moves appreciably; they are only
    used when two continuous CDFs are compared on a grid.
    """

    breakpoints = np.empty(0)

    def __init__(self, func: Callable, lo: float, hi: float):
        self.func = func
        self.lo = float(lo)
        self.hi = float(hi)

    def __call__(self, t):
        return self.func(t)

    def left(self, t):
        return self.func(t)


def _is_step(f) -> bool:
    return isinstance(f, EmpiricalCdf)


# --------------------------------------------------------------------------- #
# Slice discrepancies
# --------------------------------------------------------------------------- #


def ks_distance(f, g, grid_size: int = 4001) -> float:
    """Sup-norm distance between two univariate CDFs.

    For step CDFs the supremum is attained at a breakpoint (or just left of
    one), so scanning the merged breakpoints with both the value and the left
    limit is exact. Two empirical CDFs are compared in integer arithmetic.
    Two continuous CDFs without breakpoints fall back to a dense grid.
    """
    if _is_step(f) and _is_step(g):
        t = np.union1d(f.breakpoints, g.breakpoints)
        cf = f.counts(t).astype(np.int64)
        cg = g.counts(t).astype(np.int64)
        diff = np.abs(cf * g.N - cg * f.N).max()
        return float(diff) / (f.N * g.N)

    t = np.union1d(np.asarray(f.breakpoints), np.asarray(g.breakpoints))
    if t.size == 0:
        lo = min(getattr(f, "lo", -10.0), getattr(g, "lo", -10.0))
        hi = max(getattr(f, "hi", 10.0), getattr(g, "hi", 10.0))
        t = np.linspace(lo, hi, grid_size)
    right = np.abs(np.asarray(f(t)) - np.asarray(g(t)))
    left = np.abs(np.asarray(f.left(t)) - np.asarray(g.left(t)))
    return float(max(right.max(), left.max()))


def _weight_quantile_nodes(weight, count: int) -> tuple[np.ndarray, np.ndarray]:
    probs = (np.arange(count) + 0.5) / count
    return np.asarray(weight.ppf(probs), dtype=float), np.full(count, 1.0 / count)


def weighted_l1_distance(f, g, weight, quadrature=None, default_nodes: int = 2000) -> float:
    """Approximate the integral of ``weight.pdf(x) * |f(x) - g(x)|``.

    ``weight`` is a density object with ``pdf``/``cdf``/``ppf`` (e.g. a frozen
    scipy distribution). With explicit ``quadrature=(nodes, weights)`` the sum
    ``sum_i w_i c(x_i) |f - g|(x_i)`` is returned. Without it, two step CDFs
    are integrated exactly interval by interval using the weight's mass on each
    interval; otherwise the midpoint rule in the weight's probability scale is
    used.
    """
    if quadrature is not None:
        nodes, qw = (np.asarray(a, dtype=float).reshape(-1) for a in quadrature)
        if nodes.size == 0:
            raise DomainError("quadrature must contain at least one node")
        if nodes.shape != qw.shape:
            raise DimensionMismatchError("quadrature nodes and weights differ in length")
        if not np.all(np.isfinite(nodes)):
            raise DomainError("quadrature nodes must be finite")
        diff = np.abs(np.asarray(f(nodes)) - np.asarray(g(nodes)))
        return float(np.sum(qw * np.asarray(weight.pdf(nodes)) * diff))

    if _is_step(f) and _is_step(g):
        t = np.union1d(f.breakpoints, g.breakpoints)
        if t.size < 2:
            return 0.0
        # |f - g| is constant on [t_k, t_{k+1}) and zero outside [t_0, t_last)
        diff = np.abs(f(t[:-1]) - g(t[:-1]))
        mass = np.diff(np.asarray(weight.cdf(t), dtype=float))
        return float(np.sum(diff * mass))

    nodes, qw = _weight_quantile_nodes(weight, default_nodes)
    diff = np.abs(np.asarray(f(nodes)) - np.asarray(g(nodes)))
    return float(np.sum(qw * diff))


class KolmogorovSmirnov:
    """Slice discrepancy sup |f - g|."""

    kind = "ks"

    def __call__(self, f, g) -> float:
        return ks_distance(f, g)

    def __repr__(self):
        return "KolmogorovSmirnov()"


class WeightedL1:
    """Slice discrepancy ``integral c(x) |f(x) - g(x)| dx`` for a density ``c``."""

    kind = "weighted_l1"

    def __init__(self, weight, quadrature=None):
        self.weight = weight
        self.quadrature = quadrature

    def __call__(self, f, g) -> float:
        return weighted_l1_distance(f, g, self.weight, self.quadrature)

    def __repr__(self):
        return f"WeightedL1({self.weight!r})"


SliceDiscrepancy = KolmogorovSmirnov | WeightedL1


# --------------------------------------------------------------------------- #
# Estimator
# --------------------------------------------------------------------------- #


def estimate_delta(
    x_blocks: Sequence[SampleSet] | SampleSet,
    target_cdf_factory: Callable[[Direction], object],
    d,
    rng,
    *,
    h: int | None = None,
    direction_sampler: Callable | None = None,
    threads: int = 1,
) -> float:
    """Average slice discrepancy between empirical projections and target CDFs.

    ``x_blocks`` is a list of H independent sample sets, one per direction. A
    single ``SampleSet`` together with ``h`` reuses the same samples for all
    ``h`` directions instead.

    Directions are drawn up front from ``rng`` so the result does not depend
    on ``threads``; the final mean is reduced in block order.
    """
    if isinstance(x_blocks, SampleSet):
        if h is None or h < 1:
            raise DomainError("h >= 1 is required when reusing one sample set")
        blocks = [x_blocks] * h
    else:
        blocks = list(x_blocks)
        if not blocks:
            raise DomainError("need at least one sample block")
    n = blocks[0].n
    for b in blocks:
        if b.n != n:
            raise DimensionMismatchError("sample blocks have differing dimensions")

    rng = as_generator(rng)
    sampler = direction_sampler or sample_direction
    directions = [sampler(rng, n) for _ in blocks]

    def one(i: int) -> float:
        q = directions[i]
        return float(d(empirical_cdf(project(blocks[i], q)), target_cdf_factory(q)))

    idx = range(len(blocks))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one, idx))
    else:
        values = [one(i) for i in idx]
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def asymptotic_snr(alpha: float, h: int) -> float:
    """Signal-to-noise ratio sqrt(H alpha / (1 - alpha)) under a Bernoulli slice model."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if h < 1:
        raise DomainError(f"h must be a positive integer, got {h}")
    return math.sqrt(h * alpha / (1.0 - alpha))

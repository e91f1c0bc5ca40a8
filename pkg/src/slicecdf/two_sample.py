"""Two-sample experiments on the half-space distance statistic."""
from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import substream
from .core import SampleSet
from .errors import ConfigError, DimensionMismatchError, DomainError, MalformedInputError
from .mixtures import GaussianMixture
from .sliced import ThresholdRule, build_slice_plan, hard_distance_two_sample


def parse_distribution(spec, n: int, name: str = "distribution") -> GaussianMixture:
    """Mixture JSON, or the isotropic shorthand ``{"mean": m, "scale": s}`` for N(m 1, s I)."""
    if isinstance(spec, GaussianMixture):
        dist = spec
    elif isinstance(spec, dict) and "components" in spec:
        try:
            dist = GaussianMixture.from_json(spec)
        except MalformedInputError as exc:
            raise ConfigError(f"field {name!r}: {exc}") from exc
    elif isinstance(spec, dict):
        unknown = set(spec) - {"mean", "scale"}
        if unknown:
            raise ConfigError(f"field {name!r}: unknown keys {sorted(unknown)}")
        dist = GaussianMixture.isotropic(n, spec.get("mean", 0.0), float(spec.get("scale", 1.0)))
    else:
        raise ConfigError(f"field {name!r} must be a mixture or {{'mean', 'scale'}} object")
    if dist.n != n:
        raise ConfigError(f"field {name!r} has dimension {dist.n}, expected n={n}")
    return dist


@dataclass
class TwoSampleConfig:
    n: int
    trials: int
    seed: int
    alternative: dict | GaussianMixture
    null: dict | GaussianMixture = field(default_factory=lambda: {"mean": 0.0, "scale": 1.0})
    n_samples: int = 1000
    h: int = 300
    n_values: int = 100
    permutations: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.trials < 2:
            raise ConfigError("trials must be >= 2")
        if self.n_samples < 1 or self.h < 1 or self.n_values < 1:
            raise ConfigError("n_samples, h and n_values must be >= 1")
        if self.permutations and self.permutations < 19:
            raise ConfigError("permutations must be 0 (off) or >= 19")
        self.null = parse_distribution(self.null, self.n, "null")
        self.alternative = parse_distribution(self.alternative, self.n, "alternative")

    @classmethod
    def from_dict(cls, payload: dict) -> "TwoSampleConfig":
        if not isinstance(payload, dict):
            raise ConfigError("configuration must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(payload) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        for f in dataclasses.fields(cls):
            if f.name not in payload and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"missing required config field {f.name!r}")
        try:
            return cls(**payload)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        out["null"] = self.null.to_json()
        out["alternative"] = self.alternative.to_json()
        return out


@dataclass
class TwoSampleReport:
    null_stats: np.ndarray
    alt_stats: np.ndarray
    bin_edges: np.ndarray
    null_counts: np.ndarray
    alt_counts: np.ndarray
    null_pvalue: float | None = None
    alt_pvalue: float | None = None

    @property
    def null_mean(self) -> float:
        return float(self.null_stats.mean())

    @property
    def alt_mean(self) -> float:
        return float(self.alt_stats.mean())

    @property
    def null_std(self) -> float:
        return float(self.null_stats.std(ddof=1))

    @property
    def alt_std(self) -> float:
        return float(self.alt_stats.std(ddof=1))

    @property
    def separation(self) -> float:
        """(alternative mean - null mean) in units of the null standard deviation."""
        return (self.alt_mean - self.null_mean) / self.null_std if self.null_std > 0 else float("inf")

    def to_json(self) -> dict:
        return {
            "null": {"mean": self.null_mean, "std": self.null_std, "statistics": self.null_stats.tolist()},
            "alternative": {"mean": self.alt_mean, "std": self.alt_std, "statistics": self.alt_stats.tolist()},
            "separation_in_null_std": self.separation,
            "permutation_pvalues": {"null": self.null_pvalue, "alternative": self.alt_pvalue},
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=1))
        with open(out / "histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arm", "bin_left", "bin_right", "count"])
            for arm, counts in (("null", self.null_counts), ("alternative", self.alt_counts)):
                for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], counts):
                    w.writerow([arm, repr(float(lo)), repr(float(hi)), int(c)])


def two_sample_statistic(a: SampleSet, b: SampleSet, rng, h: int, n_values: int) -> float:
    """Distance between two sample sets with a fresh plan whose thresholds come from ``a``."""
    plan = build_slice_plan(rng, h, n_values, ThresholdRule.SAMPLE_QUANTILES, a)
    return hard_distance_two_sample(a, b, plan)


def run_two_sample(config: TwoSampleConfig, threads: int = 1) -> TwoSampleReport:
    """Empirical distributions of the statistic under the null and the alternative.

    Each trial draws fresh samples for both sets and a fresh plan; trial ``i``
    uses substreams keyed by ``i`` so results do not depend on ``threads``.
    """
    seed = config.seed

    def trial(args):
        arm, i = args
        other = config.null if arm == "null" else config.alternative
        x = config.null.sample(config.n_samples, substream(seed, "sampling", arm, i, "x"))
        y = other.sample(config.n_samples, substream(seed, "sampling", arm, i, "y"))
        return two_sample_statistic(x, y, substream(seed, "directions", arm, i), config.h, config.n_values)

    jobs = [(arm, i) for arm in ("null", "alternative") for i in range(config.trials)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(trial, jobs))
    else:
        stats = [trial(j) for j in jobs]
    null_stats = np.asarray(stats[: config.trials])
    alt_stats = np.asarray(stats[config.trials:])
    edges = np.histogram_bin_edges(np.concatenate([null_stats, alt_stats]), bins="fd")
    report = TwoSampleReport(null_stats, alt_stats, edges,
                             np.histogram(null_stats, edges)[0], np.histogram(alt_stats, edges)[0])
    if config.permutations:
        pairs = {}
        for arm, other in (("null", config.null), ("alternative", config.alternative)):
            a = config.null.sample(config.n_samples, substream(seed, "sampling", "perm", arm, "x"))
            b = other.sample(config.n_samples, substream(seed, "sampling", "perm", arm, "y"))
            pairs[arm] = permutation_pvalue(a, b, (seed, arm), config.permutations, config.h,
                                            config.n_values, threads)
        report.null_pvalue = pairs["null"]
        report.alt_pvalue = pairs["alternative"]
    return report


def pvalue_from_statistics(observed: float, permuted) -> float:
    permuted = np.asarray(permuted, dtype=float)
    return (1.0 + np.count_nonzero(permuted >= observed)) / (permuted.size + 1.0)


def permutation_pvalue(a: SampleSet, b: SampleSet, plan_seed, permutations: int, h: int = 300,
                       n_values: int = 100, threads: int = 1) -> float:
    """Permutation p-value of the two-sample statistic.

    The pooled points are reshuffled and split back into sizes ``len(a)`` and
    ``len(b)``; each split, and the observed pair, gets its own fresh plan.
    ``plan_seed`` is an int or a tuple naming the substream root.
    """
    if permutations < 19:
        raise DomainError("permutations must be >= 19")
    if a.n != b.n:
        raise DimensionMismatchError(f"sample sets have dimensions {a.n} and {b.n}")
    root = plan_seed if isinstance(plan_seed, tuple) else (plan_seed,)
    base, names = root[0], root[1:]
    observed = two_sample_statistic(a, b, substream(base, *names, "directions", "observed"), h, n_values)
    pooled = np.concatenate([a.points, b.points])

    def one(r: int) -> float:
        idx = substream(base, *names, "permutations", r).permutation(pooled.shape[0])
        pa, pb = SampleSet(pooled[idx[: a.N]]), SampleSet(pooled[idx[a.N:]])
        return two_sample_statistic(pa, pb, substream(base, *names, "directions", "perm", r), h, n_values)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            permuted = list(pool.map(one, range(permutations)))
    else:
        permuted = [one(r) for r in range(permutations)]
    return pvalue_from_statistics(observed, permuted)

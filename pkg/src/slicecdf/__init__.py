"""Projection-averaged CDF distances between distributions and control solvers built on them."""

from .core import (
    Direction,
    EmpiricalCdf,
    KolmogorovSmirnov,
    SampleSet,
    WeightedL1,
    asymptotic_snr,
    empirical_cdf,
    estimate_delta,
    ks_distance,
    load_samples,
    project,
    sample_direction,
    weighted_l1_distance,
)
from .mixtures import (
    GaussianMixture,
    halfspace_probability,
    load_mixture,
    projected_cdf,
    projected_quantile,
)
from .sliced import (
    SlicePlan,
    SmoothingConfig,
    ThresholdRule,
    build_slice_plan,
    hard_distance,
    hard_distance_two_sample,
    smooth_distance,
    smooth_distance_gradient,
)

__version__ = "0.1.0"

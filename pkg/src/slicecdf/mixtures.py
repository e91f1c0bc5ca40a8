"""Gaussian mixture targets with closed-form half-space probabilities."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from ._rng import as_generator
from .core import Direction, SampleSet
from .errors import (
    DegenerateDistributionError,
    DimensionMismatchError,
    DomainError,
    InvalidCovarianceError,
    InvalidDimensionError,
    MalformedInputError,
)

SYM_TOL = 1e-10
PSD_TOL = 1e-10
WEIGHT_TOL = 1e-10


class GaussianMixture:
    """Weighted sum of Gaussian components in R^n.

    Parameters
    ----------
    weights : array (K,)
        Nonnegative, summing to one.
    means : array (K, n)
    covs : array (K, n, n)
        Symmetric positive semidefinite.
    """

    def __init__(self, weights, means, covs):
        w = np.asarray(weights, dtype=float).reshape(-1)
        m = np.asarray(means, dtype=float)
        c = np.asarray(covs, dtype=float)
        if m.ndim == 1:
            m = m[None, :]
        if c.ndim == 2:
            c = c[None, :, :]
        if w.size < 1:
            raise InvalidDimensionError("a mixture needs at least one component")
        if m.shape[0] != w.size or c.shape[0] != w.size:
            raise DimensionMismatchError("weights, means and covariances disagree on the component count")
        n = m.shape[1]
        if n < 1 or c.shape[1:] != (n, n):
            raise DimensionMismatchError(f"covariances must be {n}x{n}, got {c.shape[1:]}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise DomainError("mixture weights must be nonnegative and sum to 1")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(c))):
            raise DomainError("means and covariances must be finite")
        if np.any(np.abs(c - np.swapaxes(c, 1, 2)) > SYM_TOL):
            raise InvalidCovarianceError("covariance is not symmetric")
        eig = np.linalg.eigvalsh(c)
        if np.any(eig < -PSD_TOL):
            raise InvalidCovarianceError(f"covariance is not positive semidefinite (min eigenvalue {eig.min():.3g})")
        self.weights = w
        self.means = m
        self.covs = c
        self._factors = None

    @property
    def n(self) -> int:
        return self.means.shape[1]

    @property
    def k(self) -> int:
        return self.weights.size

    @classmethod
    def gaussian(cls, mean, cov) -> "GaussianMixture":
        return cls([1.0], [mean], [cov])

    @classmethod
    def isotropic(cls, n: int, mean=0.0, scale: float = 1.0) -> "GaussianMixture":
        """N(mean, scale * I); a scalar mean is broadcast to every coordinate."""
        mu = np.broadcast_to(np.asarray(mean, dtype=float), (n,)).copy()
        return cls.gaussian(mu, scale * np.eye(n))

    # -- serialisation ----------------------------------------------------- #

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "components": [
                {"mean": m.tolist(), "cov": c.tolist()} for m, c in zip(self.means, self.covs)
            ],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "GaussianMixture":
        try:
            comps = payload["components"]
            weights = payload["weights"]
            means = [c["mean"] for c in comps]
            covs = [c["cov"] for c in comps]
            means = np.asarray(means, dtype=float)
            covs = np.asarray(covs, dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedInputError(f"invalid mixture JSON: {exc}") from exc
        if means.ndim != 2 or covs.ndim != 3:
            raise MalformedInputError("mixture means must be vectors and covariances matrices")
        return cls(weights, means, covs)

    # -- projections ------------------------------------------------------- #

    def projected_moments(self, directions) -> tuple[np.ndarray, np.ndarray]:
        """Means and standard deviations of q^T Y per component.

        ``directions`` is ``(H, n)``; returns two ``(H, K)`` arrays.
        """
        Q = np.atleast_2d(np.asarray(directions, dtype=float))
        if Q.shape[1] != self.n:
            raise DimensionMismatchError(f"direction dimension {Q.shape[1]} != mixture dimension {self.n}")
        mu = Q @ self.means.T
        var = np.einsum("hi,kij,hj->hk", Q, self.covs, Q)
        if np.any(var < -PSD_TOL):
            raise InvalidCovarianceError("projected variance q^T S q is negative")
        return mu, np.sqrt(np.clip(var, 0.0, None))

    def upper_tail(self, directions, thresholds) -> np.ndarray:
        """P(q_k^T Y >= b_kj) for ``(H, n)`` directions and ``(H, m)`` thresholds."""
        mu, sd = self.projected_moments(directions)
        b = np.atleast_2d(np.asarray(thresholds, dtype=float))
        z_num = mu[:, None, :] - b[:, :, None]  # (H, m, K)
        sd3 = np.broadcast_to(sd[:, None, :], z_num.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(sd3 > 0, ndtr(z_num / np.where(sd3 > 0, sd3, 1.0)), (z_num >= 0).astype(float))
        return p @ self.weights

    def cdf_values(self, directions, t) -> np.ndarray:
        """P(q_k^T Y <= t_kj), same shapes as :meth:`upper_tail`."""
        mu, sd = self.projected_moments(directions)
        t = np.atleast_2d(np.asarray(t, dtype=float))
        z_num = t[:, :, None] - mu[:, None, :]
        sd3 = np.broadcast_to(sd[:, None, :], z_num.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(sd3 > 0, ndtr(z_num / np.where(sd3 > 0, sd3, 1.0)), (z_num >= 0).astype(float))
        return p @ self.weights

    def quantiles(self, directions, probs, tol: float = 1e-12, level_tol: float = 1e-12,
                  max_iter: int = 200) -> np.ndarray:
        """Quantiles of q_k^T Y at ``probs`` for every direction, by bisection.

        Where the CDF is flat at level p (a gap between components) the
        midpoint of ``{t : |F(t) - p| <= level_tol}`` is returned. Returns an
        ``(H, len(probs))`` array.
        """
        lower = self._bisect(directions, np.asarray(probs, dtype=float) - level_tol, tol, max_iter, probs)
        upper = self._bisect(directions, np.asarray(probs, dtype=float) + level_tol, tol, max_iter, probs)
        return 0.5 * (lower + upper)

    def _bisect(self, directions, levels, tol, max_iter, probs) -> np.ndarray:
        """Smallest t with F(t) >= level, per direction and level."""
        probs = np.asarray(probs, dtype=float).reshape(-1)
        if np.any((probs <= 0) | (probs >= 1)):
            raise DomainError("quantile probabilities must lie in (0, 1)")
        Q = np.atleast_2d(np.asarray(directions, dtype=float))
        mu, sd = self.projected_moments(Q)
        smax = sd.max(axis=1)
        if np.any(smax == 0):
            raise DegenerateDistributionError("projected mixture has zero variance in every component")
        H = Q.shape[0]
        lo = np.repeat((mu.min(axis=1) - 10 * smax)[:, None], probs.size, axis=1)
        hi = np.repeat((mu.max(axis=1) + 10 * smax)[:, None], probs.size, axis=1)
        target = np.broadcast_to(np.asarray(levels, dtype=float).reshape(-1), (H, probs.size))
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            below = self.cdf_values(Q, mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    # -- sampling ---------------------------------------------------------- #

    def _factor(self) -> np.ndarray:
        if self._factors is None:
            factors = []
            for c in self.covs:
                try:
                    factors.append(np.linalg.cholesky(c))
                except np.linalg.LinAlgError:
                    vals, vecs = np.linalg.eigh(c)
                    if vals.min() < -PSD_TOL:
                        raise InvalidCovarianceError("covariance cannot be factorised: not PSD")
                    factors.append(vecs * np.sqrt(np.clip(vals, 0.0, None)))
            self._factors = np.stack(factors)
        return self._factors

    def sample(self, count: int, rng) -> SampleSet:
        if count < 1:
            raise DomainError("sample count must be >= 1")
        rng = as_generator(rng)
        labels = rng.choice(self.k, size=count, p=self.weights)
        z = rng.standard_normal((count, self.n))
        L = self._factor()[labels]
        pts = self.means[labels] + np.einsum("cij,cj->ci", L, z)
        return SampleSet(pts)

    def __repr__(self):
        return f"GaussianMixture(k={self.k}, n={self.n})"


def load_mixture(path) -> GaussianMixture:
    path = Path(path)
    try:
        return GaussianMixture.from_json(json.loads(path.read_text()))
    except (OSError, json.JSONDecodeError, MalformedInputError) as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc


def _coords(q) -> np.ndarray:
    return q.coords if isinstance(q, Direction) else np.asarray(q, dtype=float).reshape(-1)


def halfspace_probability(gmm: GaussianMixture, q, b: float) -> float:
    """P(q^T Y + b >= 0) for Y following ``gmm``.

    Each component reduces to a one-dimensional Gaussian r ~ N(q^T m + b, q^T S q);
    a zero-variance component contributes the indicator of its mean's sign.
    """
    return float(gmm.upper_tail(_coords(q)[None, :], [[-b]])[0, 0])


class ProjectedMixtureCdf:
    """CDF of q^T Y. Zero-variance components contribute jumps at their means."""

    def __init__(self, gmm: GaussianMixture, q):
        mu, sd = gmm.projected_moments(_coords(q)[None, :])
        self.mu = mu[0]
        self.sd = sd[0]
        self.weights = gmm.weights
        self.breakpoints = np.unique(self.mu[self.sd == 0])
        spread = self.sd.max() if self.sd.max() > 0 else 1.0
        self.lo = self.mu.min() - 10 * spread
        self.hi = self.mu.max() + 10 * spread

    def _eval(self, t, strict: bool):
        t = np.asarray(t, dtype=float)
        z = t[..., None] - self.mu
        pos = self.sd > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            smooth = ndtr(z / np.where(pos, self.sd, 1.0))
        step = (z > 0) if strict else (z >= 0)
        return np.where(pos, smooth, step.astype(float)) @ self.weights

    def __call__(self, t):
        return self._eval(t, strict=False)

    def left(self, t):
        return self._eval(t, strict=True)


def projected_cdf(gmm: GaussianMixture, q) -> ProjectedMixtureCdf:
    return ProjectedMixtureCdf(gmm, q)


def projected_quantile(gmm: GaussianMixture, q, p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    return float(gmm.quantiles(_coords(q)[None, :], [p])[0, 0])


def sample(gmm: GaussianMixture, count: int, rng) -> SampleSet:
    return gmm.sample(count, rng)

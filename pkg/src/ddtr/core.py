"""Problem abstractions, inner-domain geometry and shared numeric helpers.

Conventions used throughout the package:

* all vectors are dense float64 numpy arrays; ``x`` has shape ``(n,)``,
  ``y`` has shape ``(m,)`` and a batch of random draws has shape ``(S, d)``;
* loss and gradient evaluators are vectorized over the random variable:
  they take ``(x, y, omegas)`` with ``omegas`` of shape ``(S, d)`` and
  return arrays of shape ``(S,)``, ``(S, n)``, ``(S, m)`` and ``(S, d)``
  respectively;
* every stochastic operation takes an explicit ``numpy.random.Generator``
  backed by the counter-based Philox bit generator, so reruns with the
  same seed are bit-identical and generators can be split deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np


class ContractViolationError(ValueError):
    """An argument violates a documented interface contract (e.g. wrong shape)."""


class ConfigurationError(ValueError):
    """A configuration value is outside its admissible range."""


class PoisednessError(RuntimeError):
    """The sample-set conditioning target could not be met."""

    def __init__(self, message: str, best_metric: float):
        super().__init__(message)
        self.best_metric = best_metric


class SingularFitError(RuntimeError):
    """The regression design is rank deficient."""


class InnerConvergenceError(RuntimeError):
    """The inner maximizer hit its iteration cap before certifying accuracy."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class IngestionError(ValueError):
    """A data file could not be parsed into a usable problem instance."""


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator with an explicit 64-bit seed."""
    return np.random.Generator(np.random.Philox(seed))


def split_rng(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Split off ``count`` independent child generators, deterministically."""
    return rng.spawn(count)


def as_vector(v, dim: int, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise ContractViolationError(f"{name} must have shape ({dim},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractViolationError(f"{name} must be finite")
    return v


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower, upper]`` in R^m."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("box bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ConfigurationError("box requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def project(self, y: np.ndarray) -> np.ndarray:
        y = as_vector(y, self.dim, "y")
        return np.clip(y, self.lower, self.upper)

    def contains(self, y: np.ndarray, tol: float = 1e-12) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all(y >= self.lower - tol) and np.all(y <= self.upper + tol))

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class Simplex:
    """The probability simplex {y >= 0 : sum(y) = 1} in R^dim."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("simplex dimension must be >= 1")

    @property
    def diameter(self) -> float:
        return float(np.sqrt(2.0))

    def project(self, y: np.ndarray) -> np.ndarray:
        # Sort-based exact Euclidean projection, O(m log m)
        # (Held/Wolfe/Crowder; see also Duchi et al. 2008).
        y = as_vector(y, self.dim, "y")
        u = np.sort(y)[::-1]
        css = np.cumsum(u)
        j = np.arange(1, self.dim + 1)
        cand = u + (1.0 - css) / j
        rho = np.nonzero(cand > 0)[0][-1]
        theta = (1.0 - css[rho]) / (rho + 1.0)
        return np.maximum(y + theta, 0.0)

    def contains(self, y: np.ndarray, tol: float = 1e-9) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all(y >= -tol) and abs(float(np.sum(y)) - 1.0) <= tol)

    def center(self) -> np.ndarray:
        return np.full(self.dim, 1.0 / self.dim)


InnerDomain = Union[Box, Simplex]


def project(domain: InnerDomain, y: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``y`` onto the inner domain."""
    return domain.project(y)


@dataclass(frozen=True)
class ProblemSpec:
    """A minimax instance: the loss, its three partial gradients and geometry.

    ``loss(x, y, omegas)`` evaluates the integrand on a batch of scenarios,
    ``grad1``/``grad2``/``grad3`` are its partial gradients with respect to
    the first (x), second (y) and third (omega) block.  ``mu`` is the strong
    concavity modulus of the loss in ``y`` over the inner domain and ``ell``
    an upper bound on the smoothness (gradient Lipschitz constant) of any
    scenario average in ``y``; both are per-problem constants used by the
    inner maximizer.
    """

    n: int
    m: int
    d: int
    loss: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    grad1: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    grad2: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    grad3: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    inner_domain: InnerDomain
    mu: float
    ell: float

    def __post_init__(self):
        if min(self.n, self.m, self.d) < 1:
            raise ConfigurationError("dimensions must be positive")
        if self.mu <= 0:
            raise ConfigurationError("mu must be positive")
        if self.ell < self.mu:
            raise ConfigurationError("ell must be at least mu")
        if getattr(self.inner_domain, "dim") != self.m:
            raise ConfigurationError("inner domain dimension must equal m")


@dataclass(frozen=True)
class DistributionOracle:
    """Black-box sampler producing i.i.d. draws from D(x) for any query x.

    ``sampler(x, count, rng)`` must return an array of shape ``(count, d)``.
    Draws with an identical generator state are bit-identical; callers never
    share one generator across threads.
    """

    d: int
    sampler: Callable[[np.ndarray, int, np.random.Generator], np.ndarray]

    def sample(self, x: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
        if count < 1:
            raise ConfigurationError("sample count must be >= 1")
        draws = np.asarray(self.sampler(x, count, rng), dtype=float)
        if draws.shape != (count, self.d):
            raise ContractViolationError(
                f"oracle returned shape {draws.shape}, expected ({count}, {self.d})"
            )
        return draws


def uniform_ball_sample(
    center: np.ndarray, radius: float, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``count`` points uniformly from the closed ball B(center, radius).

    Gaussian direction normalized to the sphere, scaled by U^(1/n) for exact
    uniformity in any dimension.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = center.shape[0]
    if radius <= 0:
        raise ConfigurationError("ball radius must be positive")
    if count < 1:
        raise ConfigurationError("sample count must be >= 1")
    g = rng.standard_normal((count, n))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    r = radius * rng.uniform(size=(count, 1)) ** (1.0 / n)
    return center + r * g / norms

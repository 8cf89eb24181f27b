"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from ddtr.core import Box, DistributionOracle, ProblemSpec


def quadratic_problem(weights, domain) -> ProblemSpec:
    """Separable concave quadratic: l(x, y, w) = -0.5 * sum_j a_j (y_j - w_j)^2.

    The scenario average over draws {w_s} is maximized (before projection) at
    the componentwise mean, so constrained maximizers are known in closed form
    for boxes (componentwise clamp) and, when the weights are equal, for the
    simplex (one Euclidean projection).
    """
    a = np.asarray(weights, dtype=float)
    m = a.shape[0]

    def loss(x, y, w):
        return -0.5 * np.sum(a * (y[None, :] - w) ** 2, axis=1)

    def grad1(x, y, w):
        return np.zeros((w.shape[0], 1))

    def grad2(x, y, w):
        return -a[None, :] * (y[None, :] - w)

    def grad3(x, y, w):
        return a[None, :] * (y[None, :] - w)

    return ProblemSpec(
        n=1,
        m=m,
        d=m,
        loss=loss,
        grad1=grad1,
        grad2=grad2,
        grad3=grad3,
        inner_domain=domain,
        mu=float(a.min()),
        ell=float(a.max()),
    )


def affine_map_problem(slope=1.0, intercept=-3.0, box_half=1.0) -> tuple[ProblemSpec, DistributionOracle]:
    """Deterministic instance with an affine map: w = slope * x + intercept,
    l(x, y, w) = w^2 - y^2.  The primal function is (slope*x + intercept)^2,
    minimized where the map crosses zero."""

    def loss(x, y, w):
        return w[:, 0] ** 2 - y[0] ** 2

    def grad1(x, y, w):
        return np.zeros((w.shape[0], 1))

    def grad2(x, y, w):
        return np.full((w.shape[0], 1), -2.0 * y[0])

    def grad3(x, y, w):
        return 2.0 * w

    problem = ProblemSpec(
        n=1,
        m=1,
        d=1,
        loss=loss,
        grad1=grad1,
        grad2=grad2,
        grad3=grad3,
        inner_domain=Box(np.array([-box_half]), np.array([box_half])),
        mu=2.0,
        ell=2.0,
    )
    oracle = DistributionOracle(
        d=1, sampler=lambda x, count, rng: np.full((count, 1), slope * x[0] + intercept)
    )
    return problem, oracle


def scalar_oracle(fn, sigma=0.0) -> DistributionOracle:
    """1-d oracle drawing fn(x) + sigma * noise."""

    def sampler(x, count, rng):
        return fn(x[0]) + sigma * rng.standard_normal((count, 1))

    return DistributionOracle(d=1, sampler=sampler)


def directional_fd(f, x, v, h=1e-6):
    """Central finite difference of scalar f along direction v."""
    return (f(x + h * v) - f(x - h * v)) / (2.0 * h)

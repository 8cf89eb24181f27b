"""Simplified reference baselines: stochastic primal-dual iteration and
stochastic gradient descent ascent with an online-learned affine location
model.  These reproduce the qualitative comparison behavior only; they are
not faithful reimplementations of the cited originals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import ConfigurationError, DistributionOracle, ProblemSpec, as_vector, make_rng
from .tr import OracleDiagnostics

METHODS = ("asgda", "spd-constant", "spd-dynamic")


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "spd-constant"
    eta_x: float = 1e-3  # asgda stepsizes
    eta_y: float = 1e-1
    eta: float = 1e-3  # spd constant stepsize
    dyn_a: float = 1000.0  # spd dynamic stepsize 1 / (a + b k)
    dyn_b: float = 10.0
    batch: int = 500
    max_iters: int = 5000
    seed: int = 0
    forget: float = 0.99  # exponential forgetting for the online regression
    ridge: float = 1e-8
    divergence_norm: float = 1e8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if min(self.eta_x, self.eta_y, self.eta) <= 0:
            raise ConfigurationError("stepsizes must be positive")
        if self.batch < 1:
            raise ConfigurationError("batch must be >= 1")
        if not (0 < self.forget <= 1):
            raise ConfigurationError("forget must lie in (0, 1]")

    def stepsize(self, k: int) -> float:
        if self.method == "spd-dynamic":
            return 1.0 / (self.dyn_a + self.dyn_b * k)
        return self.eta


@dataclass(frozen=True)
class OnlineAffineModel:
    """Recursive least squares for omega ~ A^T x + c with forgetting.

    Sufficient statistics over augmented inputs z = (x, 1) are discounted by
    the forgetting factor once per batch; the solve is ridge-stabilized so a
    single-support design (all draws at one x) stays well posed.
    """

    zz: np.ndarray  # (n + 1, n + 1)
    zw: np.ndarray  # (n + 1, d)

    @staticmethod
    def empty(n: int, d: int) -> "OnlineAffineModel":
        return OnlineAffineModel(zz=np.zeros((n + 1, n + 1)), zw=np.zeros((n + 1, d)))

    def update(self, x: np.ndarray, draws: np.ndarray, forget: float) -> "OnlineAffineModel":
        z = np.append(x, 1.0)
        count = draws.shape[0]
        return OnlineAffineModel(
            zz=forget * self.zz + count * np.outer(z, z),
            zw=forget * self.zw + z[:, None] * draws.sum(axis=0)[None, :],
        )

    def coefficients(self, ridge: float) -> tuple[np.ndarray, np.ndarray]:
        n = self.zz.shape[0] - 1
        theta = np.linalg.solve(self.zz + ridge * np.eye(n + 1), self.zw)
        return theta[:n], theta[n]  # A (n, d), c (d,)


@dataclass(frozen=True)
class BaselineState:
    x: np.ndarray
    y: np.ndarray
    k: int
    diverged: bool
    model: Optional[OnlineAffineModel]
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class BaselineRecord:
    k: int
    x_after: np.ndarray
    grad_norm_est: float
    stepsize: float
    diverged: bool
    oracle_phi: float = math.nan
    oracle_grad_norm: float = math.nan
    oracle_samples: int = 0


def _diverged(x: np.ndarray, y: np.ndarray, threshold: float) -> bool:
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        return True
    return float(np.linalg.norm(np.concatenate([x, y]))) > threshold


def spd_step(
    state: BaselineState,
    problem: ProblemSpec,
    oracle: DistributionOracle,
    config: BaselineConfig,
    rng: np.random.Generator,
) -> BaselineState:
    """One stochastic primal-dual step; the x-gradient ignores the sampling
    distribution's dependence on x."""
    eta = config.stepsize(state.k)
    draws = oracle.sample(state.x, config.batch, rng)
    gx = np.mean(problem.grad1(state.x, state.y, draws), axis=0)
    gy = np.mean(problem.grad2(state.x, state.y, draws), axis=0)
    x_new = state.x - eta * gx
    y_new = _safe_project(problem, state.y + eta * gy)
    return replace(
        state,
        x=x_new,
        y=y_new,
        k=state.k + 1,
        diverged=_diverged(x_new, y_new, config.divergence_norm),
    )


def asgda_step(
    state: BaselineState,
    problem: ProblemSpec,
    oracle: DistributionOracle,
    config: BaselineConfig,
    rng: np.random.Generator,
) -> BaselineState:
    """One adaptive descent-ascent step: chain-rule-corrected x-gradient under
    the current global affine estimate of the map, then a model update."""
    draws = oracle.sample(state.x, config.batch, rng)
    a_hat, _ = state.model.coefficients(config.ridge)
    gx = np.mean(problem.grad1(state.x, state.y, draws), axis=0) + a_hat @ np.mean(
        problem.grad3(state.x, state.y, draws), axis=0
    )
    gy = np.mean(problem.grad2(state.x, state.y, draws), axis=0)
    x_new = state.x - config.eta_x * gx
    y_new = _safe_project(problem, state.y + config.eta_y * gy)
    model = state.model.update(state.x, draws, config.forget)
    return replace(
        state,
        x=x_new,
        y=y_new,
        k=state.k + 1,
        model=model,
        diverged=_diverged(x_new, y_new, config.divergence_norm),
    )


def _safe_project(problem: ProblemSpec, y: np.ndarray) -> np.ndarray:
    # Projection requires finite input; once the dual iterate blows up the
    # run is over anyway, so substitute the domain center to let the
    # divergence flag surface through the primal iterate.
    if not np.all(np.isfinite(y)):
        return problem.inner_domain.center()
    return problem.inner_domain.project(y)


def run_baseline(
    x0: np.ndarray,
    y0: Optional[np.ndarray],
    problem: ProblemSpec,
    oracle: DistributionOracle,
    config: BaselineConfig,
    diagnostics: Optional[OracleDiagnostics] = None,
) -> tuple[BaselineState, list[BaselineRecord]]:
    """Iterate the chosen baseline until divergence or the iteration budget.

    Divergence (iterate norm above the threshold, or a non-finite value) is
    recorded on the state and stops the run; it is not an exception.
    """
    rng = make_rng(config.seed)
    x0 = as_vector(x0, problem.n, "x0")
    y0 = problem.inner_domain.center() if y0 is None else as_vector(y0, problem.m, "y0")
    y0 = problem.inner_domain.project(y0)
    model = OnlineAffineModel.empty(problem.n, problem.d) if config.method == "asgda" else None
    state = BaselineState(x=x0, y=y0, k=0, diverged=False, model=model, history=[])
    step = asgda_step if config.method == "asgda" else spd_step

    for _ in range(config.max_iters):
        step_rng, diag_rng = rng.spawn(2)
        prev_x = state.x
        eta = config.eta_x if config.method == "asgda" else config.stepsize(state.k)
        state = step(state, problem, oracle, config, step_rng)
        grad_norm = float(np.linalg.norm((state.x - prev_x) / eta))
        oracle_phi = math.nan
        oracle_grad = math.nan
        oracle_samples = 0
        if diagnostics is not None and not state.diverged:
            phi_rng, grad_rng = diag_rng.spawn(2)
            oracle_phi = float(diagnostics.value(prev_x, phi_rng))
            oracle_grad = float(diagnostics.grad_norm(prev_x, grad_rng))
            oracle_samples = diagnostics.sample_count
        state.history.append(
            BaselineRecord(
                k=state.k - 1,
                x_after=state.x,
                grad_norm_est=grad_norm,
                stepsize=eta,
                diverged=state.diverged,
                oracle_phi=oracle_phi,
                oracle_grad_norm=oracle_grad,
                oracle_samples=oracle_samples,
            )
        )
        if state.diverged:
            break
    return state, state.history

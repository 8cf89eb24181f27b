"""Trust-region driver for minimax problems with decision-dependent sampling.

One iteration: fit a local linear regression of the distribution map inside
the current ball, maximize the surrogate scenario average in y, take the
radius-length step along the negative surrogate x-gradient, require the
surrogate sufficient-descent inequality to hold, estimate the primal value at
the old and trial points with fresh oracle samples, and accept or reject on
the actual-to-predicted reduction ratio together with a gradient-versus-radius
test.  Accepted steps grow the radius (capped), rejected ones shrink it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import llr
from .core import (
    ConfigurationError,
    DistributionOracle,
    ProblemSpec,
    as_vector,
    make_rng,
)
from .inner import maximize_over_scenarios


class DegenerateGradientError(RuntimeError):
    """The surrogate gradient vanished; no trial direction exists."""


@dataclass(frozen=True)
class SampleSchedule:
    """Per-iteration sample count, either fixed or growing as the radius shrinks.

    With ``fixed`` set, that count is used verbatim (the regime of the
    reported experiments).  Otherwise the count is
    ``ceil(coeff * max(delta**-power, 1))`` clamped to [minimum, maximum].
    """

    fixed: Optional[int] = 300
    coeff: float = 1.0
    power: float = 4.0
    minimum: int = 10
    maximum: int = 5000

    def __post_init__(self):
        if self.fixed is not None and self.fixed < 1:
            raise ConfigurationError("fixed sample count must be >= 1")
        if self.fixed is None and not (1 <= self.minimum <= self.maximum):
            raise ConfigurationError("need 1 <= minimum <= maximum")

    def count(self, delta: float) -> int:
        if self.fixed is not None:
            return self.fixed
        raw = math.ceil(self.coeff * max(delta**-self.power, 1.0))
        return int(min(max(raw, self.minimum), self.maximum))


@dataclass(frozen=True)
class TRConfig:
    delta0: float = 1.0
    delta_max: float = 2.0
    gamma: float = 2.0
    eta1: float = 0.25
    eta2: float = 0.1
    kappa_dcp: float = 1e-3
    llr_schedule: SampleSchedule = field(default_factory=lambda: SampleSchedule(fixed=300))
    value_schedule: SampleSchedule = field(
        default_factory=lambda: SampleSchedule(fixed=100, coeff=50.0, power=2.0, minimum=50)
    )
    inner_eps_coeff: float = 0.1
    inner_eps_floor: float = 1e-12
    lambda_max: float = 100.0
    poisedness_rounds: int = 50
    grad_floor: float = 1e-12
    pred_floor: float = 1e-14
    max_iters: int = 300
    seed: int = 0
    # Optional stopping rule (both thresholds must hold for `stop_patience`
    # consecutive iterations); disabled by default to mirror a fixed-length run.
    stop_grad_tol: Optional[float] = None
    stop_delta_tol: Optional[float] = None
    stop_patience: int = 5

    def __post_init__(self):
        if not (0 < self.delta0 < self.delta_max):
            raise ConfigurationError("need 0 < delta0 < delta_max")
        if self.gamma <= 1:
            raise ConfigurationError("gamma must exceed 1")
        if not (0 < self.eta1 < 1):
            raise ConfigurationError("eta1 must lie in (0, 1)")
        if self.eta2 <= 0:
            raise ConfigurationError("eta2 must be positive")
        if self.kappa_dcp <= 0:
            raise ConfigurationError("kappa_dcp must be positive")
        if self.max_iters < 0:
            raise ConfigurationError("max_iters must be nonnegative")

    def inner_eps(self, delta: float) -> float:
        return max(self.inner_eps_coeff * min(delta, delta**2), self.inner_eps_floor)


@dataclass(frozen=True)
class OracleDiagnostics:
    """Ground-truth evaluators logged alongside the run when available.

    ``sample_count`` is 0 for closed-form oracles, otherwise the Monte-Carlo
    sample size the callables use.  ``value_and_grad_norm``, when provided,
    computes both quantities from one sample set.
    """

    value: Callable[[np.ndarray, np.random.Generator], float]
    grad_norm: Callable[[np.ndarray, np.random.Generator], float]
    sample_count: int = 0
    value_and_grad_norm: Optional[
        Callable[[np.ndarray, np.random.Generator], tuple[float, float]]
    ] = None

    def evaluate(self, x: np.ndarray, rng: np.random.Generator) -> tuple[float, float]:
        if self.value_and_grad_norm is not None:
            phi, grad = self.value_and_grad_norm(x, rng)
            return float(phi), float(grad)
        phi_rng, grad_rng = rng.spawn(2)
        return float(self.value(x, phi_rng)), float(self.grad_norm(x, grad_rng))


@dataclass(frozen=True)
class IterationRecord:
    k: int
    x_before: np.ndarray
    x_after: np.ndarray
    delta: float
    delta_next: float
    rho: float
    grad_norm_surrogate: float
    v_k: float
    v_k_half: float
    accepted: bool
    descent_lhs: float
    descent_rhs: float
    descent_ok: bool
    n_llr: int
    n_value: int
    n_value_half: int
    b1_frobenius: float
    oracle_phi: float = math.nan
    oracle_grad_norm: float = math.nan
    oracle_samples: int = 0


@dataclass(frozen=True)
class TRState:
    x: np.ndarray
    delta: float
    k: int
    y_warm: np.ndarray
    history: list[IterationRecord]


def surrogate_value_and_xgrad(
    problem: ProblemSpec, model: llr.LLRModel, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Surrogate value and its x-gradient at (x, y), exact over the residual scenarios.

    The gradient carries the chain-rule correction through the fitted map:
    ``mean(grad1) + b1 @ mean(grad3)``.
    """
    x = as_vector(x, problem.n, "x")
    y = as_vector(y, problem.m, "y")
    scenarios = model.surrogate_scenarios(x)
    value = float(np.mean(problem.loss(x, y, scenarios)))
    g1 = np.mean(problem.grad1(x, y, scenarios), axis=0)
    g3 = np.mean(problem.grad3(x, y, scenarios), axis=0)
    return value, g1 + model.b1 @ g3


def trial_step(grad: np.ndarray, delta: float) -> np.ndarray:
    """Radius-length step along the negative gradient direction."""
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    grad = np.asarray(grad, dtype=float)
    norm = float(np.linalg.norm(grad))
    if norm == 0.0 or not math.isfinite(norm):
        raise DegenerateGradientError("cannot normalize a zero or non-finite gradient")
    return -delta * grad / norm


def check_sufficient_descent(
    lhs_old: float, lhs_new: float, grad_norm: float, delta: float, kappa_dcp: float
) -> bool:
    return (lhs_old - lhs_new) >= kappa_dcp * grad_norm * min(delta, 1.0)


def estimate_value(
    problem: ProblemSpec,
    oracle: DistributionOracle,
    x: np.ndarray,
    count: int,
    inner_eps: float,
    y_warm: np.ndarray,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Sample-average estimate of the primal value at x.

    Draws ``count`` fresh samples, maximizes their average in y to tolerance
    ``inner_eps``, and returns the average loss at that maximizer along with
    the maximizer itself (for warm starting).
    """
    if count < 1:
        raise ConfigurationError("value-estimate sample count must be >= 1")
    x = as_vector(x, problem.n, "x")
    draws = oracle.sample(x, count, rng)
    report = maximize_over_scenarios(problem, x, draws, y_warm, inner_eps)
    value = float(np.mean(problem.loss(x, report.maximizer, draws)))
    return value, report.maximizer


def acceptance_update(
    rho: float, grad_norm: float, delta: float, config: TRConfig
) -> tuple[bool, float]:
    """The two-condition acceptance rule and the matching radius update."""
    accepted = (rho >= config.eta1) and (grad_norm >= config.eta2 * delta)
    if accepted:
        delta_next = min(config.gamma * delta, config.delta_max)
    else:
        delta_next = delta / config.gamma
    return accepted, delta_next


def iterate(
    state: TRState,
    problem: ProblemSpec,
    oracle: DistributionOracle,
    config: TRConfig,
    rng: np.random.Generator,
    diagnostics: Optional[OracleDiagnostics] = None,
) -> TRState:
    """Run one full trust-region iteration and append its record."""
    llr_rng, vk_rng, vh_rng, diag_rng = rng.spawn(4)
    x, delta, k = state.x, state.delta, state.k

    n_llr = config.llr_schedule.count(delta)
    if config.llr_schedule.fixed is None:
        n_llr = max(n_llr, problem.n + 5)
    samples = llr.generate_poised_set(
        oracle, x, delta, n_llr, config.lambda_max, llr_rng, config.poisedness_rounds
    )
    model = llr.fit(samples)
    b1_fro = float(np.linalg.norm(model.b1, "fro"))

    eps = config.inner_eps(delta)
    rep_old = maximize_over_scenarios(
        problem, x, model.surrogate_scenarios(x), state.y_warm, eps
    )
    l_old, g = surrogate_value_and_xgrad(problem, model, x, rep_old.maximizer)
    grad_norm = float(np.linalg.norm(g))

    oracle_phi = math.nan
    oracle_grad = math.nan
    oracle_samples = 0
    if diagnostics is not None:
        oracle_phi, oracle_grad = diagnostics.evaluate(x, diag_rng)
        oracle_samples = diagnostics.sample_count

    def finish(x_after, rho, v_k, v_half, n_v, n_vh, lhs_new, descent_ok, y_warm):
        accepted, delta_next = acceptance_update(rho, grad_norm, delta, config)
        if not accepted:
            x_after = x
            y_warm = state.y_warm
        record = IterationRecord(
            k=k,
            x_before=x,
            x_after=x_after,
            delta=delta,
            delta_next=delta_next,
            rho=rho,
            grad_norm_surrogate=grad_norm,
            v_k=v_k,
            v_k_half=v_half,
            accepted=accepted,
            descent_lhs=l_old - lhs_new if math.isfinite(lhs_new) else math.nan,
            descent_rhs=config.kappa_dcp * grad_norm * min(delta, 1.0),
            descent_ok=descent_ok,
            n_llr=n_llr,
            n_value=n_v,
            n_value_half=n_vh,
            b1_frobenius=b1_fro,
            oracle_phi=oracle_phi,
            oracle_grad_norm=oracle_grad,
            oracle_samples=oracle_samples,
        )
        state.history.append(record)
        return replace(
            state, x=x_after, delta=delta_next, k=k + 1, y_warm=y_warm, history=state.history
        )

    if grad_norm < config.grad_floor:
        # No usable direction; the eta2 test would reject such a step anyway.
        return finish(x, -math.inf, math.nan, math.nan, 0, 0, math.nan, False, state.y_warm)

    s = trial_step(g, delta)
    x_trial = x + s
    rep_new = maximize_over_scenarios(
        problem, x_trial, model.surrogate_scenarios(x_trial), rep_old.maximizer, eps
    )
    l_new, _ = surrogate_value_and_xgrad(problem, model, x_trial, rep_new.maximizer)

    if not check_sufficient_descent(l_old, l_new, grad_norm, delta, config.kappa_dcp):
        # The fixed normalized-gradient step failed the descent requirement:
        # treat as unsuccessful so the shrinking radius improves the surrogate.
        return finish(x, -math.inf, math.nan, math.nan, 0, 0, l_new, False, state.y_warm)

    n_value = config.value_schedule.count(delta)
    v_k, _ = estimate_value(problem, oracle, x, n_value, eps, rep_old.maximizer, vk_rng)
    v_half, _ = estimate_value(problem, oracle, x_trial, n_value, eps, rep_new.maximizer, vh_rng)

    pred = l_old - l_new
    rho = -math.inf if abs(pred) < config.pred_floor else (v_k - v_half) / pred
    return finish(x_trial, rho, v_k, v_half, n_value, n_value, l_new, True, rep_new.maximizer)


def solve(
    x0: np.ndarray,
    problem: ProblemSpec,
    oracle: DistributionOracle,
    config: TRConfig,
    diagnostics: Optional[OracleDiagnostics] = None,
) -> tuple[TRState, list[IterationRecord]]:
    """Run the driver for ``config.max_iters`` iterations (or until the
    optional stopping rule fires) and return the final state plus history."""
    rng = make_rng(config.seed)
    x0 = as_vector(x0, problem.n, "x0")
    state = TRState(
        x=x0, delta=config.delta0, k=0, y_warm=problem.inner_domain.center(), history=[]
    )
    use_stop = config.stop_grad_tol is not None and config.stop_delta_tol is not None
    streak = 0
    for _ in range(config.max_iters):
        state = iterate(state, problem, oracle, config, rng, diagnostics)
        if use_stop:
            rec = state.history[-1]
            if (
                rec.grad_norm_surrogate < config.stop_grad_tol
                and rec.delta < config.stop_delta_tol
            ):
                streak += 1
                if streak >= config.stop_patience:
                    break
            else:
                streak = 0
    return state, state.history

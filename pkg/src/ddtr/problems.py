"""Benchmark problems: a scalar synthetic instance with a closed-form primal
function, and a distributionally robust logistic-regression instance whose
features shift with the classifier.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import (
    Box,
    ConfigurationError,
    DistributionOracle,
    IngestionError,
    ProblemSpec,
    Simplex,
    uniform_ball_sample,
)
from .tr import OracleDiagnostics

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Instance:
    """A runnable pairing of problem, sampler, ground-truth diagnostics and
    the default initial-point ball.

    When ``y0_center`` is set, the starting pair (x0, y0) is drawn jointly
    from one ball around (x0_center, y0_center); otherwise only x0 is drawn
    and the inner iterate starts at the domain center.
    """

    problem: ProblemSpec
    oracle: DistributionOracle
    diagnostics: Optional[OracleDiagnostics]
    x0_center: np.ndarray
    x0_radius: float
    y0_center: Optional[np.ndarray] = None

    def draw_start(self, rng: np.random.Generator) -> tuple[np.ndarray, Optional[np.ndarray]]:
        if self.y0_center is None:
            return uniform_ball_sample(self.x0_center, self.x0_radius, 1, rng)[0], None
        joint = np.concatenate([self.x0_center, self.y0_center])
        point = uniform_ball_sample(joint, self.x0_radius, 1, rng)[0]
        n = self.x0_center.shape[0]
        return point[:n], self.problem.inner_domain.project(point[n:])


# ---------------------------------------------------------------------------
# Synthetic scalar problem: loss x^2 - 2(x+y)w - y^2, w = x^3 + noise.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticProblem:
    noise_sigma: float = 1.0
    half_width: float = 125.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be nonnegative")
        if self.half_width <= 0:
            raise ConfigurationError("half_width must be positive")


def synthetic_primal(x: float, half_width: float = 125.0) -> float:
    """Closed-form primal value max_{|y| <= h} {x^2 - 2(x+y)x^3 - y^2}.

    The inner maximizer is y = -x^3 clamped to the box, which splits the
    formula into three branches meeting at |x| = h**(1/3).
    """
    knee = half_width ** (1.0 / 3.0)
    if x > knee:
        return x**2 - 2 * x**4 + 2 * half_width * x**3 - half_width**2
    if x < -knee:
        return x**2 - 2 * x**4 - 2 * half_width * x**3 - half_width**2
    return x**2 - 2 * x**4 + x**6


def synthetic_primal_grad(x: float, half_width: float = 125.0) -> float:
    """Derivative of the active branch of the closed-form primal."""
    knee = half_width ** (1.0 / 3.0)
    if x > knee:
        return 2 * x - 8 * x**3 + 6 * half_width * x**2
    if x < -knee:
        return 2 * x - 8 * x**3 - 6 * half_width * x**2
    return 2 * x - 8 * x**3 + 6 * x**5


def synthetic_instance(params: SyntheticProblem = SyntheticProblem()) -> Instance:
    h = params.half_width
    sigma = params.noise_sigma

    def loss(x, y, w):
        return x[0] ** 2 - 2.0 * (x[0] + y[0]) * w[:, 0] - y[0] ** 2

    def grad1(x, y, w):
        return (2.0 * x[0] - 2.0 * w[:, 0])[:, None]

    def grad2(x, y, w):
        return (-2.0 * w[:, 0] - 2.0 * y[0])[:, None]

    def grad3(x, y, w):
        return np.full((w.shape[0], 1), -2.0 * (x[0] + y[0]))

    problem = ProblemSpec(
        n=1,
        m=1,
        d=1,
        loss=loss,
        grad1=grad1,
        grad2=grad2,
        grad3=grad3,
        inner_domain=Box(np.array([-h]), np.array([h])),
        mu=2.0,
        ell=2.0,
    )

    def sampler(x, count, rng):
        return x[0] ** 3 + sigma * rng.standard_normal((count, 1))

    oracle = DistributionOracle(d=1, sampler=sampler)
    diagnostics = OracleDiagnostics(
        value=lambda x, rng: synthetic_primal(float(x[0]), h),
        grad_norm=lambda x, rng: abs(synthetic_primal_grad(float(x[0]), h)),
        sample_count=0,
    )
    return Instance(
        problem=problem,
        oracle=oracle,
        diagnostics=diagnostics,
        x0_center=np.array([10.0]),
        x0_radius=0.5,
        y0_center=np.array([10.0]),
    )


# ---------------------------------------------------------------------------
# Distributionally robust logistic regression over the simplex.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DROProblem:
    """Robust logistic regression whose features respond to the classifier.

    The objective is (1/N) sum_i y_i log(1 + exp(-b_i a_i(x)^T x)) + f(x) - g(y)
    with a_i(x) = a0_i + shift_scale * sin(x) componentwise,
    f(x) = lambda1 * sum_j alpha x_j^2 / (1 + alpha x_j^2) and
    g(y) = 0.5 * lambda2 * ||N y - 1||^2 over the probability simplex.
    """

    features: np.ndarray  # (N, n) base features a0_i
    labels: np.ndarray  # (N,) in {-1, +1}
    shift_scale: float = 5.0
    lambda1: float = 1.0
    lambda2: Optional[float] = None  # defaults to 10 / N^2
    alpha: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=float)
        if feats.ndim != 2 or feats.shape[0] != labels.shape[0]:
            raise ConfigurationError("features must be (N, n) with one label per row")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ConfigurationError("labels must be -1 or +1")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if self.lambda2 is None:
            object.__setattr__(self, "lambda2", 10.0 / feats.shape[0] ** 2)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def _f_value(x, lambda1, alpha):
    q = alpha * x**2
    return lambda1 * float(np.sum(q / (1.0 + q)))

def _f_grad(x, lambda1, alpha):
    return lambda1 * 2.0 * alpha * x / (1.0 + alpha * x**2) ** 2


def dro_instance(dro: DROProblem, diag_samples: int = 5000) -> Instance:
    N, n = dro.n_rows, dro.n_features
    d = N * n
    b = dro.labels
    lam1, lam2, alpha = dro.lambda1, dro.lambda2, dro.alpha

    def loss(x, y, w):
        a = w.reshape(-1, N, n)
        margins = -b[None, :] * (a @ x)  # (S, N)
        losses = np.logaddexp(0.0, margins)
        reg = 0.5 * lam2 * float(np.sum((N * y - 1.0) ** 2))
        return losses @ y / N + _f_value(x, lam1, alpha) - reg

    def grad1(x, y, w):
        a = w.reshape(-1, N, n)
        margins = -b[None, :] * (a @ x)
        coef = (-b * y)[None, :] * expit(margins) / N  # (S, N)
        return np.einsum("sN,sNn->sn", coef, a) + _f_grad(x, lam1, alpha)

    def grad2(x, y, w):
        a = w.reshape(-1, N, n)
        margins = -b[None, :] * (a @ x)
        losses = np.logaddexp(0.0, margins)
        return losses / N - (lam2 * N * (N * y - 1.0))[None, :]

    def grad3(x, y, w):
        a = w.reshape(-1, N, n)
        margins = -b[None, :] * (a @ x)
        coef = (-b * y)[None, :] * expit(margins) / N  # (S, N)
        return (coef[:, :, None] * x[None, None, :]).reshape(-1, d)

    problem = ProblemSpec(
        n=n,
        m=N,
        d=d,
        loss=loss,
        grad1=grad1,
        grad2=grad2,
        grad3=grad3,
        inner_domain=Simplex(N),
        mu=lam2 * N**2,
        ell=lam2 * N**2,
    )

    base = dro.features

    def sampler(x, count, rng):
        shifted = base + dro.shift_scale * np.sin(x)[None, :]
        draws = np.broadcast_to(shifted, (count, N, n)).copy()
        if dro.noise_sigma > 0:
            draws += dro.noise_sigma * rng.standard_normal((count, N, n))
        return draws.reshape(count, d)

    oracle = DistributionOracle(d=d, sampler=sampler)

    simplex = Simplex(N)

    def _mc_state(x, rng):
        # Monte-Carlo estimate of the primal value and gradient, with the
        # inner maximum solved in closed form: the y-part of the objective is
        # mean_losses^T y / N - (lam2 N^2 / 2) ||y - uniform||^2, an isotropic
        # quadratic whose constrained maximizer is one simplex projection.
        a = oracle.sample(x, diag_samples, rng).reshape(-1, N, n)
        margins = -b[None, :] * (a @ x)
        mean_losses = np.mean(np.logaddexp(0.0, margins), axis=0)  # (N,)
        y_star = simplex.project(1.0 / N + mean_losses / (lam2 * N**3))
        return a, margins, mean_losses, y_star

    def mc_value(x, rng):
        _, _, mean_losses, y_star = _mc_state(x, rng)
        reg = 0.5 * lam2 * float(np.sum((N * y_star - 1.0) ** 2))
        return float(mean_losses @ y_star / N + _f_value(x, lam1, alpha) - reg)

    def _grad_norm_from_state(x, state):
        a, margins, _, y_star = state
        coef = (-b * y_star)[None, :] * expit(margins) / N  # (S, N)
        g1 = np.mean(np.einsum("sN,sNn->sn", coef, a), axis=0) + _f_grad(x, lam1, alpha)
        g3_rows = np.mean(coef, axis=0)[:, None] * x[None, :]  # (N, n)
        chain = dro.shift_scale * np.cos(x) * np.sum(g3_rows, axis=0)
        return float(np.linalg.norm(g1 + chain))

    def mc_grad_norm(x, rng):
        return _grad_norm_from_state(x, _mc_state(x, rng))

    def mc_value_and_grad_norm(x, rng):
        state = _mc_state(x, rng)
        _, _, mean_losses, y_star = state
        reg = 0.5 * lam2 * float(np.sum((N * y_star - 1.0) ** 2))
        value = float(mean_losses @ y_star / N + _f_value(x, lam1, alpha) - reg)
        return value, _grad_norm_from_state(x, state)

    diagnostics = OracleDiagnostics(
        value=mc_value,
        grad_norm=mc_grad_norm,
        sample_count=diag_samples,
        value_and_grad_norm=mc_value_and_grad_norm,
    )
    return Instance(
        problem=problem,
        oracle=oracle,
        diagnostics=diagnostics,
        x0_center=np.full(n, 2.0),
        x0_radius=0.5,
    )


def dro_inner_exact_check(
    dro: DROProblem,
    x: np.ndarray,
    y: np.ndarray,
    sample_indices: Optional[Sequence[int]] = None,
) -> float:
    """Independent straight-line evaluation of the robust objective.

    Computes the objective with decision-dependent features over the selected
    rows (all rows by default) using scalar arithmetic only, as a test oracle
    for the vectorized evaluators.  When a subset of K rows is selected, y
    must lie in the K-simplex and N is replaced by K throughout.
    """
    indices = range(dro.n_rows) if sample_indices is None else list(sample_indices)
    for i in indices:
        if not (0 <= i < dro.n_rows):
            raise IndexError(f"sample index {i} out of range [0, {dro.n_rows})")
    k_rows = len(list(indices))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    total = 0.0
    for pos, i in enumerate(indices):
        a_i = [
            dro.features[i, j] + dro.shift_scale * math.sin(x[j])
            for j in range(dro.n_features)
        ]
        z = sum(a_i[j] * x[j] for j in range(dro.n_features))
        total += y[pos] * math.log(1.0 + math.exp(-dro.labels[i] * z))
    f = dro.lambda1 * sum(
        dro.alpha * x[j] ** 2 / (1.0 + dro.alpha * x[j] ** 2) for j in range(len(x))
    )
    g = 0.5 * dro.lambda2 * sum((k_rows * y[pos] - 1.0) ** 2 for pos in range(k_rows))
    return total / k_rows + f - g


# ---------------------------------------------------------------------------
# Data ingestion for the robust regression experiment.
# ---------------------------------------------------------------------------

_MISSING = {"", "na", "nan", "null"}


def load_credit_csv(
    path,
    label_column: str = "SeriousDlqin2yrs",
    feature_columns: Optional[Sequence[str]] = None,
    **problem_kwargs,
) -> DROProblem:
    """Build a DROProblem from a credit-scoring CSV.

    Expected schema: a header row; one label column with values {0, 1}
    (mapped to {-1, +1}); every other listed column numeric.  Rows with
    missing values are dropped with a warning; features are standardized to
    zero mean and unit variance per column.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if label_column not in header:
            raise IngestionError(f"{path}: label column {label_column!r} not in header")
        label_idx = header.index(label_column)
        if feature_columns is None:
            feat_idx = [i for i in range(len(header)) if i != label_idx]
        else:
            missing = [c for c in feature_columns if c not in header]
            if missing:
                raise IngestionError(f"{path}: feature columns not in header: {missing}")
            feat_idx = [header.index(c) for c in feature_columns]
        if not feat_idx:
            raise IngestionError(f"{path}: no feature columns")

        rows, labels, dropped = [], [], 0
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            cells = [row[i].strip() for i in feat_idx] + [row[label_idx].strip()]
            if any(c.lower() in _MISSING for c in cells):
                dropped += 1
                log.warning("%s:%d: dropping row with missing value", path, lineno)
                continue
            try:
                feats = [float(row[i]) for i in feat_idx]
                raw_label = float(row[label_idx])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            if raw_label not in (0.0, 1.0):
                raise IngestionError(
                    f"{path}:{lineno}: label must be 0 or 1, got {raw_label}"
                )
            rows.append(feats)
            labels.append(2.0 * raw_label - 1.0)

    if not rows:
        raise IngestionError(f"{path}: no usable rows (dropped {dropped})")
    feats = np.asarray(rows)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std == 0.0] = 1.0
    log.info(
        "%s: loaded %d rows x %d features (%d dropped)", path, len(rows), feats.shape[1], dropped
    )
    return DROProblem(
        features=(feats - mean) / std, labels=np.asarray(labels), **problem_kwargs
    )


def generate_synthetic_credit(
    n_rows: int, n_features: int, seed: int, **problem_kwargs
) -> DROProblem:
    """Gaussian features with labels from a planted logistic model.

    Deterministic given the seed; stands in for the external credit data set.
    """
    if n_rows < 2:
        raise ConfigurationError("need at least 2 rows")
    if n_features < 1:
        raise ConfigurationError("need at least 1 feature")
    rng = np.random.Generator(np.random.Philox(seed))
    feats = rng.standard_normal((n_rows, n_features))
    planted = rng.standard_normal(n_features)
    probs = expit(feats @ planted)
    labels = np.where(rng.uniform(size=n_rows) < probs, 1.0, -1.0)
    feats = (feats - feats.mean(axis=0)) / feats.std(axis=0)
    return DROProblem(features=feats, labels=labels, **problem_kwargs)


def subsample(dro: DROProblem, n_rows: int, seed: int) -> DROProblem:
    """Deterministically subsample rows (without replacement) of a data set.

    ``lambda2`` is recomputed for the new size (its default couples to N).
    """
    if n_rows > dro.n_rows:
        raise ConfigurationError(f"cannot subsample {n_rows} of {dro.n_rows} rows")
    rng = np.random.Generator(np.random.Philox(seed))
    idx = np.sort(rng.choice(dro.n_rows, size=n_rows, replace=False))
    return DROProblem(
        features=dro.features[idx],
        labels=dro.labels[idx],
        shift_scale=dro.shift_scale,
        lambda1=dro.lambda1,
        lambda2=None,
        alpha=dro.alpha,
        noise_sigma=dro.noise_sigma,
    )

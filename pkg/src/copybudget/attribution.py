"""Per-sample contribution scoring on a small closed-form surrogate model.

The surrogate is a ridge-regularized linear regressor whose scalar target
is derived from the sample features themselves, so the whole pipeline is
self-contained: fit subset models, project per-sample gradients, combine
them through the subset kernel, and average over subsets. A leave-one-out
refit oracle lives alongside for verification.

Two measurements are supported: ``TRAK`` scores gradients of the model
output and weights them by the loss-vs-output derivative of each subset
sample; ``DTRAK`` scores gradients of the squared model output and uses a
plain sum over the subset.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .config import AttributionParams
from .samples import Sample, features_matrix, sum_by_holder

# Damping added to the subset kernel before inversion, relative to its trace.
_KERNEL_DAMPING = 1e-8


class Measure(str, Enum):
    TRAK = "trak"
    DTRAK = "dtrak"


class AttributionError(ValueError):
    pass


# Saturation gain of the scalar target; high enough that far-out samples
# clip to the same target value.
_TARGET_GAIN = 3.0


def scalar_target(features: np.ndarray) -> np.ndarray:
    """Regression target derived from the features (saturating row sum)."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    score = features.sum(axis=1) / np.sqrt(features.shape[1])
    return np.tanh(_TARGET_GAIN * score) / _TARGET_GAIN


@dataclass(frozen=True)
class SurrogateModel:
    """Ridge least-squares fit of the scalar target on the raw features.

    The penalty scales with the sample count, so the shrinkage fraction is
    independent of how much data the model was fitted on; in particular,
    duplicating the dataset leaves the fitted parameters unchanged.
    """

    theta: np.ndarray
    regularizer: float

    def output(self, features: np.ndarray) -> np.ndarray:
        return np.atleast_2d(features) @ self.theta

    def loss(self, features: np.ndarray) -> np.ndarray:
        residual = self.output(features) - scalar_target(features)
        return residual**2

    def grad_output(self, features: np.ndarray) -> np.ndarray:
        """d output / d theta, one row per sample (independent of theta)."""
        return np.atleast_2d(np.asarray(features, dtype=float)).copy()

    def grad_squared_output(self, features: np.ndarray) -> np.ndarray:
        """d output^2 / d theta = 2 * output * features."""
        x = np.atleast_2d(np.asarray(features, dtype=float))
        return 2.0 * self.output(x)[:, None] * x

    def loss_output_derivative(self, features: np.ndarray) -> np.ndarray:
        """d loss / d output = 2 * residual, per sample."""
        x = np.atleast_2d(np.asarray(features, dtype=float))
        return 2.0 * (self.output(x) - scalar_target(x))


def fit_subset_model(
    samples: Sequence[Sample] | np.ndarray, regularizer: float
) -> SurrogateModel:
    """Closed-form ridge solve of theta on the given samples."""
    if regularizer <= 0:
        raise AttributionError("regularizer must be > 0")
    x = _as_matrix(samples)
    if x.shape[0] < 1:
        raise AttributionError("need at least one sample to fit")
    y = scalar_target(x)
    gram = x.T @ x + regularizer * x.shape[0] * np.eye(x.shape[1])
    theta = np.linalg.solve(gram, x.T @ y)
    return SurrogateModel(theta=theta, regularizer=regularizer)


@dataclass(frozen=True)
class ProjectionMatrix:
    """Random Gaussian projection, drawn once per subset and then fixed."""

    matrix: np.ndarray  # (model_dim, proj_dim)

    @classmethod
    def draw(cls, model_dim: int, proj_dim: int, rng: np.random.Generator) -> "ProjectionMatrix":
        if proj_dim > model_dim:
            raise AttributionError("proj_dim must not exceed the model dimension")
        return cls(matrix=rng.standard_normal((model_dim, proj_dim)))

    @classmethod
    def identity(cls, model_dim: int) -> "ProjectionMatrix":
        return cls(matrix=np.eye(model_dim))


def projected_gradient(
    model: SurrogateModel,
    x: Sample | np.ndarray,
    projection: ProjectionMatrix,
    measure: Measure,
) -> np.ndarray:
    """Projected per-sample gradient of the chosen measurement."""
    features = x.features if isinstance(x, Sample) else np.asarray(x, dtype=float)
    if features.ndim != 1:
        raise AttributionError("expected a single sample")
    if features.shape[0] != projection.matrix.shape[0]:
        raise AttributionError("feature and projection dimensions disagree")
    if measure is Measure.TRAK:
        grad = model.grad_output(features)[0]
    else:
        grad = model.grad_squared_output(features)[0]
    return projection.matrix.T @ grad


@dataclass(frozen=True)
class AttributionResult:
    """Raw and normalized per-sample scores plus per-holder totals for a round."""

    tau: np.ndarray
    beta: np.ndarray
    holder_beta: dict[str, float]
    round_index: int
    tau_min: float
    tau_max: float

    @classmethod
    def from_raw(
        cls,
        tau: np.ndarray,
        holder_ids: Sequence[str],
        holder_order: Sequence[str],
        round_index: int,
    ) -> "AttributionResult":
        beta = normalize_contributions(tau)
        return cls(
            tau=np.asarray(tau, dtype=float),
            beta=beta,
            holder_beta=holder_contribution(beta, holder_ids, holder_order),
            round_index=round_index,
            tau_min=float(np.min(tau)),
            tau_max=float(np.max(tau)),
        )


def trak_scores(
    train: Sequence[Sample] | np.ndarray,
    params: AttributionParams,
    rng: np.random.Generator,
    measure: Measure = Measure.DTRAK,
    identity_projection: bool = False,
) -> np.ndarray:
    """Raw attribution score per training sample, averaged over random subsets.

    For each subset: fit the surrogate, project every sample's measurement
    gradient, and score sample x as
    phi(x)^T (Phi^T Phi + damping)^{-1} Phi^T w, where Phi stacks the
    subset rows and w is the loss weighting (TRAK) or all-ones (DTRAK).

    `identity_projection` replaces the per-subset random matrices with the
    identity (requires proj_dim == model dim); used for verification against
    the unprojected definition.
    """
    x = _as_matrix(train)
    n, dim = x.shape
    k = params.subset_size if params.subset_size is not None else -(-n // 2)
    if k < 1 or k > n:
        raise AttributionError(f"subset size {k} impossible for {n} samples")
    if params.subsets < 1:
        raise AttributionError("need at least one subset")
    if params.proj_dim > dim:
        raise AttributionError("proj_dim must not exceed the model dimension")
    if identity_projection and params.proj_dim != dim:
        raise AttributionError("identity projection requires proj_dim == model dim")

    total = np.zeros(n)
    for _ in range(params.subsets):
        idx = rng.choice(n, size=k, replace=False)
        model = fit_subset_model(x[idx], params.fit_regularizer)
        if identity_projection:
            projection = ProjectionMatrix.identity(dim)
        else:
            projection = ProjectionMatrix.draw(dim, params.proj_dim, rng)
        if measure is Measure.TRAK:
            grads = model.grad_output(x)
            weights = model.loss_output_derivative(x[idx])
        else:
            grads = model.grad_squared_output(x)
            weights = np.ones(k)
        if not np.all(np.isfinite(grads)):
            bad = int(np.argwhere(~np.isfinite(grads))[0][0])
            raise AttributionError(f"non-finite gradient for sample index {bad}")
        phi_all = grads @ projection.matrix
        phi_subset = phi_all[idx]
        kernel = phi_subset.T @ phi_subset
        trace = float(np.trace(kernel))
        if trace == 0.0:
            continue  # all projected gradients vanish; subset contributes nothing
        damped = kernel + (_KERNEL_DAMPING * trace / k) * np.eye(params.proj_dim)
        total += phi_all @ np.linalg.solve(damped, phi_subset.T @ weights)
    return total / params.subsets


def normalize_contributions(tau: np.ndarray) -> np.ndarray:
    """Min-max normalization to [0, 1]; a flat score vector maps to all zeros.

    Flat within machine tolerance counts as flat, so numerically identical
    samples cannot have rounding dust stretched across the whole range.
    """
    tau = np.asarray(tau, dtype=float)
    if tau.size < 1:
        raise AttributionError("need at least one score")
    lo, hi = float(tau.min()), float(tau.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi), abs(lo)):
        return np.zeros_like(tau)
    return (tau - lo) / (hi - lo)


def holder_contribution(
    beta: np.ndarray,
    holder_ids: Sequence[str],
    holder_order: Sequence[str],
) -> dict[str, float]:
    return sum_by_holder(beta, holder_ids, holder_order)


def squared_output_total(model: SurrogateModel, features: np.ndarray) -> float:
    """Default evaluation measure for the leave-one-out oracle."""
    return float(np.sum(model.output(features) ** 2))


def loo_oracle(
    train: Sequence[Sample] | np.ndarray,
    eval_fn: Callable[[SurrogateModel, np.ndarray], float] = squared_output_total,
    regularizer: float = AttributionParams().fit_regularizer,
) -> np.ndarray:
    """Exact leave-one-out deltas of the evaluation measure.

    delta_i = eval(fit(all)) - eval(fit(all without i)), i.e. the marginal
    effect of sample i on the measure, evaluated over the full set. Used in
    tests and analysis only.
    """
    x = _as_matrix(train)
    n = x.shape[0]
    if n < 2:
        raise AttributionError("leave-one-out needs at least two samples")
    full_value = eval_fn(fit_subset_model(x, regularizer), x)
    deltas = np.empty(n)
    for i in range(n):
        rest = np.delete(x, i, axis=0)
        deltas[i] = full_value - eval_fn(fit_subset_model(rest, regularizer), x)
    return deltas


def _as_matrix(train: Sequence[Sample] | np.ndarray) -> np.ndarray:
    if isinstance(train, np.ndarray):
        return np.atleast_2d(np.asarray(train, dtype=float))
    return features_matrix(train)

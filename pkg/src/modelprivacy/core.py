"""Shared vocabulary of the attacker/defender game.

Queries, responses, target models, losses, utility budgets and fitted
models.  Everything here is immutable after construction so instances can be
handed to concurrent replicate workers without copying.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .errors import ConfigurationError

SIMPLEX_ATOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class QuerySet:
    """An ``n x d`` batch of queries; rows are the query points."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ConfigurationError(f"queries must be a non-empty n x d matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ConfigurationError("queries contain non-finite entries")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def column(self, j: int = 0) -> np.ndarray:
        return self.points[:, j]


class ResponseKind(str, enum.Enum):
    REGRESSION = "regression"
    LABEL = "label"
    PROBABILITY = "probability"


@dataclass(frozen=True)
class ResponseVector:
    """Responses returned for a batch of queries.

    ``values`` is a length-n real vector for regression, a length-n 0/1
    vector for hard labels, or an ``n x K`` row-stochastic matrix for
    probability outputs.
    """

    values: np.ndarray
    kind: ResponseKind = ResponseKind.REGRESSION

    def __post_init__(self):
        kind = ResponseKind(self.kind)
        vals = np.asarray(self.values, dtype=float)
        if kind is ResponseKind.PROBABILITY:
            if vals.ndim != 2 or vals.shape[1] < 2:
                raise ConfigurationError("probability responses must be an n x K matrix with K >= 2")
            if np.any(vals < -SIMPLEX_ATOL) or np.any(vals > 1 + SIMPLEX_ATOL):
                raise ConfigurationError("probability entries must lie in [0, 1]")
            if np.any(np.abs(vals.sum(axis=1) - 1.0) > SIMPLEX_ATOL):
                raise ConfigurationError("probability rows must sum to 1")
        else:
            if vals.ndim != 1:
                raise ConfigurationError(f"{kind.value} responses must be a vector")
            if kind is ResponseKind.LABEL and not np.all((vals == 0) | (vals == 1)):
                raise ConfigurationError("labels must be 0 or 1")
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("responses contain non-finite entries")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def n(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# Target models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolynomialTarget:
    """Univariate polynomial ``sum_j coefficients[j] * x**j``."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        coefs = tuple(float(c) for c in self.coefficients)
        if not coefs:
            raise ConfigurationError("polynomial needs at least one coefficient")
        if coefs[-1] == 0.0:
            raise ConfigurationError("leading polynomial coefficient must be non-zero")
        object.__setattr__(self, "coefficients", coefs)

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    @property
    def input_dim(self) -> int:
        return 1

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        # Horner
        out = np.full_like(x, self.coefficients[-1])
        for c in reversed(self.coefficients[:-1]):
            out = out * x + c
        return out


@dataclass(frozen=True)
class LinearTarget:
    """``f(x) = x @ beta`` without intercept."""

    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(np.ravel(self.beta)))

    @property
    def input_dim(self) -> int:
        return self.beta.shape[0]

    @property
    def support(self) -> frozenset[int]:
        """Zero-based indices of the non-zero coefficients."""
        return frozenset(int(i) for i in np.flatnonzero(self.beta))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.beta


@dataclass(frozen=True)
class LinearClassifierTarget:
    """Halfspace classifier ``1{x @ beta >= 0}``."""

    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(np.ravel(self.beta)))

    @property
    def input_dim(self) -> int:
        return self.beta.shape[0]

    def score(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.beta

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (self.score(x) >= 0).astype(float)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ProbClassifierTarget:
    """Soft-label classifier ``softmax(x @ weights.T + bias)`` over K classes."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        b = np.ravel(np.asarray(self.bias, dtype=float))
        if w.shape[0] < 2 or b.shape[0] != w.shape[0]:
            raise ConfigurationError("prob classifier needs K >= 2 weight rows and K biases")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "bias", _frozen(b))

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    def scores(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.weights.T + self.bias

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.scores(x))


TargetModel = PolynomialTarget | LinearTarget | LinearClassifierTarget | ProbClassifierTarget

REGRESSION_TARGETS = (PolynomialTarget, LinearTarget)


def response_kind_of(model: TargetModel) -> ResponseKind:
    if isinstance(model, LinearClassifierTarget):
        return ResponseKind.LABEL
    if isinstance(model, ProbClassifierTarget):
        return ResponseKind.PROBABILITY
    return ResponseKind.REGRESSION


def evaluate_target(model: TargetModel, queries: QuerySet) -> ResponseVector:
    """Clean responses ``f*(X_i)`` for every query."""
    if queries.d != model.input_dim:
        raise ConfigurationError(
            f"{type(model).__name__} expects {model.input_dim}-dimensional queries, got d={queries.d}"
        )
    return ResponseVector(model(queries.points), response_kind_of(model))


# ---------------------------------------------------------------------------
# Losses and budgets
# ---------------------------------------------------------------------------


class LossFunction(str, enum.Enum):
    SQUARED = "squared"
    ZERO_ONE = "zero_one"
    PROB_SQUARED = "prob_squared"

    def pointwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self is LossFunction.SQUARED:
            return (a - b) ** 2
        if self is LossFunction.ZERO_ONE:
            return (a != b).astype(float)
        return np.sum((a - b) ** 2, axis=-1)


_COMPATIBLE = {
    ResponseKind.REGRESSION: {LossFunction.SQUARED},
    ResponseKind.LABEL: {LossFunction.ZERO_ONE, LossFunction.SQUARED},
    ResponseKind.PROBABILITY: {LossFunction.PROB_SQUARED},
}


def default_loss(kind: ResponseKind) -> LossFunction:
    return {
        ResponseKind.REGRESSION: LossFunction.SQUARED,
        ResponseKind.LABEL: LossFunction.ZERO_ONE,
        ResponseKind.PROBABILITY: LossFunction.PROB_SQUARED,
    }[ResponseKind(kind)]


def empirical_utility_loss(
    clean: ResponseVector, perturbed: ResponseVector, loss: LossFunction | None = None
) -> float:
    """Mean per-query loss between clean and perturbed responses."""
    if clean.values.shape != perturbed.values.shape:
        raise ConfigurationError(
            f"response shapes differ: {clean.values.shape} vs {perturbed.values.shape}"
        )
    loss = default_loss(clean.kind) if loss is None else LossFunction(loss)
    if loss not in _COMPATIBLE[clean.kind]:
        raise ConfigurationError(f"loss {loss.value} is incompatible with {clean.kind.value} responses")
    return float(np.mean(loss.pointwise(clean.values, perturbed.values)))


@dataclass(frozen=True)
class UtilityBudget:
    """Per-query expected utility loss ``U_n`` the defender may spend."""

    value: float
    loss: LossFunction = LossFunction.SQUARED

    def __post_init__(self):
        v = float(self.value)
        if not np.isfinite(v) or v < 0:
            raise ConfigurationError(f"utility budget must be finite and >= 0, got {self.value}")
        if LossFunction(self.loss) is LossFunction.ZERO_ONE and v > 1:
            raise ConfigurationError("zero-one utility budget must lie in [0, 1]")
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "loss", LossFunction(self.loss))

    @classmethod
    def coerce(cls, budget: "UtilityBudget | float", loss: LossFunction = LossFunction.SQUARED):
        if isinstance(budget, UtilityBudget):
            return budget
        return cls(float(budget), loss)


@dataclass(frozen=True)
class FittedModel:
    """An attacker's rebuilt model plus whatever the fit chose along the way."""

    predict: Callable[[np.ndarray], np.ndarray]
    kind: ResponseKind = ResponseKind.REGRESSION
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.predict(x)

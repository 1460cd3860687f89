"""Query distributions and the simulation targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LinearTarget, PolynomialTarget, ProbClassifierTarget, QuerySet, TargetModel
from .errors import ConfigurationError
from .noise import SeedLike, as_rng


@dataclass(frozen=True)
class BetaDist:
    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigurationError("Beta shape parameters must be positive")

    @property
    def d(self) -> int:
        return 1

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.beta(self.alpha, self.beta, size=(n, 1))


@dataclass(frozen=True)
class UniformCube:
    d: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError("dimension must be >= 1")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.random((n, self.d))


@dataclass(frozen=True)
class StandardNormal:
    d: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError("dimension must be >= 1")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.d))


@dataclass(frozen=True)
class HighDimGrouped:
    """Forty covariates: three blocks of five near-duplicates, then 25 independent.

    Columns in block g are ``Z_g + eps`` with ``Z_g ~ N(0, 1)`` drawn per row
    and ``eps ~ N(0, noise_var)``.
    """

    n_groups: int = 3
    group_size: int = 5
    n_independent: int = 25
    noise_var: float = 0.01

    @property
    def d(self) -> int:
        return self.n_groups * self.group_size + self.n_independent

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        latent = rng.standard_normal((n, self.n_groups))
        grouped = np.repeat(latent, self.group_size, axis=1)
        grouped += np.sqrt(self.noise_var) * rng.standard_normal(grouped.shape)
        free = rng.standard_normal((n, self.n_independent))
        return np.hstack([grouped, free])

    def covariance(self) -> np.ndarray:
        cov = np.eye(self.d)
        for g in range(self.n_groups):
            block = slice(g * self.group_size, (g + 1) * self.group_size)
            cov[block, block] = 1.0
        k = self.n_groups * self.group_size
        cov[np.arange(k), np.arange(k)] = 1.0 + self.noise_var
        return cov


QueryDistribution = BetaDist | UniformCube | StandardNormal | HighDimGrouped


def sample_queries(dist: QueryDistribution, n: int, seed: SeedLike = None) -> QuerySet:
    if n < 1:
        raise ConfigurationError(f"need n >= 1 queries, got {n}")
    return QuerySet(dist.sample(int(n), as_rng(seed)))


def make_poly_scenario_target() -> PolynomialTarget:
    """``(2x - 1)**2`` written as ``1 - 4x + 4x**2``."""
    return PolynomialTarget((1.0, -4.0, 4.0))


def highdim_example1_beta(dist: HighDimGrouped | None = None) -> np.ndarray:
    dist = dist or HighDimGrouped()
    beta = np.zeros(dist.d)
    beta[: dist.n_groups * dist.group_size] = 3.0
    return beta


def make_highdim_example1(seed: SeedLike = None, n: int = 50) -> tuple[QuerySet, LinearTarget]:
    """Grouped-covariate sparse regression: n=50 queries, d=40, 15 coefficients of 3."""
    dist = HighDimGrouped()
    return sample_queries(dist, n, seed), LinearTarget(highdim_example1_beta(dist))


def make_highdim_test_set(seed: SeedLike = None, n: int = 400) -> QuerySet:
    return sample_queries(HighDimGrouped(), n, seed)


def make_prob_classifier(d: int, n_classes: int, seed: SeedLike = None) -> ProbClassifierTarget:
    """Softmax over ``n_classes`` random linear scores with seeded weights."""
    if n_classes < 2:
        raise ConfigurationError("need at least two classes")
    rng = as_rng(seed)
    return ProbClassifierTarget(rng.standard_normal((n_classes, d)), rng.standard_normal(n_classes))


def signal_second_moment(
    model: TargetModel, dist: QueryDistribution, n_mc: int = 200_000, seed: SeedLike = 0
) -> float:
    """``E[f*(X)**2]`` under ``dist``; exact for linear targets with a known covariance."""
    if isinstance(model, LinearTarget) and isinstance(dist, (HighDimGrouped, StandardNormal)):
        cov = dist.covariance() if isinstance(dist, HighDimGrouped) else np.eye(dist.d)
        return float(model.beta @ cov @ model.beta)
    x = dist.sample(n_mc, as_rng(seed))
    return float(np.mean(np.asarray(model(x), dtype=float) ** 2))

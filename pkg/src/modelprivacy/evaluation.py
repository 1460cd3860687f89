"""Monte Carlo privacy-level estimates and the metrics they are built from."""

from __future__ import annotations

import functools
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .attackers import KNN, AttackSpec, attack
from .core import (
    FittedModel,
    LinearClassifierTarget,
    LinearTarget,
    LossFunction,
    QuerySet,
    TargetModel,
    empirical_utility_loss,
    evaluate_target,
)
from .defenses import BoundaryShift, DefenseSpec, LongRangeNoising, calibrate_boundary_shift, defend
from .errors import ConfigurationError, ModelPrivacyError
from .noise import hurst_from_gamma
from .targets import QueryDistribution, sample_queries

logger = logging.getLogger(__name__)


def derive_seed(master: int, n: int, budget: float, replicate: int, role: str) -> int:
    """64-bit seed for one random role of one replicate.

    Depends only on its arguments, so adding replicates never changes the
    streams of earlier ones, and every defense in a cell sees the same queries.
    """
    key = f"{int(master)}|{int(n)}|{float(budget)!r}|{int(replicate)}|{role}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def symmetric_difference(s_true: Iterable[int], s_hat: Iterable[int]) -> int:
    """Missed plus spurious variables."""
    return len(set(s_true) ^ set(s_hat))


def zero_one_error(classifier: FittedModel, truth: TargetModel, test_queries: QuerySet) -> float:
    """Fraction of test queries on which the two classifiers disagree."""
    pts = test_queries.points
    return float(np.mean(np.asarray(classifier(pts)) != np.asarray(truth(pts))))


def rebuilt_model_loss(fitted: FittedModel, model: TargetModel, test_queries: QuerySet) -> float:
    """Mean defender loss of the rebuilt model on fresh test queries."""
    if test_queries.n < 1:
        raise ConfigurationError("need at least one test point")
    if isinstance(model, LinearClassifierTarget):
        return zero_one_error(fitted, model, test_queries)
    truth = evaluate_target(model, test_queries).values
    return float(np.mean(LossFunction.SQUARED.pointwise(truth, fitted(test_queries.points))))


@functools.lru_cache(maxsize=256)
def _calibrated_shift(beta: tuple[float, ...], dist: QueryDistribution, budget: float, seed: int) -> float:
    return calibrate_boundary_shift(LinearClassifierTarget(np.array(beta)), dist.sample, budget, seed=seed)


def resolve_defense(defense: DefenseSpec, model: TargetModel, dist: QueryDistribution, budget: float, master: int) -> DefenseSpec:
    """Fill in budget-dependent parameters (the boundary shift) for one cell."""
    if isinstance(defense, BoundaryShift) and defense.shift is None:
        seed = derive_seed(master, 0, budget, 0, "calibration")
        return BoundaryShift(_calibrated_shift(tuple(map(float, model.beta)), dist, float(budget), seed))
    return defense


@dataclass(frozen=True)
class PrivacySample:
    replicate: int
    privacy: float = math.nan
    utility_loss: float = math.nan
    symdiff: int | None = None
    metadata: dict[str, Any] = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_replicate(
    model: TargetModel,
    defense: DefenseSpec,
    attack_spec: AttackSpec,
    dist: QueryDistribution,
    n: int,
    budget: float,
    n_test: int,
    replicate: int,
    master: int,
) -> PrivacySample:
    """Sample queries, defend, attack, and score the rebuilt model once."""
    if n_test < 1:
        raise ConfigurationError("need at least one test point")

    def seed(role: str) -> int:
        return derive_seed(master, n, budget, replicate, role)

    try:
        defense = resolve_defense(defense, model, dist, budget, master)
        queries = sample_queries(dist, n, seed("queries"))
        clean = evaluate_target(model, queries)
        responses = defend(defense, model, queries, budget, seed("defense"))
        utility = empirical_utility_loss(clean, responses)
        validation = None
        if isinstance(attack_spec, KNN) and attack_spec.k is None:
            val_q = sample_queries(dist, attack_spec.n_validation, seed("validation"))
            validation = (val_q.points, evaluate_target(model, val_q).values)
        fitted = attack(attack_spec, queries, responses, seed("attack"), validation)
        privacy = rebuilt_model_loss(fitted, model, sample_queries(dist, n_test, seed("test")))
    except ModelPrivacyError as exc:
        logger.warning("replicate %d (n=%d, U=%g) failed: %s", replicate, n, budget, exc)
        return PrivacySample(replicate, error=f"{type(exc).__name__}: {exc}")

    meta = dict(fitted.metadata)
    if isinstance(defense, BoundaryShift):
        meta["shift"] = defense.shift
    if isinstance(defense, LongRangeNoising):
        # r(k) ~ H(2H - 1) k^(2H - 2) for fGn
        h = hurst_from_gamma(defense.gamma)
        meta["fgn_constant"] = h * (2.0 * h - 1.0)
    symdiff = None
    if isinstance(model, LinearTarget) and "selected" in meta:
        symdiff = symmetric_difference(model.support, meta["selected"])
    return PrivacySample(replicate, privacy, utility, symdiff, meta)


@dataclass(frozen=True)
class PrivacyEstimate:
    mean: float
    se: float
    samples: tuple[PrivacySample, ...]

    @property
    def values(self) -> np.ndarray:
        return np.array([s.privacy for s in self.samples if s.ok])

    @property
    def failures(self) -> int:
        return sum(not s.ok for s in self.samples)


def mean_se(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def privacy_level_estimate(
    model: TargetModel,
    defense: DefenseSpec,
    attack_spec: AttackSpec,
    dist: QueryDistribution,
    n: int,
    budget: float,
    n_test: int = 1000,
    replicates: int = 100,
    seed: int = 0,
) -> PrivacyEstimate:
    """Fixed-attack Monte Carlo estimate of the privacy level for a single target.

    Failed replicates are kept in ``samples`` (with their error) and left out
    of the mean and standard error.
    """
    if n_test < 1:
        raise ConfigurationError("need at least one test point")
    if replicates < 1:
        raise ConfigurationError("need at least one replicate")
    samples = tuple(
        run_replicate(model, defense, attack_spec, dist, n, budget, n_test, r, seed) for r in range(replicates)
    )
    mean, se = mean_se(s.privacy for s in samples if s.ok)
    return PrivacyEstimate(mean, se, samples)

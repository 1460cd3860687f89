"""Defense mechanisms: map (target, queries, utility budget) to perturbed responses.

Budget convention: ``U_n`` is the per-query mean squared perturbation, so a
deterministic perturbation vector ``e`` is scaled to ``||e||_2**2 = n * U_n``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .core import (
    REGRESSION_TARGETS,
    LinearClassifierTarget,
    LinearTarget,
    LossFunction,
    PolynomialTarget,
    ProbClassifierTarget,
    QuerySet,
    ResponseKind,
    ResponseVector,
    TargetModel,
    UtilityBudget,
    evaluate_target,
    softmax,
)
from .errors import CalibrationError, ConfigurationError, DegenerateTargetError, SingularDesignError
from .noise import SeedLike, as_rng, assign_noise_by_query_order, sample_iid_gaussian, sample_long_range
from .numerics import cube_root_order, polynomial_features, project_onto_columns, qr_factor

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoDefense:
    pass


@dataclass(frozen=True)
class IIDNoising:
    pass


@dataclass(frozen=True)
class ConstantNoising:
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ConfigurationError("constant noising sign must be +1 or -1")


@dataclass(frozen=True)
class LongRangeNoising:
    gamma: float = 0.2
    order_coordinate: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must be in (0, 1), got {self.gamma}")


@dataclass(frozen=True)
class OrderDisguise:
    """``target_order`` fixes k; otherwise ``rule`` picks it from n.

    rule "log":   k = min(q_n - 1, max(p + 1, ceil(4 ln n)))
    rule "power": k = min(q_n - 1, max(p + 1, floor(n ** (1 / delta))))

    q_n is the attacker's largest order: ``max_order`` if given, else
    ``n ** (1/3)`` rounded per ``order_rounding``.
    """

    target_order: int | None = None
    rule: str = "log"
    delta: float = 2.0
    max_order: int | None = None
    order_rounding: str = "floor"

    def __post_init__(self):
        if self.order_rounding not in ("floor", "ceil"):
            raise ConfigurationError(f"unknown order rounding {self.order_rounding!r}")
        if self.rule not in ("log", "power"):
            raise ConfigurationError(f"unknown order disguise rule {self.rule!r}")
        if self.rule == "power" and self.delta <= 1.0:
            raise ConfigurationError("power rule needs delta > 1")


@dataclass(frozen=True)
class MVP:
    rho: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ConfigurationError(f"variable sampling ratio must be in (0, 1], got {self.rho}")


@dataclass(frozen=True)
class RandomShuffle:
    xi: float

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise ConfigurationError(f"shuffle probability must be in [0, 1], got {self.xi}")


@dataclass(frozen=True)
class LabelFlip:
    pass


@dataclass(frozen=True)
class BoundaryShift:
    """Fixed ``shift``, or ``None`` to have the harness calibrate it to the budget."""

    shift: float | None = None


@dataclass(frozen=True)
class MisleadingShift:
    delta: float

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigurationError("misleading shift scale must be >= 0")


DefenseSpec = (
    NoDefense
    | IIDNoising
    | ConstantNoising
    | LongRangeNoising
    | OrderDisguise
    | MVP
    | RandomShuffle
    | LabelFlip
    | BoundaryShift
    | MisleadingShift
)

# Defenses whose perturbation norm is fixed exactly by the budget.
BUDGET_EXACT = (ConstantNoising, OrderDisguise, MVP)


# ---------------------------------------------------------------------------
# Regression defenses
# ---------------------------------------------------------------------------


def _rescale(direction: np.ndarray, n: int, budget: float) -> np.ndarray:
    norm = np.linalg.norm(direction)
    if budget == 0.0:
        return np.zeros_like(direction)
    if norm == 0.0:
        raise DegenerateTargetError("perturbation direction is zero")
    return direction * (math.sqrt(n * budget) / norm)


def disguise_order(n: int, p: int, max_order: int | None = None, rule: str = "log", delta: float = 2.0) -> int:
    """Default misleading order k for Order Disguise."""
    q_n = cube_root_order(n) if max_order is None else max_order
    if rule == "log":
        proposal = math.ceil(4.0 * math.log(n))
    else:
        proposal = math.floor(n ** (1.0 / delta))
    return max(p, min(q_n - 1, max(p + 1, proposal)))


def order_disguise(
    model: PolynomialTarget,
    queries: QuerySet,
    budget: float,
    target_order: int | None = None,
    *,
    max_order: int | None = None,
) -> ResponseVector:
    """Perturb along a k-th order polynomial direction to make the attacker overfit.

    Two directions in the column span of the order-k polynomial design are
    combined: the raw top-power column, and the direction that moves the
    least-squares top coefficient the most.  The sum is rescaled to the
    budget.
    """
    if not isinstance(model, PolynomialTarget):
        raise ConfigurationError("order disguise needs a polynomial target")
    if queries.d != 1:
        raise ConfigurationError("order disguise needs univariate queries")
    n, p = queries.n, model.order
    q_n = cube_root_order(n) if max_order is None else max_order
    k = disguise_order(n, p, q_n) if target_order is None else int(target_order)
    if not p <= k < max(q_n, p + 1):
        raise ConfigurationError(f"target order {k} outside [{p}, {q_n})")
    clean = evaluate_target(model, queries)
    if budget == 0.0:
        return clean
    phi = polynomial_features(queries.column(0), k)
    if len(np.unique(queries.column(0))) < k + 1:
        raise SingularDesignError(f"fewer than {k + 1} distinct query values")
    q, r = qr_factor(phi)
    u = np.zeros(k + 1)
    u[-1] = 1.0
    e1 = phi @ u
    # Phi (Phi^T Phi)^{-1} u  =  Q R^{-T} u
    e2 = q @ solve_triangular(r, u, trans="T")
    e = e1 / np.linalg.norm(e1) + e2 / np.linalg.norm(e2)
    return ResponseVector(clean.values + _rescale(e, n, budget))


def mvp(model: LinearTarget, queries: QuerySet, budget: float, rho: float = 1.0, seed: SeedLike = None) -> ResponseVector:
    """Misleading variable projection.

    Pushes the responses toward the column span of a random subset of the
    zero-coefficient covariates, so a sparse attacker selects the wrong
    variables.  When the budget exceeds the distance to that span, the rest
    of the budget is spent along the clean response direction, with the step
    solved so that ``||e||_2**2 = n * U_n`` exactly.
    """
    if not isinstance(model, LinearTarget):
        raise ConfigurationError("MVP needs a linear target")
    clean = evaluate_target(model, queries)
    zero_set = np.flatnonzero(model.beta == 0.0)
    if zero_set.size == 0:
        raise ConfigurationError("MVP needs at least one zero coefficient")
    size = max(1, int(round(rho * zero_set.size)))
    chosen = np.sort(as_rng(seed).choice(zero_set, size=size, replace=False))
    y_star = clean.values
    y_norm = np.linalg.norm(y_star)
    if y_norm == 0.0:
        raise DegenerateTargetError("clean responses are all zero")
    u = project_onto_columns(queries.points[:, chosen], y_star) - y_star
    c = np.linalg.norm(u)
    b = math.sqrt(queries.n * budget)
    if b <= c:
        e = np.zeros_like(u) if b == 0.0 else (b / c) * u
    else:
        v = y_star / y_norm
        uv = float(u @ v)
        t = -uv + math.sqrt(uv * uv + b * b - c * c)
        e = u + t * v
    return ResponseVector(y_star + e)


# ---------------------------------------------------------------------------
# Classification defenses
# ---------------------------------------------------------------------------


def random_shuffle(model: ProbClassifierTarget, queries: QuerySet, xi: float, seed: SeedLike = None) -> ResponseVector:
    """With probability ``xi`` per row, return a uniformly permuted probability vector."""
    if not 0.0 <= xi <= 1.0:
        raise ConfigurationError(f"shuffle probability must be in [0, 1], got {xi}")
    probs = np.array(evaluate_target(model, queries).values)
    rng = as_rng(seed)
    hit = rng.random(queries.n) < xi
    if hit.any():
        perms = np.argsort(rng.random((int(hit.sum()), probs.shape[1])), axis=1)
        probs[hit] = np.take_along_axis(probs[hit], perms, axis=1)
    return ResponseVector(probs, ResponseKind.PROBABILITY)


def dominating_class(probs: np.ndarray) -> int:
    """Class that is the argmax for the most rows; ties go to the smaller index."""
    counts = np.bincount(np.argmax(probs, axis=1), minlength=probs.shape[1])
    return int(np.argmax(counts))


def misleading_shift(model: ProbClassifierTarget, queries: QuerySet, delta: float) -> ResponseVector:
    """Add ``delta`` to the log-probability of the dominating class, then renormalize."""
    if delta < 0:
        raise ConfigurationError("misleading shift scale must be >= 0")
    probs = evaluate_target(model, queries).values
    if delta == 0.0:
        return ResponseVector(probs, ResponseKind.PROBABILITY)
    k = dominating_class(probs)
    logits = np.log(np.maximum(probs, LOG_CLAMP))
    if math.isinf(delta):
        shifted = np.zeros_like(probs)
        shifted[:, k] = 1.0
    else:
        logits[:, k] += delta
        shifted = softmax(logits)
    return ResponseVector(shifted, ResponseKind.PROBABILITY)


def label_flip(model: LinearClassifierTarget, queries: QuerySet, budget: float, seed: SeedLike = None) -> ResponseVector:
    """Flip each hard label independently with probability ``budget``."""
    if not 0.0 <= budget <= 1.0:
        raise ConfigurationError(f"label flip probability must be in [0, 1], got {budget}")
    labels = evaluate_target(model, queries).values
    flip = as_rng(seed).random(queries.n) < budget
    return ResponseVector(np.where(flip, 1.0 - labels, labels), ResponseKind.LABEL)


def boundary_shift(model: LinearClassifierTarget, queries: QuerySet, shift: float) -> ResponseVector:
    """Labels of the shifted halfspace ``1{x @ beta + shift >= 0}``."""
    if not isinstance(model, LinearClassifierTarget):
        raise ConfigurationError("boundary shift needs a linear classifier target")
    if queries.d != model.input_dim:
        raise ConfigurationError("query dimension does not match the classifier")
    return ResponseVector((model.score(queries.points) + shift >= 0).astype(float), ResponseKind.LABEL)


def calibrate_boundary_shift(
    model: LinearClassifierTarget,
    sampler: Callable[[int, np.random.Generator], np.ndarray],
    target: float,
    tolerance: float = 0.005,
    *,
    n_mc: int = 100_000,
    seed: SeedLike = 0,
    direction: int | None = None,
) -> float:
    """Find the boundary shift whose Monte Carlo flip fraction hits ``target``.

    ``sampler(n, rng)`` draws benign queries (a query distribution's
    ``sample`` method fits).  ``direction`` fixes the sign of the shift; by
    default the negative side is used unless only the positive side can reach
    the target.
    """
    if target < 0:
        raise ConfigurationError("target utility loss must be >= 0")
    if target >= 0.5:
        raise CalibrationError(f"target flip fraction {target} is outside [0, 0.5)")
    if target == 0.0:
        return 0.0
    scores = model.score(sampler(int(n_mc), as_rng(seed)))
    base = scores >= 0

    def flips(s: float) -> float:
        return float(np.mean((scores + s >= 0) != base))

    reach = float(np.max(np.abs(scores))) + 1.0
    if direction is None:
        direction = -1 if flips(-reach) >= target - tolerance else 1
    hi = reach
    if flips(direction * hi) < target - tolerance:
        raise CalibrationError(f"flip fraction saturates at {flips(direction * hi):.4f} < {target}")
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if flips(direction * mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * reach:
            break
    shift = direction * hi
    if abs(flips(shift) - target) > tolerance:
        raise CalibrationError(f"could not reach flip fraction {target} within {tolerance}")
    return float(shift)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def _require(model: TargetModel, kinds, spec) -> None:
    if not isinstance(model, kinds):
        raise ConfigurationError(f"{type(spec).__name__} cannot defend a {type(model).__name__}")


def defend(
    spec: DefenseSpec,
    model: TargetModel,
    queries: QuerySet,
    budget: UtilityBudget | float,
    seed: SeedLike = None,
) -> ResponseVector:
    """Perturbed responses of ``spec`` for the given queries and budget."""
    zero_one = isinstance(spec, (LabelFlip, BoundaryShift))
    u = UtilityBudget.coerce(budget, LossFunction.ZERO_ONE if zero_one else LossFunction.SQUARED).value

    if isinstance(spec, NoDefense):
        return evaluate_target(model, queries)
    if isinstance(spec, IIDNoising):
        _require(model, REGRESSION_TARGETS, spec)
        clean = evaluate_target(model, queries)
        return ResponseVector(clean.values + sample_iid_gaussian(queries.n, u, seed))
    if isinstance(spec, ConstantNoising):
        _require(model, REGRESSION_TARGETS, spec)
        clean = evaluate_target(model, queries)
        return ResponseVector(clean.values + spec.sign * math.sqrt(u))
    if isinstance(spec, LongRangeNoising):
        _require(model, REGRESSION_TARGETS, spec)
        clean = evaluate_target(model, queries)
        if queries.n < 2 or u == 0.0:
            return ResponseVector(clean.values + sample_iid_gaussian(queries.n, u, seed))
        noise = sample_long_range(queries.n, u, spec.gamma, seed)
        return ResponseVector(clean.values + assign_noise_by_query_order(noise, queries, spec.order_coordinate))
    if isinstance(spec, OrderDisguise):
        _require(model, (PolynomialTarget,), spec)
        q_n = spec.max_order if spec.max_order is not None else cube_root_order(queries.n, spec.order_rounding)
        k = spec.target_order
        if k is None:
            k = disguise_order(queries.n, model.order, q_n, spec.rule, spec.delta)
        return order_disguise(model, queries, u, k, max_order=q_n)
    if isinstance(spec, MVP):
        _require(model, (LinearTarget,), spec)
        return mvp(model, queries, u, spec.rho, seed)
    if isinstance(spec, RandomShuffle):
        _require(model, (ProbClassifierTarget,), spec)
        return random_shuffle(model, queries, spec.xi, seed)
    if isinstance(spec, MisleadingShift):
        _require(model, (ProbClassifierTarget,), spec)
        return misleading_shift(model, queries, spec.delta)
    if isinstance(spec, LabelFlip):
        _require(model, (LinearClassifierTarget,), spec)
        return label_flip(model, queries, u, seed)
    if isinstance(spec, BoundaryShift):
        _require(model, (LinearClassifierTarget,), spec)
        if spec.shift is None:
            raise ConfigurationError("boundary shift is uncalibrated; set shift or calibrate against the budget")
        return boundary_shift(model, queries, spec.shift)
    raise ConfigurationError(f"unknown defense spec {spec!r}")

"""Attacker learning algorithms: query-response pairs in, rebuilt model out."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .core import FittedModel, QuerySet, ResponseKind, ResponseVector
from .errors import ConfigurationError, FitError, SingularDesignError
from .noise import SeedLike, as_rng
from .numerics import cube_root_order, default_lambda1_grid, kfold_cv_enet, ols_solve, polynomial_features

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KNN:
    """Fixed ``k``, or (``k=None``) the k minimizing validation error over ``k_grid``.

    ``k_grid=None`` means every k from 1 to n.
    """

    k: int | None = None
    k_grid: tuple[int, ...] | None = None
    n_validation: int = 500

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.k_grid is not None and (not self.k_grid or min(self.k_grid) < 1):
            raise ConfigurationError("k grid must be non-empty with entries >= 1")


@dataclass(frozen=True)
class PolyGIC:
    criterion: str = "aic"
    penalty: float | None = None
    max_order: int | None = None
    variance_rule: str = "largest"
    variance_bound: float = 100.0
    order_rounding: str = "floor"

    def __post_init__(self):
        if self.order_rounding not in ("floor", "ceil"):
            raise ConfigurationError(f"unknown order rounding {self.order_rounding!r}")
        if self.criterion not in ("aic", "bic"):
            raise ConfigurationError(f"unknown criterion {self.criterion!r}")
        if self.variance_rule not in ("largest", "per_model"):
            raise ConfigurationError(f"unknown variance rule {self.variance_rule!r}")
        if self.penalty is not None and self.penalty < 0:
            raise ConfigurationError("GIC penalty must be >= 0")

    def order_for(self, n: int) -> int:
        return cube_root_order(n, self.order_rounding) if self.max_order is None else int(self.max_order)

    def penalty_for(self, n: int) -> float:
        if self.penalty is not None:
            return float(self.penalty)
        return 2.0 if self.criterion == "aic" else math.log(n)


@dataclass(frozen=True)
class Lasso:
    folds: int = 5
    n_lambda: int = 50
    lambda_ratio: float = 1e-3


@dataclass(frozen=True)
class ElasticNet:
    folds: int = 5
    n_lambda: int = 50
    lambda_ratio: float = 1e-3
    l2_ratios: tuple[float, ...] = (0.0, 0.5)


@dataclass(frozen=True)
class LinearClassERM:
    fit_intercept: bool = True
    n_directions: int = 20
    rounds: int = 5
    max_iter: int = 2000


AttackSpec = KNN | PolyGIC | Lasso | ElasticNet | LinearClassERM


def _xy(queries: QuerySet | np.ndarray, responses: ResponseVector | np.ndarray):
    X = queries.points if isinstance(queries, QuerySet) else np.asarray(queries, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = responses.values if isinstance(responses, ResponseVector) else np.asarray(responses, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ConfigurationError(f"{X.shape[0]} queries but {y.shape[0]} responses")
    return X, y


# ---------------------------------------------------------------------------
# k-nearest neighbours
# ---------------------------------------------------------------------------


def neighbor_order(train: np.ndarray, points: np.ndarray, kmax: int, chunk: int = 256) -> np.ndarray:
    """Indices of the ``kmax`` nearest training rows for every point.

    Euclidean distance; equal distances go to the smaller training index.
    """
    out = np.empty((points.shape[0], kmax), dtype=np.intp)
    sq_train = np.einsum("ij,ij->i", train, train)
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        if train.shape[1] == 1:
            dist = np.abs(block[:, :1] - train[:, 0])
        else:
            dist = sq_train - 2.0 * block @ train.T + np.einsum("ij,ij->i", block, block)[:, None]
            np.maximum(dist, 0.0, out=dist)
        out[start : start + chunk] = np.argsort(dist, axis=1, kind="stable")[:, :kmax]
    return out


def knn_fit(queries, responses, k: int) -> FittedModel:
    """Average of the ``k`` nearest responses."""
    X, y = _xy(queries, responses)
    if not 1 <= k <= X.shape[0]:
        raise ConfigurationError(f"need 1 <= k <= n, got k={k}, n={X.shape[0]}")
    X = X.copy()
    y = np.array(y, dtype=float)

    def predict(x: np.ndarray) -> np.ndarray:
        return y[neighbor_order(X, x, k)].mean(axis=1)

    return FittedModel(predict, ResponseKind.REGRESSION, {"k": int(k)})


def knn_best_over_grid(queries, responses, k_grid, validation: tuple[np.ndarray, np.ndarray]) -> FittedModel:
    """k-NN with the grid value of k that minimizes validation MSE.

    ``validation`` holds clean ``(X_val, f*(X_val))`` pairs, giving the
    attacker the best k it could possibly choose.
    """
    X, y = _xy(queries, responses)
    n = X.shape[0]
    grid = sorted({int(k) for k in k_grid if 1 <= int(k) <= n})
    if not grid:
        raise ConfigurationError("k grid has no value in [1, n]")
    x_val = np.atleast_2d(np.asarray(validation[0], dtype=float))
    if x_val.shape[1] != X.shape[1]:
        x_val = x_val.reshape(-1, X.shape[1])
    y_val = np.asarray(validation[1], dtype=float)
    order = neighbor_order(X, x_val, grid[-1])
    running = np.cumsum(y[order], axis=1)
    ks = np.asarray(grid)
    preds = running[:, ks - 1] / ks
    mse = np.mean((preds - y_val[:, None]) ** 2, axis=0)
    best = int(ks[int(np.argmin(mse))])
    fitted = knn_fit(X, y, best)
    meta = dict(fitted.metadata, validation_mse=float(mse.min()))
    return FittedModel(fitted.predict, ResponseKind.REGRESSION, meta)


# ---------------------------------------------------------------------------
# Polynomial regression with GIC model selection
# ---------------------------------------------------------------------------


def poly_gic_fit(
    x,
    responses,
    max_order: int | None = None,
    penalty: float = 2.0,
    variance_rule: str = "largest",
    variance_bound: float = 100.0,
) -> FittedModel:
    """Fit polynomials of order 0..max_order and keep the GIC minimizer.

    score_q = RSS_q / n + penalty * sigma2_q * q / n.  With the "largest"
    rule, sigma2 is the residual variance of the largest fitted model for
    every q; "per_model" uses each model's own residual variance.  Both are
    clipped to ``[1e-8, variance_bound]``.  Ties go to the smaller order.
    """
    xv = np.asarray(x.column(0) if isinstance(x, QuerySet) else x, dtype=float).ravel()
    y = np.asarray(responses.values if isinstance(responses, ResponseVector) else responses, dtype=float)
    n = xv.size
    if y.shape != (n,):
        raise ConfigurationError(f"{n} queries but responses of shape {y.shape}")
    q_n = cube_root_order(n) if max_order is None else int(max_order)
    if q_n < 0 or q_n + 1 > n:
        raise ConfigurationError(f"need 0 <= max_order < n, got {q_n} with n={n}")

    fits: dict[int, tuple[np.ndarray, float]] = {}
    skipped = []
    for q in range(q_n + 1):
        phi = polynomial_features(xv, q)
        try:
            coef = ols_solve(phi, y)
        except SingularDesignError as exc:
            logger.debug("order %d skipped: %s", q, exc)
            skipped.append(q)
            continue
        resid = y - phi @ coef
        fits[q] = (coef, float(resid @ resid))
    if not fits:
        raise FitError("every candidate polynomial order had a singular design")

    def clip(v: float) -> float:
        return float(min(max(v, VARIANCE_FLOOR), variance_bound))

    top = max(fits)
    dof_top = n - top - 1
    common = clip(fits[top][1] / dof_top) if dof_top > 0 else VARIANCE_FLOOR
    scores = {}
    for q, (_, rss) in fits.items():
        if variance_rule == "largest":
            s2 = common
        else:
            s2 = clip(rss / (n - q - 1)) if n - q - 1 > 0 else VARIANCE_FLOOR
        scores[q] = rss / n + penalty * s2 * q / n
    q_hat = min(scores, key=lambda q: (scores[q], q))
    coef = fits[q_hat][0]

    def predict(xx: np.ndarray) -> np.ndarray:
        xx = np.asarray(xx, dtype=float)
        return P.polyval(xx[:, 0] if xx.ndim == 2 else xx, coef)

    meta = {
        "q_hat": q_hat,
        "max_order": q_n,
        "scores": tuple(scores.get(q, math.inf) for q in range(q_n + 1)),
        "rss": tuple(fits[q][1] if q in fits else math.nan for q in range(q_n + 1)),
        "skipped_orders": tuple(skipped),
        "penalty": penalty,
        "coef": tuple(float(c) for c in coef),
    }
    return FittedModel(predict, ResponseKind.REGRESSION, meta)


# ---------------------------------------------------------------------------
# Penalized linear regression
# ---------------------------------------------------------------------------


def _enet_attack(queries, responses, folds, n_lambda, lambda_ratio, l2_ratios, seed) -> FittedModel:
    X, y = _xy(queries, responses)
    if X.shape[0] < folds:
        raise ConfigurationError(f"need at least {folds} queries for {folds}-fold CV")
    if not np.any(y - y.mean()):
        # constant responses: the zero-slope model is the unique minimizer for every penalty
        coef = np.zeros(X.shape[1])
        intercept = float(y.mean())
        lam1 = lam2 = 0.0
    else:
        grid = default_lambda1_grid(X, y, n_lambda, lambda_ratio)
        res = kfold_cv_enet(X, y, grid, l2_ratios, folds, seed=as_rng(seed))
        coef, intercept, lam1, lam2 = res.coef, res.intercept, res.lambda1, res.lambda2
    coef = np.array(coef)
    selected = tuple(int(j) for j in np.flatnonzero(coef))

    def predict(x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ coef + intercept

    meta = {"selected": selected, "lambda1": lam1, "lambda2": lam2, "intercept": intercept, "coef": tuple(coef)}
    return FittedModel(predict, ResponseKind.REGRESSION, meta)


def lasso_fit(queries, responses, spec: Lasso = Lasso(), seed: SeedLike = 0) -> FittedModel:
    """Lasso with the penalty chosen by k-fold cross-validation."""
    return _enet_attack(queries, responses, spec.folds, spec.n_lambda, spec.lambda_ratio, (0.0,), seed)


def elastic_net_fit(queries, responses, spec: ElasticNet = ElasticNet(), seed: SeedLike = 0) -> FittedModel:
    return _enet_attack(queries, responses, spec.folds, spec.n_lambda, spec.lambda_ratio, spec.l2_ratios, seed)


# ---------------------------------------------------------------------------
# Halfspace classifier
# ---------------------------------------------------------------------------


def _augment(X: np.ndarray, fit_intercept: bool) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))]) if fit_intercept else X


def _logistic_gd(Z: np.ndarray, labels: np.ndarray, max_iter: int, tol: float = 1e-6):
    n = Z.shape[0]
    s = 2.0 * labels - 1.0
    lipschitz = np.linalg.norm(Z, 2) ** 2 / (4.0 * n)
    step = 1.0 / max(lipschitz, 1e-12)
    w = np.zeros(Z.shape[1])
    for it in range(max_iter):
        margin = s * (Z @ w)
        # d/dw mean log(1 + exp(-margin))
        grad = -(Z.T @ (s * _sigmoid(-margin))) / n
        if np.linalg.norm(grad) < tol:
            return w, True, it
        w = w - step * grad
    return w, False, max_iter


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _zero_one(Z, w, labels) -> int:
    return int(np.sum((Z @ w >= 0) != (labels == 1)))


def _line_search(a: np.ndarray, b: np.ndarray, labels: np.ndarray) -> tuple[float, int]:
    """Exact minimizer over t of training errors of ``1{a + t b >= 0}``."""
    y = labels == 1
    moving = b != 0
    static_err = int(np.sum((a[~moving] >= 0) != y[~moving]))
    am, bm, ym = a[moving], b[moving], y[moving]
    if am.size == 0:
        return 0.0, static_err
    bp = -am / bm
    order = np.argsort(bp, kind="stable")
    bp, bm, ym = bp[order], bm[order], ym[order]
    pred_left = bm < 0
    err_left = int(np.sum(pred_left != ym))
    # crossing a breakpoint flips that point's prediction
    change = np.where((~pred_left) == ym, -1, 1)
    errs = err_left + np.cumsum(change)
    last_of_run = np.append(bp[1:] > bp[:-1], True)
    cand_err = np.concatenate([[err_left], errs[last_of_run]])
    ends = bp[last_of_run]
    best = int(np.argmin(cand_err))
    if best == 0:
        t = ends[0] - max(1.0, abs(ends[0]))
    elif best == ends.size:
        t = ends[-1] + max(1.0, abs(ends[-1]))
    else:
        t = 0.5 * (ends[best - 1] + ends[best])
    return float(t), static_err + int(cand_err[best])


def linear_class_erm_fit(
    queries,
    labels,
    spec: LinearClassERM = LinearClassERM(),
    seed: SeedLike = 0,
) -> FittedModel:
    """Approximate zero-one ERM over halfspaces.

    Logistic regression by gradient descent gives a start; then rounds of
    exact one-dimensional zero-one line searches along the coordinate axes
    and a seeded sample of random directions keep any move that lowers the
    training error.
    """
    X, y = _xy(queries, labels)
    if not np.all((y == 0) | (y == 1)):
        raise ConfigurationError("labels must be 0 or 1")
    Z = _augment(X, spec.fit_intercept)
    w, converged, iters = _logistic_gd(Z, y, spec.max_iter)
    if not np.any(w):
        w = np.zeros(Z.shape[1])
        w[-1] = 1.0 if y.mean() >= 0.5 else -1.0
    err = _zero_one(Z, w, y)
    logistic_err = err
    rng = as_rng(seed)
    dim = Z.shape[1]
    for _ in range(spec.rounds):
        if err == 0:
            break
        improved = False
        dirs = np.vstack([np.eye(dim), rng.standard_normal((spec.n_directions, dim))])
        for direction in dirs:
            scale = np.linalg.norm(w)
            t, cand = _line_search(Z @ w, Z @ (direction * scale), y)
            if cand < err:
                w = w + t * direction * scale
                w = w / np.linalg.norm(w)
                err = _zero_one(Z, w, y)
                improved = True
        if not improved:
            break
    coef = w[: X.shape[1]].copy()
    intercept = float(w[-1]) if spec.fit_intercept else 0.0

    def predict(x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) @ coef + intercept >= 0).astype(float)

    meta = {
        "coef": tuple(coef),
        "intercept": intercept,
        "training_error": err / X.shape[0],
        "logistic_training_error": logistic_err / X.shape[0],
        "logistic_converged": converged,
        "warning": None if converged else f"logistic descent stopped after {iters} iterations",
    }
    return FittedModel(predict, ResponseKind.LABEL, meta)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def attack(
    spec: AttackSpec,
    queries: QuerySet,
    responses: ResponseVector,
    seed: SeedLike = 0,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> FittedModel:
    if isinstance(spec, KNN):
        if spec.k is not None:
            return knn_fit(queries, responses, spec.k)
        if validation is None:
            raise ConfigurationError("best-k k-NN needs a clean validation set")
        grid = spec.k_grid if spec.k_grid is not None else range(1, queries.n + 1)
        return knn_best_over_grid(queries, responses, grid, validation)
    if isinstance(spec, PolyGIC):
        if queries.d != 1:
            raise ConfigurationError("polynomial attacker needs univariate queries")
        return poly_gic_fit(
            queries, responses, spec.order_for(queries.n), spec.penalty_for(queries.n), spec.variance_rule, spec.variance_bound
        )
    if isinstance(spec, Lasso):
        return lasso_fit(queries, responses, spec, seed)
    if isinstance(spec, ElasticNet):
        return elastic_net_fit(queries, responses, spec, seed)
    if isinstance(spec, LinearClassERM):
        return linear_class_erm_fit(queries, responses, spec, seed)
    raise ConfigurationError(f"unknown attack spec {spec!r}")

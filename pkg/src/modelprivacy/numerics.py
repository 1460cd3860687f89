"""Dense least-squares and elastic-net kernels used by defenses and attackers."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigurationError, ConvergenceError, SingularDesignError

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
DEFAULT_MAX_SWEEPS = 10_000
DEFAULT_KKT_TOL = 1e-6


def polynomial_features(x_values, order: int) -> np.ndarray:
    """Columns ``x**0, x**1, ..., x**order``."""
    if order < 0:
        raise ConfigurationError(f"polynomial order must be >= 0, got {order}")
    x = np.asarray(x_values, dtype=float).ravel()
    return np.vander(x, order + 1, increasing=True)


def qr_factor(design: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR of ``design``; raises ``SingularDesignError`` when ill-conditioned."""
    phi = np.asarray(design, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    n, m = phi.shape
    if m > n:
        raise SingularDesignError(f"design has more columns ({m}) than rows ({n})")
    if not np.all(np.isfinite(phi)):
        raise ConfigurationError("design matrix contains non-finite entries")
    q, r = np.linalg.qr(phi)
    diag = np.abs(np.diag(r))
    if diag.min() == 0.0:
        raise SingularDesignError("design matrix is rank deficient")
    cond = np.linalg.cond(r)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularDesignError(f"design condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}", cond)
    return q, r


def ols_solve(design: np.ndarray, y) -> np.ndarray:
    """Least-squares coefficients ``argmin ||y - design @ b||``, via QR."""
    q, r = qr_factor(design)
    return solve_triangular(r, q.T @ np.asarray(y, dtype=float))


def project_onto_columns(design: np.ndarray, y) -> np.ndarray:
    """Orthogonal projection of ``y`` onto the column span of ``design``."""
    q, _ = qr_factor(design)
    return q @ (q.T @ np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# Elastic net by cyclic coordinate descent
# ---------------------------------------------------------------------------
#
# Objective:  (1/2n)||y - X b||^2 + l1 ||b||_1 + (l2/2) ||b||^2


@numba.njit(cache=True)
def _objective(G, c, yy, beta, Gb, l1, l2):
    return 0.5 * (yy - 2.0 * (c @ beta) + beta @ Gb) + l1 * np.sum(np.abs(beta)) + 0.5 * l2 * (beta @ beta)


@numba.njit(cache=True)
def _kkt_residual(G, c, beta, Gb, l1, l2):
    worst = 0.0
    for j in range(c.shape[0]):
        if G[j, j] == 0.0:
            continue
        g = Gb[j] - c[j] + l2 * beta[j]
        if beta[j] != 0.0:
            v = abs(g + l1 * np.sign(beta[j]))
        else:
            v = max(0.0, abs(g) - l1)
        if v > worst:
            worst = v
    return worst


@numba.njit(cache=True)
def _polish(G, c, beta, l1, l2):
    """Exact solution on the current support and signs, or an empty array."""
    active = np.flatnonzero(beta)
    m = active.size
    if m == 0:
        return np.empty(0)
    A = np.empty((m, m))
    rhs = np.empty(m)
    for a in range(m):
        ja = active[a]
        rhs[a] = c[ja] - l1 * np.sign(beta[ja])
        for b in range(m):
            A[a, b] = G[ja, active[b]]
        A[a, a] += l2
    try:
        sol = np.linalg.solve(A, rhs)
    except Exception:
        return np.empty(0)
    out = np.zeros_like(beta)
    for a in range(m):
        ja = active[a]
        if not np.isfinite(sol[a]) or np.sign(sol[a]) != np.sign(beta[ja]):
            return np.empty(0)
        out[ja] = sol[a]
    return out


@numba.njit(cache=True)
def _cd_solve(G, c, yy, beta, l1, l2, max_sweeps, tol):
    """In-place coordinate descent on the Gram form, from the warm start ``beta``.

    ``G = X'X/n``, ``c = X'y/n``, ``yy = y'y/n``.  Every few sweeps the
    current support and signs are tried in an exact linear solve, which is
    kept only if it satisfies the KKT conditions and does not raise the
    objective.  Returns (sweeps, kkt, converged, max objective increase).
    """
    d = c.shape[0]
    Gb = G @ beta
    prev = _objective(G, c, yy, beta, Gb, l1, l2)
    worst_rise = 0.0
    kkt = _kkt_residual(G, c, beta, Gb, l1, l2)
    if kkt <= tol:
        return 0, kkt, True, worst_rise
    for sweep in range(1, max_sweeps + 1):
        for j in range(d):
            gjj = G[j, j]
            if gjj == 0.0:
                beta[j] = 0.0
                continue
            old = beta[j]
            rho = c[j] - Gb[j] + gjj * old
            if rho > l1:
                new = (rho - l1) / (gjj + l2)
            elif rho < -l1:
                new = (rho + l1) / (gjj + l2)
            else:
                new = 0.0
            if new != old:
                delta = new - old
                for i in range(d):
                    Gb[i] += G[j, i] * delta
                beta[j] = new
        if sweep % 10 == 0:
            Gb = G @ beta
        obj = _objective(G, c, yy, beta, Gb, l1, l2)
        rise = obj - prev
        if rise > worst_rise:
            worst_rise = rise
        prev = obj
        kkt = _kkt_residual(G, c, beta, Gb, l1, l2)
        if kkt <= tol:
            return sweep, kkt, True, worst_rise
        if sweep % 5 == 0:
            cand = _polish(G, c, beta, l1, l2)
            if cand.size > 0:
                Gc = G @ cand
                kc = _kkt_residual(G, c, cand, Gc, l1, l2)
                oc = _objective(G, c, yy, cand, Gc, l1, l2)
                if kc <= tol and oc <= obj + 1e-12 * max(1.0, abs(obj)):
                    beta[:] = cand
                    return sweep, kc, True, worst_rise
    return max_sweeps, kkt, False, worst_rise


@numba.njit(cache=True)
def _cd_path(G, c, yy, l1_grid, l2_grid, max_sweeps, tol):
    """Warm-started path over paired (l1, l2) values, in the given order."""
    d = c.shape[0]
    m = l1_grid.shape[0]
    betas = np.zeros((m, d))
    ok = np.zeros(m, dtype=np.bool_)
    beta = np.zeros(d)
    for i in range(m):
        _, _, conv, _ = _cd_solve(G, c, yy, beta, l1_grid[i], l2_grid[i], max_sweeps, tol)
        betas[i] = beta
        ok[i] = conv
    return betas, ok


def _gram(Xs: np.ndarray, yc: np.ndarray):
    n = Xs.shape[0]
    return np.ascontiguousarray(Xs.T @ Xs / n), Xs.T @ yc / n, float(yc @ yc / n)


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, standardize: bool) -> "Standardizer":
        d = X.shape[1]
        if not standardize:
            return cls(np.zeros(d), np.ones(d), 0.0)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0.0] = 1.0
        return cls(mean, scale, float(y.mean()))

    def transform(self, X: np.ndarray, y: np.ndarray | None = None):
        Xs = (X - self.x_mean) / self.x_scale
        if y is None:
            return Xs
        return Xs, y - self.y_mean

    def back(self, beta_std: np.ndarray) -> tuple[np.ndarray, float]:
        coef = beta_std / self.x_scale
        return coef, float(self.y_mean - self.x_mean @ coef)


@dataclass(frozen=True)
class EnetResult:
    coef: np.ndarray
    intercept: float
    lambda1: float
    lambda2: float
    sweeps: int = 0
    kkt_residual: float = 0.0
    max_objective_increase: float = 0.0
    cv_errors: np.ndarray | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept


def _validated(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ConfigurationError(f"X {X.shape} and y {y.shape} are incompatible")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ConfigurationError("non-finite entries in X or y")
    return np.ascontiguousarray(X), np.ascontiguousarray(y)


def _tol_scale(Xs, yc) -> float:
    # KKT tolerance is relative to the gradient scale at zero, floored at 1.
    return max(1.0, float(np.max(np.abs(Xs.T @ yc))) / Xs.shape[0])


def lambda_max(X, y, standardize: bool = True) -> float:
    """Smallest L1 penalty giving the all-zero lasso solution."""
    X, y = _validated(X, y)
    Xs, yc = Standardizer.fit(X, y, standardize).transform(X, y)
    return float(np.max(np.abs(Xs.T @ yc))) / X.shape[0]


def coordinate_descent_enet(
    X,
    y,
    lambda1: float,
    lambda2: float = 0.0,
    *,
    standardize: bool = True,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    tol: float = DEFAULT_KKT_TOL,
    warm_start: np.ndarray | None = None,
) -> EnetResult:
    """Elastic-net coefficients by cyclic coordinate descent.

    With ``standardize`` the response is centred and the columns are centred
    and scaled to unit variance; penalties act on the standardized
    coefficients and the result is mapped back to the original scale with an
    intercept.  Inactive coordinates are exact zeros.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ConfigurationError("penalties must be non-negative")
    X, y = _validated(X, y)
    st = Standardizer.fit(X, y, standardize)
    Xs, yc = st.transform(X, y)
    beta = np.zeros(X.shape[1]) if warm_start is None else np.array(warm_start, dtype=float)
    eff_tol = tol * _tol_scale(Xs, yc)
    G, c, yy = _gram(Xs, yc)
    sweeps, kkt, converged, rise = _cd_solve(G, c, yy, beta, float(lambda1), float(lambda2), int(max_sweeps), eff_tol)
    if not converged:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_sweeps} sweeps (KKT residual {kkt:.3g})", kkt
        )
    coef, intercept = st.back(beta)
    return EnetResult(coef, intercept, float(lambda1), float(lambda2), sweeps, kkt, rise)


def default_lambda1_grid(X, y, n_lambda: int = 50, ratio: float = 1e-3, standardize: bool = True) -> np.ndarray:
    """Log-spaced grid from ``lambda_max`` down to ``ratio * lambda_max``."""
    lmax = lambda_max(X, y, standardize)
    if lmax == 0.0:
        return np.zeros(1)
    return np.geomspace(lmax, lmax * ratio, n_lambda)


def fold_assignment(n: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Round-robin fold labels after a seeded shuffle."""
    if folds < 2 or folds > n:
        raise ConfigurationError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    labels = np.empty(n, dtype=int)
    labels[rng.permutation(n)] = np.arange(n) % folds
    return labels


def kfold_cv_enet(
    X,
    y,
    lambda1_grid=None,
    lambda2_ratios=(0.0,),
    folds: int = 5,
    *,
    seed: int | np.random.Generator = 0,
    standardize: bool = True,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    tol: float = DEFAULT_KKT_TOL,
) -> EnetResult:
    """Pick (lambda1, lambda2) by k-fold held-out squared error, then refit.

    ``lambda2_ratios`` ties the ridge penalty to the lasso penalty:
    ``lambda2 = ratio * lambda1``.  Ties go to the larger lambda1 and then the
    larger lambda2.  Grid points whose fit fails to converge on any fold are
    skipped.
    """
    X, y = _validated(X, y)
    n = X.shape[0]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if lambda1_grid is None:
        lambda1_grid = default_lambda1_grid(X, y, standardize=standardize)
    l1 = np.sort(np.asarray(lambda1_grid, dtype=float).ravel())[::-1]
    ratios = np.asarray(lambda2_ratios, dtype=float).ravel()
    if l1.size == 0 or ratios.size == 0:
        raise ConfigurationError("empty penalty grid")
    if np.any(l1 < 0) or np.any(ratios < 0):
        raise ConfigurationError("penalty grids must be non-negative")
    labels = fold_assignment(n, folds, rng)

    sse = np.zeros((ratios.size, l1.size))
    failed = np.zeros((ratios.size, l1.size), dtype=bool)
    for f in range(folds):
        train, test = labels != f, labels == f
        st = Standardizer.fit(X[train], y[train], standardize)
        Xs, yc = st.transform(X[train], y[train])
        eff_tol = tol * _tol_scale(Xs, yc)
        G, c, yy = _gram(Xs, yc)
        for r, ratio in enumerate(ratios):
            betas, ok = _cd_path(G, c, yy, l1, ratio * l1, int(max_sweeps), eff_tol)
            coefs = betas / st.x_scale
            intercepts = st.y_mean - coefs @ st.x_mean
            pred = X[test] @ coefs.T + intercepts
            sse[r] += np.sum((y[test][:, None] - pred) ** 2, axis=0)
            failed[r] |= ~ok
    cv = sse / n
    cv[failed] = np.inf
    if failed.any():
        logger.info("skipped %d non-converged grid points", int(failed.sum()))
    if not np.isfinite(cv).any():
        raise ConvergenceError("no grid point converged on every fold", float("inf"))

    best = np.min(cv)
    # ties: largest l1 first, then largest l2
    winners = [(l1[j], ratios[r] * l1[j], r, j) for r in range(ratios.size) for j in range(l1.size) if cv[r, j] == best]
    lam1, lam2, r_best, j_best = max(winners, key=lambda w: (w[0], w[1]))

    # refit along the path so the winner gets the same warm start as in CV
    path_l1 = l1[: j_best + 1]
    st = Standardizer.fit(X, y, standardize)
    Xs, yc = st.transform(X, y)
    beta = np.zeros(X.shape[1])
    eff_tol = tol * _tol_scale(Xs, yc)
    G, c, yy = _gram(Xs, yc)
    for lam in path_l1:
        sweeps, kkt, converged, rise = _cd_solve(G, c, yy, beta, lam, ratios[r_best] * lam, int(max_sweeps), eff_tol)
    if not converged:
        raise ConvergenceError(f"refit at lambda1={lam1:.3g} did not converge", kkt)
    coef, intercept = st.back(beta)
    return EnetResult(coef, intercept, float(lam1), float(lam2), sweeps, kkt, rise, cv)


def cube_root_order(n: int, rounding: str = "floor") -> int:
    """Largest candidate polynomial order, ``n**(1/3)`` rounded down (or up), capped at ``n - 1``.

    Uses exact integer arithmetic, so perfect cubes map to their root.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if rounding not in ("floor", "ceil"):
        raise ConfigurationError(f"unknown rounding {rounding!r}")
    q = int(round(n ** (1.0 / 3.0)))
    while q**3 > n:
        q -= 1
    while (q + 1) ** 3 <= n:
        q += 1
    if rounding == "ceil" and q**3 < n:
        q += 1
    return min(q, n - 1)

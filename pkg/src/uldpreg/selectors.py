"""Local variable selection on a single user's shard.

Pipeline: correlation screening, then a sparse fit (Lasso by coordinate
descent, or SCAD via iterated reweighting), then uniform sampling of one
surviving index.  The sampled index is the single value a user contributes to
the private aggregation stage.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 3000

# Relative floor for the residual scale so the universal penalty stays positive
# on near-noiseless data (an exactly-zero penalty cannot produce sparse fits).
_SIGMA_FLOOR = 0.02


@dataclass
class SelectorConfig:
    """Knobs for the per-user selection pipeline."""

    method: str = "lasso"  # "screening_only" | "lasso" | "scad"
    screen_size: int = 64
    lambda_rule: str = "universal"  # "universal" | "fixed"
    lambda_value: float | None = None
    scad_a: float = 3.7

    def __post_init__(self):
        if self.method not in ("screening_only", "lasso", "scad"):
            raise ValueError(f"unknown selector method {self.method!r}")
        if self.screen_size < 1:
            raise ValueError("screen_size must be at least 1")
        if self.lambda_rule not in ("universal", "fixed"):
            raise ValueError(f"unknown lambda rule {self.lambda_rule!r}")
        if self.lambda_rule == "fixed":
            if self.lambda_value is None or self.lambda_value < 0:
                raise ValueError("fixed rule needs lambda_value >= 0")
        if self.scad_a <= 2:
            raise ValueError("scad_a must exceed 2")


class FitResult(NamedTuple):
    coef: np.ndarray
    converged: bool
    n_iter: int


@dataclass
class SelectionResult:
    """Outcome of one user's local selection over the screened columns."""

    screened: np.ndarray  # ambient indices retained by screening, ranked
    coef: np.ndarray  # fitted coefficients aligned with `screened`
    selected: np.ndarray  # ambient indices with nonzero coefficients


@numba.njit(cache=True)
def _cd_penalized(gram, corr, thresholds, tol, max_iter):
    # Cyclic coordinate descent with soft thresholding on
    #   beta' gram beta - 2 corr' beta + 2 sum_j thresholds_j |beta_j|.
    p = corr.shape[0]
    beta = np.zeros(p)
    it = 0
    for it in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            rho = corr[j] - np.dot(gram[j], beta) + gjj * beta[j]
            thr = thresholds[j]
            if rho > thr:
                new = (rho - thr) / gjj
            elif rho < -thr:
                new = (rho + thr) / gjj
            else:
                new = 0.0
            delta = abs(new - beta[j])
            if delta > max_delta:
                max_delta = delta
            beta[j] = new
        if max_delta < tol:
            return beta, it, True
    return beta, it, False


def _gram_stats(X, y):
    m = X.shape[0]
    return (X.T @ X) / m, (X.T @ y) / m


def lasso_fit(X, y, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> FitResult:
    """Minimize (1/m)||y - X beta||^2 + lam ||beta||_1 by coordinate descent.

    Stops when the largest coefficient change in a sweep drops below tol;
    a non-converged fit returns the current iterate with converged=False.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    gram, corr = _gram_stats(X, y)
    thresholds = np.full(corr.shape[0], lam / 2.0)
    beta, n_iter, ok = _cd_penalized(gram, corr, thresholds, tol, max_iter)
    return FitResult(beta, bool(ok), int(n_iter))


def scad_derivative(t, lam, a):
    """Derivative of the SCAD penalty at |t|: lam inside, tapering to 0 past a*lam."""
    t = abs(t)
    if t <= lam:
        return lam
    return max(a * lam - t, 0.0) / (a - 1.0)


def scad_fit(X, y, lam, a=3.7, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, lla_rounds=5) -> FitResult:
    """SCAD-penalized least squares via local linear approximation.

    Each round solves a weighted Lasso whose per-coordinate penalties are the
    SCAD derivative at the previous iterate, starting from the plain Lasso.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if a <= 2:
        raise ValueError("a must exceed 2")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    gram, corr = _gram_stats(X, y)
    p = corr.shape[0]
    beta = np.zeros(p)
    converged = True
    n_iter = 0
    for _ in range(lla_rounds):
        weights = np.array([scad_derivative(b, lam, a) for b in beta]) if n_iter else np.full(p, lam)
        new, it, ok = _cd_penalized(gram, corr, weights / 2.0, tol, max_iter)
        n_iter += it
        converged = bool(ok)
        if np.max(np.abs(new - beta)) < 10 * tol:
            beta = new
            break
        beta = new
    return FitResult(beta, converged, n_iter)


def screen(shard, k: int) -> np.ndarray:
    """Indices of the k largest |X' y| entries, descending, ties to the smaller index."""
    d = shard.X.shape[1]
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    scores = np.abs(shard.X.T @ shard.y)
    order = np.lexsort((np.arange(d), -scores))
    return order[:k]


def universal_lambda(X_screened, y, d_ambient):
    """Rate-matching penalty 2 * sigma_hat * sqrt(2 log(d) / m).

    sigma_hat is the residual scale of an OLS fit on the screened columns,
    floored at a small fraction of the response scale so the penalty never
    collapses to zero on noiseless data.
    """
    m = X_screened.shape[0]
    coef, *_ = np.linalg.lstsq(X_screened, y, rcond=None)
    resid = y - X_screened @ coef
    sigma = float(np.std(resid))
    sigma = max(sigma, _SIGMA_FLOOR * float(np.std(y)) + 1e-12)
    return 2.0 * sigma * np.sqrt(2.0 * np.log(max(d_ambient, 2)) / m)


def local_selection(shard, config: SelectorConfig) -> SelectionResult:
    """Screen the shard and fit the configured sparse model on the survivors."""
    d = shard.X.shape[1]
    screened = screen(shard, min(config.screen_size, d))
    Xs = shard.X[:, screened]

    if config.method == "screening_only":
        coef = np.ones(len(screened))
        return SelectionResult(screened, coef, screened.copy())

    if config.lambda_rule == "fixed":
        lam = config.lambda_value
    else:
        lam = universal_lambda(Xs, shard.y, d)

    if config.method == "lasso":
        fit = lasso_fit(Xs, shard.y, lam)
    else:
        fit = scad_fit(Xs, shard.y, lam, a=config.scad_a)

    mask = fit.coef != 0.0
    return SelectionResult(screened, fit.coef, screened[mask])


def select_one(shard, config: SelectorConfig, rng) -> int:
    """Sample one candidate index from the shard's local selection.

    Uniform over the fitted support; falls back to the top screened index when
    the fit returns no nonzero coefficient.
    """
    if shard.m < 2:
        raise ValueError("selection needs at least 2 local samples")
    result = local_selection(shard, config)
    pool = result.selected if result.selected.size else result.screened[:1]
    return int(pool[rng.integers(pool.size)])

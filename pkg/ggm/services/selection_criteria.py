"""
Choosing λ from a solution path: prediction oracle, K-fold CV and
information criteria on support-constrained refits.

Every selector returns a SelectionResult whose chosen index is the argmin of
its per-λ scores; ties go to the largest λ (the sparsest model). λ values
whose fit failed are scored NaN and listed in `flagged`.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from sklearn.model_selection import KFold

from ggm.exceptions import ArgumentError, EmptySelectionError
from ggm.services import lasso
from ggm.services.gaussian_model import population_risk, predictor_indices
from ggm.services.rng import derive_seed

logger = logging.getLogger(__name__)

CRITERIA = ("oracle", "cv", "aic", "bic", "ebic")
IC_KINDS = ("aic", "bic", "ebic")
DEFAULT_FOLDS = 5
DEFAULT_EBIC_GAMMA = 0.5
SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class SelectionResult:
    criterion: str
    scores: np.ndarray
    grid: np.ndarray
    chosen_index: int
    chosen_support: frozenset
    metadata: dict = field(default_factory=dict)
    flagged: tuple = ()

    @property
    def chosen_lambda(self):
        return float(self.grid[self.chosen_index])


def argmin_sparsest(scores):
    """Index of the smallest finite score; on ties the first (largest λ) wins."""
    scores = np.asarray(scores, dtype=float)
    finite = np.isfinite(scores)
    if not finite.any():
        raise EmptySelectionError("every lambda on the grid was flagged")
    best = scores[finite].min()
    return int(np.flatnonzero(finite & (scores == best))[0])


def at_grid_end(grid, idx, label):
    """True when the minimiser is the smallest λ, i.e. the grid may not bracket it."""
    hit = len(grid) > 1 and idx == len(grid) - 1
    if hit:
        logger.warning("%s: minimiser at the smallest lambda %.3g", label, float(grid[idx]))
    return hit


def _result(criterion, scores, grid, supports, metadata=None):
    scores = np.asarray(scores, dtype=float)
    flagged = tuple(int(i) for i in np.flatnonzero(~np.isfinite(scores)))
    if flagged:
        logger.warning("%s: %d of %d lambda values flagged", criterion, len(flagged), len(scores))
    idx = argmin_sparsest(scores)
    metadata = dict(metadata or {}, at_grid_end=at_grid_end(grid, idx, criterion))
    scores.setflags(write=False)
    return SelectionResult(
        criterion=criterion,
        scores=scores,
        grid=np.asarray(grid, dtype=float),
        chosen_index=idx,
        chosen_support=frozenset(supports[idx]),
        metadata=metadata,
        flagged=flagged,
    )


def oracle_penalty(path, model):
    """Grid minimiser of the closed-form population risk of θ̂^λ."""
    if path.solutions and path.solutions[0].theta_hat.shape != model.v.shape:
        raise ArgumentError("path and model dimensions differ")
    scores = [population_risk(sol.theta_hat, model) if sol.converged else np.nan
              for sol in path.solutions]
    return _result("oracle", scores, path.grid, path.supports())


def fold_splits(n, K, seed):
    """Seeded shuffle then K contiguous blocks; sizes differ by at most one."""
    if K < 2:
        raise ArgumentError(f"need K >= 2 folds, got {K}")
    if n < K:
        raise ArgumentError(f"cannot split n={n} rows into K={K} folds")
    kf = KFold(n_splits=int(K), shuffle=True, random_state=derive_seed(seed, "folds"))
    return list(kf.split(np.zeros((n, 1))))


def heldout_errors(X, target, grid, splits, kkt_tol=lasso.DEFAULT_KKT_TOL,
                   max_iter=lasso.DEFAULT_MAX_ITER, predictors=None):
    """
    (K, len(grid)) matrix of fold mean squared held-out residuals; NaN where the
    fold fit did not converge.
    """
    data = lasso.as_array(X)
    errors = np.empty((len(splits), len(grid)))
    for k, (train, test) in enumerate(splits):
        problem = lasso.GramProblem.from_samples(data[train], target, predictors=predictors)
        path = lasso.solve_path(problem, grid, kkt_tol=kkt_tol, max_iter=max_iter)
        xt = data[np.ix_(test, problem.predictors)]
        yt = data[test, target]
        for g, sol in enumerate(path.solutions):
            if not sol.converged:
                errors[k, g] = np.nan
                continue
            resid = yt - xt @ sol.theta_hat
            errors[k, g] = resid @ resid / len(test)
    return errors


def cv_select(path, X, target, K=DEFAULT_FOLDS, seed=0,
              kkt_tol=lasso.DEFAULT_KKT_TOL, max_iter=lasso.DEFAULT_MAX_ITER):
    """CV scores for an existing full-data path (its grid is shared by every fold)."""
    data = lasso.as_array(X)
    splits = fold_splits(data.shape[0], K, seed)
    errors = heldout_errors(data, target, path.grid, splits, kkt_tol=kkt_tol, max_iter=max_iter)
    scores = errors.mean(axis=0)
    for g, sol in enumerate(path.solutions):
        if not sol.converged:
            scores[g] = np.nan
    return _result("cv", scores, path.grid, path.supports(),
                   metadata={"K": int(K), "score_type": "squared_error", "seed": int(seed)})


def cv_penalty(X, target, K=DEFAULT_FOLDS, grid_size=lasso.DEFAULT_GRID_SIZE,
               lambda_min_ratio=lasso.DEFAULT_LAMBDA_MIN_RATIO, seed=0, grid=None,
               kkt_tol=lasso.DEFAULT_KKT_TOL, max_iter=lasso.DEFAULT_MAX_ITER):
    """
    λ_CV = argmin (1/K) Σ_k (1/|I_k|)‖held-out residual on fold k‖².
    The grid comes from the full data so every fold shares it; the returned
    support is that of the full-data fit at λ_CV.
    """
    full = lasso.solution_path(X, target, grid_size=grid_size,
                               lambda_min_ratio=lambda_min_ratio, grid=grid,
                               kkt_tol=kkt_tol, max_iter=max_iter)
    return cv_select(full, X, target, K=K, seed=seed, kkt_tol=kkt_tol, max_iter=max_iter)


@dataclass(frozen=True)
class RefitResult:
    coefficients: np.ndarray
    noise_variance: float
    loglik: float
    ok: bool = True


def refit_mle(X, target, support, predictors=None):
    """
    Unpenalised Gaussian MLE of the target on the support columns: OLS,
    σ̂² = RSS/n (floored), loglik = −(n/2)(log 2πσ̂² + 1).
    `support` holds positions into `predictors` (all other nodes by default).
    """
    data = lasso.as_array(X)
    n, p = data.shape
    rest = predictor_indices(p, target) if predictors is None else np.asarray(predictors, dtype=int)
    cols = rest[sorted(support)] if len(support) else np.zeros(0, dtype=int)
    y = data[:, target]
    if cols.size >= n:
        return RefitResult(np.full(cols.size, np.nan), np.nan, np.nan, ok=False)
    if cols.size == 0:
        coef = np.zeros(0)
        rss = float(y @ y)
    else:
        xs = data[:, cols]
        coef, _, rank, _ = linalg.lstsq(xs, y)
        if rank < cols.size:
            return RefitResult(np.full(cols.size, np.nan), np.nan, np.nan, ok=False)
        resid = y - xs @ coef
        rss = float(resid @ resid)
    sigma2 = max(rss / n, SIGMA2_FLOOR)
    loglik = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0)
    return RefitResult(coef, sigma2, loglik)


def information_criterion(loglik, df, n, p, kind, gamma=DEFAULT_EBIC_GAMMA):
    """AIC = −2ℓ + 2df; BIC = −2ℓ + df·log n; EBIC = BIC + 4γ·df·log p."""
    if df < 0:
        raise ArgumentError(f"df must be >= 0, got {df}")
    base = -2.0 * loglik
    if kind == "aic":
        return base + 2.0 * df
    if kind == "bic":
        return base + df * math.log(n)
    if kind == "ebic":
        return base + df * math.log(n) + 4.0 * gamma * df * math.log(p)
    raise ArgumentError(f"unknown information criterion {kind!r}")


def select_by_ic(path, X, target, kind, gamma=DEFAULT_EBIC_GAMMA):
    data = lasso.as_array(X)
    n, p = data.shape
    scores = []
    cache = {}
    for sol in path.solutions:
        support = sol.active_set
        if support not in cache:
            cache[support] = refit_mle(data, target, support)
        refit = cache[support]
        if not (refit.ok and sol.converged):
            scores.append(np.nan)
            continue
        scores.append(information_criterion(refit.loglik, len(support), n, p, kind, gamma))
    metadata = {"gamma": float(gamma)} if kind == "ebic" else {}
    return _result(kind, scores, path.grid, path.supports(), metadata=metadata)

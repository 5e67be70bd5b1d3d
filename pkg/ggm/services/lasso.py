"""
ℓ1-penalised neighborhood regression

    θ̂^λ = argmin (1/2n)‖X_t − Σ θ_j X_j‖² + λ‖θ‖₁

solved by cyclic coordinate descent in Gram form. The gradient correlation

    G_i(θ) = (1/n)⟨X_t − Σ θ_j X_j, X_i⟩ = c_i − (Γ̂θ)_i

drives both the soft-threshold updates and the KKT checks:
G_i = sign(θ_i)λ on the active set, |G_i| ≤ λ elsewhere.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ggm.exceptions import ArgumentError
from ggm.services.gaussian_model import SampleMatrix, predictor_indices

logger = logging.getLogger(__name__)

DEFAULT_KKT_TOL = 1e-8
DEFAULT_MAX_ITER = 10000
DEFAULT_GRID_SIZE = 100
DEFAULT_LAMBDA_MIN_RATIO = 0.01
COORD_TOL = 1e-10


def as_array(X):
    data = X.data if isinstance(X, SampleMatrix) else X
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ArgumentError(f"sample matrix must be 2-d, got shape {data.shape}")
    return data


@dataclass(frozen=True)
class GramProblem:
    """Sufficient statistics of one regression: Γ̂ = XᵀX/n, c = Xᵀy/n, yy = yᵀy/n."""

    gram: np.ndarray
    corr: np.ndarray
    yy: float
    n: int
    predictors: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @classmethod
    def from_samples(cls, X, target, predictors=None):
        data = as_array(X)
        n, p = data.shape
        if n < 2:
            raise ArgumentError(f"need at least 2 samples, got n={n}")
        if not 0 <= int(target) < p:
            raise ArgumentError(f"target {target} out of range for p={p}")
        rest = predictor_indices(p, target) if predictors is None else np.asarray(predictors, dtype=int)
        xs = data[:, rest]
        y = data[:, target]
        return cls(
            gram=xs.T @ xs / n,
            corr=xs.T @ y / n,
            yy=float(y @ y / n),
            n=n,
            predictors=rest,
        )

    @classmethod
    def from_second_moment(cls, moment, target, n, predictors=None):
        """Build from a precomputed p×p matrix XᵀX/n (shared by all nodes of a graph fit)."""
        p = moment.shape[0]
        rest = predictor_indices(p, target) if predictors is None else np.asarray(predictors, dtype=int)
        return cls(
            gram=moment[np.ix_(rest, rest)],
            corr=moment[rest, target],
            yy=float(moment[target, target]),
            n=int(n),
            predictors=rest,
        )

    @property
    def dim(self):
        return self.corr.shape[0]

    @property
    def lambda_max(self):
        return float(np.abs(self.corr).max()) if self.dim else 0.0

    def gradient(self, theta):
        return self.corr - self.gram @ theta

    def objective(self, theta, lam):
        return float(0.5 * self.yy - self.corr @ theta + 0.5 * theta @ self.gram @ theta
                     + lam * np.abs(theta).sum())

    def standardized(self):
        """Problem on unit-second-moment columns, plus the column scales."""
        scale = np.sqrt(np.diag(self.gram))
        return GramProblem(
            gram=self.gram / np.outer(scale, scale),
            corr=self.corr / scale,
            yy=self.yy,
            n=self.n,
            predictors=self.predictors,
        ), scale


@dataclass(frozen=True)
class LassoSolution:
    theta_hat: np.ndarray
    lam: float
    active_set: frozenset
    kkt_residual: float
    objective_value: float
    converged: bool = True
    n_sweeps: int = 0

    @property
    def status(self):
        return "converged" if self.converged else "max_iter"


@dataclass(frozen=True)
class LassoPath:
    grid: np.ndarray
    solutions: tuple

    @property
    def lambda_max(self):
        return float(self.grid[0])

    @property
    def lambda_min(self):
        return float(self.grid[-1])

    def __len__(self):
        return len(self.solutions)

    def supports(self):
        return [s.active_set for s in self.solutions]


@dataclass(frozen=True)
class KKTReport:
    violations: np.ndarray
    max_violation: float
    tol: float

    @property
    def passed(self):
        return self.max_violation <= self.tol


def kkt_violations(gradient, theta, lam):
    active = theta != 0
    viol = np.maximum(np.abs(gradient) - lam, 0.0)
    viol[active] = np.abs(gradient[active] - np.sign(theta[active]) * lam)
    return viol


def _soft(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def _sweep(gram, diag, theta, grad, lam, coords):
    """One pass of exact univariate updates; grad is kept equal to c − Γ̂θ."""
    biggest = 0.0
    for j in coords:
        old = theta[j]
        new = _soft(grad[j] + diag[j] * old, lam) / diag[j]
        if new != old:
            step = new - old
            theta[j] = new
            grad -= gram[j] * step
            biggest = max(biggest, abs(step))
    return biggest


def _finish(problem, theta, lam, converged, sweeps):
    grad = problem.gradient(theta)
    residual = float(kkt_violations(grad, theta, lam).max()) if theta.size else 0.0
    theta.setflags(write=False)
    return LassoSolution(
        theta_hat=theta,
        lam=float(lam),
        active_set=frozenset(int(i) for i in np.flatnonzero(theta)),
        kkt_residual=residual,
        objective_value=problem.objective(theta, lam),
        converged=converged,
        n_sweeps=sweeps,
    )


def solve_gram(problem, lam, kkt_tol=DEFAULT_KKT_TOL, max_iter=DEFAULT_MAX_ITER,
               warm_start=None, debug=False):
    """Coordinate descent on a GramProblem; see solve() for the sample-matrix entry point."""
    if not lam > 0:
        raise ArgumentError(f"lambda must be positive, got {lam}")
    d = problem.dim
    if d == 0:
        return _finish(problem, np.zeros(0), lam, True, 0)
    diag = np.diag(problem.gram).copy()
    if np.any(diag <= 0):
        raise ArgumentError("a predictor column is identically zero")

    theta = np.zeros(d) if warm_start is None else np.array(warm_start, dtype=float)
    if theta.shape != (d,):
        raise ArgumentError(f"warm start has shape {theta.shape}, expected {(d,)}")
    grad = problem.gradient(theta)
    gram = np.ascontiguousarray(problem.gram)
    everything = range(d)

    last_obj = problem.objective(theta, lam) if debug else None
    sweeps = 0
    converged = False
    while sweeps < max_iter:
        change = _sweep(gram, diag, theta, grad, lam, everything)
        sweeps += 1
        active = np.flatnonzero(theta)
        while active.size and sweeps < max_iter:
            inner = _sweep(gram, diag, theta, grad, lam, active)
            sweeps += 1
            if inner < COORD_TOL:
                break
        if debug:
            obj = problem.objective(theta, lam)
            assert obj <= last_obj + 1e-12 * max(1.0, abs(last_obj)), "objective increased"
            last_obj = obj
        if change < COORD_TOL:
            # refresh to shed accumulated rounding in the running gradient
            grad = problem.gradient(theta)
            if kkt_violations(grad, theta, lam).max() <= kkt_tol:
                converged = True
                break

    solution = _finish(problem, theta, lam, converged, sweeps)
    if not converged:
        polished = polish(problem, solution, kkt_tol=kkt_tol)
        if polished.converged:
            return polished
        logger.warning("lasso did not converge at lambda=%.3g after %d sweeps (kkt residual %.3g)",
                       lam, sweeps, solution.kkt_residual)
    return solution


def polish(problem, solution, kkt_tol=DEFAULT_KKT_TOL):
    """
    Re-solve the active block exactly: θ_A = Γ̂_A⁻¹(c_A − λ·sign(θ_A)).
    The polished point is kept only if signs and KKT inequalities survive.
    """
    idx = np.array(sorted(solution.active_set), dtype=int)
    if idx.size == 0:
        return solution
    signs = np.sign(solution.theta_hat[idx])
    try:
        block = linalg.solve(problem.gram[np.ix_(idx, idx)],
                             problem.corr[idx] - solution.lam * signs, assume_a="sym")
    except (linalg.LinAlgError, ValueError):
        return solution
    if np.any(np.sign(block) != signs):
        return solution
    theta = np.zeros(problem.dim)
    theta[idx] = block
    viol = kkt_violations(problem.gradient(theta), theta, solution.lam)
    if viol.max() > max(kkt_tol, solution.kkt_residual):
        return solution
    polished = _finish(problem, theta, solution.lam, True, solution.n_sweeps)
    return polished


def gradient_correlation(X, target, theta, i=None):
    """(1/n)⟨X_t − Σ θ_j X_j, X_i⟩ from the raw columns; all p−1 values when i is None."""
    data = as_array(X)
    n, p = data.shape
    rest = predictor_indices(p, target)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (p - 1,):
        raise ArgumentError(f"theta has shape {theta.shape}, expected {(p - 1,)}")
    resid = data[:, target] - data[:, rest] @ theta
    if i is None:
        return data[:, rest].T @ resid / n
    if not 0 <= int(i) < p - 1:
        raise ArgumentError(f"coordinate {i} out of range for p-1={p - 1}")
    return float(data[:, rest[int(i)]] @ resid / n)


def lambda_max(X, target):
    """max_i |G_i(0)|: the smallest λ whose solution is the empty model."""
    return GramProblem.from_samples(X, target).lambda_max


def solve(X, target, lam, kkt_tol=DEFAULT_KKT_TOL, max_iter=DEFAULT_MAX_ITER,
          warm_start=None, standardize=False, debug=False):
    problem = GramProblem.from_samples(X, target)
    if not standardize:
        return solve_gram(problem, lam, kkt_tol=kkt_tol, max_iter=max_iter,
                          warm_start=warm_start, debug=debug)
    scaled, scale = problem.standardized()
    warm = None if warm_start is None else np.asarray(warm_start) * scale
    sol = solve_gram(scaled, lam, kkt_tol=kkt_tol, max_iter=max_iter, warm_start=warm, debug=debug)
    theta = sol.theta_hat / scale
    theta.setflags(write=False)
    return LassoSolution(theta_hat=theta, lam=sol.lam, active_set=sol.active_set,
                         kkt_residual=sol.kkt_residual,
                         objective_value=problem.objective(theta, sol.lam),
                         converged=sol.converged, n_sweeps=sol.n_sweeps)


def make_grid(lam_max, grid_size=DEFAULT_GRID_SIZE, lambda_min_ratio=DEFAULT_LAMBDA_MIN_RATIO,
              lam_min=None):
    """Descending log-spaced grid from lam_max to lam_min (or lam_max·ratio)."""
    if grid_size < 2:
        raise ArgumentError(f"grid_size must be >= 2, got {grid_size}")
    if lam_min is None:
        if not 0 < lambda_min_ratio < 1:
            raise ArgumentError(f"lambda_min_ratio must be in (0, 1), got {lambda_min_ratio}")
        lam_min = lam_max * lambda_min_ratio
    if not lam_max > 0:
        raise ArgumentError("lambda_max is zero: the target is orthogonal to every predictor")
    if not 0 < lam_min < lam_max:
        raise ArgumentError(f"need 0 < lambda_min < lambda_max, got {lam_min} and {lam_max}")
    return np.geomspace(lam_max, lam_min, int(grid_size))


def solve_path(problem, grid, kkt_tol=DEFAULT_KKT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Warm-started solutions on a given descending grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size > 1 and np.any(np.diff(grid) >= 0):
        raise ArgumentError("lambda grid must be strictly decreasing")
    solutions = []
    warm = None
    for lam in grid:
        sol = solve_gram(problem, lam, kkt_tol=kkt_tol, max_iter=max_iter, warm_start=warm)
        solutions.append(sol)
        warm = sol.theta_hat
    grid = grid.copy()
    grid.setflags(write=False)
    return LassoPath(grid=grid, solutions=tuple(solutions))


def solution_path(X, target, grid_size=DEFAULT_GRID_SIZE, lambda_min_ratio=DEFAULT_LAMBDA_MIN_RATIO,
                  grid=None, kkt_tol=DEFAULT_KKT_TOL, max_iter=DEFAULT_MAX_ITER):
    problem = GramProblem.from_samples(X, target)
    if grid is None:
        grid = make_grid(problem.lambda_max, grid_size, lambda_min_ratio)
    return solve_path(problem, grid, kkt_tol=kkt_tol, max_iter=max_iter)


def estimated_neighborhood(sol, zero_tol=0.0):
    return frozenset(int(i) for i in np.flatnonzero(np.abs(sol.theta_hat) > zero_tol))


def kkt_check(X, target, theta, lam, tol=DEFAULT_KKT_TOL):
    """Per-coordinate KKT violations of θ at λ; passes iff θ solves the Lasso at λ."""
    theta = np.asarray(theta, dtype=float)
    grad = gradient_correlation(X, target, theta)
    viol = kkt_violations(grad, theta, lam)
    return KKTReport(violations=viol, max_violation=float(viol.max()) if viol.size else 0.0, tol=tol)


def kkt_check_gram(problem, theta, lam, tol=DEFAULT_KKT_TOL):
    theta = np.asarray(theta, dtype=float)
    viol = kkt_violations(problem.gradient(theta), theta, lam)
    return KKTReport(violations=viol, max_violation=float(viol.max()) if viol.size else 0.0, tol=tol)

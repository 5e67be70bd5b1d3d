"""
Numerical checks of the solution-path geometry behind CV/oracle inconsistency.

Around the oracle fit θ̂ = θ̂^{λ*} the population risk is the Γ-ellipsoid

    E = {θ : (θ − θ*)ᵀΓ(θ − θ*) ≤ (θ̂ − θ*)ᵀΓ(θ̂ − θ*)}

and no Lasso solution for any λ lies strictly inside it. Near θ̂ the path
moves along the line θ̂ + δθ′ (active set unchanged) or, when one extra
coordinate is tied with λ*, along two rays built from θ′ and θ″. This module
builds those objects from data, checks them against the KKT conditions and
measures the exact-recovery event by Monte Carlo.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize
from statsmodels.stats.proportion import proportion_confint
from tqdm import tqdm

from ggm.exceptions import ArgumentError, SingularSystemError
from ggm.services import graph_generators, lasso
from ggm.services.gaussian_model import CovarianceModel, population_risk, sample
from ggm.services.rng import derive_rng
from ggm.services.selection_criteria import oracle_penalty

logger = logging.getLogger(__name__)

EQUI_TOL_REL = 1e-6
DELTA_REL = 1e-4
DELTA_MIN_REL = 1e-10
PATH_TOL = -1e-8
INTERIOR_MARGIN = 1e-6
FACE_ROOM_REL = 1e-9
MAX_SEGMENT_STEPS = 4
SINGULAR_COND = 1e12

EVENT_HEADER = [
    "rep", "seed", "n", "p", "s", "kappa", "lambda_star", "exact_recovery", "case",
    "extra_count", "tangency_residual", "q_sign", "line_kkt_pass", "ray1_kkt_pass",
    "ray2_kkt_pass",
]


def _sign(x):
    """sign with sign(0) = +1."""
    return -1.0 if x < 0 else 1.0


# --------------------------------------------------------------------------
# Ellipsoid
# --------------------------------------------------------------------------
def _gamma_norm2(model, d):
    return float(d @ model.gamma @ d)


def ellipsoid_value(theta, model, theta_hat_star):
    """(θ−θ*)ᵀΓ(θ−θ*) minus the same quantity at θ̂^{λ*}; negative inside E."""
    theta = np.asarray(theta, dtype=float)
    theta_hat_star = np.asarray(theta_hat_star, dtype=float)
    if theta.shape != model.v.shape or theta_hat_star.shape != model.v.shape:
        raise ArgumentError(f"expected vectors of shape {model.v.shape}")
    return (_gamma_norm2(model, theta - model.theta_star)
            - _gamma_norm2(model, theta_hat_star - model.theta_star))


def is_lasso_solution(problem, theta, tol=lasso.DEFAULT_KKT_TOL):
    """
    Whether θ solves the Lasso for some λ > 0. The KKT equalities on the active
    coordinates pin λ; they must agree, λ must be positive and the remaining
    inequalities must hold. Returns (is_solution, implied_lambda).
    """
    theta = np.asarray(theta, dtype=float)
    grad = problem.gradient(theta)
    active = np.flatnonzero(theta)
    if active.size == 0:
        return True, problem.lambda_max
    implied = grad[active] * np.sign(theta[active])
    lam = float(implied.mean())
    if lam <= 0 or np.abs(implied - lam).max() > tol:
        return False, lam
    return bool(lasso.kkt_violations(grad, theta, lam).max() <= tol), lam


@dataclass(frozen=True)
class EllipsoidReport:
    trials: int
    counterexamples: int
    face_trials: int
    path_min_value: float
    path_violations: int
    radius2: float

    @property
    def passed(self):
        return self.counterexamples == 0 and self.path_violations == 0


def _face_slice(model, support, radius2):
    """
    Center and squared radius of E ∩ {θ : θ_i = 0 for i ∉ support}, in the
    support coordinates; None when the slice is empty.
    """
    idx = np.array(sorted(support), dtype=int)
    rest = np.setdiff1d(np.arange(model.v.size), idx)
    g_ss = model.gamma[np.ix_(idx, idx)]
    d_rest = -model.theta_star[rest]
    d_center = -linalg.solve(g_ss, model.gamma[np.ix_(idx, rest)] @ d_rest, assume_a="pos")
    floor = (d_rest @ model.gamma[np.ix_(rest, rest)] @ d_rest
             + d_center @ model.gamma[np.ix_(idx, rest)] @ d_rest)
    room = radius2 - float(floor)
    # a slice this thin is the tangent point itself
    if room <= FACE_ROOM_REL * radius2:
        return None
    return idx, model.theta_star[idx] + d_center, np.linalg.cholesky(g_ss), room


def _ball_point(rng, dim, radius):
    z = rng.standard_normal(dim)
    norm = np.linalg.norm(z)
    if norm == 0:
        return z
    return z / norm * radius * rng.uniform() ** (1.0 / dim) * (1.0 - INTERIOR_MARGIN)


def verify_ellipsoid_exclusion(model, X, theta_hat_star, trials=1000, seed=0, path=None,
                               grid_size=lasso.DEFAULT_GRID_SIZE,
                               kkt_tol=lasso.DEFAULT_KKT_TOL):
    """
    Search E's interior for Lasso solutions, then sweep a solution path.

    Half the draws are uniform in the full ellipsoid, where θ has every
    coordinate nonzero; the other half lie on the face spanned by θ̂^{λ*}'s
    active set, where a small support makes the KKT equalities solvable.
    """
    data = lasso.as_array(X)
    problem = lasso.GramProblem.from_samples(data, model.target)
    theta_hat_star = np.asarray(theta_hat_star, dtype=float)
    radius2 = _gamma_norm2(model, theta_hat_star - model.theta_star)
    rng = derive_rng(seed, "ellipsoid")

    chol = np.linalg.cholesky(model.gamma)
    support = frozenset(int(i) for i in np.flatnonzero(theta_hat_star))
    face = _face_slice(model, support, radius2) if support and radius2 > 0 else None

    counterexamples = 0
    face_trials = 0
    for t in range(int(trials) if radius2 > 0 else 0):
        if t % 2 and face is not None:
            idx, center, face_chol, room = face
            theta = np.zeros(model.v.size)
            theta[idx] = center + linalg.solve_triangular(
                face_chol.T, _ball_point(rng, idx.size, math.sqrt(room)), lower=False)
            face_trials += 1
        else:
            theta = model.theta_star + linalg.solve_triangular(
                chol.T, _ball_point(rng, model.v.size, math.sqrt(radius2)), lower=False)
        solved, lam = is_lasso_solution(problem, theta, tol=kkt_tol)
        if solved:
            counterexamples += 1
            logger.warning("interior point solves the lasso at lambda=%.6g (ellipsoid value %.3g)",
                           lam, ellipsoid_value(theta, model, theta_hat_star))

    if path is None:
        path = lasso.solve_path(problem, lasso.make_grid(problem.lambda_max, grid_size),
                                kkt_tol=kkt_tol)
    values = [ellipsoid_value(sol.theta_hat, model, theta_hat_star)
              for sol in path.solutions if sol.converged]
    path_min = float(min(values)) if values else math.inf
    return EllipsoidReport(
        trials=int(trials) if radius2 > 0 else 0,
        counterexamples=counterexamples,
        face_trials=face_trials,
        path_min_value=path_min,
        path_violations=int(sum(v < PATH_TOL for v in values)),
        radius2=radius2,
    )


# --------------------------------------------------------------------------
# Equicorrelation set, line and rays
# --------------------------------------------------------------------------
def equicorrelation_set(X, target, theta_hat_star, lambda_star, tol=None):
    """
    {i : ||G_i(θ̂)| − λ*| ≤ tol}, tol defaulting to 1e-6·λ*. Active coordinates
    are always members; their equalities hold only to rounding.
    """
    tol = EQUI_TOL_REL * lambda_star if tol is None else tol
    theta_hat_star = np.asarray(theta_hat_star, dtype=float)
    grad = lasso.gradient_correlation(X, target, theta_hat_star)
    tied = np.abs(np.abs(grad) - lambda_star) <= tol
    return frozenset(int(i) for i in np.flatnonzero(tied | (theta_hat_star != 0)))


def _block_direction(problem, idx, q):
    """−Γ̂_[idx]⁻¹ q embedded in a full-length zero vector."""
    direction = np.zeros(problem.dim)
    if len(idx) == 0:
        return direction
    block = problem.gram[np.ix_(idx, idx)]
    if np.linalg.cond(block) > SINGULAR_COND:
        raise SingularSystemError(f"active Gram block on {list(idx)} is singular")
    direction[idx] = -linalg.solve(block, q, assume_a="sym")
    return direction


def _line(problem, theta_hat):
    idx = np.flatnonzero(theta_hat)
    return _block_direction(problem, idx, np.sign(theta_hat[idx]))


def line_direction(X, target, theta_hat_star):
    """θ′: −Γ̂_A⁻¹ sign(θ̂_A) on the active set A, zero elsewhere."""
    theta_hat_star = np.asarray(theta_hat_star, dtype=float)
    if not np.any(theta_hat_star):
        raise ArgumentError("line direction needs a nonempty active set")
    return _line(lasso.GramProblem.from_samples(X, target), theta_hat_star)


@dataclass(frozen=True)
class RayDirections:
    theta_prime: np.ndarray
    theta_double_prime: np.ndarray
    q_value: float
    extra: int

    @property
    def r1_sign(self):
        return _sign(self.q_value)

    @property
    def r2_sign(self):
        return -_sign(self.q_value)


def _rays(problem, theta_hat, equi_set):
    active = frozenset(int(i) for i in np.flatnonzero(theta_hat))
    extra = sorted(set(equi_set) - active)
    if len(extra) != 1 or not active <= set(equi_set):
        raise ArgumentError(
            f"rays need the equicorrelation set to be the active set plus one index, "
            f"got {len(equi_set)} vs {len(active)}")
    e = extra[0]
    grad = problem.gradient(theta_hat)
    q_e = _sign(grad[e])
    theta_prime = _line(problem, theta_hat)
    idx = np.array(sorted(active | {e}), dtype=int)
    q = np.where(idx == e, q_e, np.sign(theta_hat[idx]))
    theta_double_prime = _block_direction(problem, idx, q)
    # first-order change of q_e·G_e along θ′ is −q_e(Γ̂θ′)_e; Q is 1 minus that rate
    q_value = 1.0 + q_e * float(problem.gram[e] @ theta_prime)
    return RayDirections(theta_prime, theta_double_prime, q_value, e)


def ray_directions(X, target, theta_hat_star, equi_set):
    """
    (θ″, Q, r1_sign, r2_sign) for the case |N̂^G| = |N̂^{λ*}| + 1.

    θ″ = −Γ̂_[A+e]⁻¹q on the active set plus the extra index e, with
    q_e = sign(G_e(θ̂)). Ray R1 runs along r1_sign·θ′ and ray R2 along
    r2_sign·θ″, λ moving by the same signed step; sign(Q) is +1 at Q = 0.
    """
    theta_hat_star = np.asarray(theta_hat_star, dtype=float)
    rays = _rays(lasso.GramProblem.from_samples(X, target), theta_hat_star, equi_set)
    return rays.theta_double_prime, rays.q_value, rays.r1_sign, rays.r2_sign


def tangency_residual(model, X, theta_hat_star):
    """θ′ᵀΓ(θ̂^{λ*} − θ*); zero when the line is tangent to E."""
    theta_hat_star = np.asarray(theta_hat_star, dtype=float)
    if not np.any(theta_hat_star):
        return 0.0
    theta_prime = line_direction(X, model.target, theta_hat_star)
    return float(theta_prime @ model.gamma @ (theta_hat_star - model.theta_star))


def _tangency_scale(model, theta_prime, theta_hat):
    return float(np.linalg.norm(theta_prime)
                 * np.linalg.norm(model.gamma @ (theta_hat - model.theta_star)))


def perturbation_passes(problem, theta_hat, lam, direction, sign, tol=lasso.DEFAULT_KKT_TOL,
                        delta_rel=DELTA_REL, min_rel=DELTA_MIN_REL):
    """
    KKT check of θ̂ + δ·sign·direction at λ + δ·sign, starting at δ = delta_rel·λ
    and halving down to min_rel·λ until one passes.
    """
    delta = delta_rel * lam
    while delta >= min_rel * lam:
        step = delta * sign
        point = theta_hat + step * direction
        if lam + step > 0 and lasso.kkt_check_gram(problem, point, lam + step, tol).passed:
            return True
        delta /= 2.0
    return False


# --------------------------------------------------------------------------
# Continuous oracle
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class OracleRefinement:
    lam: float
    solution: lasso.LassoSolution
    risk: float
    grid_lambda: float
    grid_risk: float
    flagged: bool = False
    evaluations: int = 0


def _solve_polished(problem, lam, warm, kkt_tol, max_iter):
    sol = lasso.solve_gram(problem, lam, kkt_tol=kkt_tol, max_iter=max_iter, warm_start=warm)
    return lasso.polish(problem, sol, kkt_tol=kkt_tol)


def first_knot(problem, theta, lam, direction, step):
    """
    Largest τ ∈ [0, 1] such that θ + sτ·direction stays a Lasso solution at
    λ + sτ for every s in [0, step] under the current active set; returns
    (τ, index, kind) with kind "enter", "leave" or None when τ = 1.
    """
    grad = problem.gradient(theta)
    b = problem.gram @ direction
    tau, index, kind = 1.0, None, None
    for j in range(problem.dim):
        if theta[j] != 0:
            rate = direction[j] * step
            if theta[j] * rate < 0:
                cand = -theta[j] / rate
                if cand < tau:
                    tau, index, kind = cand, j, "leave"
            continue
        # |G_j − s·b_j| ≤ λ + s written as two linear constraints f0 + s·f1 ≤ 0
        for f0, f1 in ((grad[j] - lam, -(b[j] + 1.0)), (-grad[j] - lam, b[j] - 1.0)):
            if f1 * step > 0:
                cand = max(0.0, -f0 / (f1 * step))
                if cand < tau:
                    tau, index, kind = cand, j, "enter"
    return tau, index, kind


def next_knot(problem, solution):
    """The next λ below solution.lam where a variable enters or leaves; None if none."""
    theta = np.asarray(solution.theta_hat, dtype=float)
    direction = _line(problem, theta)
    tau, index, kind = first_knot(problem, theta, solution.lam, direction, -solution.lam)
    if kind is None:
        return None
    return solution.lam * (1.0 - tau), index, kind


def _segment_step(problem, model, sol, bounds, kkt_tol, max_iter):
    """
    Move to the risk minimiser of the current linear path segment, stopping at
    the first knot. Returns the new solution or the old one if risk got worse.
    """
    theta = np.asarray(sol.theta_hat, dtype=float)
    if not np.any(theta):
        return sol, False
    try:
        direction = _line(problem, theta)
    except SingularSystemError:
        return sol, False
    g_dir = model.gamma @ direction
    curvature = float(direction @ g_dir)
    if curvature <= 0:
        return sol, False
    step = -float(g_dir @ (theta - model.theta_star)) / curvature
    lo, hi = bounds
    step = min(max(sol.lam + step, lo), hi) - sol.lam
    if step == 0.0:
        return sol, False
    tau, _, kind = first_knot(problem, theta, sol.lam, direction, step)
    if tau <= 0.0:
        return sol, False
    candidate = _solve_polished(problem, sol.lam + tau * step, theta + tau * step * direction,
                                kkt_tol, max_iter)
    if not candidate.converged:
        return sol, False
    if population_risk(candidate.theta_hat, model) > population_risk(theta, model):
        return sol, False
    return candidate, kind is not None


def oracle_penalty_continuous(model, X, bracket=None, path=None,
                              grid_size=lasso.DEFAULT_GRID_SIZE,
                              lambda_min_ratio=lasso.DEFAULT_LAMBDA_MIN_RATIO,
                              kkt_tol=lasso.DEFAULT_KKT_TOL, max_iter=lasso.DEFAULT_MAX_ITER):
    """
    Refine the grid oracle to sub-grid precision.

    Golden-section search of population_risk(θ̂^λ) over a bracket around the
    grid minimiser, then exact steps along the piecewise-linear path. An
    explicit bracket (lo, mid, hi) must satisfy 0 < lo < mid < hi.
    """
    data = lasso.as_array(X)
    problem = lasso.GramProblem.from_samples(data, model.target)
    if path is None:
        path = lasso.solve_path(problem, lasso.make_grid(problem.lambda_max, grid_size,
                                                          lambda_min_ratio),
                                kkt_tol=kkt_tol, max_iter=max_iter)
    grid_choice = oracle_penalty(path, model)
    i = grid_choice.chosen_index
    grid = path.grid
    grid_lam = float(grid[i])
    grid_sol = path.solutions[i]
    grid_risk = float(grid_choice.scores[i])

    if bracket is not None:
        lo, mid, hi = (float(b) for b in bracket)
        if not 0 < lo < mid < hi:
            raise ArgumentError(f"invalid bracket {bracket}: need 0 < lo < mid < hi")
    else:
        hi = float(grid[i - 1]) if i > 0 else grid_lam
        lo = float(grid[i + 1]) if i + 1 < len(grid) else grid_lam * grid_lam / float(grid[i - 1])
        mid = grid_lam

    evaluations = 0
    cache = {}

    def risk(lam):
        nonlocal evaluations
        evaluations += 1
        sol = _solve_polished(problem, lam, grid_sol.theta_hat, kkt_tol, max_iter)
        cache[lam] = sol
        return population_risk(sol.theta_hat, model) if sol.converged else np.inf

    best_lam, best = grid_lam, _solve_polished(problem, grid_lam, grid_sol.theta_hat,
                                               kkt_tol, max_iter)
    flagged = False
    if lo < mid < hi:
        try:
            res = optimize.minimize_scalar(risk, bracket=(lo, mid, hi), method="golden")
            lam = float(min(max(res.x, lo), hi))
            sol = cache.get(res.x) or _solve_polished(problem, lam, grid_sol.theta_hat,
                                                      kkt_tol, max_iter)
            if sol.converged and population_risk(sol.theta_hat, model) <= \
                    population_risk(best.theta_hat, model):
                best_lam, best = lam, sol
        except ValueError as exc:
            flagged = True
            logger.debug("golden-section bracket rejected: %s", exc)
    else:
        flagged = True

    for _ in range(MAX_SEGMENT_STEPS):
        best, at_knot = _segment_step(problem, model, best, (lo, hi), kkt_tol, max_iter)
        best_lam = best.lam
        if not at_knot:
            break

    refined_risk = population_risk(best.theta_hat, model)
    if refined_risk > grid_risk:
        best_lam, best, refined_risk = grid_lam, grid_sol, grid_risk
    return OracleRefinement(lam=float(best_lam), solution=best, risk=float(refined_risk),
                            grid_lambda=grid_lam, grid_risk=grid_risk, flagged=flagged,
                            evaluations=evaluations)


# --------------------------------------------------------------------------
# Per-instance analysis
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class TheoryEvent:
    oracle_lambda: float
    theta_hat_star: np.ndarray
    active_set: frozenset
    equicorrelation_set: frozenset
    exact_recovery: bool
    extra_element: bool
    tangency_residual: float = None
    tangency_scale: float = None
    q_value: float = None
    ray_checks: dict = field(default_factory=dict)

    @property
    def extra_count(self):
        return len(self.equicorrelation_set) - len(self.active_set)

    @property
    def case(self):
        if self.extra_count == 0:
            return "I"
        return "II" if self.extra_element else "degenerate"

    @property
    def relative_tangency(self):
        if self.tangency_residual is None or not self.tangency_scale:
            return None
        return abs(self.tangency_residual) / self.tangency_scale


def analyze_solution(model, problem, solution, kkt_tol=lasso.DEFAULT_KKT_TOL, equi_tol=None):
    """Classify one Lasso solution and run the line/ray perturbation checks."""
    theta = np.asarray(solution.theta_hat, dtype=float)
    lam = solution.lam
    active = frozenset(int(i) for i in np.flatnonzero(theta))
    grad = problem.gradient(theta)
    tol = EQUI_TOL_REL * lam if equi_tol is None else equi_tol
    gap = np.abs(np.abs(grad) - lam)
    equi = frozenset(int(i) for i in np.flatnonzero(gap <= tol)) | active
    check_tol = kkt_tol + float(gap[sorted(equi)].max()) if equi else kkt_tol

    checks = {"line": None, "ray1": None, "ray2": None}
    residual = scale = q_value = None
    try:
        if active:
            theta_prime = _line(problem, theta)
            residual = float(theta_prime @ model.gamma @ (theta - model.theta_star))
            scale = _tangency_scale(model, theta_prime, theta)
        if equi == active and active:
            checks["line"] = (perturbation_passes(problem, theta, lam, theta_prime, 1.0, check_tol)
                              and perturbation_passes(problem, theta, lam, theta_prime, -1.0,
                                                      check_tol))
        elif len(equi) == len(active) + 1:
            rays = _rays(problem, theta, equi)
            q_value = rays.q_value
            checks["ray1"] = perturbation_passes(problem, theta, lam, rays.theta_prime,
                                                 rays.r1_sign, check_tol)
            checks["ray2"] = perturbation_passes(problem, theta, lam, rays.theta_double_prime,
                                                 rays.r2_sign, check_tol)
    except SingularSystemError as exc:
        logger.warning("skipping perturbation checks at lambda=%.6g: %s", lam, exc)

    return TheoryEvent(
        oracle_lambda=float(lam),
        theta_hat_star=theta,
        active_set=active,
        equicorrelation_set=equi,
        exact_recovery=active == model.true_neighborhood,
        extra_element=len(equi) == len(active) + 1,
        tangency_residual=residual,
        tangency_scale=scale,
        q_value=q_value,
        ray_checks=checks,
    )


def analyze_instance(model, X, grid_size=lasso.DEFAULT_GRID_SIZE,
                     lambda_min_ratio=lasso.DEFAULT_LAMBDA_MIN_RATIO, refine=True,
                     kkt_tol=lasso.DEFAULT_KKT_TOL, max_iter=lasso.DEFAULT_MAX_ITER):
    """Oracle fit of one sample (grid or refined) and its TheoryEvent."""
    data = lasso.as_array(X)
    problem = lasso.GramProblem.from_samples(data, model.target)
    path = lasso.solve_path(problem,
                            lasso.make_grid(problem.lambda_max, grid_size, lambda_min_ratio),
                            kkt_tol=kkt_tol, max_iter=max_iter)
    if refine:
        solution = oracle_penalty_continuous(model, data, path=path, kkt_tol=kkt_tol,
                                             max_iter=max_iter).solution
    else:
        choice = oracle_penalty(path, model)
        solution = lasso.polish(problem, path.solutions[choice.chosen_index], kkt_tol=kkt_tol)
    return analyze_solution(model, problem, solution, kkt_tol=kkt_tol)


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------
def wilson_interval(successes, trials, confidence=0.95):
    if trials < 1:
        raise ArgumentError("need at least one trial")
    low, high = proportion_confint(successes, trials, alpha=1.0 - confidence, method="wilson")
    return max(0.0, float(low)), min(1.0, float(high))


@dataclass(frozen=True)
class RecoveryEstimate:
    successes: int
    reps: int
    ci_low: float
    ci_high: float
    events: tuple = ()

    @property
    def estimate(self):
        return self.successes / self.reps


def _map_reps(fn, reps, threads, progress, desc):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(tqdm(pool.map(fn, range(reps)), total=reps, desc=desc, disable=not progress))
    return [fn(r) for r in tqdm(range(reps), desc=desc, disable=not progress)]


def simulate_events(model, n, reps, seed=0, grid_size=lasso.DEFAULT_GRID_SIZE,
                    lambda_min_ratio=lasso.DEFAULT_LAMBDA_MIN_RATIO, refine=True,
                    threads=1, progress=False, kkt_tol=lasso.DEFAULT_KKT_TOL):
    """One TheoryEvent per repetition; repetition r samples with key (seed, "theory", n, r)."""
    if reps < 1:
        raise ArgumentError(f"reps must be >= 1, got {reps}")

    def one(rep):
        X = sample(model, n, seed, "theory", n, rep)
        return analyze_instance(model, X, grid_size=grid_size, lambda_min_ratio=lambda_min_ratio,
                                refine=refine, kkt_tol=kkt_tol)

    return _map_reps(one, int(reps), int(threads), progress, "theory reps")


def oracle_recovery_probability(model, n, reps, grid_size=lasso.DEFAULT_GRID_SIZE,
                                lambda_min_ratio=lasso.DEFAULT_LAMBDA_MIN_RATIO, seed=0,
                                refine=False, threads=1, progress=False):
    """Fraction of repetitions with N̂^{λ*} = N*, with a 95% Wilson interval."""
    events = simulate_events(model, n, reps, seed=seed, grid_size=grid_size,
                             lambda_min_ratio=lambda_min_ratio, refine=refine,
                             threads=threads, progress=progress)
    return summarize_recovery(events)


def summarize_recovery(events):
    successes = sum(1 for e in events if e.exact_recovery)
    low, high = wilson_interval(successes, len(events))
    return RecoveryEstimate(successes=successes, reps=len(events), ci_low=low, ci_high=high,
                            events=tuple(events))


def _flag(value):
    return "" if value is None else str(int(bool(value)))


def _num(value):
    return "" if value is None else f"{value:.17g}"


def write_event_log(events, model, n, seed, path):
    """Per-repetition CSV log; empty fields where a check does not apply."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVENT_HEADER)
        for rep, e in enumerate(events):
            writer.writerow([
                rep, seed, n, model.p, model.s, _num(model.kappa), _num(e.oracle_lambda),
                int(e.exact_recovery), e.case, e.extra_count, _num(e.tangency_residual),
                "" if e.q_value is None else int(_sign(e.q_value)),
                _flag(e.ray_checks.get("line")), _flag(e.ray_checks.get("ray1")),
                _flag(e.ray_checks.get("ray2")),
            ])
    return path


# --------------------------------------------------------------------------
# Model specs
# --------------------------------------------------------------------------
MODEL_FAMILIES = ("identity", "single-edge", "band", "er", "sf", "knn")
_SPEC_KEYS = {"p", "target", "width", "edges", "m", "k", "seed"}


def parse_model_spec(spec):
    """
    `family[:key=value,...]` → CovarianceModel. Keys: p (default 10), target
    (default p−1), seed, and the family parameters width/edges/m/k.
    """
    family, _, rest = spec.partition(":")
    family = family.strip()
    if family not in MODEL_FAMILIES:
        raise ArgumentError(f"unknown model family {family!r}; expected one of {MODEL_FAMILIES}")
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in _SPEC_KEYS:
            raise ArgumentError(f"bad model parameter {item!r}")
        try:
            params[key] = int(value)
        except ValueError as exc:
            raise ArgumentError(f"model parameter {key} must be an integer, got {value!r}") from exc
    p = params.pop("p", 10)
    target = params.pop("target", p - 1)
    seed = params.pop("seed", 0)
    if family == "identity":
        return CovarianceModel.from_sigma(np.eye(p), target=target)
    if family == "single-edge":
        adj = np.zeros((p, p), dtype=bool)
        adj[0, p - 1] = adj[p - 1, 0] = True
        instance = graph_generators.instance_from_adjacency(adj, family=family, seed=seed)
    else:
        instance = graph_generators.make_instance(family, p, seed=seed, **params)
    return CovarianceModel.from_sigma(instance.covariance, target=target)

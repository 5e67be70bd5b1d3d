"""
Ground-truth Gaussian model for one target node.

The covariance is split as

    Σ = [Γ  v]
        [vᵀ a]

after moving the target node to the last coordinate. θ* = Γ⁻¹v is the
population regression of the target on the other nodes, and its support is
the true neighborhood N*.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ggm.exceptions import ArgumentError, ModelConstructionError
from ggm.services.rng import derive_rng

DEFAULT_ZERO_TOL = 1e-9


def _check_spd(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ModelConstructionError(f"covariance must be square, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
        raise ModelConstructionError("covariance is not symmetric")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ModelConstructionError("covariance is not positive definite") from exc
    return sigma


def _check_target(p, target):
    if not 0 <= int(target) < p:
        raise ArgumentError(f"target {target} out of range for p={p}")
    return int(target)


def predictor_indices(p, target):
    """Nodes other than the target, in increasing order (θ positions)."""
    return np.array([i for i in range(p) if i != target], dtype=int)


def partition_target(sigma, target):
    """Return (Γ, v, a) with the target permuted to the last coordinate."""
    sigma = _check_spd(sigma)
    target = _check_target(sigma.shape[0], target)
    rest = predictor_indices(sigma.shape[0], target)
    gamma = sigma[np.ix_(rest, rest)]
    v = sigma[rest, target]
    a = float(sigma[target, target])
    return gamma, v, a


def condition_number(sigma):
    eig = np.linalg.eigvalsh(np.asarray(sigma, dtype=float))
    return float(eig[-1] / eig[0])


@dataclass(frozen=True)
class CovarianceModel:
    sigma: np.ndarray
    target: int
    gamma: np.ndarray
    v: np.ndarray
    a: float
    theta_star: np.ndarray
    true_neighborhood: frozenset
    kappa: float
    predictors: np.ndarray

    @classmethod
    def from_sigma(cls, sigma, target=None, zero_tol=DEFAULT_ZERO_TOL):
        sigma = _check_spd(sigma)
        p = sigma.shape[0]
        target = p - 1 if target is None else _check_target(p, target)
        gamma, v, a = partition_target(sigma, target)
        theta_star, support = _solve_neighborhood(gamma, v, zero_tol)
        for arr in (sigma, gamma, v, theta_star):
            arr.setflags(write=False)
        rest = predictor_indices(p, target)
        rest.setflags(write=False)
        return cls(
            sigma=sigma,
            target=target,
            gamma=gamma,
            v=v,
            a=a,
            theta_star=theta_star,
            true_neighborhood=support,
            kappa=condition_number(sigma),
            predictors=rest,
        )

    @classmethod
    def from_precision(cls, precision, target=None, zero_tol=DEFAULT_ZERO_TOL):
        precision = _check_spd(precision)
        sigma = linalg.inv(precision)
        return cls.from_sigma((sigma + sigma.T) / 2.0, target=target, zero_tol=zero_tol)

    @property
    def p(self):
        return self.sigma.shape[0]

    @property
    def s(self):
        return len(self.true_neighborhood)

    @property
    def neighbor_nodes(self):
        """N* expressed as node indices of the full graph."""
        return frozenset(int(self.predictors[i]) for i in self.true_neighborhood)

    @property
    def minimum_risk(self):
        return float(self.a - self.v @ self.theta_star)

    def retarget(self, target, zero_tol=DEFAULT_ZERO_TOL):
        return CovarianceModel.from_sigma(self.sigma, target=target, zero_tol=zero_tol)


def _solve_neighborhood(gamma, v, zero_tol):
    if gamma.shape[0] == 0:
        return np.zeros(0), frozenset()
    theta = linalg.solve(gamma, v, assume_a="pos")
    support = frozenset(int(i) for i in np.flatnonzero(np.abs(theta) > zero_tol))
    return theta, support


def true_neighborhood(model, zero_tol=DEFAULT_ZERO_TOL):
    """(θ*, N*) for the model's target, with |θ*_i| > zero_tol."""
    return _solve_neighborhood(model.gamma, model.v, zero_tol)


def population_risk(theta, model):
    """E(Y_target − Σ θ_j Y_j)² under N(0, Σ), in closed form θᵀΓθ − 2θᵀv + a."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != model.v.shape:
        raise ArgumentError(f"theta has shape {theta.shape}, expected {model.v.shape}")
    return float(theta @ model.gamma @ theta - 2.0 * theta @ model.v + model.a)


@dataclass(frozen=True)
class SampleMatrix:
    data: np.ndarray
    seed: int

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def p(self):
        return self.data.shape[1]

    def rows(self, index):
        return SampleMatrix(data=self.data[index], seed=self.seed)


def sample(model, n, seed, *keys):
    """
    Draw n i.i.d. rows from N(0, Σ) by Cholesky factor.
    Extra keys (repetition, purpose) are folded into the seed.
    """
    if int(n) < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    sigma = model.sigma if isinstance(model, CovarianceModel) else _check_spd(model)
    chol = np.linalg.cholesky(sigma)
    rng = derive_rng(seed, *keys)
    z = rng.standard_normal((int(n), sigma.shape[0]))
    data = z @ chol.T
    data.setflags(write=False)
    return SampleMatrix(data=data, seed=int(seed))

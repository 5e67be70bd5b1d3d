import itertools

import numpy as np
from django.test import SimpleTestCase

from ggm.exceptions import ArgumentError
from ggm.services import lasso
from ggm.services.gaussian_model import CovarianceModel, sample
from ggm.services.rng import derive_rng


def random_data(n, p, seed):
    rng = derive_rng(seed, "lasso-data")
    a = rng.standard_normal((p, p))
    model = CovarianceModel.from_sigma(a @ a.T + np.eye(p))
    return sample(model, n, seed).data


def sign_pattern_oracle(problem, lam):
    """Exhaustive search over sign patterns of the KKT system."""
    d = problem.dim
    best, best_obj = None, np.inf
    for signs in itertools.product((-1.0, 0.0, 1.0), repeat=d):
        signs = np.array(signs)
        idx = np.flatnonzero(signs)
        theta = np.zeros(d)
        if idx.size:
            theta[idx] = np.linalg.solve(problem.gram[np.ix_(idx, idx)],
                                         problem.corr[idx] - lam * signs[idx])
            if np.any(np.sign(theta[idx]) != signs[idx]):
                continue
        grad = problem.gradient(theta)
        rest = np.flatnonzero(signs == 0)
        if rest.size and np.abs(grad[rest]).max() > lam + 1e-12:
            continue
        obj = problem.objective(theta, lam)
        if obj < best_obj:
            best, best_obj = theta, obj
    return best


class SolverOracleTests(SimpleTestCase):
    def test_matches_sign_pattern_oracle(self):
        rng = derive_rng(0, "lambdas")
        for k in range(100):
            p = 3 if k % 2 else 4
            data = random_data(50, p, seed=k)
            problem = lasso.GramProblem.from_samples(data, p - 1)
            lam = problem.lambda_max * rng.uniform(0.05, 0.9)
            sol = lasso.solve(data, p - 1, lam)
            expected = sign_pattern_oracle(problem, lam)
            self.assertLessEqual(np.abs(sol.theta_hat - expected).max(), 1e-6)
            self.assertEqual(lasso.estimated_neighborhood(sol, 1e-7),
                             frozenset(int(i) for i in np.flatnonzero(np.abs(expected) > 1e-7)))

    def test_orthogonal_design_is_soft_threshold(self):
        n = 40
        rng = derive_rng(1, "orth")
        q, _ = np.linalg.qr(rng.standard_normal((n, 3)))
        data = np.column_stack([np.sqrt(n) * q[:, :2], rng.standard_normal(n)])
        problem = lasso.GramProblem.from_samples(data, 2)
        lam = 0.5 * problem.lambda_max
        sol = lasso.solve(data, 2, lam)
        c = problem.corr
        np.testing.assert_allclose(sol.theta_hat, np.sign(c) * np.maximum(np.abs(c) - lam, 0),
                                   atol=1e-10)


class KKTTests(SimpleTestCase):
    def test_every_path_solution_passes(self):
        for seed in range(5):
            data = random_data(80, 6, seed)
            path = lasso.solution_path(data, 5, grid_size=30)
            for sol in path.solutions:
                self.assertTrue(sol.converged)
                report = lasso.kkt_check(data, 5, sol.theta_hat, sol.lam)
                self.assertTrue(report.passed, report.max_violation)
                self.assertLessEqual(sol.kkt_residual, 1e-8)

    def test_zero_above_lambda_max(self):
        data = random_data(60, 4, 3)
        lam_max = lasso.lambda_max(data, 3)
        sol = lasso.solve(data, 3, lam_max)
        self.assertEqual(sol.active_set, frozenset())
        self.assertTrue(lasso.kkt_check(data, 3, np.zeros(3), lam_max * 1.01).passed)
        self.assertFalse(lasso.kkt_check(data, 3, np.zeros(3), lam_max * 0.5).passed)

    def test_gradient_correlation_matches_gram_form(self):
        data = random_data(30, 5, 4)
        theta = np.array([0.1, 0.0, -0.3, 0.2])
        problem = lasso.GramProblem.from_samples(data, 4)
        np.testing.assert_allclose(lasso.gradient_correlation(data, 4, theta),
                                   problem.gradient(theta), atol=1e-12)
        self.assertAlmostEqual(lasso.gradient_correlation(data, 4, theta, i=2),
                               problem.gradient(theta)[2], places=12)


class SolverBehaviourTests(SimpleTestCase):
    def test_warm_start_and_debug_agree(self):
        data = random_data(100, 6, 5)
        lam = 0.3 * lasso.lambda_max(data, 5)
        cold = lasso.solve(data, 5, lam, debug=True)
        warm = lasso.solve(data, 5, lam, warm_start=np.ones(5))
        np.testing.assert_allclose(cold.theta_hat, warm.theta_hat, atol=1e-7)

    def test_polish_keeps_converged_solution(self):
        data = random_data(100, 5, 6)
        problem = lasso.GramProblem.from_samples(data, 4)
        sol = lasso.solve_gram(problem, 0.2 * problem.lambda_max)
        polished = lasso.polish(problem, sol)
        np.testing.assert_allclose(polished.theta_hat, sol.theta_hat, atol=1e-8)
        self.assertLessEqual(polished.kkt_residual, 1e-10)

    def test_standardize_on_unit_columns_is_identity(self):
        data = random_data(70, 4, 7)
        data = data / np.sqrt((data ** 2).mean(axis=0))
        lam = 0.4 * lasso.lambda_max(data, 3)
        plain = lasso.solve(data, 3, lam)
        scaled = lasso.solve(data, 3, lam, standardize=True)
        np.testing.assert_allclose(plain.theta_hat, scaled.theta_hat, atol=1e-9)

    def test_argument_errors(self):
        data = random_data(20, 3, 8)
        with self.assertRaises(ArgumentError):
            lasso.solve(data, 2, 0.0)
        with self.assertRaises(ArgumentError):
            lasso.solve(data[:1], 2, 0.1)
        with self.assertRaises(ArgumentError):
            lasso.solve(data, 3, 0.1)
        with self.assertRaises(ArgumentError):
            lasso.gradient_correlation(data, 2, np.zeros(3))

    def test_status(self):
        sol = lasso.LassoSolution(np.zeros(2), 0.1, frozenset(), 0.0, 0.0, converged=False)
        self.assertEqual(sol.status, "max_iter")


class GridTests(SimpleTestCase):
    def test_log_spaced_descending(self):
        grid = lasso.make_grid(2.0, 5, 0.01)
        self.assertAlmostEqual(grid[0], 2.0)
        self.assertAlmostEqual(grid[-1], 0.02)
        self.assertTrue(np.all(np.diff(grid) < 0))
        np.testing.assert_allclose(np.diff(np.log(grid)), np.log(0.01) / 4)

    def test_explicit_lambda_min(self):
        grid = lasso.make_grid(1.0, 3, lam_min=0.25)
        np.testing.assert_allclose(grid, [1.0, 0.5, 0.25])

    def test_rejects_bad_grids(self):
        with self.assertRaises(ArgumentError):
            lasso.make_grid(1.0, 1)
        with self.assertRaises(ArgumentError):
            lasso.make_grid(0.0, 10)
        with self.assertRaises(ArgumentError):
            lasso.make_grid(1.0, 10, 1.5)
        problem = lasso.GramProblem.from_samples(random_data(20, 3, 9), 2)
        with self.assertRaises(ArgumentError):
            lasso.solve_path(problem, [0.1, 0.2])

    def test_path_supports_grow(self):
        data = random_data(200, 5, 10)
        path = lasso.solution_path(data, 4, grid_size=20)
        self.assertEqual(path.supports()[0], frozenset())
        self.assertEqual(len(path), 20)
        self.assertAlmostEqual(path.lambda_min, path.lambda_max * 0.01)
        self.assertEqual(lasso.estimated_neighborhood(path.solutions[-1]), path.solutions[-1].active_set)


class ScalingTests(SimpleTestCase):
    def test_rescaled_data_rescales_lambda(self):
        data = random_data(80, 5, seed=7)
        for c in (0.5, 3.0):
            self.assertAlmostEqual(lasso.lambda_max(c * data, 4), c * c * lasso.lambda_max(data, 4))
            lam = 0.3 * lasso.lambda_max(data, 4)
            base = lasso.solve(data, 4, lam)
            scaled = lasso.solve(c * data, 4, c * c * lam)
            np.testing.assert_allclose(scaled.theta_hat, base.theta_hat, atol=1e-6)
            self.assertEqual(scaled.active_set, base.active_set)

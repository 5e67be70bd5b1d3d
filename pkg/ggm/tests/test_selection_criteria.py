import math

import numpy as np
from django.test import SimpleTestCase, tag

from ggm.exceptions import ArgumentError, EmptySelectionError
from ggm.services import lasso
from ggm.services.gaussian_model import CovarianceModel, population_risk, sample
from ggm.services.selection_criteria import (
    argmin_sparsest,
    at_grid_end,
    cv_penalty,
    cv_select,
    fold_splits,
    information_criterion,
    oracle_penalty,
    refit_mle,
    select_by_ic,
)
from ggm.services.theory_verifier import parse_model_spec

SINGLE_EDGE = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.5, 0.0, 1.0]])


def dense_model(p, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p, p))
    return CovarianceModel.from_sigma(a @ a.T / p + np.eye(p))


class ArgminTests(SimpleTestCase):
    def test_ties_go_to_largest_lambda(self):
        self.assertEqual(argmin_sparsest([3.0, 1.0, 1.0, 2.0]), 1)

    def test_skips_flagged(self):
        self.assertEqual(argmin_sparsest([np.nan, 2.0, np.inf, 1.5]), 3)

    def test_all_flagged(self):
        with self.assertRaises(EmptySelectionError):
            argmin_sparsest([np.nan, np.nan])


class OraclePenaltyTests(SimpleTestCase):
    def test_identity_picks_empty_model(self):
        model = CovarianceModel.from_sigma(np.eye(4))
        data = sample(model, 100, 0).data
        path = lasso.solution_path(data, 3, grid_size=20)
        result = oracle_penalty(path, model)
        self.assertEqual(result.chosen_index, 0)
        self.assertEqual(result.chosen_support, frozenset())
        self.assertEqual(result.chosen_lambda, path.lambda_max)

    def test_dominates_every_grid_point(self):
        model = dense_model(5, 1)
        data = sample(model, 200, 1).data
        path = lasso.solution_path(data, 4, grid_size=30)
        result = oracle_penalty(path, model)
        chosen = population_risk(path.solutions[result.chosen_index].theta_hat, model)
        for sol in path.solutions:
            self.assertLessEqual(chosen, population_risk(sol.theta_hat, model))
        self.assertEqual(len(result.scores), len(path.grid))

    def test_dimension_mismatch(self):
        data = sample(CovarianceModel.from_sigma(np.eye(3)), 50, 0).data
        path = lasso.solution_path(data, 2, grid_size=5)
        with self.assertRaises(ArgumentError):
            oracle_penalty(path, CovarianceModel.from_sigma(np.eye(4)))


class FoldTests(SimpleTestCase):
    def test_partition(self):
        splits = fold_splits(23, 5, seed=3)
        self.assertEqual(len(splits), 5)
        tests = [set(test) for _, test in splits]
        self.assertEqual(set().union(*tests), set(range(23)))
        self.assertEqual(sum(len(t) for t in tests), 23)
        sizes = [len(t) for t in tests]
        self.assertLessEqual(max(sizes) - min(sizes), 1)
        for train, test in splits:
            self.assertFalse(set(train) & set(test))

    def test_seeded(self):
        a = fold_splits(30, 3, seed=4)
        b = fold_splits(30, 3, seed=4)
        for (_, ta), (_, tb) in zip(a, b):
            np.testing.assert_array_equal(ta, tb)

    def test_errors(self):
        with self.assertRaises(ArgumentError):
            fold_splits(4, 5, 0)
        with self.assertRaises(ArgumentError):
            fold_splits(10, 1, 0)


class CrossValidationTests(SimpleTestCase):
    def test_leave_one_out(self):
        data = sample(dense_model(3, 2), 20, 2).data
        result = cv_penalty(data, 2, K=20, grid_size=10)
        self.assertTrue(0 <= result.chosen_index < 10)
        self.assertEqual(result.metadata["K"], 20)
        self.assertTrue(np.isfinite(result.scores).all())

    def test_deterministic(self):
        data = sample(dense_model(4, 3), 120, 3).data
        a = cv_penalty(data, 3, K=5, grid_size=15, seed=9)
        b = cv_penalty(data, 3, K=5, grid_size=15, seed=9)
        self.assertEqual(a.chosen_lambda, b.chosen_lambda)
        np.testing.assert_array_equal(a.scores, b.scores)

    def test_select_on_existing_path(self):
        data = sample(dense_model(4, 4), 100, 4).data
        path = lasso.solution_path(data, 3, grid_size=12)
        result = cv_select(path, data, 3, K=4, seed=1)
        self.assertEqual(result.chosen_support, path.solutions[result.chosen_index].active_set)

    def test_too_few_rows(self):
        data = sample(dense_model(3, 5), 4, 5).data
        with self.assertRaises(ArgumentError):
            cv_penalty(data, 2, K=5, grid_size=5)

    @tag("slow")
    def test_finds_the_true_neighbor(self):
        model = CovarianceModel.from_sigma(SINGLE_EDGE)
        for rep in range(10):
            data = sample(model, 2000, 11, rep).data
            result = cv_penalty(data, 2, K=5, seed=rep)
            self.assertTrue(model.true_neighborhood <= result.chosen_support)

    @tag("slow")
    def test_often_keeps_a_false_neighbor(self):
        model = CovarianceModel.from_sigma(SINGLE_EDGE)
        strict = 0
        for rep in range(40):
            data = sample(model, 2000, 13, rep).data
            support = cv_penalty(data, 2, K=5, seed=rep).chosen_support
            self.assertTrue(model.true_neighborhood <= support)
            strict += support != model.true_neighborhood
        self.assertGreaterEqual(strict, 10)

    @tag("slow")
    def test_gap_to_the_oracle_shrinks_with_n(self):
        model = parse_model_spec("single-edge:p=5")
        medians = []
        for n in (250, 500, 1000, 2000):
            gaps = []
            for rep in range(100):
                data = sample(model, n, 14, n, rep).data
                path = lasso.solution_path(data, model.target)
                cv = cv_select(path, data, model.target, K=5, seed=rep)
                gaps.append(abs(cv.chosen_lambda - oracle_penalty(path, model).chosen_lambda))
            medians.append(float(np.median(gaps)))
        for before, after in zip(medians, medians[1:]):
            self.assertLessEqual(after, 1.15 * before)
        self.assertLess(medians[-1], 0.75 * medians[0])


class RefitTests(SimpleTestCase):
    def test_empty_support(self):
        data = sample(dense_model(3, 6), 40, 6).data
        refit = refit_mle(data, 2, frozenset())
        self.assertEqual(refit.coefficients.size, 0)
        self.assertAlmostEqual(refit.noise_variance, data[:, 2] @ data[:, 2] / 40)
        expected = -20 * (math.log(2 * math.pi * refit.noise_variance) + 1)
        self.assertAlmostEqual(refit.loglik, expected)

    def test_full_support_is_ols(self):
        data = sample(dense_model(4, 7), 500, 7).data
        refit = refit_mle(data, 3, frozenset({0, 1, 2}))
        xs, y = data[:, :3], data[:, 3]
        np.testing.assert_allclose(refit.coefficients, np.linalg.solve(xs.T @ xs, xs.T @ y),
                                   atol=1e-8)

    def test_variance_floor(self):
        x = np.random.default_rng(0).standard_normal(30)
        data = np.column_stack([x, 2 * x])
        refit = refit_mle(data, 1, frozenset({0}))
        self.assertEqual(refit.noise_variance, 1e-12)
        self.assertTrue(math.isfinite(refit.loglik))

    def test_too_many_columns(self):
        data = sample(dense_model(4, 8), 3, 8).data
        self.assertFalse(refit_mle(data, 3, frozenset({0, 1, 2})).ok)


class GridEndTests(SimpleTestCase):
    def test_flag(self):
        grid = np.array([1.0, 0.5, 0.1])
        with self.assertLogs("ggm.services.selection_criteria", level="WARNING"):
            self.assertTrue(at_grid_end(grid, 2, "cv"))
        self.assertFalse(at_grid_end(grid, 1, "cv"))
        self.assertFalse(at_grid_end(grid[:1], 0, "cv"))

    def test_recorded_in_metadata(self):
        model = CovarianceModel.from_sigma(SINGLE_EDGE)
        data = sample(model, 500, 12).data
        path = lasso.solution_path(data, 2, grid_size=20)
        result = oracle_penalty(path, model)
        self.assertEqual(result.metadata["at_grid_end"], result.chosen_index == 19)


class InformationCriterionTests(SimpleTestCase):
    def test_values(self):
        self.assertAlmostEqual(information_criterion(-10, 2, 100, 10, "aic"), 24.0)
        self.assertAlmostEqual(information_criterion(-10, 2, 100, 10, "bic"), 20 + 2 * math.log(100))
        self.assertAlmostEqual(information_criterion(-10, 2, 100, 10, "ebic", gamma=0.5),
                               20 + 2 * math.log(100) + 4 * math.log(10))

    def test_zero_df_and_zero_gamma(self):
        for kind in ("aic", "bic", "ebic"):
            self.assertEqual(information_criterion(-3.0, 0, 50, 5, kind), 6.0)
        self.assertEqual(information_criterion(-3.0, 4, 50, 5, "ebic", gamma=0.0),
                         information_criterion(-3.0, 4, 50, 5, "bic"))

    def test_bic_equals_aic_at_e_squared(self):
        n = math.e ** 2
        self.assertAlmostEqual(information_criterion(-1, 2, n, 3, "bic"),
                               information_criterion(-1, 2, n, 3, "aic"))

    def test_errors(self):
        with self.assertRaises(ArgumentError):
            information_criterion(-1, -1, 10, 3, "aic")
        with self.assertRaises(ArgumentError):
            information_criterion(-1, 1, 10, 3, "hqc")

    def test_zero_path_chooses_lambda_max(self):
        data = sample(dense_model(3, 9), 60, 9).data
        problem = lasso.GramProblem.from_samples(data, 2)
        path = lasso.solve_path(problem, [2 * problem.lambda_max, 1.5 * problem.lambda_max])
        result = select_by_ic(path, data, 2, "bic")
        self.assertEqual(result.chosen_index, 0)
        self.assertEqual(result.chosen_support, frozenset())

    def test_support_sizes_are_ordered(self):
        for seed in range(10):
            data = sample(dense_model(6, seed), 150, seed).data
            path = lasso.solution_path(data, 5, grid_size=40)
            sizes = [len(select_by_ic(path, data, 5, kind).chosen_support)
                     for kind in ("aic", "bic", "ebic")]
            self.assertGreaterEqual(sizes[0], sizes[1])
            self.assertGreaterEqual(sizes[1], sizes[2])
            self.assertGreaterEqual(select_by_ic(path, data, 5, "bic").chosen_lambda,
                                    select_by_ic(path, data, 5, "aic").chosen_lambda)

    @tag("slow")
    def test_ebic_recovers_single_edge(self):
        model = CovarianceModel.from_sigma(SINGLE_EDGE)
        hits = 0
        for rep in range(30):
            data = sample(model, 2000, 5, rep).data
            path = lasso.solution_path(data, 2)
            hits += select_by_ic(path, data, 2, "ebic").chosen_support == model.true_neighborhood
        self.assertGreaterEqual(hits, 25)

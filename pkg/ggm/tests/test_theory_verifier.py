import csv
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag

from ggm.exceptions import ArgumentError
from ggm.services import lasso
from ggm.services import theory_verifier as tv
from ggm.services.gaussian_model import CovarianceModel, sample
from ggm.services.selection_criteria import oracle_penalty


def dense_model(p=4, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p, p))
    return CovarianceModel.from_sigma(a @ a.T / p + np.eye(p))


def oracle_fit(model, n, seed, grid_size=60):
    data = sample(model, n, seed).data
    problem = lasso.GramProblem.from_samples(data, model.target)
    path = lasso.solve_path(problem, lasso.make_grid(problem.lambda_max, grid_size))
    return data, problem, path


class EllipsoidTests(SimpleTestCase):
    def test_values(self):
        model = dense_model()
        theta_hat = model.theta_star + np.array([0.1, -0.2, 0.05])
        self.assertAlmostEqual(tv.ellipsoid_value(theta_hat, model, theta_hat), 0.0)
        d = theta_hat - model.theta_star
        self.assertAlmostEqual(tv.ellipsoid_value(model.theta_star, model, theta_hat),
                               -(d @ model.gamma @ d))
        with self.assertRaises(ArgumentError):
            tv.ellipsoid_value(np.zeros(2), model, theta_hat)

    def test_center_is_not_a_solution(self):
        model = dense_model(seed=1)
        data, problem, _ = oracle_fit(model, 100, 1)
        solved, _ = tv.is_lasso_solution(problem, model.theta_star)
        self.assertFalse(solved)

    def test_path_solutions_are_recognised(self):
        model = dense_model(seed=2)
        _, problem, path = oracle_fit(model, 100, 2, grid_size=20)
        for sol in path.solutions[1:]:
            polished = lasso.polish(problem, sol)
            solved, lam = tv.is_lasso_solution(problem, polished.theta_hat, tol=1e-7)
            self.assertTrue(solved)
            if polished.active_set:
                self.assertAlmostEqual(lam, sol.lam, delta=1e-7)

    def test_no_solution_inside(self):
        model = dense_model(seed=3)
        data, problem, path = oracle_fit(model, 500, 3)
        refined = tv.oracle_penalty_continuous(model, data, path=path)
        report = tv.verify_ellipsoid_exclusion(model, data, refined.solution.theta_hat,
                                               trials=400, seed=5, path=path)
        self.assertEqual(report.trials, 400)
        self.assertEqual(report.counterexamples, 0)
        self.assertEqual(report.path_violations, 0)
        self.assertGreaterEqual(report.path_min_value, tv.PATH_TOL)
        self.assertTrue(report.passed)

    def test_degenerate_radius_draws_nothing(self):
        model = CovarianceModel.from_sigma(np.eye(3))
        data = sample(model, 50, 0).data
        report = tv.verify_ellipsoid_exclusion(model, data, np.zeros(2), trials=10)
        self.assertEqual(report.trials, 0)
        self.assertEqual(report.radius2, 0.0)


class EquicorrelationTests(SimpleTestCase):
    def test_zero_tolerance_gives_active_set(self):
        model = tv.parse_model_spec("band:p=6,width=2")
        data, problem, path = oracle_fit(model, 200, 4)
        choice = oracle_penalty(path, model)
        sol = lasso.polish(problem, path.solutions[choice.chosen_index])
        exact = tv.equicorrelation_set(data, model.target, sol.theta_hat, sol.lam, tol=0.0)
        self.assertEqual(exact, sol.active_set)
        loose = tv.equicorrelation_set(data, model.target, sol.theta_hat, sol.lam)
        self.assertLessEqual(len(loose), len(sol.active_set) + 1)
        self.assertTrue(sol.active_set <= loose)


class LineTests(SimpleTestCase):
    def test_single_active_unit_column(self):
        model = dense_model(seed=5)
        data = np.array(sample(model, 300, 5).data)
        data /= np.sqrt((data ** 2).mean(axis=0))
        lam = lasso.lambda_max(data, 3) * (1 - 1e-3)
        sol = lasso.solve(data, 3, lam)
        self.assertEqual(len(sol.active_set), 1)
        (j,) = sol.active_set
        direction = tv.line_direction(data, 3, sol.theta_hat)
        expected = np.zeros(3)
        expected[j] = -np.sign(sol.theta_hat[j])
        np.testing.assert_allclose(direction, expected, atol=1e-12)

    def test_empty_active_set(self):
        data = sample(dense_model(seed=6), 50, 6).data
        with self.assertRaises(ArgumentError):
            tv.line_direction(data, 3, np.zeros(3))

    def test_case_one_line_checks(self):
        model = dense_model(5, seed=7)
        data, problem, path = oracle_fit(model, 300, 7, grid_size=30)
        checked = 0
        for sol in path.solutions[1:]:
            event = tv.analyze_solution(model, problem, lasso.polish(problem, sol))
            if event.case == "I" and event.active_set:
                self.assertTrue(event.ray_checks["line"])
                checked += 1
        self.assertGreater(checked, 0)


class RayTests(SimpleTestCase):
    def test_just_above_lambda_max(self):
        model = dense_model(seed=8)
        data = sample(model, 200, 8).data
        problem = lasso.GramProblem.from_samples(data, 3)
        sol = lasso.solve_gram(problem, problem.lambda_max * (1 + 1e-9))
        event = tv.analyze_solution(model, problem, sol)
        self.assertEqual(event.case, "II")
        self.assertEqual(event.q_value, 1.0)
        self.assertTrue(event.ray_checks["ray1"])
        self.assertTrue(event.ray_checks["ray2"])

    def test_at_entering_knots(self):
        model = dense_model(6, seed=9)
        data, problem, path = oracle_fit(model, 400, 9, grid_size=25)
        checked = 0
        for sol in path.solutions[1:]:
            knot = tv.next_knot(problem, lasso.polish(problem, sol))
            if knot is None or knot[2] != "enter":
                continue
            at = lasso.polish(problem, lasso.solve_gram(problem, knot[0] * (1 + 1e-9),
                                                        warm_start=sol.theta_hat))
            event = tv.analyze_solution(model, problem, at)
            self.assertEqual(event.case, "II")
            self.assertIn(knot[1], event.equicorrelation_set - event.active_set)
            self.assertTrue(event.ray_checks["ray1"])
            self.assertTrue(event.ray_checks["ray2"])
            checked += 1
            if checked == 3:
                break
        self.assertGreater(checked, 0)

    def test_public_rays(self):
        model = dense_model(seed=10)
        data = sample(model, 200, 10).data
        problem = lasso.GramProblem.from_samples(data, 3)
        theta = np.zeros(3)
        e = int(np.argmax(np.abs(problem.corr)))
        theta_dd, q, r1, r2 = tv.ray_directions(data, 3, theta, {e})
        self.assertEqual((q, r1, r2), (1.0, 1.0, -1.0))
        self.assertAlmostEqual(theta_dd[e], -np.sign(problem.corr[e]) / problem.gram[e, e])
        with self.assertRaises(ArgumentError):
            tv.ray_directions(data, 3, theta, set())


class OracleRefinementTests(SimpleTestCase):
    def test_refined_risk_never_worse(self):
        for seed in range(5):
            model = dense_model(5, seed=seed)
            data, _, path = oracle_fit(model, 150, seed, grid_size=30)
            refined = tv.oracle_penalty_continuous(model, data, path=path)
            self.assertLessEqual(refined.risk, refined.grid_risk)
            i = int(np.flatnonzero(path.grid == refined.grid_lambda)[0])
            hi = path.grid[max(i - 1, 0)]
            lo = path.grid[i + 1] if i + 1 < len(path.grid) else 0.0
            self.assertTrue(lo <= refined.lam <= hi)
            self.assertTrue(refined.solution.converged)

    def test_invalid_bracket(self):
        model = dense_model(seed=11)
        data = sample(model, 100, 11).data
        with self.assertRaises(ArgumentError):
            tv.oracle_penalty_continuous(model, data, bracket=(0.3, 0.2, 0.4))

    def test_tangency_vanishes_after_refinement(self):
        model = tv.parse_model_spec("band:p=6,width=2")
        refined = tv.simulate_events(model, 200, 12, seed=3, grid_size=40)
        grid = tv.simulate_events(model, 200, 12, seed=3, grid_size=40, refine=False)
        interior = [e.relative_tangency for e in refined
                    if e.case == "I" and e.relative_tangency is not None]
        self.assertTrue(interior)
        self.assertLess(max(interior), 1e-6)
        coarse = [e.relative_tangency for e in grid if e.relative_tangency]
        self.assertGreaterEqual(np.median(coarse), 10 * max(interior))

    def test_tangency_residual_helper(self):
        model = dense_model(seed=12)
        data = sample(model, 80, 12).data
        self.assertEqual(tv.tangency_residual(model, data, np.zeros(3)), 0.0)


class RecoveryTests(SimpleTestCase):
    def test_wilson(self):
        low, high = tv.wilson_interval(5, 10)
        self.assertAlmostEqual(low, 0.2366, places=4)
        self.assertAlmostEqual(high, 0.7634, places=4)
        self.assertAlmostEqual(tv.wilson_interval(0, 10)[0], 0.0, places=12)
        self.assertAlmostEqual(tv.wilson_interval(10, 10)[1], 1.0, places=12)
        with self.assertRaises(ArgumentError):
            tv.wilson_interval(0, 0)

    def test_identity_always_recovers(self):
        model = tv.parse_model_spec("identity:p=5")
        estimate = tv.oracle_recovery_probability(model, 100, 8, grid_size=20)
        self.assertEqual(estimate.estimate, 1.0)
        self.assertEqual(estimate.reps, 8)

    def test_threads_match_serial(self):
        model = tv.parse_model_spec("single-edge:p=4")
        serial = tv.simulate_events(model, 100, 4, seed=1, grid_size=20, refine=False)
        pooled = tv.simulate_events(model, 100, 4, seed=1, grid_size=20, refine=False, threads=3)
        self.assertEqual([e.oracle_lambda for e in serial], [e.oracle_lambda for e in pooled])

    @tag("slow")
    def test_single_edge_recovery_is_not_certain(self):
        model = tv.parse_model_spec("single-edge:p=10")
        estimate = tv.oracle_recovery_probability(model, 10000, 40, grid_size=100)
        self.assertLess(estimate.ci_high, 1.0)
        self.assertLess(estimate.successes, 40)


@tag("slow")
class FullScaleTests(SimpleTestCase):
    def test_no_solution_inside_any_ellipsoid(self):
        for k in range(100):
            model = dense_model(seed=100 + k)
            data, _, path = oracle_fit(model, 200, 100 + k)
            refined = tv.oracle_penalty_continuous(model, data, path=path)
            report = tv.verify_ellipsoid_exclusion(model, data, refined.solution.theta_hat,
                                                   trials=1000, seed=k, path=path)
            self.assertTrue(report.passed, f"instance {k}")

    def test_at_most_one_extra_equicorrelated(self):
        model = tv.parse_model_spec("band:p=6,width=2")
        self.assertEqual(len(model.true_neighborhood), 2)
        events = tv.simulate_events(model, 50, 1000, seed=3, grid_size=50, refine=False,
                                    threads=4)
        for event in events:
            self.assertTrue(event.active_set <= event.equicorrelation_set)
            self.assertLessEqual(event.extra_count, 1)

    def test_line_and_ray_checks(self):
        lines = rays = 0
        for k in range(60):
            model = dense_model(6, seed=200 + k)
            _, problem, path = oracle_fit(model, 400, 200 + k, grid_size=25)
            for sol in path.solutions[1:]:
                polished = lasso.polish(problem, sol)
                event = tv.analyze_solution(model, problem, polished)
                if event.case == "I" and event.active_set:
                    self.assertTrue(event.ray_checks["line"])
                    lines += 1
                knot = tv.next_knot(problem, polished)
                if knot is None or knot[2] != "enter":
                    continue
                at = lasso.polish(problem, lasso.solve_gram(problem, knot[0] * (1 + 1e-9),
                                                            warm_start=sol.theta_hat))
                event = tv.analyze_solution(model, problem, at)
                self.assertEqual(event.case, "II")
                self.assertTrue(event.ray_checks["ray1"])
                self.assertTrue(event.ray_checks["ray2"])
                rays += 1
        self.assertGreaterEqual(lines, 500)
        self.assertGreaterEqual(rays, 100)

    def test_single_edge_recovery_interval_excludes_one(self):
        model = tv.parse_model_spec("single-edge:p=10")
        estimate = tv.oracle_recovery_probability(model, 10000, 500, grid_size=100, threads=4)
        self.assertLess(estimate.ci_high, 1.0)


class ModelSpecTests(SimpleTestCase):
    def test_families(self):
        self.assertEqual(tv.parse_model_spec("identity:p=3").p, 3)
        single = tv.parse_model_spec("single-edge:p=5")
        self.assertEqual(single.target, 4)
        self.assertEqual(single.neighbor_nodes, frozenset({0}))
        band = tv.parse_model_spec("band:p=6,width=2,target=2")
        self.assertEqual(band.neighbor_nodes, frozenset({0, 1, 3, 4}))
        self.assertEqual(tv.parse_model_spec("er:p=8,edges=6,seed=2").p, 8)

    def test_errors(self):
        for spec in ("lattice", "band:q=1", "band:p=x", "band:p"):
            with self.assertRaises(ArgumentError):
                tv.parse_model_spec(spec)


class EventLogTests(SimpleTestCase):
    def test_rows(self):
        model = tv.parse_model_spec("single-edge:p=4")
        events = tv.simulate_events(model, 60, 3, seed=2, grid_size=15)
        with tempfile.TemporaryDirectory() as tmp:
            path = tv.write_event_log(events, model, 60, 2, Path(tmp) / "logs" / "events.csv")
            with path.open(encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        self.assertEqual(rows[0], tv.EVENT_HEADER)
        self.assertEqual(len(rows), 4)
        self.assertEqual([r[0] for r in rows[1:]], ["0", "1", "2"])
        for row in rows[1:]:
            self.assertIn(row[8], ("I", "II", "degenerate"))

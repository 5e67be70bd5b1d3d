import numpy as np
from django.test import SimpleTestCase

from ggm.exceptions import ArgumentError
from ggm.services import metrics
from ggm.services.graph_generators import band_graph, er_graph


def directed(p, pairs):
    adj = np.zeros((p, p), dtype=bool)
    for i, j in pairs:
        adj[i, j] = True
    return adj


class StructuralHammingTests(SimpleTestCase):
    def test_undirected(self):
        chain = band_graph(3)
        self.assertEqual(metrics.shd(chain, chain), 0)
        self.assertEqual(metrics.shd(np.zeros((3, 3), dtype=bool), chain), 2)

    def test_flip_counts_once(self):
        self.assertEqual(metrics.shd(directed(2, [(0, 1)]), directed(2, [(1, 0)]), directed=True), 1)
        est = directed(3, [(1, 0), (0, 2)])
        truth = directed(3, [(0, 1), (1, 2)])
        self.assertEqual(metrics.shd(est, truth, directed=True), 3)

    def test_shape_mismatch(self):
        with self.assertRaises(ArgumentError):
            metrics.shd(band_graph(3), band_graph(4))


class RateTests(SimpleTestCase):
    def test_exact_estimate(self):
        truth = band_graph(10)
        self.assertEqual(metrics.tpr(truth, truth), 1.0)
        self.assertEqual(metrics.fdr(truth, truth), 0.0)

    def test_one_spurious_edge(self):
        truth = band_graph(10)
        est = truth.copy()
        est[0, 5] = est[5, 0] = True
        self.assertEqual(metrics.tpr(est, truth), 1.0)
        self.assertAlmostEqual(metrics.fdr(est, truth), 0.1)

    def test_undefined_values(self):
        empty = np.zeros((4, 4), dtype=bool)
        self.assertIsNone(metrics.fdr(empty, band_graph(4)))
        with self.assertRaises(ArgumentError):
            metrics.tpr(band_graph(4), empty)

    def test_shd_is_misses_plus_false_discoveries(self):
        for seed in range(10):
            est, truth = er_graph(12, 15, seed=seed), er_graph(12, 15, seed=seed + 100)
            tp, fp, total = metrics.edge_counts(est, truth)
            self.assertEqual(metrics.shd(est, truth), (total - tp) + fp)


class SupportMetricTests(SimpleTestCase):
    def test_sets(self):
        self.assertEqual(metrics.support_metrics({0, 2}, {0, 1}), (2, 0.5, 0.5))
        self.assertEqual(metrics.support_metrics(set(), set()), (0, None, None))
        self.assertEqual(metrics.support_metrics({3}, set()), (1, None, 1.0))

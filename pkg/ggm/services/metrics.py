"""Edge-set recovery metrics: structural Hamming distance, TPR and FDR."""

import numpy as np

from ggm.exceptions import ArgumentError


def _pair(est, truth):
    est = np.asarray(est, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if est.shape != truth.shape or est.ndim != 2 or est.shape[0] != est.shape[1]:
        raise ArgumentError(f"adjacency shapes differ: {est.shape} vs {truth.shape}")
    return est, truth


def _edges(adj, directed):
    if directed:
        off = adj.copy()
        np.fill_diagonal(off, False)
        return off
    return np.triu(adj | adj.T, 1)


def shd(est, truth, directed=False):
    """
    Undirected: size of the symmetric difference of the edge sets.
    Directed: insertions + deletions + flips, a reversed edge counting once.
    """
    est, truth = _pair(est, truth)
    if not directed:
        return int((_edges(est, False) ^ _edges(truth, False)).sum())
    e, t = _edges(est, True), _edges(truth, True)
    skel_e, skel_t = np.triu(e | e.T, 1), np.triu(t | t.T, 1)
    missing_or_extra = int((skel_e ^ skel_t).sum())
    shared = skel_e & skel_t
    flips = int((shared & (np.triu(e, 1) != np.triu(t, 1))).sum())
    return missing_or_extra + flips


def edge_counts(est, truth, directed=False):
    """(true positives, false positives, |truth|)."""
    est, truth = _pair(est, truth)
    e, t = _edges(est, directed), _edges(truth, directed)
    return int((e & t).sum()), int((e & ~t).sum()), int(t.sum())


def tpr(est, truth, directed=False):
    tp, _, total = edge_counts(est, truth, directed)
    if total == 0:
        raise ArgumentError("tpr needs a nonempty true edge set")
    return tp / total


def fdr(est, truth, directed=False):
    """False discoveries over estimated edges; None when nothing was estimated."""
    tp, fp, _ = edge_counts(est, truth, directed)
    if tp + fp == 0:
        return None
    return fp / (tp + fp)


def support_metrics(est, truth):
    """(shd, tpr, fdr) for index sets; tpr is None for an empty truth, fdr for an empty estimate."""
    est, truth = frozenset(est), frozenset(truth)
    tp = len(est & truth)
    return (
        len(est ^ truth),
        tp / len(truth) if truth else None,
        (len(est) - tp) / len(est) if est else None,
    )

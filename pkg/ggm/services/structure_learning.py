"""
Graph estimates assembled from nodewise Lasso fits (neighborhood selection),
the graphical lasso, and DAG estimation under a known ordering.

All estimators work from the second-moment matrix S = XᵀX/n of raw columns,
so one p×p matrix serves every node and every λ on a grid.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy import linalg

from ggm.exceptions import ArgumentError, SolverConvergenceError
from ggm.services import lasso
from ggm.services.gaussian_model import predictor_indices
from ggm.services.selection_criteria import (
    DEFAULT_EBIC_GAMMA,
    DEFAULT_FOLDS,
    IC_KINDS,
    SelectionResult,
    argmin_sparsest,
    at_grid_end,
    fold_splits,
    information_criterion,
)

logger = logging.getLogger(__name__)

RULES = ("AND", "OR")
METHODS = ("NS", "Glasso")
DEFAULT_RULE = "OR"
GLASSO_ZERO_TOL = 1e-8
REFIT_TOL = 1e-6


@dataclass(frozen=True)
class GraphEstimate:
    adjacency: np.ndarray
    lam: float
    rule: str
    method: str
    directed: bool = False
    nonconverged: tuple = ()

    @property
    def edge_count(self):
        if self.directed:
            return int(self.adjacency.sum())
        return int(np.triu(self.adjacency, 1).sum())

    def edges(self):
        if self.directed:
            return {(int(i), int(j)) for i, j in zip(*np.nonzero(self.adjacency))}
        return {(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(self.adjacency, 1)))}


@dataclass(frozen=True)
class GlassoResult:
    precision: np.ndarray
    covariance: np.ndarray
    graph: GraphEstimate
    converged: bool
    dual_gap: float
    n_iter: int


def second_moment(X):
    data = lasso.as_array(X)
    n = data.shape[0]
    if n < 2:
        raise ArgumentError(f"need at least 2 samples, got n={n}")
    return data.T @ data / n, n


def graph_lambda_max(moment):
    """Largest off-diagonal |S_ij|: every nodewise fit (and Glasso) is empty at or above it."""
    off = np.abs(moment - np.diag(np.diag(moment)))
    return float(off.max())


def symmetrize(nonzero, rule=DEFAULT_RULE):
    """AND keeps {i,j} when both regressions select each other, OR when either does."""
    if rule == "AND":
        adj = nonzero & nonzero.T
    elif rule == "OR":
        adj = nonzero | nonzero.T
    else:
        raise ArgumentError(f"unknown symmetrization rule {rule!r}")
    np.fill_diagonal(adj, False)
    return adj


def _node_path(moment, n, node, grid, kkt_tol, max_iter):
    problem = lasso.GramProblem.from_second_moment(moment, node, n)
    path = lasso.solve_path(problem, grid, kkt_tol=kkt_tol, max_iter=max_iter)
    coefs = np.array([sol.theta_hat for sol in path.solutions])
    converged = np.array([sol.converged for sol in path.solutions])
    return problem.predictors, coefs, converged


def nodewise_coefficients(moment, n, grid, kkt_tol=lasso.DEFAULT_KKT_TOL,
                          max_iter=lasso.DEFAULT_MAX_ITER, threads=1):
    """
    B[g, j, i] = coefficient of node i in the regression of node j at grid[g]
    (zero diagonal), and the (len(grid), p) convergence mask.
    Nodes are fitted independently and merged by node index.
    """
    p = moment.shape[0]
    grid = np.asarray(grid, dtype=float)
    coefs = np.zeros((grid.size, p, p))
    converged = np.ones((grid.size, p), dtype=bool)

    def fit(node):
        return node, _node_path(moment, n, node, grid, kkt_tol, max_iter)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fit, range(p)))
    else:
        results = [fit(node) for node in range(p)]
    for node, (rest, node_coefs, node_ok) in results:
        coefs[:, node, rest] = node_coefs
        converged[:, node] = node_ok
    return coefs, converged


def _raise_if_strict(strict, converged, lam):
    bad = tuple(int(j) for j in np.flatnonzero(~converged))
    if bad and strict:
        raise SolverConvergenceError(f"nodewise lasso did not converge at lambda={lam:.3g}",
                                     node=bad[0])
    if bad:
        logger.warning("nodes %s did not converge at lambda=%.3g", bad, lam)
    return bad


def ns_graph(X, lam, rule=DEFAULT_RULE, kkt_tol=lasso.DEFAULT_KKT_TOL,
             max_iter=lasso.DEFAULT_MAX_ITER, strict=False, threads=1):
    """Neighborhood selection at one shared λ."""
    if not lam > 0:
        raise ArgumentError(f"lambda must be positive, got {lam}")
    moment, n = second_moment(X)
    coefs, converged = nodewise_coefficients(moment, n, [lam], kkt_tol, max_iter, threads)
    bad = _raise_if_strict(strict, converged[0], lam)
    return GraphEstimate(adjacency=symmetrize(coefs[0] != 0, rule), lam=float(lam),
                         rule=rule, method="NS", nonconverged=bad)


def ns_path(X, grid, rule=DEFAULT_RULE, kkt_tol=lasso.DEFAULT_KKT_TOL,
            max_iter=lasso.DEFAULT_MAX_ITER, threads=1):
    moment, n = second_moment(X)
    coefs, converged = nodewise_coefficients(moment, n, grid, kkt_tol, max_iter, threads)
    graphs = [
        GraphEstimate(adjacency=symmetrize(coefs[g] != 0, rule), lam=float(lam), rule=rule,
                      method="NS", nonconverged=tuple(int(j) for j in np.flatnonzero(~converged[g])))
        for g, lam in enumerate(grid)
    ]
    return graphs, coefs


# --------------------------------------------------------------------------
# Graphical lasso
# --------------------------------------------------------------------------
def _dual_gap(moment, precision, lam):
    p = moment.shape[0]
    gap = np.sum(moment * precision) - p
    gap += lam * (np.abs(precision).sum() - np.abs(np.diag(precision)).sum())
    return float(gap)


def _precision_from_betas(cov, betas):
    p = cov.shape[0]
    precision = np.zeros((p, p))
    for j in range(p):
        rest = predictor_indices(p, j)
        beta = betas[j]
        precision[j, j] = 1.0 / (cov[j, j] - cov[rest, j] @ beta)
        precision[rest, j] = -precision[j, j] * beta
    return (precision + precision.T) / 2.0


def glasso_from_moment(moment, lam, tol=1e-4, max_iter=100, cov_init=None,
                       kkt_tol=1e-10, lasso_max_iter=lasso.DEFAULT_MAX_ITER):
    """
    Block coordinate descent: each column of W solves a Lasso in Gram form
    against W₁₁ with the off-diagonal of S as correlation, then W₁₂ = W₁₁β.
    The diagonal is not penalised. Converged when the duality gap ≤ tol.
    """
    if not lam > 0:
        raise ArgumentError(f"lambda must be positive, got {lam}")
    p = moment.shape[0]
    if cov_init is None:
        cov = moment * 0.95
        np.fill_diagonal(cov, np.diag(moment))
    else:
        cov = np.array(cov_init, dtype=float)
    betas = np.zeros((p, p - 1))
    gap = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(p):
            rest = predictor_indices(p, j)
            problem = lasso.GramProblem(gram=cov[np.ix_(rest, rest)], corr=moment[rest, j],
                                        yy=float(moment[j, j]), n=1, predictors=rest)
            sol = lasso.solve_gram(problem, lam, kkt_tol=kkt_tol, max_iter=lasso_max_iter,
                                   warm_start=betas[j])
            betas[j] = sol.theta_hat
            w12 = problem.gram @ betas[j]
            cov[rest, j] = w12
            cov[j, rest] = w12
        precision = _precision_from_betas(cov, betas)
        gap = _dual_gap(moment, precision, lam)
        if abs(gap) <= tol:
            converged = True
            break
    else:
        logger.warning("glasso did not reach duality gap %.1e at lambda=%.3g (gap %.3g)", tol, lam, gap)
    adj = np.abs(precision) > GLASSO_ZERO_TOL
    np.fill_diagonal(adj, False)
    graph = GraphEstimate(adjacency=adj, lam=float(lam), rule="none", method="Glasso")
    return GlassoResult(precision=precision, covariance=cov, graph=graph,
                        converged=converged, dual_gap=gap, n_iter=it)


def glasso(X, lam, tol=1e-4, max_iter=100):
    moment, _ = second_moment(X)
    return glasso_from_moment(moment, lam, tol=tol, max_iter=max_iter)


def glasso_path(moment, grid, tol=1e-4, max_iter=100):
    results = []
    cov = None
    for lam in grid:
        res = glasso_from_moment(moment, lam, tol=tol, max_iter=max_iter, cov_init=cov)
        results.append(res)
        cov = res.covariance
    return results


def refit_precision(moment, adjacency, tol=REFIT_TOL, max_iter=500):
    """
    Unpenalised Gaussian MLE of the precision with a fixed zero pattern:
    each column solves W₁₁[N,N]β_N = s₁₂[N] on its neighbors N, then W₁₂ = W₁₁β.
    Returns (precision, converged).
    """
    p = moment.shape[0]
    cov = moment.copy()
    betas = np.zeros((p, p - 1))
    scale = max(np.abs(moment).mean(), 1e-300)
    converged = False
    for _ in range(max_iter):
        before = cov.copy()
        for j in range(p):
            rest = predictor_indices(p, j)
            nb = np.flatnonzero(adjacency[j, rest])
            beta = np.zeros(p - 1)
            if nb.size:
                w11 = cov[np.ix_(rest, rest)]
                beta[nb] = linalg.solve(w11[np.ix_(nb, nb)], moment[rest[nb], j], assume_a="pos")
                w12 = w11 @ beta
            else:
                w12 = np.zeros(p - 1)
            cov[rest, j] = w12
            cov[j, rest] = w12
            betas[j] = beta
        if np.abs(cov - before).mean() <= tol * scale:
            converged = True
            break
    return _precision_from_betas(cov, betas), converged


def gaussian_loglik(moment, precision, n):
    """(n/2)(log det Θ − tr(SΘ) − p log 2π); NaN if Θ is not positive definite."""
    sign, logdet = np.linalg.slogdet(precision)
    if sign <= 0:
        return np.nan
    p = moment.shape[0]
    return 0.5 * n * (logdet - np.sum(moment * precision) - p * np.log(2.0 * np.pi))


# --------------------------------------------------------------------------
# DAG estimation with a known ordering
# --------------------------------------------------------------------------
def dag_known_ordering(X, ordering, lam, kkt_tol=lasso.DEFAULT_KKT_TOL,
                       max_iter=lasso.DEFAULT_MAX_ITER):
    """
    Regress each node on its predecessors in the ordering; nonzero
    coefficients are parents. adjacency[i, j] means the edge i → j.
    """
    moment, n = second_moment(X)
    p = moment.shape[0]
    order = [int(v) for v in ordering]
    if sorted(order) != list(range(p)):
        raise ArgumentError(f"ordering must be a permutation of 0..{p - 1}")
    adj = np.zeros((p, p), dtype=bool)
    bad = []
    for k, node in enumerate(order[1:], start=1):
        preds = np.array(order[:k], dtype=int)
        problem = lasso.GramProblem.from_second_moment(moment, node, n, predictors=preds)
        sol = lasso.solve_gram(problem, lam, kkt_tol=kkt_tol, max_iter=max_iter)
        if not sol.converged:
            bad.append(node)
        adj[preds[sol.theta_hat != 0], node] = True
    assert nx.is_directed_acyclic_graph(nx.from_numpy_array(adj.astype(int), create_using=nx.DiGraph))
    return GraphEstimate(adjacency=adj, lam=float(lam), rule="none", method="DAG-order",
                         directed=True, nonconverged=tuple(bad))


# --------------------------------------------------------------------------
# Graph-level penalty selection
# --------------------------------------------------------------------------
def graph_grid(moment, grid_size=lasso.DEFAULT_GRID_SIZE,
               lambda_min_ratio=lasso.DEFAULT_LAMBDA_MIN_RATIO, lam_min=None):
    return lasso.make_grid(graph_lambda_max(moment), grid_size, lambda_min_ratio, lam_min=lam_min)


def _refit_heldout(train, test, adjacency, cache):
    """Held-out squared error summed over nodes, each refitted by OLS on its graph neighbors."""
    total = 0.0
    for j in range(adjacency.shape[0]):
        cols = [int(i) for i in np.flatnonzero(adjacency[j])]
        key = (j, tuple(cols))
        if key not in cache:
            yt = test[:, j]
            if not cols:
                cache[key] = float(yt @ yt) / len(yt)
            elif len(cols) >= len(train):
                cache[key] = np.nan
            else:
                coef, _, rank, _ = linalg.lstsq(train[:, cols], train[:, j])
                resid = yt - test[:, cols] @ coef
                cache[key] = float(resid @ resid) / len(yt) if rank == len(cols) else np.nan
        total += cache[key]
    return total


def _ns_heldout(data, grid, splits, kkt_tol, max_iter, threads, rule=DEFAULT_RULE, refit=False):
    """
    Summed nodewise held-out squared error, averaged over folds. With refit the
    fold's graph at each λ is refitted without penalty before scoring.
    """
    p = data.shape[1]
    eye = np.eye(p)
    scores = np.zeros((len(splits), len(grid)))
    for k, (train, test) in enumerate(splits):
        moment, n = second_moment(data[train])
        coefs, converged = nodewise_coefficients(moment, n, grid, kkt_tol, max_iter, threads)
        xtr, xt = data[train], data[test]
        cache = {}
        for g in range(len(grid)):
            if not converged[g].all():
                scores[k, g] = np.nan
            elif refit:
                scores[k, g] = _refit_heldout(xtr, xt, symmetrize(coefs[g] != 0, rule), cache)
            else:
                resid = xt @ (eye - coefs[g]).T
                scores[k, g] = np.sum(resid * resid) / len(test)
    return scores.mean(axis=0)


def _ns_refit_loglik(data, adjacency, cache):
    n, p = data.shape
    total = 0.0
    for j in range(p):
        nbrs = tuple(int(i) for i in np.flatnonzero(adjacency[j]))
        key = (j, nbrs)
        if key not in cache:
            if len(nbrs) >= n:
                cache[key] = np.nan
            else:
                y = data[:, j]
                if nbrs:
                    xs = data[:, list(nbrs)]
                    coef, _, rank, _ = linalg.lstsq(xs, y)
                    resid = y - xs @ coef
                    ok = rank == len(nbrs)
                else:
                    resid, ok = y, True
                sigma2 = max(resid @ resid / n, 1e-12)
                cache[key] = -0.5 * n * (np.log(2.0 * np.pi * sigma2) + 1.0) if ok else np.nan
        total += cache[key]
    return total


def _glasso_heldout(data, grid, splits, tol, max_iter, refit=False):
    scores = np.zeros((len(splits), len(grid)))
    for k, (train, test) in enumerate(splits):
        moment, _ = second_moment(data[train])
        xt = data[test]
        test_moment = xt.T @ xt / len(test)
        refits = {}
        for g, res in enumerate(glasso_path(moment, grid, tol=tol, max_iter=max_iter)):
            precision, ok = res.precision, res.converged
            if ok and refit:
                key = res.graph.adjacency.tobytes()
                if key not in refits:
                    refits[key] = refit_precision(moment, res.graph.adjacency)
                precision, ok = refits[key]
            sign, logdet = np.linalg.slogdet(precision)
            ok = ok and sign > 0
            scores[k, g] = np.sum(test_moment * precision) - logdet if ok else np.nan
    return scores.mean(axis=0)


@dataclass(frozen=True)
class GraphPath:
    """Graph estimates over a shared λ grid, with what the criteria need to score them."""

    method: str
    rule: str
    grid: np.ndarray
    graphs: tuple
    data: np.ndarray
    moment: np.ndarray
    coefs: np.ndarray = None
    precisions: tuple = None


def graph_path(X, method="NS", rule=DEFAULT_RULE, grid=None, grid_size=lasso.DEFAULT_GRID_SIZE,
               lambda_min_ratio=lasso.DEFAULT_LAMBDA_MIN_RATIO, kkt_tol=lasso.DEFAULT_KKT_TOL,
               max_iter=lasso.DEFAULT_MAX_ITER, glasso_tol=1e-4, threads=1):
    if method not in METHODS:
        raise ArgumentError(f"unknown method {method!r}")
    data = lasso.as_array(X)
    moment, _ = second_moment(data)
    if grid is None:
        grid = graph_grid(moment, grid_size, lambda_min_ratio)
    grid = np.asarray(grid, dtype=float)
    if method == "NS":
        graphs, coefs = ns_path(data, grid, rule, kkt_tol, max_iter, threads)
        return GraphPath(method=method, rule=rule, grid=grid, graphs=tuple(graphs), data=data,
                         moment=moment, coefs=coefs)
    fits = glasso_path(moment, grid, tol=glasso_tol)
    return GraphPath(method=method, rule="none", grid=grid, graphs=tuple(f.graph for f in fits),
                     data=data, moment=moment,
                     precisions=tuple(f.precision if f.converged else None for f in fits))


def _oracle_scores(path, sigma):
    sigma = np.asarray(sigma, dtype=float)
    if path.method == "NS":
        eye = np.eye(sigma.shape[0])
        return [float(np.trace((eye - b) @ sigma @ (eye - b).T)) for b in path.coefs], \
            "population_risk"
    scores = []
    for prec in path.precisions:
        sign, logdet = np.linalg.slogdet(prec) if prec is not None else (0, 0.0)
        scores.append(float(np.sum(sigma * prec) - logdet) if sign > 0 else np.nan)
    return scores, "population_negloglik"


def _ic_scores(path, criterion, gamma):
    n, p = path.data.shape
    scores = []
    cache = {}
    for graph in path.graphs:
        if path.method == "NS":
            ll = _ns_refit_loglik(path.data, graph.adjacency, cache)
        else:
            key = graph.adjacency.tobytes()
            if key not in cache:
                prec, ok = refit_precision(path.moment, graph.adjacency)
                cache[key] = gaussian_loglik(path.moment, prec, n) if ok else np.nan
            ll = cache[key]
        # NS refits one regression per node, so every edge is two coefficients
        df = int(graph.adjacency.sum()) if path.method == "NS" else graph.edge_count
        scores.append(information_criterion(ll, df, n, p, criterion, gamma)
                      if np.isfinite(ll) else np.nan)
    return scores


def select_graph(path, criterion="cv", K=DEFAULT_FOLDS, gamma=DEFAULT_EBIC_GAMMA, seed=0,
                 sigma=None, cv_refit=False, kkt_tol=lasso.DEFAULT_KKT_TOL,
                 max_iter=lasso.DEFAULT_MAX_ITER, glasso_tol=1e-4, threads=1):
    """
    Score a GraphPath by one criterion and return the graph at the chosen λ:
      oracle  NS: Σ_j population risk of node j's fit; Glasso: tr(ΣΘ̂) − log det Θ̂ (needs `sigma`)
      cv      NS: Σ_j held-out squared error; Glasso: held-out negative log-likelihood.
              With cv_refit each fold's graph is refitted without penalty before scoring.
      ic      refit log-likelihood; df = Σ_j |N̂_j| for NS, the edge count for Glasso
    A minimiser at the smallest λ is logged and marked `at_grid_end` in the metadata.
    """
    metadata = {"method": path.method, "rule": path.rule}
    if criterion == "oracle":
        if sigma is None:
            raise ArgumentError("the oracle criterion needs the true covariance")
        scores, metadata["score_type"] = _oracle_scores(path, sigma)
    elif criterion == "cv":
        splits = fold_splits(path.data.shape[0], K, seed)
        if path.method == "NS":
            scores = _ns_heldout(path.data, path.grid, splits, kkt_tol, max_iter, threads,
                                 rule=path.rule, refit=cv_refit)
            metadata["score_type"] = "refit_squared_error" if cv_refit else "squared_error"
        else:
            scores = _glasso_heldout(path.data, path.grid, splits, glasso_tol, 100,
                                     refit=cv_refit)
            metadata["score_type"] = "refit_negloglik" if cv_refit else "negloglik"
        metadata.update(K=int(K), seed=int(seed))
    elif criterion in IC_KINDS:
        scores = _ic_scores(path, criterion, gamma)
        if criterion == "ebic":
            metadata["gamma"] = float(gamma)
        metadata["score_type"] = "refit_loglik"
    else:
        raise ArgumentError(f"unknown criterion {criterion!r}")

    scores = np.asarray(scores, dtype=float)
    for g, graph in enumerate(path.graphs):
        if graph.nonconverged:
            scores[g] = np.nan
    idx = argmin_sparsest(scores)
    flagged = tuple(int(i) for i in np.flatnonzero(~np.isfinite(scores)))
    if flagged:
        logger.warning("%s/%s: %d of %d lambda values flagged", path.method, criterion,
                       len(flagged), len(scores))
    metadata["at_grid_end"] = at_grid_end(path.grid, idx, f"{path.method}/{criterion}")
    scores.setflags(write=False)
    selection = SelectionResult(
        criterion=criterion,
        scores=scores,
        grid=path.grid,
        chosen_index=idx,
        chosen_support=frozenset(path.graphs[idx].edges()),
        metadata=metadata,
        flagged=flagged,
    )
    return path.graphs[idx], selection


def graph_with_criterion(X, method="NS", criterion="cv", rule=DEFAULT_RULE,
                         grid_size=lasso.DEFAULT_GRID_SIZE,
                         lambda_min_ratio=lasso.DEFAULT_LAMBDA_MIN_RATIO,
                         K=DEFAULT_FOLDS, gamma=DEFAULT_EBIC_GAMMA, seed=0,
                         sigma=None, grid=None, cv_refit=False,
                         kkt_tol=lasso.DEFAULT_KKT_TOL,
                         max_iter=lasso.DEFAULT_MAX_ITER, glasso_tol=1e-4, threads=1):
    """Fit the λ path of one method and select by one criterion; see select_graph."""
    path = graph_path(X, method=method, rule=rule, grid=grid, grid_size=grid_size,
                      lambda_min_ratio=lambda_min_ratio, kkt_tol=kkt_tol, max_iter=max_iter,
                      glasso_tol=glasso_tol, threads=threads)
    return select_graph(path, criterion=criterion, K=K, gamma=gamma, seed=seed, sigma=sigma,
                        cv_refit=cv_refit, kkt_tol=kkt_tol, max_iter=max_iter,
                        glasso_tol=glasso_tol, threads=threads)

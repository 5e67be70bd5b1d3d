"""
Benchmark graph families (band, Erdős–Rényi, scale-free, k-nearest-neighbor)
and SPD precision matrices whose off-diagonal support is the graph.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np
from sklearn.neighbors import NearestNeighbors

from ggm.exceptions import ArgumentError, ModelConstructionError
from ggm.services.rng import derive_rng, derive_seed

logger = logging.getLogger(__name__)

FAMILIES = ("band", "er", "sf", "knn")
MAX_SIGN_ATTEMPTS = 100


def _empty(p):
    return np.zeros((p, p), dtype=bool)


def _from_networkx(graph, p):
    adj = nx.to_numpy_array(graph, nodelist=range(p), dtype=int) != 0
    np.fill_diagonal(adj, False)
    return adj


def band_graph(p, width=1):
    """Edges {i, i+d} for 1 ≤ d ≤ width; width=1 is the chain."""
    if p < 2:
        raise ArgumentError(f"band graph needs p >= 2, got {p}")
    adj = _empty(p)
    for d in range(1, int(width) + 1):
        idx = np.arange(p - d)
        adj[idx, idx + d] = True
        adj[idx + d, idx] = True
    return adj


def er_graph(p, edge_count, seed=0):
    """Exactly edge_count edges drawn uniformly without replacement."""
    most = p * (p - 1) // 2
    if not 0 <= edge_count <= most:
        raise ArgumentError(f"edge_count must be in [0, {most}], got {edge_count}")
    return _from_networkx(nx.gnm_random_graph(p, int(edge_count), seed=derive_seed(seed, "er")), p)


def sf_graph(p, m=1, seed=0):
    """
    Barabási–Albert preferential attachment starting from two connected nodes
    (m=1); each new node attaches to m existing nodes with probability
    proportional to degree.
    """
    if p < 2:
        raise ArgumentError(f"scale-free graph needs p >= 2, got {p}")
    if not 1 <= m < p:
        raise ArgumentError(f"attachment count m must be in [1, {p - 1}], got {m}")
    return _from_networkx(nx.barabasi_albert_graph(p, int(m), seed=derive_seed(seed, "sf")), p)


def knn_graph(p, k, seed=0):
    """
    Symmetrised k-nearest-neighbor graph of p points, the rows of a seeded
    uniform p×p matrix, under euclidean distance. {i,j} is an edge when either
    point is among the other's k nearest.
    """
    if not 1 <= k < p:
        raise ArgumentError(f"k must be in [1, {p - 1}], got {k}")
    points = derive_rng(seed, "knn").uniform(size=(p, p))
    nn = NearestNeighbors(n_neighbors=int(k) + 1).fit(points)
    _, idx = nn.kneighbors(points)
    adj = _empty(p)
    for i, row in enumerate(idx):
        neighbors = [j for j in row if j != i][: int(k)]
        adj[i, neighbors] = True
    adj |= adj.T
    np.fill_diagonal(adj, False)
    return adj


def precision_from_graph(adjacency, off_diag_value=0.3, diag_boost=0.1, signed=False, seed=0):
    """
    K = A·w + diag(deg·w + boost + 1), diagonally dominant hence SPD, then
    rescaled symmetrically so the implied covariance has unit diagonal.
    With signed=True each edge weight gets a Rademacher sign and the SPD check
    is retried up to MAX_SIGN_ATTEMPTS times.
    Returns (precision, covariance).
    """
    adj = np.asarray(adjacency, dtype=bool)
    degree = adj.sum(axis=1)
    rng = derive_rng(seed, "signs")
    for attempt in range(1, MAX_SIGN_ATTEMPTS + 1):
        weights = adj * float(off_diag_value)
        if signed:
            signs = np.triu(rng.choice([-1.0, 1.0], size=adj.shape), 1)
            weights = weights * (signs + signs.T)
        precision = weights + np.diag(degree * abs(off_diag_value) + diag_boost + 1.0)
        try:
            np.linalg.cholesky(precision)
            break
        except np.linalg.LinAlgError:
            logger.debug("signed precision attempt %d not SPD, resampling", attempt)
    else:
        raise ModelConstructionError("could not draw an SPD signed precision matrix")
    covariance = np.linalg.inv(precision)
    scale = np.sqrt(np.diag(covariance))
    covariance = covariance / np.outer(scale, scale)
    precision = precision * np.outer(scale, scale)
    return (precision + precision.T) / 2.0, (covariance + covariance.T) / 2.0


@dataclass(frozen=True)
class GraphInstance:
    adjacency: np.ndarray
    family: str
    precision: np.ndarray
    covariance: np.ndarray
    seed: int = 0
    params: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.adjacency.shape[0]

    @property
    def edge_count(self):
        return int(np.triu(self.adjacency, 1).sum())


def make_adjacency(family, p, seed=0, **params):
    if family == "band":
        return band_graph(p, width=params.get("width", 1))
    if family == "er":
        return er_graph(p, params.get("edges", p - 1), seed=seed)
    if family == "sf":
        return sf_graph(p, m=params.get("m", 1), seed=seed)
    if family == "knn":
        return knn_graph(p, params.get("k", 2), seed=seed)
    if family == "identity":
        return _empty(p)
    raise ArgumentError(f"unknown graph family {family!r}")


def make_instance(family, p, seed=0, off_diag_value=0.3, diag_boost=0.1, signed=False, **params):
    """Graph of the family plus a compatible SPD precision/covariance pair."""
    adj = make_adjacency(family, p, seed=seed, **params)
    precision, covariance = precision_from_graph(adj, off_diag_value, diag_boost, signed, seed)
    for arr in (adj, precision, covariance):
        arr.setflags(write=False)
    return GraphInstance(adjacency=adj, family=family, precision=precision,
                         covariance=covariance, seed=int(seed), params=dict(params))


def instance_from_adjacency(adjacency, family="custom", seed=0, **kwargs):
    adj = np.asarray(adjacency, dtype=bool)
    precision, covariance = precision_from_graph(adj, seed=seed, **kwargs)
    return GraphInstance(adjacency=adj, family=family, precision=precision,
                         covariance=covariance, seed=int(seed))


# --------------------------------------------------------------------------
# Text formats
# --------------------------------------------------------------------------
def write_edge_list(instance, path):
    """Header `p <p> family <name> seed <seed>`, then one `i j weight` line per edge."""
    path = Path(path)
    lines = [f"p {instance.p} family {instance.family} seed {instance.seed}"]
    for i, j in zip(*np.nonzero(np.triu(instance.adjacency, 1))):
        lines.append(f"{i} {j} {instance.precision[i, j]:.17g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_edge_list(path):
    """Returns (p, family, seed, [(i, j, weight), ...])."""
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    head = rows[0].split()
    if len(head) != 6 or head[0] != "p" or head[2] != "family" or head[4] != "seed":
        raise ArgumentError(f"malformed edge-list header: {rows[0]!r}")
    edges = []
    for line in rows[1:]:
        if line.strip():
            i, j, w = line.split()
            edges.append((int(i), int(j), float(w)))
    return int(head[1]), head[3], int(head[5]), edges


def write_matrix(matrix, path):
    np.savetxt(path, np.asarray(matrix), fmt="%.17g")
    return Path(path)


def read_matrix(path):
    return np.atleast_2d(np.loadtxt(path))

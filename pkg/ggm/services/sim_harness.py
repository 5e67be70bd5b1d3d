"""
Simulation harness: graph family × method × criterion × (p, n) cells with
SHD/TPR/FDR per repetition, plus the planted-sparsity regression experiments.

Results stream to a CSV whose schema is fixed (see CSV_HEADER); the file ends
with a `# complete ...` footer only when every cell finished, and a JSON
`<out>.meta` sidecar records the resolved configuration.
"""

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats
from tqdm import tqdm

import ggm
from ggm.exceptions import ArgumentError
from ggm.services import graph_generators, lasso, metrics, structure_learning
from ggm.services.gaussian_model import sample
from ggm.services.rng import derive_rng, derive_seed
from ggm.services.selection_criteria import DEFAULT_EBIC_GAMMA, DEFAULT_FOLDS, cv_select, select_by_ic

logger = logging.getLogger(__name__)

CSV_HEADER = [
    "family", "method", "criterion", "p", "n", "rep", "seed", "lambda", "shd", "tpr", "fdr",
    "fdr_defined", "status", "elapsed_seconds",
]
METHOD_NAMES = {"ns": "NS", "glasso": "Glasso"}
DISTRIBUTIONS = ("skew_normal", "log_normal")
SKEW_ALPHA = 5.0
NOISE_VARIANCE = 0.1
LAMBDA_MIN_FLOOR = 1e-3
BISECTION_STEPS = 12


@dataclass(frozen=True)
class MetricsRecord:
    family: str
    method: str
    criterion: str
    p: int
    n: int
    rep: int
    seed: int
    lam: float = None
    shd: int = None
    tpr: float = None
    fdr: float = None
    status: str = "ok"
    elapsed_seconds: float = 0.0

    @property
    def fdr_defined(self):
        return self.fdr is not None

    @property
    def cell(self):
        return (self.family, self.method, self.criterion, self.p, self.n)

    def as_row(self):
        def num(x):
            return "" if x is None else f"{x:.17g}"

        return [
            self.family, self.method, self.criterion, self.p, self.n, self.rep, self.seed,
            num(self.lam), "" if self.shd is None else self.shd, num(self.tpr), num(self.fdr),
            int(self.fdr_defined), self.status, num(self.elapsed_seconds),
        ]


def _record(cell, rep, seed, lam, est, truth, elapsed, directed=False):
    family, method, criterion, p, n = cell
    tpr = metrics.tpr(est, truth, directed) if truth.any() else None
    fdr = metrics.fdr(est, truth, directed)
    return MetricsRecord(
        family=family, method=method, criterion=criterion, p=p, n=n, rep=rep, seed=seed,
        lam=float(lam), shd=metrics.shd(est, truth, directed), tpr=tpr, fdr=fdr,
        status="ok" if fdr is not None else "fdr_undefined", elapsed_seconds=elapsed,
    )


def _timeout(cell, rep, seed):
    family, method, criterion, p, n = cell
    return MetricsRecord(family=family, method=method, criterion=criterion, p=p, n=n, rep=rep,
                         seed=seed, status="timeout")


# --------------------------------------------------------------------------
# Aggregates
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class CellSummary:
    family: str
    method: str
    criterion: str
    p: int
    n: int
    reps: int
    mean_shd: float
    sd_shd: float
    mean_tpr: float
    sd_tpr: float
    mean_fdr: float
    sd_fdr: float
    fdr_undefined: int
    timeouts: int

    def as_dict(self):
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in self.__dict__.items()}


def _mean_sd(values):
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def summarize(records):
    """Mean and sd of each metric per cell, over repetitions that ran."""
    cells = {}
    for r in records:
        cells.setdefault(r.cell, []).append(r)
    out = []
    for cell, rows in cells.items():
        ran = [r for r in rows if r.status != "timeout"]
        shd = _mean_sd([r.shd for r in ran])
        tpr = _mean_sd([r.tpr for r in ran if r.tpr is not None])
        fdr = _mean_sd([r.fdr for r in ran if r.fdr is not None])
        out.append(CellSummary(*cell, reps=len(rows), mean_shd=shd[0], sd_shd=shd[1],
                               mean_tpr=tpr[0], sd_tpr=tpr[1], mean_fdr=fdr[0], sd_fdr=fdr[1],
                               fdr_undefined=sum(r.status == "fdr_undefined" for r in rows),
                               timeouts=len(rows) - len(ran)))
    return out


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------
class CsvSink:
    """Single writer for result rows; the footer marks a complete file."""

    def __init__(self, path, meta):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.meta_path = self.path.with_name(self.path.name + ".meta")
        self.meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
        self._fh = self.path.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_HEADER)
        self.cells = 0
        self.rows = 0

    def write_cell(self, records):
        for r in sorted(records, key=lambda r: r.rep):
            self._writer.writerow(r.as_row())
        self.rows += len(records)
        self.cells += 1
        self._fh.flush()

    def complete(self):
        self._fh.write(f"# complete cells={self.cells} rows={self.rows}\n")
        self.close()

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.complete()
        else:
            logger.error("aborting %s after %d rows: %s", self.path, self.rows, exc)
            self.close()
        return False


def _meta(kind, config):
    return {"kind": kind, "version": ggm.__version__, "config": config,
            "skew_normal_alpha": SKEW_ALPHA, "noise_variance": NOISE_VARIANCE}


def _map_ordered(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# --------------------------------------------------------------------------
# GGM experiment
# --------------------------------------------------------------------------
def _edge_count_at(X, lam, method, rule, kkt_tol, max_iter):
    if method == "NS":
        return structure_learning.ns_graph(X, lam, rule=rule, kkt_tol=kkt_tol,
                                           max_iter=max_iter).edge_count
    moment, _ = structure_learning.second_moment(X)
    return structure_learning.glasso_from_moment(moment, lam).graph.edge_count


def ground_truth_lambda_min(X, precision, method="NS", rule="OR", kkt_tol=lasso.DEFAULT_KKT_TOL,
                            max_iter=lasso.DEFAULT_MAX_ITER):
    """
    Smallest λ in [λ_max·1e-3, λ_max] whose estimated graph has fewer than
    2‖K*‖₁ edges, ‖K*‖₁ = Σ|K*_ij| over the whole true precision, found by
    bisection in log λ.
    """
    target = 2.0 * float(np.abs(np.asarray(precision, dtype=float)).sum())
    moment, _ = structure_learning.second_moment(X)
    hi = structure_learning.graph_lambda_max(moment)
    lo = hi * LAMBDA_MIN_FLOOR
    if _edge_count_at(X, lo, method, rule, kkt_tol, max_iter) < target:
        return lo
    for _ in range(BISECTION_STEPS):
        mid = math.sqrt(lo * hi)
        if _edge_count_at(X, mid, method, rule, kkt_tol, max_iter) < target:
            hi = mid
        else:
            lo = mid
    return hi


def _fit_rep(config, instance, n, rep, deadline, kkt_tol, max_iter):
    method = METHOD_NAMES[config.method]
    rule = config.rule.upper()
    p = instance.p
    rep_seed = derive_seed(config.seed, config.family, p, n, rep)
    cells = [(config.family, method, c, p, n) for c in config.criteria]
    if time.monotonic() > deadline:
        return [_timeout(cell, rep, rep_seed) for cell in cells]

    start = time.perf_counter()
    X = sample(instance.covariance, n, rep_seed).data
    moment, _ = structure_learning.second_moment(X)
    lam_min = ground_truth_lambda_min(X, instance.precision, method, rule, kkt_tol, max_iter)
    lam_max = structure_learning.graph_lambda_max(moment)
    if lam_min >= lam_max:
        lam_min = None
    grid = structure_learning.graph_grid(moment, config.grid_size, lam_min=lam_min)
    path = structure_learning.graph_path(X, method=method, rule=rule, grid=grid,
                                         kkt_tol=kkt_tol, max_iter=max_iter)
    out = []
    for cell in cells:
        graph, selection = structure_learning.select_graph(
            path, criterion=cell[2], K=config.K, gamma=config.gamma, seed=rep_seed,
            sigma=instance.covariance, cv_refit=config.cv_refit, kkt_tol=kkt_tol,
            max_iter=max_iter)
        out.append(_record(cell, rep, rep_seed, selection.chosen_lambda, graph.adjacency,
                           instance.adjacency, time.perf_counter() - start))
    return out


def run_experiment(config, output_path=None, progress=False, dump_graphs=None,
                   kkt_tol=lasso.DEFAULT_KKT_TOL, max_iter=lasso.DEFAULT_MAX_ITER):
    """
    Run every (p, n) cell of the config for every criterion and return the
    MetricsRecords in CSV order. Repetitions run on config.threads workers;
    a repetition that has not started when the cell's wall-time budget is
    spent is recorded as a timeout.
    """
    output_path = Path(output_path or config.output_path)
    total = len(config.p_list) * len(config.n_list) * config.reps
    records = []
    with CsvSink(output_path, _meta("simulate", config.model_dump())) as sink, \
            tqdm(total=total, desc="simulate", unit="rep", disable=not progress) as bar:
        for p in config.p_list:
            instance = graph_generators.make_instance(
                config.family, p, seed=derive_seed(config.seed, "graph", config.family, p))
            if dump_graphs:
                _dump_instance(instance, dump_graphs)
            logger.info("graph %s p=%d with %d edges", config.family, p, instance.edge_count)
            for n in config.n_list:
                deadline = time.monotonic() + config.wall_time_budget

                def one(rep):
                    rows = _fit_rep(config, instance, n, rep, deadline, kkt_tol, max_iter)
                    bar.update(1)
                    return rows

                per_rep = _map_ordered(one, range(config.reps), config.threads)
                by_criterion = {c: [] for c in config.criteria}
                for rows in per_rep:
                    for r in rows:
                        by_criterion[r.criterion].append(r)
                for criterion in config.criteria:
                    cell_rows = by_criterion[criterion]
                    timeouts = sum(r.status == "timeout" for r in cell_rows)
                    if timeouts:
                        logger.warning("cell %s/%s p=%d n=%d: %d reps timed out",
                                       config.family, criterion, p, n, timeouts)
                    sink.write_cell(cell_rows)
                    records.extend(cell_rows)
    return records


def _dump_instance(instance, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = f"{instance.family}_p{instance.p}"
    graph_generators.write_edge_list(instance, directory / f"{stem}.edges")
    graph_generators.write_matrix(instance.precision, directory / f"{stem}.precision")


# --------------------------------------------------------------------------
# Planted-sparsity regression
# --------------------------------------------------------------------------
def draw_design(dist, n, p, rng):
    if dist == "skew_normal":
        return stats.skewnorm.rvs(SKEW_ALPHA, size=(n, p), random_state=rng)
    if dist == "log_normal":
        return np.exp(rng.standard_normal((n, p)))
    if dist == "gaussian":
        return rng.standard_normal((n, p))
    raise ArgumentError(f"unknown design distribution {dist!r}")


def planted_coefficients(p, s, rng):
    """s-sparse θ with nonzeros drawn from Unif([−2,−1] ∪ [1,2])."""
    if not 0 <= s <= p:
        raise ArgumentError(f"need 0 <= s <= p, got s={s}, p={p}")
    theta = np.zeros(p)
    support = rng.choice(p, size=s, replace=False)
    theta[support] = rng.choice([-1.0, 1.0], size=s) * rng.uniform(1.0, 2.0, size=s)
    return theta, frozenset(int(i) for i in support)


def planted_sample(dist, n, p, s, seed):
    """Centered [X | Y] with Y = Xθ + ε, ε ~ N(0, 0.1); returns (data, support)."""
    rng = derive_rng(seed, "planted")
    X = draw_design(dist, n, p, rng)
    theta, support = planted_coefficients(p, s, rng)
    y = X @ theta + rng.normal(0.0, math.sqrt(NOISE_VARIANCE), size=n)
    data = np.column_stack([X, y])
    return data - data.mean(axis=0), support


def _select(criterion, path, data, target, K, gamma, seed):
    if criterion == "cv":
        return cv_select(path, data, target, K=K, seed=seed)
    if criterion in ("aic", "bic", "ebic"):
        return select_by_ic(path, data, target, criterion, gamma=gamma)
    raise ArgumentError(f"criterion {criterion!r} is not available without a population model")


def _regression_rep(family, dist, p, s, n, rep, seed, criteria, K, gamma, grid_size):
    rep_seed = derive_seed(seed, family, p, s, n, rep)
    start = time.perf_counter()
    data, truth = planted_sample(dist, n, p, s, rep_seed)
    target = p
    problem = lasso.GramProblem.from_samples(data, target)
    grid = lasso.make_grid(problem.lambda_max, grid_size)
    path = lasso.solve_path(problem, grid)
    out = []
    for criterion in criteria:
        sel = _select(criterion, path, data, target, K, gamma, rep_seed)
        shd, tpr, fdr = metrics.support_metrics(sel.chosen_support, truth)
        out.append(MetricsRecord(
            family=family, method="lasso", criterion=criterion, p=p, n=n, rep=rep, seed=rep_seed,
            lam=sel.chosen_lambda, shd=shd, tpr=tpr, fdr=fdr,
            status="ok" if fdr is not None else "fdr_undefined",
            elapsed_seconds=time.perf_counter() - start))
    return out


def _regression_cells(family, dist, p, s, n_list, reps, seed, criteria, K, gamma, grid_size,
                      threads, bar):
    records = []
    for n in n_list:
        if "cv" in criteria and n < K:
            raise ArgumentError(f"n={n} is smaller than K={K}")

        def one(rep):
            rows = _regression_rep(family, dist, p, s, n, rep, seed, criteria, K, gamma, grid_size)
            bar.update(1)
            return rows

        rows = [r for batch in _map_ordered(one, range(reps), threads) for r in batch]
        for criterion in criteria:
            records.append(sorted((r for r in rows if r.criterion == criterion),
                                  key=lambda r: r.rep))
    return records


def nongaussian_experiment(dist, n_list, p, s, reps, seed=0, criteria=("cv",), K=DEFAULT_FOLDS,
                           gamma=DEFAULT_EBIC_GAMMA, grid_size=lasso.DEFAULT_GRID_SIZE,
                           threads=1, progress=False, output_path=None):
    """
    Lasso support recovery with a non-Gaussian design: skew-normal rows
    (shape SKEW_ALPHA) or exp of standard normals, s planted coefficients.
    The CSV family column carries the distribution name.
    """
    if dist not in DISTRIBUTIONS:
        raise ArgumentError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")
    n_list = [int(n) for n in np.atleast_1d(n_list)]
    config = {"dist": dist, "n_list": n_list, "p": p, "s": s, "reps": reps, "seed": seed,
              "criteria": list(criteria), "K": K, "gamma": gamma, "grid_size": grid_size}
    with tqdm(total=len(n_list) * reps, desc=dist, unit="rep", disable=not progress) as bar:
        cells = _regression_cells(dist, dist, p, s, n_list, reps, seed, list(criteria), K, gamma,
                                  grid_size, threads, bar)
    return _emit("nongaussian", config, cells, output_path)


def sparsity_sweep(p, s_list, n_list, reps, seed=0, criteria=("cv",), K=DEFAULT_FOLDS,
                   gamma=DEFAULT_EBIC_GAMMA, grid_size=lasso.DEFAULT_GRID_SIZE, threads=1,
                   progress=False, output_path=None):
    """
    SHD of the selected support against planted sparsity s with a standard
    Gaussian design; the CSV family column is `sparsity_s<s>`.
    """
    n_list = [int(n) for n in np.atleast_1d(n_list)]
    s_list = [int(s) for s in np.atleast_1d(s_list)]
    config = {"p": p, "s_list": s_list, "n_list": n_list, "reps": reps, "seed": seed,
              "criteria": list(criteria), "K": K, "gamma": gamma, "grid_size": grid_size}
    cells = []
    with tqdm(total=len(s_list) * len(n_list) * reps, desc="sparsity", unit="rep",
              disable=not progress) as bar:
        for s in s_list:
            cells.extend(_regression_cells(f"sparsity_s{s}", "gaussian", p, s, n_list, reps,
                                           seed, list(criteria), K, gamma, grid_size, threads, bar))
    return _emit("sweep_sparsity", config, cells, output_path)


def _emit(kind, config, cells, output_path):
    records = [r for cell in cells for r in cell]
    if output_path is not None:
        with CsvSink(output_path, _meta(kind, config)) as sink:
            for cell in cells:
                sink.write_cell(cell)
    return records


def read_results(path):
    """Rows of a result CSV as dicts, skipping the footer; and whether the footer was present."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    complete = bool(lines) and lines[-1].startswith("# complete")
    body = [line for line in lines if not line.startswith("#")]
    return list(csv.DictReader(body)), complete

"""Checkerboard simulation, evaluation metrics, and study runners.

Synthetic data follows a planted checkerboard: cell centers drawn
uniformly, rows and columns assigned to clusters uniformly at random,
optional all-zero padding columns appended, Gaussian noise added to
everything, then a row/column shuffle and per-column scaling to unit
sample variance.  Ground truth tracks the shuffled labels and which
columns carry signal.

Evaluation uses the adjusted Rand index on row, column, and entry-level
(product) partitions, plus a rank-based AUC for how well the fitted
weights separate informative from padded columns.

Replicates draw their seeds from ``numpy.random.SeedSequence((root,
condition, replicate))`` so studies can run concurrently and still
aggregate deterministically by replicate index.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from .core import (
    DataMatrix,
    Hyperparameters,
    fusion_value,
    weighted_sq_norm,
)
from .graph import build_affinities, spectral_summary
from .palm import DEFAULT_PALM_CONFIG, PalmConfig, fit
from .tuning import assign_clusters

__all__ = [
    "CheckerboardSpec",
    "GroundTruth",
    "generate_checkerboard",
    "adjusted_rand_index",
    "bicluster_ari",
    "weight_auc",
    "replicate_seed",
    "evaluate_state",
    "run_replicate",
    "run_uninformative_study",
    "run_noise_study",
    "theorem1_bound_terms",
    "theorem1_check",
    "write_tidy_csv",
    "STUDY_FIELDS",
]

STUDY_FIELDS = ["study", "n", "p", "p_extra", "sigma", "seed", "method",
                "metric", "value"]


@dataclass(frozen=True)
class CheckerboardSpec:
    """Parameters for one synthetic checkerboard draw."""

    n: int
    p: int
    p_extra: int = 0
    sigma: float = 1.0
    n_row_clusters: int = 5
    n_col_clusters: int = 5
    center_low: float = -10.0
    center_high: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 2:
            raise ValueError("need n >= 2 and p >= 2")
        if self.p_extra < 0:
            raise ValueError("p_extra must be nonnegative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n_row_clusters < 1 or self.n_col_clusters < 1:
            raise ValueError("cluster counts must be >= 1")
        if not self.center_high >= self.center_low:
            raise ValueError("center_high must be >= center_low")


@dataclass(frozen=True)
class GroundTruth:
    """Planted labels after the shuffle.

    ``informative`` is True for the original signal columns; the padded
    zero columns all share one column label placed after the signal
    cluster labels.
    """

    row_labels: np.ndarray
    col_labels: np.ndarray
    informative: np.ndarray

    def __post_init__(self):
        for name in ("row_labels", "col_labels", "informative"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.informative.dtype != bool:
            raise ValueError("informative must be boolean")
        if self.col_labels.shape != self.informative.shape:
            raise ValueError("col_labels and informative lengths differ")


def generate_checkerboard(spec: CheckerboardSpec):
    """Draw one checkerboard dataset; returns (DataMatrix, GroundTruth)."""
    rng = np.random.default_rng(spec.seed)
    R, C = spec.n_row_clusters, spec.n_col_clusters
    centers = rng.uniform(spec.center_low, spec.center_high, (R, C))
    row_labels = rng.integers(0, R, spec.n)
    col_labels = rng.integers(0, C, spec.p)
    signal = centers[row_labels[:, None], col_labels[None, :]]
    base = np.concatenate([signal, np.zeros((spec.n, spec.p_extra))], axis=1)
    X = base + rng.normal(0.0, spec.sigma, base.shape)
    # a column with zero sample variance would break the scaling; the
    # event has probability zero, so just redraw its noise
    while True:
        degenerate = X.std(axis=0, ddof=1) == 0.0
        if not degenerate.any():
            break
        cols = np.flatnonzero(degenerate)
        X[:, cols] = base[:, cols] + rng.normal(0.0, spec.sigma,
                                                (spec.n, cols.size))
    row_perm = rng.permutation(spec.n)
    col_perm = rng.permutation(spec.p + spec.p_extra)
    X = X[row_perm][:, col_perm]
    X = X / X.std(axis=0, ddof=1)
    full_cols = np.concatenate([col_labels, np.full(spec.p_extra, C)])
    truth = GroundTruth(
        row_labels=row_labels[row_perm],
        col_labels=full_cols[col_perm],
        informative=(np.arange(spec.p + spec.p_extra) < spec.p)[col_perm],
    )
    return DataMatrix(X), truth


# ----------------------------------------------------------------------
# metrics


def _comb2(counts) -> int:
    c = np.asarray(counts, dtype=np.int64)
    return int((c * (c - 1) // 2).sum())


def _ari_from_comb(within: int, comb_a: int, comb_b: int, comb_all: int) -> float:
    expected = comb_a * comb_b / comb_all
    maximum = 0.5 * (comb_a + comb_b)
    if maximum == expected:
        return 1.0
    return float((within - expected) / (maximum - expected))


def _contingency(a, b):
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.bincount(ia * ub.size + ib,
                        minlength=ua.size * ub.size).reshape(ua.size, ub.size)
    return table


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected agreement between two labelings of the same items."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.size != b.size:
        raise ValueError(f"label lengths differ: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two items")
    table = _contingency(a, b)
    return _ari_from_comb(_comb2(table),
                          _comb2(table.sum(axis=1)),
                          _comb2(table.sum(axis=0)),
                          _comb2([a.size]))


def bicluster_ari(row_a, col_a, row_b, col_b) -> float:
    """Adjusted Rand index between two entry-level partitions.

    Entry (i, l) carries the label pair (row label, column label).  The
    contingency table of the two product partitions factorizes into the
    row and column tables, so nothing of size n x p is ever built.
    """
    row_a = np.asarray(row_a).ravel()
    row_b = np.asarray(row_b).ravel()
    col_a = np.asarray(col_a).ravel()
    col_b = np.asarray(col_b).ravel()
    if row_a.size != row_b.size:
        raise ValueError(f"row label lengths differ: {row_a.size} vs {row_b.size}")
    if col_a.size != col_b.size:
        raise ValueError(f"column label lengths differ: {col_a.size} vs {col_b.size}")
    if row_a.size * col_a.size < 2:
        raise ValueError("need at least two entries")
    rows = _contingency(row_a, row_b)
    cols = _contingency(col_a, col_b)
    cells = rows.reshape(-1, 1) * cols.reshape(1, -1)
    return _ari_from_comb(
        _comb2(cells),
        _comb2(np.outer(rows.sum(axis=1), cols.sum(axis=1))),
        _comb2(np.outer(rows.sum(axis=0), cols.sum(axis=0))),
        _comb2([row_a.size * col_a.size]),
    )


def weight_auc(weights, informative) -> float:
    """Probability a random informative feature outranks a random
    uninformative one; ties count one half (rank-sum form)."""
    w = np.asarray(weights, dtype=float).ravel()
    y = np.asarray(informative).ravel()
    if y.dtype != bool:
        raise ValueError("informative must be boolean")
    if w.size != y.size:
        raise ValueError(f"lengths differ: {w.size} vs {y.size}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one informative and one "
                         "uninformative feature")
    ranks = rankdata(w)
    u = float(ranks[y].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


# ----------------------------------------------------------------------
# study runners


def replicate_seed(root: int, condition: int, index: int) -> int:
    """Child seed for one replicate, via SeedSequence((root, condition,
    index)); independent across all three coordinates."""
    ss = np.random.SeedSequence((root, condition, index))
    return int(ss.generate_state(1, np.uint64)[0])


def evaluate_state(state, truth: GroundTruth, lam: float = 0.0) -> dict:
    """Clustering and feature-ranking metrics for one fitted state."""
    rows, cols = assign_clusters(state.U, state.w, lam=lam)
    out = {
        "row_ari": adjusted_rand_index(truth.row_labels, rows),
        "col_ari": adjusted_rand_index(truth.col_labels, cols),
        "bicluster_ari": bicluster_ari(truth.row_labels, truth.col_labels,
                                       rows, cols),
        "iterations": float(state.iterations),
        "converged": float(state.converged),
    }
    if truth.informative.any() and not truth.informative.all():
        out["weight_auc"] = weight_auc(state.w.values, truth.informative)
    return out


def run_replicate(spec: CheckerboardSpec, gamma: float, lam: float = 0.0,
                  k: int = 5, tau: float = 1.0, adaptive: bool = False,
                  cfg: PalmConfig = DEFAULT_PALM_CONFIG) -> dict:
    """Generate one dataset, fit it, and score against the truth."""
    X, truth = generate_checkerboard(spec)
    phi = build_affinities(X.values, k, tau, scale_dim=X.p)
    psi = build_affinities(X.values.T, k, tau, scale_dim=X.n)
    hp = Hyperparameters(gamma=gamma, lam=lam, tau=tau, k_row=k, k_col=k)
    state = fit(X, phi, psi, hp, replace(cfg, adaptive=adaptive))
    return evaluate_state(state, truth, lam=lam)


_METHOD_ADAPTIVE = {"bcbc": False, "adaptive_bcbc": True}


def _study_point(study, spec, gamma, lam, k, tau, method, cfg):
    metrics = run_replicate(spec, gamma, lam, k, tau,
                            _METHOD_ADAPTIVE[method], cfg)
    return [{
        "study": study, "n": spec.n, "p": spec.p, "p_extra": spec.p_extra,
        "sigma": spec.sigma, "seed": spec.seed, "method": method,
        "metric": name, "value": value,
    } for name, value in sorted(metrics.items())]


def _run_points(argses, threads: int):
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_study_point, *args) for args in argses]
            results = [f.result() for f in futures]
    else:
        results = [_study_point(*args) for args in argses]
    return [row for rows in results for row in rows]


def run_uninformative_study(n: int = 50, p: int = 50,
                            p_extra_grid=(0, 100), sigma: float = 2.0,
                            n_clusters: int = 3, replicates: int = 8,
                            gamma: float = 1200.0, lam: float = 0.0,
                            k: int = 5, tau: float = 1.0,
                            methods=("bcbc", "adaptive_bcbc"),
                            root_seed: int = 0, threads: int = 1,
                            cfg: PalmConfig = DEFAULT_PALM_CONFIG):
    """Fixed signal size, growing number of padded noise columns.

    Returns tidy rows (one per replicate x method x metric).  Replicate r
    of the c-th padding level uses the same dataset for every method, so
    per-seed comparisons are paired.
    """
    argses = []
    for c, p_extra in enumerate(p_extra_grid):
        for r in range(replicates):
            spec = CheckerboardSpec(
                n=n, p=p, p_extra=int(p_extra), sigma=sigma,
                n_row_clusters=n_clusters, n_col_clusters=n_clusters,
                seed=replicate_seed(root_seed, c, r))
            for method in methods:
                argses.append(("uninformative", spec, gamma, lam, k, tau,
                               method, cfg))
    return _run_points(argses, threads)


def run_noise_study(sizes=((30, 30), (50, 50)), sigma_grid=(2.0, 4.0),
                    p_extra: int = 50, n_clusters: int = 3,
                    replicates: int = 4, gamma: float = 1200.0,
                    lam: float = 0.0, k: int = 5, tau: float = 1.0,
                    methods=("bcbc", "adaptive_bcbc"), root_seed: int = 0,
                    threads: int = 1,
                    cfg: PalmConfig = DEFAULT_PALM_CONFIG):
    """Joint sweep over noise level and matrix size at fixed padding."""
    argses = []
    condition = 0
    for sigma in sigma_grid:
        for n, p in sizes:
            for r in range(replicates):
                spec = CheckerboardSpec(
                    n=int(n), p=int(p), p_extra=p_extra, sigma=float(sigma),
                    n_row_clusters=n_clusters, n_col_clusters=n_clusters,
                    seed=replicate_seed(root_seed, condition, r))
                for method in methods:
                    argses.append(("noise", spec, gamma, lam, k, tau,
                                   method, cfg))
            condition += 1
    return _run_points(argses, threads)


def write_tidy_csv(rows, path, fields=STUDY_FIELDS) -> None:
    """Write study rows as CSV with full-precision floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({
                key: format(val, ".17g") if isinstance(val, float) else val
                for key, val in row.items()
            })


# ----------------------------------------------------------------------
# finite-sample bound check


def _planted_means(n, p, clusters, rng):
    centers = rng.uniform(-10.0, 10.0, (clusters, clusters))
    rows = rng.integers(0, clusters, n)
    cols = rng.integers(0, clusters, p)
    return centers[rows[:, None], cols[None, :]]


def theorem1_bound_terms(U_true, phi, psi, sigma: float, gamma: float,
                         lam: float = 0.0) -> tuple[float, float]:
    """Noise floor and graph-oracle parts of the prediction error bound.

    Returns (noise_term, fusion_term); the bound's right-hand side is
    their sum and is nondecreasing in gamma.
    """
    n, p = U_true.shape
    lognp = math.log(n * p)
    noise = 0.5 * sigma * sigma * (1.0 + lam) * (
        1.0 / n + 1.0 / p + math.sqrt(lognp / (n * p * p))
        + math.sqrt(lognp / (n * n * p)))
    fusion = 2.0 * gamma / (n * p) * (fusion_value(U_true, phi, axis=0)
                                      + fusion_value(U_true, psi, axis=1))
    return noise, fusion


def _theorem1_replicate(n, p, sigma, clusters, k, tau, margin, seed,
                        cfg) -> dict:
    rng = np.random.default_rng(seed)
    U_true = _planted_means(n, p, clusters, rng)
    X = U_true + sigma * rng.standard_normal((n, p))
    # affinities come from the noiseless centers so they are independent
    # of the noise; the builder bridges any disconnected components, and
    # the error threshold uses the connectivity of the repaired graphs
    phi = build_affinities(U_true, k, tau, scale_dim=p)
    psi = build_affinities(U_true.T, k, tau, scale_dim=n)
    eta_row = spectral_summary(phi).algebraic_connectivity
    eta_col = spectral_summary(psi).algebraic_connectivity
    if eta_row <= 0.0 or eta_col <= 0.0:
        raise ValueError("affinity graph connectivity vanished; widen the "
                         "kernel (smaller tau) or raise k")
    nnz_row = 2 * phi.num_edges
    nnz_col = 2 * psi.num_edges
    threshold = sigma * math.sqrt(n * p) * max(
        math.sqrt(math.log(p * nnz_row) / (n * eta_row)),
        math.sqrt(math.log(n * nnz_col) / (p * eta_col)))
    gamma = margin * threshold
    state = fit(DataMatrix(X), phi, psi,
                Hyperparameters(gamma=gamma, tau=tau, k_row=k, k_col=k), cfg)
    lhs = weighted_sq_norm(U_true - state.U, state.w, 0.0) / (2.0 * n * p)
    noise, fusion = theorem1_bound_terms(U_true, phi, psi, sigma, gamma)
    return {"lhs": lhs, "rhs": noise + fusion, "gamma": gamma,
            "holds": lhs <= noise + fusion}


def theorem1_check(n: int = 20, p: int = 20, sigma: float = 1.0,
                   replicates: int = 200, seed: int = 0,
                   clusters: int = 3, k: int = 5, tau: float = 0.1,
                   margin: float = 1.05, threads: int = 1,
                   cfg: PalmConfig = DEFAULT_PALM_CONFIG,
                   details: bool = False):
    """Monte-Carlo check of the prediction error bound.

    Each replicate plants block-constant means, adds Gaussian noise,
    builds affinities from the noiseless means, sets gamma just above
    the connectivity-based threshold, fits, and tests whether the error
    bound holds.  Returns the holding fraction (or per-replicate records
    when ``details`` is set).

    The default bandwidth is wider than the estimator's (tau = 0.1): the
    planted clusters sit far apart, and a narrow kernel would drive the
    bridge weights, and with them the measured connectivity, below
    floating-point resolution.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    argses = [(n, p, sigma, clusters, k, tau, margin,
               replicate_seed(seed, 0, r), cfg) for r in range(replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_theorem1_replicate, *args)
                       for args in argses]
            records = [f.result() for f in futures]
    else:
        records = [_theorem1_replicate(*args) for args in argses]
    if details:
        return records
    return sum(r["holds"] for r in records) / replicates

"""Hold-out tuning, missing-data fits, and model selection.

The two selection stages mirror how the estimator is meant to be used:
gamma is chosen first by hiding a random subset of entries, fitting on
the rest with lambda = 0, and scoring the squared error on the hidden
entries; lambda is then chosen at the selected gamma by full fits scored
with an extended BIC computed on a least-squares refit of the implied
biclusters.

Missing entries are handled by majorization: the unobserved positions of
the working matrix are filled with the current centroid estimate, a full
fit runs on the completed matrix, and the loop repeats.  Restarting each
inner fit from the previous iterate makes the completed-data objective
non-increasing across the loop.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist

from .core import (
    AffinityGraph,
    DataMatrix,
    FitState,
    Hyperparameters,
    SimplexWeights,
    fusion_value,
)
from .palm import DEFAULT_PALM_CONFIG, PalmConfig, fit

__all__ = [
    "HoldoutSplit",
    "BiclusterModel",
    "GridPointResult",
    "GammaSelection",
    "LambdaSelection",
    "make_holdout",
    "fit_missing",
    "missing_data_objective",
    "tune_gamma",
    "select_gamma",
    "assign_clusters",
    "refit_u_star",
    "ebic",
    "tune_lambda",
    "select_lambda",
    "default_gamma_grid",
    "default_lambda_grid",
]

logger = logging.getLogger(__name__)

EBIC_RESIDUAL_FLOOR = 1e-12


@dataclass(frozen=True)
class HoldoutSplit:
    """Random entry-level train/validation split of an n x p matrix."""

    observed_mask: np.ndarray
    seed: int
    fraction_observed: float

    def __post_init__(self):
        mask = np.asarray(self.observed_mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("observed_mask must be a 2-d boolean array")
        if not mask.any(axis=0).all():
            raise ValueError("every column needs at least one observed entry")
        mask.setflags(write=False)
        object.__setattr__(self, "observed_mask", mask)

    @property
    def hidden_mask(self) -> np.ndarray:
        return ~self.observed_mask


def make_holdout(n: int, p: int, fraction: float = 0.85,
                 seed: int = 0) -> HoldoutSplit:
    """Hide a random ~(1-fraction) share of entries.

    Columns that would lose every entry get one random entry forced back
    to observed, so per-column residuals stay defined.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    mask = rng.random((n, p)) < fraction
    for j in np.flatnonzero(~mask.any(axis=0)):
        mask[rng.integers(0, n), j] = True
    return HoldoutSplit(mask, seed=seed, fraction_observed=fraction)


def missing_data_objective(X: DataMatrix, U, w, phi, psi,
                           gamma: float, lam: float) -> float:
    """Objective with the residual restricted to observed entries."""
    wv = w.values if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float)
    resid = X.values - U
    if X.mask is not None:
        resid = np.where(X.mask, resid, 0.0)
    colsq = np.einsum("ij,ij->j", resid, resid)
    val = 0.5 * float(np.sum((wv * wv + lam * wv) * colsq))
    val += gamma * fusion_value(U, phi, axis=0)
    val += gamma * fusion_value(U, psi, axis=1)
    return val


def fit_missing(X: DataMatrix, phi: AffinityGraph, psi: AffinityGraph,
                hp: Hyperparameters, cfg: PalmConfig = DEFAULT_PALM_CONFIG,
                mm_max_iter: int = 50,
                mm_tol: float | None = None) -> FitState:
    """Joint fit under partially observed data.

    The unobserved entries of the working matrix start at the mean of
    the observed entries and are refilled with the current centroid
    estimate after every inner fit.  Each sweep restarts the centroids
    at the freshly completed matrix: the data coupling is scaled by the
    squared feature weights, so a centroid iterate carried over from the
    previous sweep sits within the inner tolerance of its own stale fill
    and the loop would freeze before the refills settle.  The weights do
    warm-start, since their subproblem is solved exactly anyway.  The
    returned state's U provides the imputations; ``mm_objective_trace``
    records the completed-data objective after each refill.
    """
    if mm_max_iter < 1:
        raise ValueError("mm_max_iter must be >= 1")
    if X.is_complete():
        return fit(X, phi, psi, hp, cfg)
    Xv = X.values
    observed = X.mask
    tol = cfg.tol if mm_tol is None else mm_tol
    M = np.where(observed, Xv, Xv[observed].mean())
    w_prev = None
    g_trace: list[float] = []
    mm_converged = False
    iterations = 0
    state = None
    for t in range(1, mm_max_iter + 1):
        iterations = t
        state = fit(DataMatrix(M), phi, psi, hp, cfg, w0=w_prev)
        g_trace.append(state.objective_trace[-1])
        M_new = np.where(observed, Xv, state.U)
        change = float(np.linalg.norm(M_new - M) / max(1.0, np.linalg.norm(M)))
        M = M_new
        w_prev = state.w
        if change <= tol:
            mm_converged = True
            break
    if not mm_converged:
        logger.warning("missing-data loop stopped at mm_max_iter=%d without "
                       "meeting tol=%g", mm_max_iter, tol)
    return FitState(
        U=state.U,
        w=state.w,
        phi=state.phi,
        psi=state.psi,
        objective_trace=state.objective_trace,
        iterations=state.iterations,
        converged=state.converged,
        diagnostics=state.diagnostics,
        w_iterate=state.w_iterate,
        mm_iterations=iterations,
        mm_converged=mm_converged,
        mm_objective_trace=g_trace,
    )


# ----------------------------------------------------------------------
# gamma stage


@dataclass(frozen=True)
class GridPointResult:
    """One grid evaluation: hyperparameter value, score, convergence.

    ``df`` is filled only for the residual-penalty stage, where the
    score is an information criterion over a refit with that many
    degrees of freedom.
    """

    value: float
    score: float
    converged: bool
    df: int | None = None


@dataclass(frozen=True)
class GammaSelection:
    gamma: float
    path: tuple[GridPointResult, ...]


def _gamma_point(X_values, observed_mask, phi, psi, gamma, hp_base, cfg,
                 mm_max_iter) -> GridPointResult:
    hp = replace(hp_base, gamma=float(gamma), lam=0.0)
    try:
        state = fit_missing(DataMatrix(X_values, mask=observed_mask),
                            phi, psi, hp, cfg, mm_max_iter)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning("gamma=%g evaluation failed: %s", gamma, exc)
        return GridPointResult(float(gamma), np.inf, False)
    hidden = ~observed_mask
    sse = float(np.sum((state.U[hidden] - X_values[hidden]) ** 2))
    if not np.isfinite(sse):
        sse = np.inf
    ok = bool(state.converged and state.mm_converged)
    return GridPointResult(float(gamma), sse, ok)


def _run_grid(worker, argses, threads: int):
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(worker, *args) for args in argses]
            return [f.result() for f in futures]
    return [worker(*args) for args in argses]


def tune_gamma(X: DataMatrix, phi: AffinityGraph, psi: AffinityGraph,
               gamma_grid, split: HoldoutSplit,
               hp_base: Hyperparameters | None = None,
               cfg: PalmConfig = DEFAULT_PALM_CONFIG,
               mm_max_iter: int = 50, threads: int = 1) -> GammaSelection:
    """Score each gamma by hold-out squared error and pick the best.

    The residual penalty stage runs with lambda = 0.  Ties go to the
    smallest gamma.  Results are reduced in grid order, so the outcome
    does not depend on the worker count.
    """
    if not isinstance(X, DataMatrix):
        X = DataMatrix(X)
    if not X.is_complete():
        raise ValueError("tuning requires fully observed data")
    grid = [float(g) for g in gamma_grid]
    if not grid:
        raise ValueError("gamma grid is empty")
    if split.observed_mask.shape != X.shape:
        raise ValueError("hold-out mask shape does not match the data")
    if hp_base is None:
        hp_base = Hyperparameters(gamma=0.0)
    argses = [(X.values, split.observed_mask, phi, psi, g, hp_base, cfg,
               mm_max_iter) for g in grid]
    path = tuple(_run_grid(_gamma_point, argses, threads))
    if all(np.isinf(r.score) for r in path):
        raise ValueError("every gamma evaluation failed")
    best = min(path, key=lambda r: (r.score, r.value))
    return GammaSelection(gamma=best.value, path=path)


def select_gamma(X, phi, psi, gamma_grid, split, hp_base=None,
                 cfg: PalmConfig = DEFAULT_PALM_CONFIG,
                 mm_max_iter: int = 50, threads: int = 1) -> float:
    return tune_gamma(X, phi, psi, gamma_grid, split, hp_base, cfg,
                      mm_max_iter, threads).gamma


# ----------------------------------------------------------------------
# cluster assignment and refit


def _threshold_components(dists: np.ndarray, m: int, frac: float) -> np.ndarray:
    """Label connected components of the pairwise graph at threshold
    frac * std(dists)."""
    if m == 1:
        return np.zeros(1, dtype=int)
    radius = frac * float(np.std(dists))
    from scipy.spatial.distance import squareform
    adjacency = squareform(dists) <= radius
    _, labels = connected_components(csr_matrix(adjacency), directed=False)
    return labels.astype(int)


def assign_clusters(U, w, lam: float = 0.0, r1_frac: float = 0.1,
                    r2_frac: float = 0.1):
    """Cluster rows and columns by thresholded distances on U.

    Rows use the weighted metric sqrt(sum_l (w_l^2 + lam*w_l) * diff^2);
    columns use plain Euclidean distance among positive-weight columns.
    The radii are the given fractions of the standard deviation of the
    respective pairwise distances.  All zero-weight columns share one
    reserved label placed after the positive-weight cluster labels.
    """
    if r1_frac < 0 or r2_frac < 0:
        raise ValueError("threshold fractions must be nonnegative")
    U = np.asarray(U, dtype=float)
    wv = w.values if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float)
    n, p = U.shape
    if wv.shape != (p,):
        raise ValueError(f"weights have length {wv.size}, expected {p}")
    coeff = wv * wv + lam * wv
    row_labels = _threshold_components(pdist(U * np.sqrt(coeff)[None, :]),
                                       n, r1_frac)
    positive = wv > 0.0
    col_labels = np.empty(p, dtype=int)
    idx = np.flatnonzero(positive)
    labels_pos = _threshold_components(pdist(U[:, idx].T), idx.size, r2_frac)
    col_labels[idx] = labels_pos
    if idx.size < p:
        col_labels[~positive] = labels_pos.max() + 1 if idx.size else 0
    return row_labels, col_labels


def refit_u_star(X, row_labels, col_labels, w):
    """Per-bicluster means of X on the given assignment.

    Returns (U_star, df).  Cells are (row cluster) x (positive-weight
    column cluster) blocks; all zero-weight columns are filled with one
    shared scalar mean and contribute a single degree of freedom.
    """
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    row_labels = np.asarray(row_labels, dtype=int)
    col_labels = np.asarray(col_labels, dtype=int)
    wv = w.values if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float)
    n, p = Xv.shape
    if row_labels.shape != (n,) or col_labels.shape != (p,) or wv.shape != (p,):
        raise ValueError("label or weight lengths do not match the data shape")
    positive = wv > 0.0
    U_star = np.empty_like(Xv)
    num_rows = int(row_labels.max()) + 1
    idx = np.flatnonzero(positive)
    num_cols = 0
    if idx.size:
        labs = col_labels[idx]
        # relabel densely in case the reserved label interleaved
        _, labs = np.unique(labs, return_inverse=True)
        num_cols = int(labs.max()) + 1
        cell = row_labels[:, None] * num_cols + labs[None, :]
        flat = cell.ravel()
        sums = np.bincount(flat, weights=Xv[:, idx].ravel(),
                           minlength=num_rows * num_cols)
        counts = np.bincount(flat, minlength=num_rows * num_cols)
        means = np.zeros(num_rows * num_cols)
        nonempty = counts > 0
        means[nonempty] = sums[nonempty] / counts[nonempty]
        U_star[:, idx] = means[cell]
    any_zero = idx.size < p
    if any_zero:
        U_star[:, ~positive] = Xv[:, ~positive].mean()
    df = num_rows * num_cols + int(any_zero)
    return U_star, df


def ebic(X, U_star, df: int) -> float:
    """Extended BIC of a biclustered mean fit: np*log(RSS/np) + 2*log(np)*df."""
    if df < 1:
        raise ValueError("df must be >= 1")
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    resid = np.asarray(U_star, dtype=float) - Xv
    rss = float(np.sum(resid * resid))
    size = Xv.size
    return size * np.log(max(rss, EBIC_RESIDUAL_FLOOR) / size) \
        + 2.0 * np.log(size) * df


# ----------------------------------------------------------------------
# lambda stage


@dataclass
class BiclusterModel:
    """A fitted and refit biclustering at one hyperparameter pair."""

    row_labels: np.ndarray
    col_labels: np.ndarray
    U_star: np.ndarray
    df: int
    ebic: float
    gamma: float
    lam: float
    w: SimplexWeights | None = None
    converged: bool = True


@dataclass(frozen=True)
class LambdaSelection:
    model: BiclusterModel
    path: tuple[GridPointResult, ...]


def _lambda_point(X_values, phi, psi, gamma_star, lam, hp_base, cfg,
                  r1_frac, r2_frac):
    hp = replace(hp_base, gamma=float(gamma_star), lam=float(lam))
    try:
        state = fit(DataMatrix(X_values), phi, psi, hp, cfg)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning("lambda=%g evaluation failed: %s", lam, exc)
        return None
    rows, cols = assign_clusters(state.U, state.w, lam=float(lam),
                                 r1_frac=r1_frac, r2_frac=r2_frac)
    U_star, df = refit_u_star(X_values, rows, cols, state.w)
    score = ebic(X_values, U_star, df)
    return BiclusterModel(row_labels=rows, col_labels=cols, U_star=U_star,
                          df=df, ebic=score, gamma=float(gamma_star),
                          lam=float(lam), w=state.w,
                          converged=bool(state.converged))


def tune_lambda(X: DataMatrix, phi: AffinityGraph, psi: AffinityGraph,
                gamma_star: float, lambda_grid,
                hp_base: Hyperparameters | None = None,
                cfg: PalmConfig = DEFAULT_PALM_CONFIG,
                r1_frac: float = 0.1, r2_frac: float = 0.1,
                threads: int = 1) -> LambdaSelection:
    """Full fits over the lambda grid at the selected gamma, scored by
    the extended BIC of the refit bicluster means.  Ties go to the
    smallest lambda."""
    if not isinstance(X, DataMatrix):
        X = DataMatrix(X)
    if not X.is_complete():
        raise ValueError("tuning requires fully observed data")
    grid = [float(l) for l in lambda_grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    if hp_base is None:
        hp_base = Hyperparameters(gamma=0.0)
    argses = [(X.values, phi, psi, gamma_star, l, hp_base, cfg,
               r1_frac, r2_frac) for l in grid]
    models = _run_grid(_lambda_point, argses, threads)
    path = tuple(
        GridPointResult(l, m.ebic if m is not None else np.inf,
                        m.converged if m is not None else False,
                        m.df if m is not None else None)
        for l, m in zip(grid, models))
    alive = [m for m in models if m is not None]
    if not alive:
        raise ValueError("every lambda evaluation failed")
    best = min(alive, key=lambda m: (m.ebic, m.lam))
    return LambdaSelection(model=best, path=path)


def select_lambda(X, phi, psi, gamma_star, lambda_grid, hp_base=None,
                  cfg: PalmConfig = DEFAULT_PALM_CONFIG,
                  r1_frac: float = 0.1, r2_frac: float = 0.1,
                  threads: int = 1) -> BiclusterModel:
    return tune_lambda(X, phi, psi, gamma_star, lambda_grid, hp_base, cfg,
                       r1_frac, r2_frac, threads).model


# ----------------------------------------------------------------------
# default grids


def default_gamma_grid(num: int = 20) -> np.ndarray:
    return np.logspace(-2.0, 3.0, num)


def default_lambda_grid(p: int, num: int = 10) -> np.ndarray:
    """{0} plus log-spaced values up to 1/p, the scale the weights live on."""
    if p < 1 or num < 2:
        raise ValueError("need p >= 1 and at least two grid points")
    return np.concatenate([[0.0], np.logspace(-4.0, 0.0, num - 1) / p])

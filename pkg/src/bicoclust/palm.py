"""Alternating proximal-linearized minimization of the joint objective.

Each outer iteration linearizes the coupling term around the current
iterate and takes one proximal step in U (a fusion-penalized smoothing
of a surrogate data matrix) followed by one projected gradient step in
w.  Step sizes come from the partial Lipschitz constants, so with fixed
affinities every iteration lowers the objective.  A terminal coordinate
step replaces w with the exact simplex minimizer at the final U.

The adaptive variant rebuilds both affinity graphs from the current
centroid matrix between iterations, letting the fusion penalty follow
the structure as it sharpens.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AffinityGraph,
    DataMatrix,
    FitState,
    Hyperparameters,
    SimplexWeights,
    column_sq_residuals,
    objective_value,
)
from .graph import build_affinities, is_connected, repair_connectivity
from .prox import BiclusterProx, CvxBiclustConfig, DEFAULT_CVX_CONFIG, project_simplex

__all__ = [
    "PalmConfig",
    "lipschitz_l1",
    "lipschitz_l2",
    "u_step",
    "w_step",
    "final_w_refinement",
    "fit",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PalmConfig:
    """Outer-loop controls.

    tol     : stop when ||U_new - U|| / max(1, ||U||) falls below this
    nu_floor: lower bound on the w-step curvature (guards division when
              the residuals vanish)
    refresh_affinities_every: rebuild interval for the adaptive variant;
              math.inf disables refresh, making the run identical to a
              non-adaptive one
    """

    tol: float = 1e-4
    max_outer_iter: int = 200
    nu_floor: float = 1e-8
    adaptive: bool = False
    refresh_affinities_every: float = 1
    cvx: CvxBiclustConfig = DEFAULT_CVX_CONFIG

    def __post_init__(self):
        if self.tol <= 0 or self.nu_floor <= 0:
            raise ValueError("tol and nu_floor must be positive")
        if self.max_outer_iter < 1:
            raise ValueError("max_outer_iter must be >= 1")
        r = self.refresh_affinities_every
        if not (r == math.inf or (float(r).is_integer() and r >= 1)):
            raise ValueError("refresh_affinities_every must be a positive "
                             "integer or math.inf")


DEFAULT_PALM_CONFIG = PalmConfig()


def lipschitz_l1(w, lam: float) -> float:
    """Curvature bound of the coupling term in U: max_l (w_l^2 + lam*w_l)."""
    wv = w.values if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float)
    return float(np.max(wv * wv + lam * wv))


def lipschitz_l2(X, U) -> float:
    """Curvature bound of the coupling term in w.

    Equals the Euclidean norm of the per-column squared-residual vector.
    """
    return float(np.linalg.norm(column_sq_residuals(X, U)))


def u_step(X, U, w, hp: Hyperparameters, prox: BiclusterProx):
    """One proximal-linearized step in U.

    The coupling gradient is folded into a surrogate data matrix; the
    fusion prox is then applied at strength gamma / nu1.  Returns
    (U_new, nu1, prox_info).
    """
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    wv = w.values if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float)
    nu1 = max(1.0, 2.0 * lipschitz_l1(wv, hp.lam))
    coeff = wv * wv + hp.lam * wv
    S = U - (U - Xv) * (coeff / nu1)[None, :]
    U_new, info = prox.solve(S, hp.gamma / nu1, init=U)
    return U_new, nu1, info


def w_step(X, U, w, lam: float, nu_floor: float = DEFAULT_PALM_CONFIG.nu_floor):
    """One projected gradient step in w.  Returns (w_new, nu2)."""
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    wv = w.values if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float)
    D = column_sq_residuals(Xv, U)
    nu2 = max(nu_floor, 2.0 * float(np.linalg.norm(D)))
    grad = (wv + lam / 2.0) * D
    return project_simplex(wv - grad / nu2), nu2


def final_w_refinement(X, U, lam: float) -> np.ndarray:
    """Exact simplex minimizer of 1/2 * sum_l (w_l^2 + lam*w_l) * D_l.

    Solved in closed form from the stationarity conditions: active
    features satisfy w_l = mu / D_l - lam/2 for a common multiplier mu,
    and features activate in order of increasing residual.  When some
    residuals are exactly zero the minimum value 0 is attained by
    spreading all mass uniformly over the zero-residual features.
    """
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    D = column_sq_residuals(Xv, U)
    p = D.size
    zero = D <= 0.0
    if np.any(zero):
        w = np.zeros(p)
        w[zero] = 1.0 / zero.sum()
        return w
    order = np.argsort(D, kind="stable")
    Ds = D[order]
    inv_cumsum = np.cumsum(1.0 / Ds)
    w = None
    for r in range(1, p + 1):
        mu = (1.0 + r * lam / 2.0) / inv_cumsum[r - 1]
        if mu <= lam * Ds[r - 1] / 2.0:
            continue  # feature r-1 would not actually be active
        if r < p and mu > lam * Ds[r] / 2.0:
            continue  # feature r should have been active too
        w = np.zeros(p)
        w[order[:r]] = mu / Ds[:r] - lam / 2.0
        break
    assert w is not None, "active-set scan must terminate"
    return w / w.sum()


def _refresh_graphs(U: np.ndarray, hp: Hyperparameters):
    n, p = U.shape
    phi = build_affinities(U, hp.k_row, hp.tau, scale_dim=p)
    psi = build_affinities(U.T, hp.k_col, hp.tau, scale_dim=n)
    return phi, psi


def fit(X: DataMatrix, phi: AffinityGraph, psi: AffinityGraph,
        hp: Hyperparameters, cfg: PalmConfig = DEFAULT_PALM_CONFIG,
        w0: SimplexWeights | None = None,
        u0: np.ndarray | None = None) -> FitState:
    """Joint estimation of the centroid matrix and feature weights.

    Starts from U = X and uniform weights unless ``u0``/``w0`` override
    them (the missing-data driver restarts from its previous iterate).
    With fixed affinities the recorded objective trace is non-increasing;
    adaptive runs record each value under the affinities in force during
    that iteration.
    """
    if not isinstance(X, DataMatrix):
        X = DataMatrix(X)
    if not X.is_complete():
        raise ValueError("fit requires complete data; use fit_missing")
    Xv = X.values
    n, p = Xv.shape
    if phi.dimension != n:
        raise ValueError(f"row graph dimension {phi.dimension} != n = {n}")
    if psi.dimension != p:
        raise ValueError(f"column graph dimension {psi.dimension} != p = {p}")
    if cfg.adaptive and (hp.k_row >= n or hp.k_col >= p):
        raise ValueError("neighbor counts must be below the matrix dimensions")
    for g, pts, scale in ((phi, Xv, p), (psi, Xv.T, n)):
        if not is_connected(g):
            # keeps the fusion penalty able to merge everything; weights for
            # the bridges come from the kernel at the bridged distance
            repaired = repair_connectivity(g, pts, hp.tau, scale)
            if g is phi:
                phi = repaired
            else:
                psi = repaired

    w = (w0.values if w0 is not None else np.full(p, 1.0 / p)).copy()
    if u0 is not None:
        if u0.shape != (n, p):
            raise ValueError(f"u0 has shape {u0.shape}, expected {(n, p)}")
        U = np.array(u0, dtype=float, copy=True)
    else:
        U = Xv.copy()
    prox = BiclusterProx(phi, psi, cfg.cvx)
    trace = [objective_value(Xv, U, w, phi, psi, hp.gamma, hp.lam)]
    diagnostics: list[dict] = []
    converged = False
    iterations = 0
    for k in range(1, cfg.max_outer_iter + 1):
        iterations = k
        U_new, nu1, pinfo = u_step(X, U, w, hp, prox)
        w_new, nu2 = w_step(X, U_new, w, hp.lam, cfg.nu_floor)
        obj = objective_value(Xv, U_new, w_new, phi, psi, hp.gamma, hp.lam)
        change = float(np.linalg.norm(U_new - U) / max(1.0, np.linalg.norm(U)))
        trace.append(obj)
        diagnostics.append({
            "iteration": k,
            "objective": obj,
            "nu1": nu1,
            "nu2": nu2,
            "u_change": change,
            "prox_engine": pinfo["engine"],
            "prox_sweeps": pinfo["sweeps"],
            "prox_inner_iterations": pinfo["inner_iterations"],
            "prox_converged": pinfo["converged"],
            "affinities_refreshed": False,
        })
        U, w = U_new, w_new
        if change <= cfg.tol:
            converged = True
            break
        if cfg.adaptive and k % cfg.refresh_affinities_every == 0:
            phi, psi = _refresh_graphs(U, hp)
            prox = BiclusterProx(phi, psi, cfg.cvx)
            diagnostics[-1]["affinities_refreshed"] = True
    if not converged:
        logger.warning("fit stopped at max_outer_iter=%d without meeting "
                       "tol=%g", cfg.max_outer_iter, cfg.tol)

    w_loop = w
    w = final_w_refinement(X, U, hp.lam)
    trace.append(objective_value(Xv, U, w, phi, psi, hp.gamma, hp.lam))
    return FitState(
        U=U,
        w=SimplexWeights(w),
        phi=phi,
        psi=psi,
        objective_trace=trace,
        iterations=iterations,
        converged=converged,
        diagnostics=diagnostics,
        w_iterate=SimplexWeights(w_loop),
    )

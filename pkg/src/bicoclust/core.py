"""Core value types and the biclustering objective.

The model couples a biclustered centroid matrix U with a vector of
feature weights w on the probability simplex.  The objective is

    F(U, w) = gamma * [ sum_row_edges sqrt_phi_ij ||U_i. - U_j.||_2
                        + sum_col_edges sqrt_psi_kl ||U_.k - U_.l||_2 ]
              + 1/2 * sum_l (w_l^2 + lambda * w_l) ||X_.l - U_.l||_2^2

where the edge coefficients are the (already square-rooted) affinities
stored on the row and column graphs.  Everything downstream (proximal
solvers, the alternating minimization driver, tuning) works against the
types defined here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "Tolerances",
    "DEFAULT_TOLERANCES",
    "DataMatrix",
    "AffinityGraph",
    "SimplexWeights",
    "Hyperparameters",
    "FitState",
    "weighted_sq_norm",
    "fusion_value",
    "objective_value",
    "objective",
    "column_sq_residuals",
]


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared across the package.

    simplex_feasibility : slack allowed on sum(w) == 1 checks
    objective_slack     : slack allowed when asserting monotone descent
    convergence_tol     : default relative-change stopping tolerance
    """

    simplex_feasibility: float = 1e-10
    objective_slack: float = 1e-8
    convergence_tol: float = 1e-4


DEFAULT_TOLERANCES = Tolerances()


def _as_float_matrix(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {arr.shape}")
    return arr


class DataMatrix:
    """An n-by-p data matrix with an optional observation mask.

    ``mask[i, l]`` is True where ``values[i, l]`` is observed.  When no
    mask is given every entry must be finite.  Both dimensions must be
    at least 2 and every column needs at least one observed entry.
    """

    __slots__ = ("values", "mask")

    def __init__(self, values, mask=None):
        arr = _as_float_matrix(values, "values")
        n, p = arr.shape
        if n < 2 or p < 2:
            raise ValueError(f"data matrix must be at least 2x2, got {n}x{p}")
        if mask is None:
            if not np.all(np.isfinite(arr)):
                raise ValueError("data matrix contains non-finite entries but no mask")
            m = None
        else:
            m = np.array(mask, dtype=bool, copy=True)
            if m.shape != arr.shape:
                raise ValueError(
                    f"mask shape {m.shape} does not match values shape {arr.shape}"
                )
            if not np.all(np.isfinite(arr[m])):
                raise ValueError("observed entries must be finite")
            observed_per_col = m.sum(axis=0)
            if np.any(observed_per_col == 0):
                bad = int(np.argmin(observed_per_col))
                raise ValueError(f"column {bad} has no observed entries")
            if m.all():
                # A fully observed mask is the same thing as no mask.
                arr = arr.copy()
            m.setflags(write=False)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "mask", m)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def is_complete(self) -> bool:
        return self.mask is None or bool(self.mask.all())

    def __repr__(self) -> str:
        miss = "complete" if self.is_complete() else "masked"
        return f"DataMatrix(n={self.n}, p={self.p}, {miss})"


class AffinityGraph:
    """A weighted undirected graph over ``dimension`` vertices.

    Edges are stored once with ``i < j`` and strictly positive weights.
    The stored weight is the coefficient that multiplies the pairwise
    norm in the fusion penalty, i.e. the square-rooted affinity.
    """

    __slots__ = ("dimension", "row", "col", "weight", "_lap_eigh", "_components")

    def __init__(self, dimension: int, edges: Sequence[tuple[int, int, float]] = ()):
        if dimension < 1:
            raise ValueError("graph dimension must be positive")
        if len(edges) == 0:
            row = np.zeros(0, dtype=np.intp)
            col = np.zeros(0, dtype=np.intp)
            weight = np.zeros(0, dtype=float)
        else:
            e = np.asarray([(int(i), int(j), float(w)) for i, j, w in edges], dtype=float)
            row = e[:, 0].astype(np.intp)
            col = e[:, 1].astype(np.intp)
            weight = e[:, 2]
        self._init_from_arrays(int(dimension), row, col, weight)

    @classmethod
    def from_arrays(cls, dimension: int, row, col, weight) -> "AffinityGraph":
        g = cls.__new__(cls)
        g._init_from_arrays(
            int(dimension),
            np.asarray(row, dtype=np.intp).copy(),
            np.asarray(col, dtype=np.intp).copy(),
            np.asarray(weight, dtype=float).copy(),
        )
        return g

    def _init_from_arrays(self, dimension, row, col, weight):
        if dimension < 1:
            raise ValueError("graph dimension must be positive")
        if not (row.shape == col.shape == weight.shape) or row.ndim != 1:
            raise ValueError("edge arrays must be 1-d and of equal length")
        if row.size:
            if row.min(initial=0) < 0 or col.max(initial=-1) >= dimension:
                raise ValueError("edge endpoint out of range")
            if np.any(row >= col):
                raise ValueError("edges must satisfy i < j")
            if not np.all(np.isfinite(weight)) or np.any(weight <= 0):
                raise ValueError("edge weights must be positive and finite")
            key = row * dimension + col
            if np.unique(key).size != key.size:
                raise ValueError("duplicate edges are not allowed")
            order = np.argsort(key, kind="stable")
            row, col, weight = row[order], col[order], weight[order]
        for a in (row, col, weight):
            a.setflags(write=False)
        object.__setattr__(self, "dimension", dimension)
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "col", col)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "_lap_eigh", None)
        object.__setattr__(self, "_components", None)

    @property
    def num_edges(self) -> int:
        return self.row.size

    def edges(self) -> Iterator[tuple[int, int, float]]:
        for i, j, w in zip(self.row, self.col, self.weight):
            yield int(i), int(j), float(w)

    def component_labels(self) -> np.ndarray:
        """Connected-component label per vertex (labels contiguous from 0)."""
        if self._components is None:
            parent = np.arange(self.dimension)

            def find(a):
                root = a
                while parent[root] != root:
                    root = parent[root]
                while parent[a] != root:
                    parent[a], a = root, parent[a]
                return root

            for i, j in zip(self.row, self.col):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
            roots = np.array([find(v) for v in range(self.dimension)])
            _, labels = np.unique(roots, return_inverse=True)
            object.__setattr__(self, "_components", labels)
        return self._components

    def num_components(self) -> int:
        labels = self.component_labels()
        return int(labels.max()) + 1 if labels.size else 0

    def structure_laplacian_eigh(self):
        """Eigendecomposition of the unweighted edge-structure Laplacian.

        Cached because the proximal solver reuses it for every penalty
        level on the same graph.  Returns ``(eigenvalues, eigenvectors)``.
        """
        if self._lap_eigh is None:
            lap = np.zeros((self.dimension, self.dimension))
            np.add.at(lap, (self.row, self.row), 1.0)
            np.add.at(lap, (self.col, self.col), 1.0)
            np.add.at(lap, (self.row, self.col), -1.0)
            np.add.at(lap, (self.col, self.row), -1.0)
            vals, vecs = np.linalg.eigh(lap)
            vals = np.maximum(vals, 0.0)
            object.__setattr__(self, "_lap_eigh", (vals, vecs))
        return self._lap_eigh

    def __repr__(self) -> str:
        return f"AffinityGraph(dimension={self.dimension}, num_edges={self.num_edges})"


class SimplexWeights:
    """Feature weights constrained to the probability simplex."""

    __slots__ = ("values",)

    def __init__(self, values, tol: float = DEFAULT_TOLERANCES.simplex_feasibility):
        arr = np.array(values, dtype=float, copy=True)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("weights must be a non-empty 1-d array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("weights must be finite")
        if np.any(arr < 0):
            raise ValueError("weights must be non-negative")
        if abs(arr.sum() - 1.0) > tol:
            raise ValueError(f"weights must sum to 1 within {tol}, got {arr.sum()!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def uniform(cls, p: int) -> "SimplexWeights":
        return cls(np.full(p, 1.0 / p))

    @property
    def p(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"SimplexWeights(p={self.p})"


@dataclass(frozen=True)
class Hyperparameters:
    """Model hyperparameters.

    gamma : fusion strength (>= 0)
    lam   : feature-weight penalty (>= 0); larger values flatten w
    tau   : kernel bandwidth for the affinity construction (> 0)
    k_row, k_col : neighbor counts for the row / column graphs
    """

    gamma: float
    lam: float = 0.0
    tau: float = 1.0
    k_row: int = 5
    k_col: int = 5

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError("gamma must be finite and >= 0")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be finite and >= 0")
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ValueError("tau must be finite and > 0")
        if self.k_row < 1 or self.k_col < 1:
            raise ValueError("neighbor counts must be >= 1")


@dataclass
class FitState:
    """Result of a single joint fit.

    ``objective_trace`` holds the objective value at initialization and
    after every outer iteration.  For non-adaptive fits the trace is
    non-increasing up to ``Tolerances.objective_slack``; adaptive fits
    record the value under the affinities in force at that iteration.
    ``diagnostics`` keeps one record per outer iteration (step sizes,
    iterate change, inner solver effort) for serialization.
    """

    U: np.ndarray
    w: SimplexWeights
    phi: AffinityGraph
    psi: AffinityGraph
    objective_trace: list[float]
    iterations: int
    converged: bool
    diagnostics: list[dict] = field(default_factory=list)
    # w holds the terminal exact block minimizer; w_iterate keeps the last
    # loop iterate, whose pairing with U is the loop's fixed point.
    w_iterate: SimplexWeights | None = None
    # Populated only by the missing-data driver.
    mm_iterations: int | None = None
    mm_converged: bool | None = None
    mm_objective_trace: list[float] | None = None


def _check_weights(w, p: int) -> np.ndarray:
    wv = w.values if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float)
    if wv.shape != (p,):
        raise ValueError(f"weights have length {wv.size}, expected {p}")
    return wv


def weighted_sq_norm(A, w, lam: float) -> float:
    """Column-weighted squared norm sum_l (w_l^2 + lam*w_l) * ||A_.l||_2^2."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("A must be 2-d")
    if not np.all(np.isfinite(A)):
        raise ValueError("A contains non-finite entries")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    wv = _check_weights(w, A.shape[1])
    coeff = wv * wv + lam * wv
    return float(np.dot(coeff, np.einsum("ij,ij->j", A, A)))


def fusion_value(U, graph: AffinityGraph, axis: int) -> float:
    """Weighted sum of pairwise norms over the graph's edges.

    ``axis=0`` treats vertices as rows of U, ``axis=1`` as columns.
    """
    U = np.asarray(U, dtype=float)
    V = U if axis == 0 else U.T
    if graph.dimension != V.shape[0]:
        raise ValueError(
            f"graph dimension {graph.dimension} does not match axis size {V.shape[0]}"
        )
    if graph.num_edges == 0:
        return 0.0
    diffs = V[graph.row] - V[graph.col]
    norms = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    return float(np.dot(graph.weight, norms))


def objective_value(X, U, w, phi: AffinityGraph, psi: AffinityGraph,
                    gamma: float, lam: float) -> float:
    """Objective F(U, w) on fully observed data."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    if X.shape != U.shape:
        raise ValueError(f"shape mismatch: X {X.shape} vs U {U.shape}")
    fuse = fusion_value(U, phi, axis=0) + fusion_value(U, psi, axis=1)
    return gamma * fuse + 0.5 * weighted_sq_norm(X - U, w, lam)


def objective(X: DataMatrix, state: FitState, hp: Hyperparameters) -> float:
    """Objective of a fit state against complete data."""
    if not X.is_complete():
        raise ValueError("objective requires complete data; impute first")
    return objective_value(X.values, state.U, state.w, state.phi, state.psi,
                           hp.gamma, hp.lam)


def column_sq_residuals(X, U) -> np.ndarray:
    """Per-column squared residuals D_l = ||X_.l - U_.l||_2^2."""
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    if isinstance(X, DataMatrix) and not X.is_complete():
        raise ValueError("column_sq_residuals requires complete data")
    U = np.asarray(U, dtype=float)
    if Xv.shape != U.shape:
        raise ValueError(f"shape mismatch: X {Xv.shape} vs U {U.shape}")
    R = Xv - U
    return np.einsum("ij,ij->j", R, R)

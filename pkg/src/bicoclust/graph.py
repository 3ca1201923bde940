"""Affinity graph construction and spectral utilities.

Graphs are built in two stages: a Gaussian k-nearest-neighbor kernel
produces raw affinities, and a normalization step rescales them so that
sqrt(scale_dim) times the sum of the stored weights equals one.  The
stored weights are the square-rooted affinities that multiply pairwise
norms in the fusion penalty.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from .core import AffinityGraph

__all__ = [
    "exact_nearest_neighbors",
    "knn_affinities",
    "normalize_affinities",
    "repair_connectivity",
    "build_affinities",
    "weighted_incidence",
    "is_connected",
    "SpectralSummary",
    "spectral_summary",
    "edge_list_text",
    "write_edge_list",
]

logger = logging.getLogger(__name__)

# Kernel values can underflow for very distant pairs; keep the edge
# structurally present with a tiny positive weight instead of dropping it.
_WEIGHT_FLOOR = 1e-300

# neighbor_fn(points, k) -> (m, k) integer array of neighbor indices
NeighborFn = Callable[[np.ndarray, int], np.ndarray]


def exact_nearest_neighbors(points: np.ndarray, k: int) -> np.ndarray:
    """Exhaustive k-nearest-neighbor search (Euclidean, self excluded).

    Distance ties are broken by vertex index so results are deterministic.
    """
    m = points.shape[0]
    d2 = cdist(points, points, metric="sqeuclidean")
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def knn_affinities(points, k: int, tau: float, scale_dim: int | None = None,
                   neighbor_fn: NeighborFn | None = None) -> AffinityGraph:
    """Raw Gaussian kNN affinities between the rows of ``points``.

    Each vertex is joined to its k nearest neighbors and the neighbor
    relation is symmetrized by union.  Edge (i, j) carries the kernel
    value exp(-tau * ||x_i - x_j||^2 / scale_dim).  ``scale_dim``
    defaults to the vector length, so row graphs divide by p and column
    graphs (built from the transpose) divide by n.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be 2-d (vertices in rows)")
    m = pts.shape[0]
    if not 1 <= k < m:
        raise ValueError(f"k must satisfy 1 <= k < {m}, got {k}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if scale_dim is None:
        scale_dim = pts.shape[1]
    if scale_dim < 1:
        raise ValueError("scale_dim must be >= 1")
    nn = (neighbor_fn or exact_nearest_neighbors)(pts, k)

    src = np.repeat(np.arange(m), k)
    dst = nn.ravel()
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    pairs = np.unique(lo * m + hi)  # union symmetrization, one copy per edge
    row = pairs // m
    col = pairs % m

    diff = pts[row] - pts[col]
    d2 = np.einsum("ij,ij->i", diff, diff)
    weight = np.maximum(np.exp(-tau * d2 / scale_dim), _WEIGHT_FLOOR)
    return AffinityGraph.from_arrays(m, row, col, weight)


def normalize_affinities(g: AffinityGraph, scale_dim: int) -> AffinityGraph:
    """Rescale raw affinities to the normalized square-rooted form.

    Every weight is divided by sqrt(scale_dim) times the total weight,
    each unordered edge counted once, so afterwards
    sqrt(scale_dim) * sum(weights) == 1.
    """
    if scale_dim < 1:
        raise ValueError("scale_dim must be >= 1")
    if g.num_edges == 0:
        return g
    total = float(g.weight.sum())
    return AffinityGraph.from_arrays(
        g.dimension, g.row, g.col, g.weight / (np.sqrt(scale_dim) * total)
    )


def repair_connectivity(g: AffinityGraph, points, tau: float,
                        scale_dim: int) -> AffinityGraph:
    """Bridge disconnected components with a minimum-distance chain.

    While more than one component remains, the globally closest pair of
    vertices in different components is joined with a kernel-weighted
    edge.  Returns ``g`` unchanged when already connected.
    """
    labels = g.component_labels().copy()
    if labels.max() == 0:
        return g
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] != g.dimension:
        raise ValueError("points do not match graph dimension")
    d2 = cdist(pts, pts, metric="sqeuclidean")
    row = list(g.row)
    col = list(g.col)
    weight = list(g.weight)
    added = 0
    while labels.max() > 0:
        cross = labels[:, None] != labels[None, :]
        masked = np.where(cross, d2, np.inf)
        flat = int(np.argmin(masked))
        i, j = divmod(flat, g.dimension)
        if i > j:
            i, j = j, i
        row.append(i)
        col.append(j)
        weight.append(max(np.exp(-tau * d2[i, j] / scale_dim), _WEIGHT_FLOOR))
        labels[labels == labels[j]] = labels[i]
        _, labels = np.unique(labels, return_inverse=True)
        added += 1
    logger.warning("graph was disconnected; added %d bridge edge(s)", added)
    return AffinityGraph.from_arrays(g.dimension, np.array(row, dtype=np.intp),
                                     np.array(col, dtype=np.intp), np.array(weight))


def build_affinities(points, k: int, tau: float, scale_dim: int | None = None,
                     ensure_connected: bool = True,
                     neighbor_fn: NeighborFn | None = None) -> AffinityGraph:
    """Full pipeline: Gaussian kNN kernel, connectivity repair, normalization."""
    pts = np.asarray(points, dtype=float)
    if scale_dim is None:
        scale_dim = pts.shape[1]
    g = knn_affinities(pts, k, tau, scale_dim, neighbor_fn)
    if ensure_connected:
        g = repair_connectivity(g, pts, tau, scale_dim)
    return normalize_affinities(g, scale_dim)


def weighted_incidence(g: AffinityGraph) -> np.ndarray:
    """Edge-by-vertex incidence matrix with the stored weights.

    Row e has +w_e at the lower endpoint and -w_e at the upper one, so
    the product D.T @ D is the graph Laplacian built from the squared
    (un-rooted) affinities.
    """
    D = np.zeros((g.num_edges, g.dimension))
    e = np.arange(g.num_edges)
    D[e, g.row] = g.weight
    D[e, g.col] = -g.weight
    return D


def is_connected(g: AffinityGraph) -> bool:
    return g.num_components() <= 1


@dataclass(frozen=True)
class SpectralSummary:
    """Spectral facts about a graph's weighted Laplacian."""

    dimension: int
    num_edges: int
    num_components: int
    laplacian_rank: int
    algebraic_connectivity: float
    eigenvalues: np.ndarray


def spectral_summary(g: AffinityGraph) -> SpectralSummary:
    """Dense eigendecomposition summary of D.T @ D.

    The Laplacian rank is dimension minus the number of connected
    components (computed combinatorially, not from thresholded
    eigenvalues).  Algebraic connectivity is the second-smallest
    eigenvalue for a connected graph and exactly 0 otherwise.
    """
    lap = np.zeros((g.dimension, g.dimension))
    w2 = g.weight * g.weight
    np.add.at(lap, (g.row, g.row), w2)
    np.add.at(lap, (g.col, g.col), w2)
    np.add.at(lap, (g.row, g.col), -w2)
    np.add.at(lap, (g.col, g.row), -w2)
    vals = np.maximum(np.linalg.eigvalsh(lap), 0.0)
    ncomp = g.num_components()
    if ncomp > 1 or g.dimension < 2:
        conn = 0.0
    else:
        conn = float(vals[1])
    return SpectralSummary(
        dimension=g.dimension,
        num_edges=g.num_edges,
        num_components=ncomp,
        laplacian_rank=g.dimension - ncomp,
        algebraic_connectivity=conn,
        eigenvalues=vals,
    )


def edge_list_text(g: AffinityGraph) -> str:
    """Plain-text edge list, one ``i j weight`` line per edge."""
    lines = [f"{i} {j} {w:.17g}" for i, j, w in g.edges()]
    return "\n".join(lines) + ("\n" if lines else "")


def write_edge_list(g: AffinityGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write(edge_list_text(g))

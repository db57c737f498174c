"""Input validation helpers for the estimator API."""

from __future__ import annotations

import inspect

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array

from .exceptions import InputError
from .graph import Graph, build_graph


def _is_square_dense(graph, n_nodes: int) -> bool:
    # a 2x2 array is ambiguous; it is read as an edge list
    return isinstance(graph, np.ndarray) and graph.ndim == 2 and graph.shape == (n_nodes, n_nodes) and n_nodes != 2


def check_graph(graph, n_nodes: int) -> Graph:
    """Accept a :class:`Graph`, an (m, 2) edge array or a square sparse/dense adjacency."""
    if isinstance(graph, Graph):
        g = graph
    elif sp.issparse(graph) or _is_square_dense(graph, n_nodes):
        coo = sp.coo_matrix(graph)
        g = build_graph(np.stack([coo.row, coo.col], axis=1)[coo.data != 0], coo.shape[0])
    else:
        edges = np.asarray(graph, dtype=np.int64)
        if edges.size and (edges.ndim != 2 or edges.shape[1] != 2):
            raise InputError(f"edge array must have shape (m, 2), got {edges.shape}")
        g = build_graph(edges.reshape(-1, 2), n_nodes)
    if g.n != n_nodes:
        raise InputError(f"graph has {g.n} nodes but X has {n_nodes} rows")
    return g


# sklearn renamed force_all_finite to ensure_all_finite in 1.6
_FINITE_KW = "ensure_all_finite" if "ensure_all_finite" in inspect.signature(check_array).parameters else "force_all_finite"


def check_features(X) -> np.ndarray:
    """Finite float64 feature matrix, one row per node."""
    return check_array(X, dtype=np.float64, **{_FINITE_KW: True})


def check_node_labels(y, n_nodes: int) -> np.ndarray:
    """Integer labels per node, ``-1`` marking unlabeled nodes."""
    y = np.asarray(y)
    if y.shape != (n_nodes,):
        raise InputError(f"labels must have shape ({n_nodes},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InputError("labels must be integers (-1 for unlabeled)")
        y = y.astype(np.int64)
    if np.any(y < -1):
        raise InputError("labels must be >= -1")
    return y.astype(np.int64)


def check_mask(mask, n_nodes: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != (n_nodes,):
        raise InputError(f"mask must have shape ({n_nodes},), got {mask.shape}")
    return mask.astype(bool)

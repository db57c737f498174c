"""Graph representation, path counting and label propagation.

Graphs are undirected and stored in CSR form. Every node carries an explicit
self-loop so that the neighbor list of ``v`` is exactly ``N_v = {u | (v, u) in E} + {v}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .exceptions import ContractError, DomainError, InputError, PathCountOverflowError

_INT64_MAX = np.iinfo(np.int64).max


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph with implicit self-loops.

    Attributes
    ----------
    n : int
        Number of nodes.
    csr_offsets : ndarray of shape (n + 1,)
        Row pointer; neighbors of ``v`` are ``csr_targets[csr_offsets[v]:csr_offsets[v + 1]]``.
    csr_targets : ndarray
        Sorted neighbor ids, self-loop included once per node.
    num_undirected_edges : int
        Distinct unordered pairs ``{v, u}`` with ``v != u``.
    """

    n: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    num_undirected_edges: int

    def __post_init__(self):
        self.csr_offsets.setflags(write=False)
        self.csr_targets.setflags(write=False)

    @property
    def num_directed_entries(self) -> int:
        """Number of CSR entries, self-loops included."""
        return int(self.csr_targets.shape[0])

    def neighbors(self, v: int) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[v] : self.csr_offsets[v + 1]]

    @cached_property
    def degrees(self) -> np.ndarray:
        """``|N_v|`` for every node (self included)."""
        return np.diff(self.csr_offsets)

    @cached_property
    def sources(self) -> np.ndarray:
        """Row id of every CSR entry."""
        return np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)

    @cached_property
    def canonical_edges(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Undirected edge list (self-loops included) and the entry -> edge map.

        Returns ``(lo, hi, index)`` where ``lo <= hi`` lists each unordered pair
        once and ``index[e]`` gives the canonical edge of CSR entry ``e``. Both
        orientations of an edge share the same canonical id.
        """
        src, dst = self.sources, self.csr_targets
        keep = src <= dst
        lo, hi = src[keep], dst[keep]
        # lo-major ordering matches CSR order of the kept entries
        key = lo * self.n + hi
        entry_key = np.minimum(src, dst) * self.n + np.maximum(src, dst)
        index = np.searchsorted(key, entry_key)
        return lo, hi, index

    @cached_property
    def self_loop_entries(self) -> np.ndarray:
        """CSR position of the self-loop of each node."""
        return np.flatnonzero(self.sources == self.csr_targets)

    def adjacency(self, include_self_loops: bool = True) -> sp.csr_matrix:
        """0/1 adjacency as a scipy CSR matrix."""
        data = np.ones(self.num_directed_entries, dtype=np.int64)
        m = sp.csr_matrix(
            (data, self.csr_targets.copy(), self.csr_offsets.copy()), shape=(self.n, self.n)
        )
        if not include_self_loops:
            m = m - sp.identity(self.n, dtype=np.int64, format="csr")
            m.eliminate_zeros()
        return m

    def edge_list(self) -> np.ndarray:
        """Undirected edges ``(v, u)`` with ``v < u``, shape (num_undirected_edges, 2)."""
        lo, hi, _ = self.canonical_edges
        keep = lo != hi
        return np.stack([lo[keep], hi[keep]], axis=1)

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel node ``v`` as ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        edges = perm[self.edge_list()]
        return build_graph(edges, self.n)


def build_graph(edges: Iterable[Tuple[int, int]], n: int) -> Graph:
    """Build a deduplicated, symmetric CSR graph with a self-loop on every node.

    Duplicates, both orientations and explicit self-loops in ``edges`` are
    accepted and collapsed.
    """
    if n < 0:
        raise InputError(f"node count must be non-negative, got {n}")
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    arr = arr.reshape(-1, 2)
    if arr.size:
        bad = (arr < 0) | (arr >= n)
        if bad.any():
            offending = int(arr[bad][0])
            raise InputError(f"node id {offending} out of range [0, {n})")
    loops = np.arange(n, dtype=np.int64)
    src = np.concatenate([arr[:, 0], arr[:, 1], loops])
    dst = np.concatenate([arr[:, 1], arr[:, 0], loops])
    pairs = np.unique(src * max(n, 1) + dst)
    src, dst = np.divmod(pairs, max(n, 1))
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
    num_undirected = int(np.count_nonzero(src < dst))
    return Graph(n=int(n), csr_offsets=offsets, csr_targets=dst.astype(np.int64), num_undirected_edges=num_undirected)


@dataclass(frozen=True)
class PathCountVector:
    """Exact counts of length-``length`` paths from ``origin`` to every node."""

    counts: np.ndarray
    origin: int
    length: int

    @property
    def total(self) -> int:
        """``|P_v^l|``, the number of paths, as an exact integer."""
        return int(sum(int(c) for c in self.counts))


def _class_filter_mask(g: Graph, origin: int, class_filter) -> Optional[np.ndarray]:
    if class_filter is None:
        return None
    labels, c = class_filter
    labels = np.asarray(labels)
    if labels.shape[0] != g.n:
        raise ContractError(f"labels cover {labels.shape[0]} nodes, graph has {g.n}")
    if labels[origin] != c:
        raise ContractError(f"origin {origin} has class {labels[origin]}, filter asks for {c}")
    return labels == c


def _check_origin(g: Graph, origin: int, length: int):
    if not 0 <= origin < g.n:
        raise InputError(f"node id {origin} out of range [0, {g.n})")
    if length < 0:
        raise ContractError(f"path length must be >= 0, got {length}")


def count_paths(g: Graph, origin: int, length: int, class_filter=None) -> PathCountVector:
    """Row ``origin`` of ``M**length`` for the self-loop-augmented adjacency ``M``.

    With ``class_filter=(labels, c)`` the walk is restricted to the subgraph
    induced by class ``c`` (paths made only of class-``c`` nodes). Arithmetic is
    exact on Python integers; a count exceeding int64 raises
    :class:`PathCountOverflowError`.
    """
    _check_origin(g, origin, length)
    mask = _class_filter_mask(g, origin, class_filter)
    vec = np.zeros(g.n, dtype=object)
    vec[:] = 0
    vec[origin] = 1
    starts = g.csr_offsets[:-1]
    for _ in range(length):
        # M is symmetric, so (vec @ M)[u] = sum over neighbors of u
        gathered = vec[g.csr_targets]
        vec = np.add.reduceat(gathered, starts) if g.n else gathered
        if mask is not None:
            vec[~mask] = 0
    out = np.empty(g.n, dtype=np.int64)
    for u in range(g.n):
        value = int(vec[u])
        if value > _INT64_MAX:
            raise PathCountOverflowError(u, length, value)
        out[u] = value
    return PathCountVector(counts=out, origin=int(origin), length=int(length))


def brute_force_paths(g: Graph, origin: int, length: int, class_filter=None) -> PathCountVector:
    """Reference path counter by explicit DFS over edge sequences.

    Independent of :func:`count_paths`; intended as its test oracle and
    therefore restricted to ``n <= 12`` and ``length <= 6``.
    """
    if g.n > 12 or length > 6:
        raise ContractError(f"brute force refused for n={g.n}, l={length} (limits n<=12, l<=6)")
    _check_origin(g, origin, length)
    mask = _class_filter_mask(g, origin, class_filter)
    adjacency = [list(g.neighbors(v)) for v in range(g.n)]
    counts = [0] * g.n

    def walk(v, remaining):
        if remaining == 0:
            counts[v] += 1
            return
        for u in adjacency[v]:
            if mask is not None and not mask[u]:
                continue
            walk(u, remaining - 1)

    walk(origin, length)
    return PathCountVector(counts=np.array(counts, dtype=np.int64), origin=int(origin), length=int(length))


def variance_ratio(p) -> float:
    """``||p||_2^2 / ||p||_1^2`` for a non-negative count vector, in (0, 1]."""
    counts = p.counts if isinstance(p, PathCountVector) else p
    values = [int(c) for c in np.asarray(counts).ravel()]
    if any(c < 0 for c in values):
        raise DomainError("path counts must be non-negative")
    l1 = sum(values)
    if l1 == 0:
        raise DomainError("variance ratio undefined for an all-zero count vector")
    return sum(c * c for c in values) / (l1 * l1)


@dataclass(frozen=True, eq=False)
class SparseRowStochastic:
    """Row-normalized adjacency in CSR layout; isolated rows may be empty."""

    n: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    weights: np.ndarray

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.weights.copy(), self.csr_targets.copy(), self.csr_offsets.copy()), shape=(self.n, self.n)
        )

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.to_scipy().sum(axis=1)).ravel()


def row_normalized_adjacency(g: Graph, include_self_loops: bool = False) -> SparseRowStochastic:
    """``D^-1 A`` over the chosen edge set (``A + I`` when self-loops are kept)."""
    a = g.adjacency(include_self_loops=include_self_loops).astype(np.float64)
    deg = np.diff(a.indptr)
    inv = np.zeros(g.n)
    np.divide(1.0, deg, out=inv, where=deg > 0)
    weights = a.data * np.repeat(inv, deg)
    return SparseRowStochastic(
        n=g.n, csr_offsets=a.indptr.astype(np.int64), csr_targets=a.indices.astype(np.int64), weights=weights
    )


def _matrix_power_diagonal(a: sp.csr_matrix, k: int) -> np.ndarray:
    if k == 0:
        return np.ones(a.shape[0])
    half = k // 2
    left = sp.identity(a.shape[0], format="csr")
    for _ in range(half):
        left = left @ a
    right = left @ a if k % 2 else left
    # diag(L R)_v = sum_u L[v, u] R[u, v]
    return np.asarray(left.multiply(right.T).sum(axis=1)).ravel()


def label_propagation(a_hat: SparseRowStochastic, y: np.ndarray, layer: int) -> np.ndarray:
    """``rm_diag(A_hat**(layer - 1)) @ Y``.

    ``Y`` holds one-hot rows for labeled training nodes and zero rows
    elsewhere. ``layer = 1`` gives the zero matrix since ``rm_diag(I) = 0``.
    """
    if layer < 1:
        raise ContractError(f"label propagation layer must be >= 1, got {layer}")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != a_hat.n:
        raise ContractError(f"label matrix shape {y.shape} incompatible with {a_hat.n} nodes")
    k = layer - 1
    if k == 0:
        return np.zeros_like(y)
    a = a_hat.to_scipy()
    z = y
    for _ in range(k):
        z = a @ z
    diag = _matrix_power_diagonal(a, k)
    return z - diag[:, None] * y


@dataclass(frozen=True)
class GraphStats:
    """Table-1 style summary of a graph."""

    n_nodes: int
    n_edges: int
    n_directed_edges: int
    avg_degree: float
    max_degree: int
    hub_node_rate: float
    density: float
    hub_threshold: int
    degree_convention: str
    extra: dict = field(default_factory=dict)


DEGREE_CONVENTIONS = ("neighborhood", "doubled")


def graph_statistics(g: Graph, hub_threshold: int = 30, degree_convention: str = "neighborhood") -> GraphStats:
    """Node/edge counts, degree summary, hub node rate and density.

    ``degree_convention`` selects the degree used for the average, maximum and
    hub test: ``"neighborhood"`` is ``|N_v|`` (self included), ``"doubled"`` is
    ``2 |N_v|``, i.e. in- plus out-entries of a symmetrized edge index with
    self-loops. Density is ``2|E| / (|V| (|V| - 1))`` and zero for ``|V| < 2``.
    """
    if degree_convention not in DEGREE_CONVENTIONS:
        raise ContractError(f"unknown degree convention {degree_convention!r}")
    deg = g.degrees.astype(np.int64)
    if degree_convention == "doubled":
        deg = 2 * deg
    n = g.n
    e = g.num_undirected_edges
    density = 2.0 * e / (n * (n - 1)) if n > 1 else 0.0
    hub_rate = float(np.count_nonzero(deg > hub_threshold)) / n if n else 0.0
    plain = g.degrees - 1
    return GraphStats(
        n_nodes=n,
        n_edges=e,
        n_directed_edges=2 * e,
        avg_degree=float(deg.mean()) if n else 0.0,
        max_degree=int(deg.max()) if n else 0,
        hub_node_rate=hub_rate,
        density=density,
        hub_threshold=int(hub_threshold),
        degree_convention=degree_convention,
        extra={
            "avg_degree_without_self": float(plain.mean()) if n else 0.0,
            "max_degree_without_self": int(plain.max()) if n else 0,
        },
    )


def erdos_renyi(n: int, p: float, rng: np.random.Generator) -> Graph:
    """Undirected G(n, p) graph; each pair is an edge independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"edge probability must lie in [0, 1], got {p}")
    lo, hi = np.triu_indices(n, k=1)
    keep = rng.random(lo.size) < p
    return build_graph(np.stack([lo[keep], hi[keep]], axis=1), n)


def circulant(n: int, degree: int) -> Graph:
    """Ring lattice joining each node to its ``degree / 2`` nearest nodes on each side."""
    if degree % 2 or not 0 <= degree < n:
        raise DomainError(f"degree must be even and below n={n}, got {degree}")
    v = np.arange(n)
    edges = [np.stack([v, (v + k) % n], axis=1) for k in range(1, degree // 2 + 1)]
    return build_graph(np.concatenate(edges) if edges else np.empty((0, 2), dtype=np.int64), n)

"""Attention score functions and their normalization over neighborhoods.

Raw scores are produced per undirected edge (self-loops included) and copied
to both orientations, then normalized by a softmax over each ``N_v``. Two kinds
skip the softmax: ``gcn_uniform`` (``alpha_vu = 1/|N_v|``) and the hard oracle,
which spreads mass uniformly over same-class neighbors only.
"""

from __future__ import annotations

from enum import Enum
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError
from .graph import Graph


class AttentionKind(str, Enum):
    ADDITIVE = "additive"
    DOT_PRODUCT = "dot_product"
    SCALED_DOT_PRODUCT = "scaled_dot_product"
    LABEL_INNER_PRODUCT = "label_inner_product"
    ORACLE = "oracle"
    GCN_UNIFORM = "gcn_uniform"

    @classmethod
    def parse(cls, value) -> "AttentionKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        return cls(_ALIASES.get(key, key))


_ALIASES = {
    "ad": "additive",
    "dp": "dot_product",
    "sd": "scaled_dot_product",
    "label": "label_inner_product",
    "gcn": "gcn_uniform",
}

# kinds whose raw score is a (possibly scaled) inner product, hence symmetric
SYMMETRIC_KINDS = frozenset(
    {AttentionKind.DOT_PRODUCT, AttentionKind.SCALED_DOT_PRODUCT, AttentionKind.LABEL_INNER_PRODUCT}
)


def score(kind, q, k, w=None) -> float:
    """Raw (pre-softmax) score between two vectors.

    ``additive`` is ``<w, q || k>``, ``dot_product`` is ``<q, k>`` and
    ``scaled_dot_product`` divides the inner product by ``dim(q)`` (not its
    square root).
    """
    kind = AttentionKind.parse(kind)
    q = np.asarray(q, dtype=np.float64).ravel()
    k = np.asarray(k, dtype=np.float64).ravel()
    if q.shape != k.shape:
        raise ContractError(f"score: dim(q)={q.size} != dim(k)={k.size}")
    if kind is AttentionKind.ADDITIVE:
        if w is None:
            raise ContractError("additive attention needs a weight vector w")
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.size != 2 * q.size:
            raise ContractError(f"additive attention: dim(w)={w.size}, expected {2 * q.size}")
        return float(w @ np.concatenate([q, k]))
    if kind in (AttentionKind.DOT_PRODUCT, AttentionKind.LABEL_INNER_PRODUCT):
        return float(q @ k)
    if kind is AttentionKind.SCALED_DOT_PRODUCT:
        return float(q @ k) / q.size
    raise ContractError(f"score() is not defined for {kind.value}")


def oracle_score(labels, v: int, u: int) -> int:
    """1 if ``v`` and ``u`` share a class, else 0. Negative labels mean unknown."""
    labels = np.asarray(labels)
    if labels[v] < 0 or labels[u] < 0:
        raise ContractError(f"oracle needs labels for both nodes {v} and {u}")
    return int(labels[v] == labels[u])


def label_score(y_v, y_u) -> float:
    """Inner product of two class-probability vectors."""
    return float(np.dot(np.asarray(y_v, dtype=np.float64).ravel(), np.asarray(y_u, dtype=np.float64).ravel()))


def _check_full_labels(labels, n):
    if labels is None:
        raise ContractError("oracle attention requires ground-truth labels for every node")
    labels = np.asarray(labels)
    if labels.shape != (n,) or np.any(labels < 0):
        raise ContractError("oracle attention requires ground-truth labels for every node")
    return labels


def edge_scores(kind, g: Graph, q: Optional[Tensor] = None, w: Optional[Tensor] = None, labels=None) -> Tensor:
    """Raw scores for every CSR entry, shape (E, 1).

    One score is computed per undirected edge ``{lo, hi}`` (``lo <= hi``) as
    ``score(q[lo], q[hi])`` and assigned to both orientations, so asymmetric
    additive scores are always taken from the smaller node id. For
    ``label_inner_product`` ``q`` holds the per-node class predictions.
    """
    kind = AttentionKind.parse(kind)
    lo, hi, index = g.canonical_edges
    if kind is AttentionKind.ORACLE:
        labels = _check_full_labels(labels, g.n)
        raw = (labels[lo] == labels[hi]).astype(np.float64)[:, None]
        return Tensor(raw[index])
    if kind is AttentionKind.GCN_UNIFORM:
        raise ContractError("gcn_uniform attention has no raw scores")
    if q is None:
        raise ContractError(f"{kind.value} attention needs node inputs q")
    if q.shape[0] != g.n:
        raise ContractError(f"attention inputs for {q.shape[0]} nodes, graph has {g.n}")
    q_lo = ad.gather_rows(q, lo)
    q_hi = ad.gather_rows(q, hi)
    if kind is AttentionKind.ADDITIVE:
        if w is None:
            raise ContractError("additive attention needs a weight vector w")
        if w.shape != (2 * q.shape[1], 1):
            raise ContractError(f"additive attention: w has shape {w.shape}, expected ({2 * q.shape[1]}, 1)")
        canon = ad.matmul(ad.concat_cols(q_lo, q_hi), w)
    else:
        canon = ad.rowwise_dot(q_lo, q_hi)
        if kind is AttentionKind.SCALED_DOT_PRODUCT:
            canon = ad.scale(canon, 1.0 / q.shape[1])
    return ad.gather_rows(canon, index)


def uniform_attention(g: Graph) -> Tensor:
    """``alpha_vu = 1 / |N_v|`` for every CSR entry."""
    return Tensor((1.0 / g.degrees.astype(np.float64))[g.sources][:, None])


def hard_oracle_attention(g: Graph, labels) -> Tensor:
    """Uniform weights over ``N_v`` restricted to the class of ``v``; zero elsewhere."""
    labels = _check_full_labels(labels, g.n)
    same = (labels[g.sources] == labels[g.csr_targets]).astype(np.float64)
    counts = np.add.reduceat(same, g.csr_offsets[:-1]) if g.n else same
    return Tensor((same / counts[g.sources])[:, None])


def attention_coefficients(
    kind, g: Graph, q: Optional[Tensor] = None, w: Optional[Tensor] = None, labels=None, hard_oracle: bool = False
) -> Tensor:
    """Normalized coefficients (E, 1): softmax of :func:`edge_scores` over each ``N_v``."""
    kind = AttentionKind.parse(kind)
    if kind is AttentionKind.GCN_UNIFORM:
        return uniform_attention(g)
    if kind is AttentionKind.ORACLE and hard_oracle:
        return hard_oracle_attention(g, labels)
    raw = edge_scores(kind, g, q=q, w=w, labels=labels)
    return ad.edge_softmax(raw, g.csr_offsets)

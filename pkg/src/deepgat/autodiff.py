"""Minimal reverse-mode differentiation over 64-bit matrices.

Every value is a 2-D :class:`Tensor`. Operations executed while a :class:`Tape`
is active (``with Tape() as tape:``) are recorded together with a backward
closure; :meth:`Tape.backward` replays them in exact reverse order. The active
tape lives in a context variable, so separate threads record independently.
"""

from __future__ import annotations

import contextvars
from typing import Callable, List, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ContractError, DomainError, NonFiniteError

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("deepgat_tape", default=None)

LOG_CLAMP = 1e-12


class Tensor:
    """A float64 matrix with an optional gradient accumulator."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        value = np.array(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(-1, 1)
        elif value.ndim != 2:
            raise ContractError(f"tensors are matrices, got ndim={value.ndim}")
        self.value = value
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(value) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self._records: List[tuple] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self):
        return len(self._records)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward: Callable):
        self._records.append((out, tuple(parents), backward))

    def backward(self, loss: Tensor, seed: Optional[np.ndarray] = None):
        """Accumulate d(loss)/d(x) into ``x.grad`` for every recorded ancestor."""
        if seed is None:
            if loss.value.size != 1:
                raise ContractError(f"backward from non-scalar {loss.shape} requires a seed")
            seed = np.ones_like(loss.value)
        if loss.grad is None:
            loss.grad = np.zeros_like(loss.value)
        loss.grad = loss.grad + seed
        for out, parents, backward in reversed(self._records):
            if out.grad is None or not out.grad.any():
                continue
            grads = backward(out.grad)
            for parent, g in zip(parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += g


def _emit(value: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.value = value
    out.requires_grad = track
    out.grad = None
    out.name = None
    if track:
        tape.record(out, parents, backward)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ContractError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.value * c, (a,), lambda g: (g * c,), "scale")


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "elementwise_mul")
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av), "elementwise_mul")


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "add_n")
    value = tensors[0].value.copy()
    for t in tensors[1:]:
        value = value + t.value
    return _emit(value, tensors, lambda g: tuple(g for _ in tensors), "add_n")


def mean_n(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    return scale(add_n(tensors), 1.0 / len(tensors))


def concat_cols(*tensors: Tensor) -> Tensor:
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ContractError(f"concat_cols: row mismatch {[t.shape for t in tensors]}")
    widths = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _emit(np.concatenate([t.value for t in tensors], axis=1), tensors, backward, "concat_cols")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.shape[1]:
        raise ContractError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit(a.value[:, start:stop].copy(), (a,), backward, "slice_cols")


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def backward(g):
        full = np.zeros((n, g.shape[1]))
        np.add.at(full, index, g)
        return (full,)

    return _emit(a.value[index], (a,), backward, "gather_rows")


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """``out[i] = <a[i], b[i]>`` as an (m, 1) column."""
    _same_shape(a, b, "rowwise_dot")
    av, bv = a.value, b.value
    return _emit(
        np.einsum("ij,ij->i", av, bv)[:, None], (a, b), lambda g: (g * bv, g * av), "rowwise_dot"
    )


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum_all")


ACTIVATIONS = ("identity", "elu", "tanh")


def activation(x: Tensor, kind: str = "identity") -> Tensor:
    """Elementwise activation: ``identity``, ``elu`` (alpha = 1) or ``tanh``."""
    v = x.value
    if kind == "identity":
        return _emit(v.copy(), (x,), lambda g: (g,), "identity")
    if kind == "elu":
        neg = v < 0
        expm = np.expm1(np.where(neg, v, 0.0))
        out = np.where(neg, expm, v)
        slope = np.where(neg, expm + 1.0, 1.0)
        return _emit(out, (x,), lambda g: (g * slope,), "elu")
    if kind == "tanh":
        out = np.tanh(v)
        return _emit(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")
    raise ContractError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def row_softmax(x: Tensor) -> Tensor:
    v = x.value
    e = np.exp(v - v.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit(p, (x,), backward, "row_softmax")


def edge_softmax(scores: Tensor, offsets: np.ndarray) -> Tensor:
    """Softmax of per-entry scores within each CSR row group.

    ``scores`` is (E, k): k independent columns (attention heads) normalized
    separately. Groups are ``[offsets[v], offsets[v+1])`` and must be non-empty.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    starts = offsets[:-1]
    sizes = np.diff(offsets)
    if scores.shape[0] != offsets[-1]:
        raise ContractError(f"edge_softmax: {scores.shape[0]} scores for {offsets[-1]} entries")
    if np.any(sizes == 0):
        raise ContractError("edge_softmax: empty softmax group")
    v = scores.value
    gmax = np.maximum.reduceat(v, starts, axis=0)
    e = np.exp(v - np.repeat(gmax, sizes, axis=0))
    denom = np.add.reduceat(e, starts, axis=0)
    alpha = e / np.repeat(denom, sizes, axis=0)

    def backward(g):
        inner = np.add.reduceat(alpha * g, starts, axis=0)
        return (alpha * (g - np.repeat(inner, sizes, axis=0)),)

    return _emit(alpha, (scores,), backward, "edge_softmax")


def neighborhood_aggregate(alpha: Tensor, h: Tensor, offsets: np.ndarray, targets: np.ndarray) -> Tensor:
    """``a_v = sum_{u in N_v} alpha_vu h_u`` with alpha given per CSR entry (E, 1).

    Rows are reduced in ascending neighbor order, so results are bit-stable.
    """
    n = offsets.shape[0] - 1
    if alpha.shape != (targets.shape[0], 1):
        raise ContractError(f"neighborhood_aggregate: alpha shape {alpha.shape}, expected ({targets.shape[0]}, 1)")
    if h.shape[0] != n:
        raise ContractError(f"neighborhood_aggregate: features for {h.shape[0]} nodes, graph has {n}")
    mat = sp.csr_matrix((alpha.value[:, 0], targets, offsets), shape=(n, n))
    hv = h.value
    sources = np.repeat(np.arange(n), np.diff(offsets))

    def backward(g):
        d_alpha = np.einsum("ij,ij->i", g[sources], hv[targets])[:, None]
        return d_alpha, mat.T @ g

    return _emit(mat @ hv, (alpha, h), backward, "neighborhood_aggregate")


def cross_entropy(probs: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of one-hot ``targets`` over ``mask`` rows.

    Probabilities are clamped at 1e-12 before the log.
    """
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if targets.shape != probs.shape:
        raise ContractError(f"cross_entropy: targets {targets.shape} vs probs {probs.shape}")
    m = int(mask.sum())
    if m == 0:
        raise DomainError("cross_entropy over an empty mask")
    p = probs.value
    clamped = np.maximum(p, LOG_CLAMP)
    weight = targets * mask[:, None]
    loss = -(weight * np.log(clamped)).sum() / m

    def backward(g):
        grad = np.where(p > LOG_CLAMP, -weight / clamped, 0.0) / m
        return (grad * g[0, 0],)

    return _emit(np.array([[loss]]), (probs,), backward, "cross_entropy")


def detach(a: Tensor) -> Tensor:
    """Same value, cut from the tape."""
    return Tensor(a.value.copy())


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` must rebuild its scalar output from the current values of ``params``
    every call. Relative error per coordinate uses the denominator
    ``max(|g|, |g_fd|, 1e-8)``. With ``max_coords`` only that many coordinates
    per parameter are sampled.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ContractError(f"finite-difference step {h} outside [1e-7, 1e-3]")
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params.values():
        p.requires_grad = True
        p.zero_grad()
    with Tape() as tape:
        out = f()
    tape.backward(out)
    worst = 0.0
    for name, p in params.items():
        analytic = p.grad.copy()
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteError(f"non-finite analytic gradient for parameter {name!r}")
        coords = list(np.ndindex(p.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for idx in coords:
            original = p.value[idx]
            p.value[idx] = original + h
            plus = f().item()
            p.value[idx] = original - h
            minus = f().item()
            p.value[idx] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NonFiniteError(f"non-finite objective while perturbing {name!r}{idx}")
            fd = (plus - minus) / (2.0 * h)
            g = analytic[idx]
            err = abs(g - fd) / max(abs(g), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst

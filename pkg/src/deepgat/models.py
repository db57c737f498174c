"""Feedforward graph models: GAT, DeepGAT and the uniform-attention GCN.

Parameters are plain ``{name: Tensor}`` dictionaries. Names follow
``layer{l}.W`` (GAT/GCN), ``layer{l}.W1`` / ``layer{l}.W2`` (DeepGAT),
``layer{l}.att`` (additive attention vectors, one column per head) and
``classifier.W`` (GAT output map). Node features are rows: a layer computes
``H @ W`` where the column-vector notation would write ``W h``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .attention import AttentionKind, attention_coefficients
from .autodiff import Tensor
from .exceptions import ConfigError, ContractError, LabelLeakageError
from .graph import Graph, label_propagation, row_normalized_adjacency

MODEL_KINDS = ("gat", "deepgat", "gcn")


@dataclass
class ModelConfig:
    """Architecture hyperparameters shared by all model kinds.

    ``hidden_dim`` is the width of one head; hidden layers concatenate
    ``heads`` of them, the last layer averages them.
    """

    n_layers: int = 2
    n_classes: int = 2
    hidden_dim: int = 16
    heads: int = 1
    attention: str = "dot_product"
    activation: str = "elu"
    use_label_propagation: bool = True
    label_propagation_max_layer: int = 3
    stop_gradient_on_attention: bool = False
    hard_oracle: bool = False

    def __post_init__(self):
        self.attention = AttentionKind.parse(self.attention).value
        self.validate()

    def validate(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.hidden_dim < 1 or self.heads < 1:
            raise ConfigError("hidden_dim and heads must be >= 1")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.label_propagation_max_layer < 0:
            raise ConfigError("label_propagation_max_layer must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


@dataclass
class LayerTrace:
    """Everything a forward pass produced.

    ``predictions[l]`` is the per-layer class prediction made inside layer
    ``l + 1`` (DeepGAT only), ``alphas[l][k]`` the (E, 1) coefficients of head
    ``k`` in layer ``l + 1``, ``hidden[l]`` the representation after layer
    ``l + 1`` and ``output`` the final class probabilities.
    """

    predictions: List[Tensor]
    alphas: List[List[Tensor]]
    hidden: List[Tensor]
    output: Tensor
    label_features: List[np.ndarray] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.hidden)

    def alpha(self, layer: int) -> np.ndarray:
        """Head-averaged coefficients of ``layer`` (1-based), shape (E,)."""
        heads = self.alphas[layer - 1]
        return np.mean([a.value[:, 0] for a in heads], axis=0)

    def frozen_alphas(self) -> List[np.ndarray]:
        """Per-layer (E, heads) arrays suitable for replay with ``frozen_alpha``."""
        return [np.concatenate([a.value for a in heads], axis=1) for heads in self.alphas]

    def representations(self) -> np.ndarray:
        return self.hidden[-1].value


def glorot(rng: np.random.Generator, shape, fan_in=None, fan_out=None) -> np.ndarray:
    fan_in = shape[0] if fan_in is None else fan_in
    fan_out = shape[1] if fan_out is None else fan_out
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def parameter_shapes(kind: str, config: ModelConfig, n_features: int) -> Dict[str, tuple]:
    """Ordered parameter names and shapes for ``kind``."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    L, K, C, d = config.n_layers, config.heads, config.n_classes, config.hidden_dim
    additive = AttentionKind.parse(config.attention) is AttentionKind.ADDITIVE
    shapes: Dict[str, tuple] = {}
    d_in = n_features
    if kind == "deepgat":
        for l in range(1, L + 1):
            d_out = d if l < L else C
            shapes[f"layer{l}.W1"] = (d_in + C, C)
            shapes[f"layer{l}.W2"] = (d_in, K * d_out)
            if additive:
                shapes[f"layer{l}.att"] = (2 * C, 1)
            d_in = K * d_out if l < L else d_out
        return shapes
    heads = 1 if kind == "gcn" else K
    for l in range(1, L + 1):
        shapes[f"layer{l}.W"] = (d_in, heads * d)
        if additive and kind == "gat":
            shapes[f"layer{l}.att"] = (2 * d, heads)
        d_in = heads * d if l < L else d
    shapes["classifier.W"] = (d, C)
    return shapes


def init_params(kind: str, config: ModelConfig, n_features: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Glorot-uniform initialization from a seeded generator."""
    params = {}
    for name, shape in parameter_shapes(kind, config, n_features).items():
        if name.endswith(".att"):
            params[name] = glorot(rng, shape, fan_in=shape[0], fan_out=1)
        elif kind != "gcn" and config.heads > 1 and (name.endswith(".W") or name.endswith(".W2")) and not name.startswith("classifier"):
            params[name] = glorot(rng, shape, fan_out=shape[1] // config.heads)
        else:
            params[name] = glorot(rng, shape)
    return params


def as_tensors(params: Mapping[str, np.ndarray], requires_grad: bool = False) -> Dict[str, Tensor]:
    return {
        k: (v if isinstance(v, Tensor) else Tensor(v, requires_grad=requires_grad, name=k)) for k, v in params.items()
    }


def check_param_shapes(kind: str, config: ModelConfig, n_features: int, params: Mapping):
    expected = parameter_shapes(kind, config, n_features)
    missing = set(expected) - set(params)
    if missing:
        raise ConfigError(f"missing parameters: {sorted(missing)}")
    for name, shape in expected.items():
        got = tuple(params[name].shape)
        if got != shape:
            raise ConfigError(f"parameter {name!r} has shape {got}, expected {shape}")


def one_hot(labels, n_classes: int, mask=None) -> np.ndarray:
    """One-hot rows for labeled nodes (``mask`` and ``label >= 0``), zero rows elsewhere."""
    labels = np.asarray(labels, dtype=np.int64)
    y = np.zeros((labels.shape[0], n_classes))
    keep = labels >= 0
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    y[np.flatnonzero(keep), labels[keep]] = 1.0
    return y


def check_label_leakage(y_train: np.ndarray, train_mask) -> None:
    outside = ~np.asarray(train_mask, dtype=bool)
    rows = np.flatnonzero(np.any(y_train[outside] != 0, axis=1))
    if rows.size:
        node = int(np.flatnonzero(outside)[rows[0]])
        raise LabelLeakageError(f"label matrix has a nonzero row for node {node} outside the training mask")


def propagated_labels(g: Graph, y_train: np.ndarray, config: ModelConfig) -> List[np.ndarray]:
    """``Z`` for every layer: ``rm_diag(A_hat**(l-1)) Y`` up to the configured layer, zeros after."""
    y_train = np.asarray(y_train, dtype=np.float64)
    zero = np.zeros((g.n, config.n_classes))
    if y_train.shape != zero.shape:
        raise ContractError(f"label matrix shape {y_train.shape}, expected {zero.shape}")
    out = []
    a_hat = row_normalized_adjacency(g, include_self_loops=False) if config.use_label_propagation else None
    for l in range(1, config.n_layers + 1):
        if a_hat is None or l > config.label_propagation_max_layer:
            out.append(zero)
        else:
            out.append(label_propagation(a_hat, y_train, l))
    return out


def _check_features(g: Graph, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[0] != g.n:
        raise ContractError(f"feature matrix has {x.shape[0]} rows, graph has {g.n} nodes")
    return x


def _maybe_detach(alpha: Tensor, config: ModelConfig) -> Tensor:
    return ad.detach(alpha) if config.stop_gradient_on_attention else alpha


def _frozen(frozen_alpha, layer: int, head: int) -> Tensor:
    return Tensor(np.asarray(frozen_alpha[layer - 1])[:, head : head + 1])


def gat_forward(
    g: Graph,
    x,
    params: Mapping[str, Tensor],
    config: ModelConfig,
    labels=None,
    frozen_alpha: Optional[Sequence[np.ndarray]] = None,
) -> LayerTrace:
    """GAT feedforward.

    Each layer scores pairs of transformed representations ``H W``, copies
    each undirected score to both directions, normalizes over ``N_v``,
    aggregates and applies the activation. Heads are concatenated on hidden
    layers and averaged on the last one; the output is
    ``softmax(h^L @ classifier.W)``. ``frozen_alpha`` replays stored
    coefficients instead of computing them.
    """
    h = _check_features(g, x)
    kind = AttentionKind.parse(config.attention)
    heads = 1 if kind is AttentionKind.GCN_UNIFORM else config.heads
    d = config.hidden_dim
    L = config.n_layers
    alphas, hidden = [], []
    for l in range(1, L + 1):
        q = ad.matmul(h, params[f"layer{l}.W"])
        att = params.get(f"layer{l}.att")
        layer_alphas, aggregated = [], []
        for k in range(heads):
            q_k = q if heads == 1 else ad.slice_cols(q, k * d, (k + 1) * d)
            if frozen_alpha is not None:
                alpha = _frozen(frozen_alpha, l, k)
            else:
                w_k = None if att is None else (att if heads == 1 else ad.slice_cols(att, k, k + 1))
                alpha = attention_coefficients(kind, g, q=q_k, w=w_k, labels=labels, hard_oracle=config.hard_oracle)
                alpha = _maybe_detach(alpha, config)
            layer_alphas.append(alpha)
            aggregated.append(ad.neighborhood_aggregate(alpha, q_k, g.csr_offsets, g.csr_targets))
        combined = ad.concat_cols(*aggregated) if l < L and heads > 1 else ad.mean_n(aggregated)
        h = ad.activation(combined, config.activation)
        alphas.append(layer_alphas)
        hidden.append(h)
    output = ad.row_softmax(ad.matmul(h, params["classifier.W"]))
    return LayerTrace(predictions=[], alphas=alphas, hidden=hidden, output=output)


def gcn_forward(g: Graph, x, params: Mapping[str, Tensor], config: ModelConfig) -> LayerTrace:
    """GAT with ``alpha_vu = 1/|N_v|`` and a single head."""
    return gat_forward(g, x, params, replace(config, attention="gcn_uniform", heads=1))


def deepgat_forward(
    g: Graph,
    x,
    y_train,
    params: Mapping[str, Tensor],
    config: ModelConfig,
    train_mask=None,
    labels=None,
    frozen_alpha: Optional[Sequence[np.ndarray]] = None,
    label_features: Optional[Sequence[np.ndarray]] = None,
) -> LayerTrace:
    """DeepGAT feedforward.

    In layer ``l`` the label features ``z = rm_diag(A_hat**(l-1)) Y`` are
    appended to ``h^{l-1}``, mapped by ``W1`` and softmaxed into the layer's
    class prediction. Attention scores come from those predictions (inner
    product by default), are symmetrized and normalized over ``N_v``, and the
    aggregate is combined by ``W2``. The output is ``softmax(h^L)``, so the last
    ``W2`` has ``n_classes`` columns per head.

    ``train_mask`` enables the leakage guard: ``y_train`` must be zero outside
    it. ``label_features`` may pass precomputed ``Z`` matrices.
    """
    h = _check_features(g, x)
    kind = AttentionKind.parse(config.attention)
    L, C, K = config.n_layers, config.n_classes, config.heads
    y_train = np.asarray(y_train, dtype=np.float64)
    if train_mask is not None:
        check_label_leakage(y_train, train_mask)
    last_w2 = params[f"layer{L}.W2"]
    if last_w2.shape[1] != K * C:
        raise ConfigError(f"final W2 maps to {last_w2.shape[1]} columns, expected {K * C} (heads x classes)")
    zs = list(label_features) if label_features is not None else propagated_labels(g, y_train, config)
    predictions, alphas, hidden = [], [], []
    for l in range(1, L + 1):
        logits = ad.matmul(ad.concat_cols(h, Tensor(zs[l - 1])), params[f"layer{l}.W1"])
        y_hat = ad.row_softmax(logits)
        predictions.append(y_hat)
        if frozen_alpha is not None:
            alpha = _frozen(frozen_alpha, l, 0)
        else:
            score_kind = AttentionKind.LABEL_INNER_PRODUCT if kind is AttentionKind.DOT_PRODUCT else kind
            alpha = attention_coefficients(
                score_kind, g, q=y_hat, w=params.get(f"layer{l}.att"), labels=labels, hard_oracle=config.hard_oracle
            )
            alpha = _maybe_detach(alpha, config)
        q = ad.matmul(h, params[f"layer{l}.W2"])
        a = ad.neighborhood_aggregate(alpha, q, g.csr_offsets, g.csr_targets)
        if l == L and K > 1:
            width = C
            a = ad.mean_n([ad.slice_cols(a, k * width, (k + 1) * width) for k in range(K)])
        h = ad.activation(a, config.activation)
        alphas.append([alpha])
        hidden.append(h)
    output = ad.row_softmax(h)
    return LayerTrace(predictions=predictions, alphas=alphas, hidden=hidden, output=output, label_features=zs)


def forward(kind: str, g: Graph, x, params: Mapping[str, Tensor], config: ModelConfig, y_train=None, **kwargs) -> LayerTrace:
    """Dispatch to the forward pass of ``kind``."""
    if kind == "gat":
        return gat_forward(g, x, params, config, **kwargs)
    if kind == "gcn":
        return gcn_forward(g, x, params, config)
    if kind == "deepgat":
        if y_train is None:
            y_train = np.zeros((g.n, config.n_classes))
        return deepgat_forward(g, x, y_train, params, config, **kwargs)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")

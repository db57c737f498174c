"""Loss assembly, Adam optimization and early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .exceptions import ConfigError, DivergenceError, DomainError, NonFiniteError
from .models import LayerTrace, ModelConfig, as_tensors, forward, init_params, one_hot, propagated_labels

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 5e-3
    weight_decay: float = 5e-4
    delta: float = 1.0
    seed: int = 0
    patience: int = 100
    eval_interval: int = 1

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be > 0 and weight_decay >= 0")
        if self.eval_interval < 1 or self.patience < 1:
            raise ConfigError("eval_interval and patience must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


@dataclass
class TrainReport:
    train_loss: List[float] = field(default_factory=list)
    layer_losses: List[List[float]] = field(default_factory=list)
    val_micro_f1: List[float] = field(default_factory=list)
    eval_epochs: List[int] = field(default_factory=list)
    best_epoch: int = 0
    best_val_micro_f1: float = 0.0
    test_micro_f1: float = 0.0
    wall_time: float = 0.0

    def to_dict(self, include_time: bool = True) -> dict:
        out = asdict(self)
        if not include_time:
            out.pop("wall_time")
        return out


def gamma(layer: int, delta: float) -> float:
    """Layer weight ``delta / (layer + delta) + 1``; decreases towards 1 as ``layer`` grows."""
    if layer < 1 or delta <= 0:
        raise DomainError(f"gamma needs layer >= 1 and delta > 0, got layer={layer}, delta={delta}")
    return delta / (layer + delta) + 1.0


def deepgat_prediction_terms(trace: LayerTrace) -> List[Tensor]:
    """Predictions entering the layered loss, ordered ``l = 1 .. L``.

    Term ``l < L`` is the prediction computed from ``h^l`` (made inside layer
    ``l + 1``); term ``L`` is the final output. The prediction computed from
    the raw features inside layer 1 carries no loss term of its own.
    """
    return list(trace.predictions[1:]) + [trace.output]


def deepgat_loss(trace: LayerTrace, targets: np.ndarray, train_mask, delta: float, per_layer: Optional[list] = None) -> Tensor:
    """``sum_l gamma(l) * CE_l`` over the ``L`` supervised predictions."""
    terms = deepgat_prediction_terms(trace)
    weighted = []
    for l, probs in enumerate(terms, start=1):
        ce = ad.cross_entropy(probs, targets, train_mask)
        if per_layer is not None:
            per_layer.append(ce.item())
        weighted.append(ad.scale(ce, gamma(l, delta)))
    return ad.add_n(weighted)


def gat_loss(trace: LayerTrace, targets: np.ndarray, train_mask) -> Tensor:
    return ad.cross_entropy(trace.output, targets, train_mask)


def micro_f1_from_probs(probs: np.ndarray, labels: np.ndarray, mask) -> float:
    from .analysis import micro_f1

    return micro_f1(probs.argmax(axis=1), labels, mask)


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params: Mapping[str, Tensor], lr=5e-3, weight_decay=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad + self.weight_decay * p.value
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.value -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _norms(params) -> Dict[str, float]:
    return {k: float(np.linalg.norm(p.value)) for k, p in params.items()}


def _model_loss(kind, trace, targets, train_mask, delta, per_layer):
    if kind == "deepgat":
        return deepgat_loss(trace, targets, train_mask, delta, per_layer)
    return gat_loss(trace, targets, train_mask)


def train(
    kind: str,
    dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    log: Optional[Callable[[dict], None]] = None,
) -> Tuple[Dict[str, np.ndarray], TrainReport]:
    """Fit ``kind`` on ``dataset`` and return the best-validation parameters.

    ``dataset`` needs ``graph``, ``features``, ``labels`` and boolean
    ``train_mask`` / ``val_mask`` / ``test_mask``. Early stopping watches
    validation micro-F1 every ``eval_interval`` epochs. ``log`` receives one
    record per epoch.
    """
    start = time.perf_counter()
    g, x, labels = dataset.graph, np.asarray(dataset.features, dtype=np.float64), np.asarray(dataset.labels)
    train_mask = np.asarray(dataset.train_mask, dtype=bool)
    val_mask = np.asarray(dataset.val_mask, dtype=bool)
    test_mask = np.asarray(dataset.test_mask, dtype=bool)
    if not train_mask.any():
        raise DomainError("empty training mask")
    C = model_config.n_classes
    targets = one_hot(labels, C)
    y_train = one_hot(labels, C, train_mask)
    rng = np.random.default_rng(train_config.seed)
    params = as_tensors(init_params(kind, model_config, x.shape[1], rng), requires_grad=True)
    x_t = Tensor(x)
    extra = {}
    if kind == "deepgat":
        extra = {"train_mask": train_mask, "label_features": propagated_labels(g, y_train, model_config)}
    if model_config.attention == "oracle":
        extra["labels"] = labels

    def run():
        return forward(kind, g, x_t, params, model_config, y_train=y_train, **extra)

    report = TrainReport()
    best = {k: p.value.copy() for k, p in params.items()}
    best_score, best_epoch, since_best = -1.0, 0, 0
    opt = Adam(params, lr=train_config.lr, weight_decay=train_config.weight_decay)
    for epoch in range(1, train_config.epochs + 1):
        opt.zero_grad()
        per_layer: List[float] = []
        try:
            with Tape() as tape:
                trace = run()
                loss = _model_loss(kind, trace, targets, train_mask, train_config.delta, per_layer)
            value = loss.item()
        except NonFiniteError as exc:
            raise DivergenceError(epoch, _norms(params)) from exc
        if not np.isfinite(value):
            raise DivergenceError(epoch, _norms(params))
        record = {"epoch": epoch, "loss": value}
        if epoch % train_config.eval_interval == 0:
            # the trace was computed from the pre-step parameters, which are the ones scored
            probs = trace.output.value
            score = micro_f1_from_probs(probs, labels, val_mask) if val_mask.any() else 0.0
            report.val_micro_f1.append(score)
            report.eval_epochs.append(epoch)
            record["val_micro_f1"] = score
            if score > best_score:
                best_score, best_epoch, since_best = score, epoch, 0
                best = {k: p.value.copy() for k, p in params.items()}
            else:
                since_best += train_config.eval_interval
        try:
            tape.backward(loss)
        except NonFiniteError as exc:
            raise DivergenceError(epoch, _norms(params)) from exc
        opt.step()
        report.train_loss.append(value)
        report.layer_losses.append(per_layer)
        if log is not None:
            log(record)
        if since_best >= train_config.patience:
            logger.debug("early stop at epoch %d (best %d)", epoch, best_epoch)
            break
    if train_config.epochs > 0 and best_score < 0:
        best = {k: p.value.copy() for k, p in params.items()}
    report.best_epoch = best_epoch
    report.best_val_micro_f1 = max(best_score, 0.0)
    final = forward(kind, g, Tensor(x), as_tensors(best), model_config, y_train=y_train, **extra)
    report.test_micro_f1 = micro_f1_from_probs(final.output.value, labels, test_mask) if test_mask.any() else 0.0
    report.wall_time = time.perf_counter() - start
    return best, report


def predict_trace(kind: str, dataset, params: Mapping[str, np.ndarray], model_config: ModelConfig, **kwargs) -> LayerTrace:
    """Forward pass of trained parameters on ``dataset`` (no tape)."""
    labels = np.asarray(dataset.labels)
    train_mask = np.asarray(dataset.train_mask, dtype=bool)
    y_train = one_hot(labels, model_config.n_classes, train_mask)
    if model_config.attention == "oracle":
        kwargs.setdefault("labels", labels)
    if kind == "deepgat":
        kwargs.setdefault("train_mask", train_mask)
    return forward(kind, dataset.graph, Tensor(np.asarray(dataset.features, dtype=np.float64)), as_tensors(params), model_config, y_train=y_train, **kwargs)

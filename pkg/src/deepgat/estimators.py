"""scikit-learn style node classifiers.

Node classification here is transductive: ``X`` holds the features of every
node of one graph and ``y`` carries a label for training nodes and ``-1`` for
the rest (the convention of :mod:`sklearn.semi_supervised`). The graph is
passed to ``fit`` and reused by ``predict`` unless another one is given.
"""

from __future__ import annotations


import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .analysis import micro_f1
from .exceptions import InputError
from .models import ModelConfig, as_tensors, forward, one_hot
from .training import TrainConfig, train
from .validation import check_features, check_graph, check_node_labels


class _GraphNodeClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    _kind = ""

    def _model_config(self, n_classes: int) -> ModelConfig:
        return ModelConfig(
            n_layers=self.n_layers,
            n_classes=n_classes,
            hidden_dim=self.hidden_dim,
            heads=getattr(self, "heads", 1),
            attention=getattr(self, "attention", "gcn_uniform"),
            activation=self.activation,
            use_label_propagation=getattr(self, "use_label_propagation", False),
            label_propagation_max_layer=getattr(self, "label_propagation_max_layer", 0),
            stop_gradient_on_attention=getattr(self, "stop_gradient_on_attention", False),
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            weight_decay=self.weight_decay,
            delta=getattr(self, "delta", 1.0),
            seed=self.random_state,
            patience=self.patience,
        )

    def fit(self, X, y, graph, y_val=None):
        """Train on nodes with ``y >= 0``; ``y_val`` (``-1`` elsewhere) drives early stopping.

        Without ``y_val`` the training nodes double as the validation set.
        """
        X = check_features(X)
        n = X.shape[0]
        g = check_graph(graph, n)
        y = check_node_labels(y, n)
        labeled = y >= 0
        if not labeled.any():
            raise InputError("no labeled nodes to fit")
        if y_val is None:
            y_val = np.where(labeled, y, -1)
        y_val = check_node_labels(y_val, n)
        val_mask = y_val >= 0
        both = labeled & val_mask
        if np.any(y[both] != y_val[both]):
            raise InputError("y and y_val disagree on a node labeled in both")
        self.classes_ = np.unique(np.concatenate([y[labeled], y_val[val_mask]]))
        encoded = np.zeros(n, dtype=np.int64)
        encoded[labeled] = np.searchsorted(self.classes_, y[labeled])
        encoded[val_mask] = np.searchsorted(self.classes_, y_val[val_mask])
        # without separate validation nodes, early stopping watches the training nodes
        val_only = val_mask & ~labeled
        dataset = _FitData(g, X, encoded, labeled, val_only if val_only.any() else val_mask)
        config = self._model_config(len(self.classes_))
        params, report = train(self._kind, dataset, config, self._train_config())
        self.params_ = params
        self.report_ = report
        self.model_config_ = config
        self.graph_ = g
        self.n_features_in_ = X.shape[1]
        self.y_train_ = one_hot(encoded, len(self.classes_), labeled)
        return self

    def _trace(self, X, graph):
        check_is_fitted(self, "params_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise InputError(f"X has {X.shape[1]} features, model was fitted on {self.n_features_in_}")
        g = self.graph_ if graph is None else check_graph(graph, X.shape[0])
        if g.n != X.shape[0]:
            raise InputError(f"X has {X.shape[0]} rows, graph has {g.n} nodes")
        same_graph = g is self.graph_
        y_train = self.y_train_ if same_graph else np.zeros((g.n, len(self.classes_)))
        return forward(self._kind, g, X, as_tensors(self.params_), self.model_config_, y_train=y_train)

    def predict_proba(self, X, graph=None) -> np.ndarray:
        return self._trace(X, graph).output.value.copy()

    def predict(self, X, graph=None) -> np.ndarray:
        check_is_fitted(self, "params_")
        return self.classes_[np.argmax(self.predict_proba(X, graph), axis=1)]

    def transform(self, X, graph=None) -> np.ndarray:
        """Final-layer node representations ``h^L``."""
        return self._trace(X, graph).representations().copy()

    def score(self, X, y, graph=None, sample_weight=None) -> float:
        """Micro-F1 over nodes with ``y >= 0``."""
        y = np.asarray(y)
        return micro_f1(self.predict(X, graph), y, y >= 0)


class _FitData:
    def __init__(self, graph, features, labels, train_mask, val_mask):
        self.graph = graph
        self.features = features
        self.labels = labels
        self.train_mask = train_mask
        self.val_mask = val_mask
        self.test_mask = np.zeros_like(train_mask)


class GATClassifier(_GraphNodeClassifier):
    """Graph attention network node classifier.

    Parameters
    ----------
    n_layers : int
        Number of attention layers ``L``.
    hidden_dim : int
        Width of each attention head.
    heads : int
        Heads per layer; concatenated on hidden layers, averaged on the last.
    attention : {"dot_product", "scaled_dot_product", "additive"}
        Score function applied to transformed representations.
    activation : {"elu", "tanh", "identity"}
    epochs, lr, weight_decay, patience : training controls.
    random_state : int
        Seed for initialization.
    """

    _kind = "gat"

    def __init__(self, n_layers=2, hidden_dim=16, heads=1, attention="dot_product", activation="elu",
                 epochs=200, lr=5e-3, weight_decay=5e-4, patience=100, random_state=0):
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.heads = heads
        self.attention = attention
        self.activation = activation
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.random_state = random_state


class GCNClassifier(_GraphNodeClassifier):
    """GAT with uniform ``1/|N_v|`` attention, i.e. a mean-aggregation GCN."""

    _kind = "gcn"

    def __init__(self, n_layers=2, hidden_dim=16, activation="elu",
                 epochs=200, lr=5e-3, weight_decay=5e-4, patience=100, random_state=0):
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.activation = activation
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.random_state = random_state


class DeepGATClassifier(_GraphNodeClassifier):
    """GAT whose attention follows per-layer class predictions.

    Every layer predicts class probabilities from its input representation and
    propagated training labels; attention scores are computed between those
    predictions, and the per-layer predictions are supervised with weights
    ``delta / (l + delta) + 1``.

    Parameters
    ----------
    delta : float
        Positive layer-weight hyperparameter of the loss.
    use_label_propagation : bool
        Append ``rm_diag(A_hat**(l-1)) Y`` to the prediction input.
    label_propagation_max_layer : int
        Last layer receiving propagated labels (zeros afterwards).
    stop_gradient_on_attention : bool
        Treat attention coefficients as constants in backpropagation.
    """

    _kind = "deepgat"

    def __init__(self, n_layers=2, hidden_dim=16, heads=1, attention="dot_product", activation="elu",
                 delta=1.0, use_label_propagation=True, label_propagation_max_layer=3,
                 stop_gradient_on_attention=False, epochs=200, lr=5e-3, weight_decay=5e-4,
                 patience=100, random_state=0):
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.heads = heads
        self.attention = attention
        self.activation = activation
        self.delta = delta
        self.use_label_propagation = use_label_propagation
        self.label_propagation_max_layer = label_propagation_max_layer
        self.stop_gradient_on_attention = stop_gradient_on_attention
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.random_state = random_state

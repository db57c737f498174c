"""Graph attention networks with layer-wise supervised attention.

Provides graph construction and exact path counting, a small reverse-mode
autodiff engine, GAT / GCN / DeepGAT models, training, diagnostics for
over-smoothing and attention quality, and a command line interface.
"""

from .analysis import (
    bayes_bounds,
    kl_attention,
    kl_boxstats,
    micro_f1,
    nn_error_rate,
    oracle_error_curve,
    oversmoothing_curve,
    verify_lemma1,
    verify_lemma2,
)
from .datasets import DatasetBundle, SynthConfig, generate_synthetic, load_dataset, save_dataset
from .estimators import DeepGATClassifier, GATClassifier, GCNClassifier
from .graph import Graph, build_graph, brute_force_paths, count_paths, graph_statistics, variance_ratio
from .models import ModelConfig, forward
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle",
    "DeepGATClassifier",
    "GATClassifier",
    "GCNClassifier",
    "Graph",
    "ModelConfig",
    "SynthConfig",
    "TrainConfig",
    "bayes_bounds",
    "brute_force_paths",
    "build_graph",
    "count_paths",
    "forward",
    "generate_synthetic",
    "graph_statistics",
    "kl_attention",
    "kl_boxstats",
    "load_dataset",
    "micro_f1",
    "nn_error_rate",
    "oracle_error_curve",
    "oversmoothing_curve",
    "save_dataset",
    "train",
    "variance_ratio",
    "verify_lemma1",
    "verify_lemma2",
]

"""Acceptance suite: one group of tests per criterion, tolerances pinned below.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints a
PASS/FAIL line per criterion.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from deepgat.analysis import (
    bayes_bounds,
    class_ratio_gap,
    kl_attention,
    kl_boxstats,
    oracle_error_curve,
    oversmoothing_curve,
    random_orthogonal,
    verify_lemma1,
    verify_lemma2,
)
from deepgat.autodiff import grad_check
from deepgat.datasets import SynthConfig, convert_linqs, generate_synthetic, load_dataset
from deepgat.exceptions import ContractError
from deepgat.graph import brute_force_paths, build_graph, circulant, count_paths, erdos_renyi, graph_statistics
from deepgat.models import ModelConfig, as_tensors, forward, init_params, one_hot, propagated_labels
from deepgat.training import TrainConfig, deepgat_loss, gat_loss

# pinned tolerances and budgets
PATH_GRAPHS, PATH_MAX_N, PATH_MAX_LEN, PATH_BUDGET_S = 200, 7, 4, 60.0
GRAD_TOL, GRAD_NODES, GRAD_BUDGET_S = 1e-4, 12, 60.0
L2_GRAPHS, L2_MAX_N, L2_LAYERS, L2_SAMPLES = 20, 30, 3, 20_000
L2_PASS_FRACTION, L2_SCALE_TOL, L2_BUDGET_S = 0.95, 0.05, 600.0
L1_SAMPLES, L1_LIMIT_LAYERS, L1_LIMIT_TOL, L1_BUDGET_S = 20_000, 8, 0.02, 300.0
BENCH_SEEDS = (0, 1, 2)
BENCH_LAYERS = (1, 2, 3, 5, 10)
BENCH_HUB_RATE = 0.10
GAT_MIN_DEGRADATION, DEEPGAT_MAX_DEGRADATION, BENCH_BUDGET_S = 0.15, 0.05, 1800.0
ORACLE_LAYERS = (1, 6)
KL_LAYER, KL_LMAX, KL_RANDOM_VECTORS = 2, 10, 1000
CORA_N, CORA_D, CORA_C, CORA_HUB_RATE, CORA_HUB_TOL = 2708, 1433, 7, 0.0218, 0.001

# synthetic benchmark shared by the depth, oracle and divergence criteria
BENCH_DATA = dict(n=1000, n_classes=2, p_in=0.03, p_out=0.025, d=16, separation=3.0, train_fraction=0.1, val_fraction=0.1)
BENCH_TRAIN = dict(epochs=400, lr=5e-3, weight_decay=5e-4, patience=100)


def bench_dataset(seed):
    return generate_synthetic(SynthConfig(seed=seed, **BENCH_DATA))


def _balanced_labels(rng, n):
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    return labels


def _lemma_inputs(rng, dim, layers):
    means = rng.standard_normal((2, dim))
    covs = []
    for _ in range(2):
        a = rng.standard_normal((dim, dim))
        covs.append(np.eye(dim) + 0.3 * a @ a.T / dim)
    weights = [random_orthogonal(dim, rng) for _ in range(layers)]
    return means, np.stack(covs), weights


# ---------------------------------------------------------------------------
# 1


@pytest.mark.criterion(1, "path counts equal brute-force enumeration")
def test_path_count_oracle(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    checked = 0
    for _ in range(PATH_GRAPHS):
        n = int(rng.integers(1, PATH_MAX_N + 1))
        p = rng.uniform(0.1, 0.9)
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        g = build_graph(edges, n)
        labels = rng.integers(0, 3, n)
        for v in range(n):
            for length in range(PATH_MAX_LEN + 1):
                for flt in (None, (labels, int(labels[v]))):
                    fast = count_paths(g, v, length, class_filter=flt)
                    slow = brute_force_paths(g, v, length, class_filter=flt)
                    assert list(fast.counts) == list(slow.counts), (n, v, length, flt)
                    checked += 1
                # a filter on another class than the origin's is refused by both
                other = (labels, int(labels[v] + 1) % 3)
                with pytest.raises(ContractError):
                    count_paths(g, v, length, class_filter=other)
                with pytest.raises(ContractError):
                    brute_force_paths(g, v, length, class_filter=other)
    elapsed = time.perf_counter() - start
    record_property("comparisons", checked)
    record_property("seconds", round(elapsed, 1))
    assert elapsed < PATH_BUDGET_S


# ---------------------------------------------------------------------------
# 2


@pytest.mark.criterion(2, "end-to-end gradients match finite differences")
def test_gradient_soundness(record_property):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    g = erdos_renyi(GRAD_NODES, 0.35, rng)
    labels = _balanced_labels(rng, GRAD_NODES)
    mask = np.zeros(GRAD_NODES, dtype=bool)
    mask[rng.permutation(GRAD_NODES)[:8]] = True
    targets = np.eye(2)[labels]
    x = rng.standard_normal((GRAD_NODES, 5))

    cfg = ModelConfig(n_layers=3, hidden_dim=4, heads=2, attention="dot_product", use_label_propagation=True)
    y = one_hot(labels, 2, mask)
    z = propagated_labels(g, y, cfg)
    params = as_tensors(init_params("deepgat", cfg, 5, rng), requires_grad=True)

    def deep():
        trace = forward("deepgat", g, x, params, cfg, y_train=y, train_mask=mask, label_features=z)
        return deepgat_loss(trace, targets, mask, 1.0)

    gat_cfg = ModelConfig(n_layers=2, hidden_dim=4, heads=2, attention="additive")
    gat_params = as_tensors(init_params("gat", gat_cfg, 5, rng), requires_grad=True)

    def shallow():
        return gat_loss(forward("gat", g, x, gat_params, gat_cfg), targets, mask)

    assert all(p.value.dtype == np.float64 for p in params.values())
    err_deep = grad_check(deep, params)
    err_gat = grad_check(shallow, gat_params)
    elapsed = time.perf_counter() - start
    record_property("deepgat_max_rel_error", f"{err_deep:.2e}")
    record_property("gat_max_rel_error", f"{err_gat:.2e}")
    assert err_deep < GRAD_TOL
    assert err_gat < GRAD_TOL
    assert elapsed < GRAD_BUDGET_S


# ---------------------------------------------------------------------------
# 3


@pytest.mark.slow
@pytest.mark.criterion(3, "oracle-attention Monte Carlo matches the predicted distribution")
def test_lemma2_monte_carlo(record_property):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    results = []
    for _ in range(L2_GRAPHS):
        n = int(rng.integers(8, L2_MAX_N + 1))
        g = erdos_renyi(n, float(rng.uniform(0.1, 0.4)), rng)
        labels = _balanced_labels(rng, n)
        means, covs, weights = _lemma_inputs(rng, 3, L2_LAYERS)
        for layer in range(1, L2_LAYERS + 1):
            results += verify_lemma2(g, labels, means, covs, weights, layer, L2_SAMPLES, int(rng.integers(2**31)))
    elapsed = time.perf_counter() - start
    live = [r for r in results if not r.degenerate]
    pass_rate = np.mean([r.passed for r in live])
    scale_rate = np.mean([abs(r.empirical_scale / r.predicted_scale - 1.0) <= L2_SCALE_TOL for r in live])
    by_layer = {
        layer: round(float(np.mean([r.passed for r in live if r.layer == layer])), 3) for layer in range(1, L2_LAYERS + 1)
    }
    record_property("nodes", len(live))
    record_property("pass_rate", round(float(pass_rate), 4))
    record_property("scale_match_rate", round(float(scale_rate), 4))
    record_property("pass_rate_by_layer", by_layer)
    record_property("seconds", round(elapsed, 1))
    assert elapsed < L2_BUDGET_S
    assert pass_rate >= L2_PASS_FRACTION
    assert scale_rate >= L2_PASS_FRACTION


# ---------------------------------------------------------------------------
# 4


@pytest.mark.criterion(4, "uniform-attention Monte Carlo on regular graphs and class-ratio limit")
def test_lemma1_monte_carlo(record_property):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    results = []
    for n, degree in ((12, 4), (16, 6), (20, 4)):
        g = circulant(n, degree)
        labels = _balanced_labels(rng, n)
        means, covs, weights = _lemma_inputs(rng, 3, 3)
        for layer in (1, 2, 3):
            results += verify_lemma1(g, labels, means, covs, weights, layer, L1_SAMPLES, int(rng.integers(2**31)))
    regular = nx.random_regular_graph(4, 14, seed=4)
    g = build_graph(list(regular.edges()), 14)
    labels = _balanced_labels(rng, 14)
    means, covs, weights = _lemma_inputs(rng, 3, 2)
    results += verify_lemma1(g, labels, means, covs, weights, 2, L1_SAMPLES, 11)
    mean_rate = np.mean([r.mean_ok for r in results])

    limit = nx.random_regular_graph(10, 30, seed=0)
    assert nx.is_connected(limit)
    g = build_graph(list(limit.edges()), 30)
    labels = np.array([0] * 18 + [1] * 12)
    gap = float(class_ratio_gap(g, labels, L1_LIMIT_LAYERS).max())
    elapsed = time.perf_counter() - start
    record_property("mean_ok_rate", round(float(mean_rate), 4))
    record_property("max_class_ratio_gap", f"{gap:.2e}")
    record_property("seconds", round(elapsed, 1))
    assert mean_rate == 1.0
    assert gap <= L1_LIMIT_TOL
    assert elapsed < L1_BUDGET_S


# ---------------------------------------------------------------------------
# 5 and 7 share one set of trained models


@pytest.fixture(scope="module")
def depth_sweeps():
    start = time.perf_counter()
    out = {}
    for seed in BENCH_SEEDS:
        dataset = bench_dataset(seed)
        cfg = ModelConfig(n_classes=2)
        tcfg = TrainConfig(seed=seed, **BENCH_TRAIN)
        out[seed] = {
            "dataset": dataset,
            **{kind: oversmoothing_curve(kind, dataset, BENCH_LAYERS, cfg, tcfg, keep_params=True) for kind in ("gat", "deepgat")},
        }
    out["seconds"] = time.perf_counter() - start
    return out


@pytest.mark.slow
@pytest.mark.criterion(5, "GAT degrades with depth while DeepGAT does not")
def test_oversmoothing(depth_sweeps, record_property):
    hub = [graph_statistics(depth_sweeps[s]["dataset"].graph).hub_node_rate for s in BENCH_SEEDS]
    gat = [depth_sweeps[s]["gat"].degradation for s in BENCH_SEEDS]
    deep = [depth_sweeps[s]["deepgat"].degradation for s in BENCH_SEEDS]
    record_property("hub_rates", [round(h, 3) for h in hub])
    record_property("gat_degradation", [round(d, 3) for d in gat])
    record_property("deepgat_degradation", [round(d, 3) for d in deep])
    record_property("seconds", round(depth_sweeps["seconds"], 1))
    assert min(hub) > BENCH_HUB_RATE
    assert np.median(gat) >= GAT_MIN_DEGRADATION
    assert np.median(deep) <= DEEPGAT_MAX_DEGRADATION
    assert depth_sweeps["seconds"] < BENCH_BUDGET_S


@pytest.mark.slow
@pytest.mark.criterion(7, "shallow-vs-deep attention divergence is smaller for DeepGAT")
def test_kl_direction(depth_sweeps, record_property):
    medians = {}
    for kind in ("gat", "deepgat"):
        per_seed = []
        for seed in BENCH_SEEDS:
            run = depth_sweeps[seed]
            models = [(run[kind].params[L], ModelConfig(n_classes=2, n_layers=L)) for L in (KL_LAYER, KL_LMAX)]
            per_seed.append(kl_boxstats(kind, run["dataset"], models[0], models[1], layer=KL_LAYER).median)
        medians[kind] = float(np.median(per_seed))
        record_property(f"{kind}_median_kl", [round(v, 4) for v in per_seed])
    assert medians["deepgat"] <= medians["gat"]


@pytest.mark.criterion(7, "shallow-vs-deep attention divergence is smaller for DeepGAT")
def test_kl_self_is_zero():
    rng = np.random.default_rng(77)
    for _ in range(KL_RANDOM_VECTORS):
        k = int(rng.integers(1, 40))
        p = rng.random(k) * (rng.random(k) < 0.8)
        if p.sum() == 0:
            p[0] = 1.0
        p = p / p.sum()
        assert kl_attention(p, p) == 0.0


# ---------------------------------------------------------------------------
# 6


@pytest.mark.slow
@pytest.mark.criterion(6, "oracle 1-NN error does not grow with depth; Bayes bounds consistent")
def test_oracle_error_decay(record_property):
    curves = []
    for seed in BENCH_SEEDS:
        rows = oracle_error_curve(bench_dataset(seed), ORACLE_LAYERS, ModelConfig(n_classes=2), TrainConfig(seed=seed, **BENCH_TRAIN))
        curves.append([r["e_n"] for r in rows])
        for r in rows:
            assert r["bayes_lower"] <= r["bayes_upper"]
    first, last = np.median([c[0] for c in curves]), np.median([c[-1] for c in curves])
    record_property("e_n_per_seed", [[round(e, 4) for e in c] for c in curves])
    assert last <= first


@pytest.mark.criterion(6, "oracle 1-NN error does not grow with depth; Bayes bounds consistent")
@pytest.mark.parametrize("n_classes", [2, 3, 4, 7, 10, 12, 20])
def test_bayes_bounds_exact_points(n_classes):
    pi = n_classes / (n_classes - 1)
    zero = bayes_bounds(0.0, n_classes)
    assert zero.lower == 0.0 and zero.upper == 0.0
    for e in ((n_classes - 1) / n_classes, 1.0 / pi):
        top = bayes_bounds(e, n_classes)
        assert top.lower == e and top.upper == e and not top.clamped
    for e in np.linspace(0.0, 1.0 / pi, 50):
        b = bayes_bounds(float(e), n_classes)
        assert b.lower <= b.upper


# ---------------------------------------------------------------------------
# 8


def _cli(args, cwd):
    env = dict(os.environ)
    env.pop("DEEPGAT_SEED", None)
    proc = subprocess.run([sys.executable, "-m", "deepgat", *args], cwd=cwd, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


SMALL = ["--n", "100", "--dim", "4", "--epochs", "8"]


@pytest.mark.criterion(8, "repeated CLI runs give byte-identical reports")
@pytest.mark.parametrize(
    "command",
    [
        ["train", "--model", "deepgat", "--L", "3", *SMALL],
        ["eval", *SMALL[:4]],
        ["curve", "--model", "gat", "--layers", "1,3", *SMALL],
        ["verify-paths", "--trials", "20"],
        ["verify-lemma1", "--n", "10", "--degree", "4", "--layers", "2", "--samples", "2000"],
        ["verify-lemma2", "--graphs", "2", "--n", "10", "--layers", "2", "--samples", "2000"],
        ["diagnose-kl", "--model", "gat", "--L-max", "3", *SMALL],
        ["estimate-bayes", "--e-n", "0.2", "--classes", "3"],
        ["synth", "--n", "60", "--dim", "3"],
        ["stats"],
    ],
    ids=lambda c: c[0],
)
def test_cli_determinism(tmp_path, command):
    name = command[0]
    outputs = []
    for run in ("a", "b"):
        extra = []
        if name == "train":
            extra = ["--checkpoint", str(tmp_path / f"model_{run}.npz")]
        if name in ("eval", "stats"):
            setup = ["train", *SMALL, "--checkpoint", str(tmp_path / "m.npz")] if name == "eval" else ["synth", "--n", "60", "--dim", "3", "--out-dir", str(tmp_path / "d")]
            if not (tmp_path / ("m.npz" if name == "eval" else "d")).exists():
                _cli([*setup, "--seed", "3", "--deterministic", "--out", str(tmp_path / "setup.json")], tmp_path)
            extra = ["--checkpoint", str(tmp_path / "m.npz")] if name == "eval" else ["--data", str(tmp_path / "d")]
        if name == "synth":
            extra = ["--out-dir", str(tmp_path / f"synth_{run}")]
        report = tmp_path / f"{run}.json"
        _cli([*command, *extra, "--seed", "3", "--deterministic", "--out", str(report)], tmp_path)
        outputs.append(report.read_bytes())
    if name in ("train", "synth"):
        # paths legitimately differ between the two runs
        outputs = [o.replace(b"model_a", b"model_b").replace(b"synth_a", b"synth_b") for o in outputs]
    assert outputs[0] == outputs[1]
    if name == "train":
        assert (tmp_path / "model_a.npz").read_bytes() == (tmp_path / "model_b.npz").read_bytes()


# ---------------------------------------------------------------------------
# 9


def _cora_dir(tmp_path_factory):
    candidates = [os.environ.get("DEEPGAT_CORA_DIR"), str(Path(__file__).resolve().parents[1] / "data" / "cora")]
    for candidate in filter(None, candidates):
        path = Path(candidate)
        if (path / "nodes.tsv").is_file():
            return path
        if (path / "cora.content").is_file() and (path / "cora.cites").is_file():
            out = tmp_path_factory.mktemp("cora")
            convert_linqs(path / "cora.content", path / "cora.cites", out)
            return out
    return None


@pytest.mark.criterion(9, "Cora statistics: n, d, |C| exact and hub node rate")
def test_cora_statistics(tmp_path_factory, record_property):
    directory = _cora_dir(tmp_path_factory)
    if directory is None:
        pytest.fail("Cora data not found: set DEEPGAT_CORA_DIR or place it under data/cora")
    dataset = load_dataset(directory)
    stats = graph_statistics(dataset.graph, hub_threshold=30, degree_convention="doubled")
    record_property("n", stats.n_nodes)
    record_property("hub_node_rate", round(stats.hub_node_rate, 5))
    assert stats.n_nodes == CORA_N
    assert dataset.features.shape[1] == CORA_D
    assert dataset.n_classes == CORA_C
    assert abs(stats.hub_node_rate - CORA_HUB_RATE) <= CORA_HUB_TOL

"""Diagnostics: micro-F1, attention KL divergence, nearest-neighbor error,
Bayes-error bounds, Monte Carlo checks of the representation distributions
and over-smoothing curves.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from . import autodiff as ad
from .attention import hard_oracle_attention, uniform_attention
from .autodiff import Tensor
from .exceptions import ContractError, DomainError, InputError, NotFittedError
from .graph import Graph, count_paths, variance_ratio
from .models import ModelConfig
from .training import TrainConfig, predict_trace, train

MIN_SAMPLES_FOR_VERDICT = 1000


def micro_f1(pred, true, mask=None) -> float:
    """Micro-averaged F1 over the masked nodes.

    Pooling true/false positives over classes in single-label classification
    gives ``TP = correct`` and ``FP = FN = wrong``, so the score equals accuracy.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    mask = np.ones(true.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    m = int(mask.sum())
    if m == 0:
        raise DomainError("micro-F1 over an empty mask")
    tp = int(np.count_nonzero(pred[mask] == true[mask]))
    fp = fn = m - tp
    return 2.0 * tp / (2.0 * tp + fp + fn)


# ---------------------------------------------------------------------------
# attention divergence


def kl_attention(alpha_a, alpha_b, g: Optional[Graph] = None, v: Optional[int] = None) -> float:
    """``sum_{u: alpha_b(u) != 0} alpha_a(u) log(alpha_a(u) / alpha_b(u))``.

    Inputs are the two attention vectors over ``N_v``; when ``g`` and ``v`` are
    given they are per-CSR-entry arrays and the row of ``v`` is extracted.
    Terms with ``alpha_a(u) = 0`` contribute nothing.
    """
    a = np.asarray(alpha_a, dtype=np.float64).ravel()
    b = np.asarray(alpha_b, dtype=np.float64).ravel()
    if g is not None and v is not None:
        lo, hi = g.csr_offsets[v], g.csr_offsets[v + 1]
        a, b = a[lo:hi], b[lo:hi]
    if a.shape != b.shape:
        raise ContractError(f"attention vectors differ in length: {a.size} vs {b.size}")
    keep = (b != 0) & (a != 0)
    return float(np.sum(a[keep] * np.log(a[keep] / b[keep])))


def kl_per_node(alpha_a: np.ndarray, alpha_b: np.ndarray, g: Graph) -> np.ndarray:
    """:func:`kl_attention` for every node at once, from per-entry arrays."""
    a = np.asarray(alpha_a, dtype=np.float64).ravel()
    b = np.asarray(alpha_b, dtype=np.float64).ravel()
    keep = (b != 0) & (a != 0)
    terms = np.zeros_like(a)
    terms[keep] = a[keep] * np.log(a[keep] / b[keep])
    return np.add.reduceat(terms, g.csr_offsets[:-1])


@dataclass
class KLStats:
    values: np.ndarray
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    pair: tuple = ("A", "B")
    layer: int = 2

    @classmethod
    def from_values(cls, values, pair=("A", "B"), layer=2) -> "KLStats":
        values = np.asarray(values, dtype=np.float64)
        q = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
        return cls(values, *map(float, q), pair=tuple(pair), layer=int(layer))

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "layer": self.layer,
            "min": self.minimum,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "max": self.maximum,
            "n_nodes": int(self.values.size),
        }


def kl_boxstats(
    kind: str,
    dataset,
    model_a,
    model_b,
    layer: int = 2,
    pair=("L_small", "L_max"),
) -> KLStats:
    """Per-node divergence between layer-``layer`` attention of two trained models.

    ``model_a`` and ``model_b`` are ``(params, ModelConfig)`` pairs of the same
    kind, e.g. a 2-layer and an ``L_max``-layer model; both coefficients are
    taken at ``layer`` (head-averaged for multi-head GAT).
    """
    traces = []
    for model in (model_a, model_b):
        if model is None or model[0] is None:
            raise NotFittedError("kl_boxstats needs two trained models")
        params, config = model
        if config.n_layers < layer:
            raise ContractError(f"model has {config.n_layers} layers, cannot read layer {layer}")
        traces.append(predict_trace(kind, dataset, params, config))
    values = kl_per_node(traces[0].alpha(layer), traces[1].alpha(layer), dataset.graph)
    return KLStats.from_values(values, pair=pair, layer=layer)


# ---------------------------------------------------------------------------
# nearest-neighbor error and Bayes bounds


def nn_error_rate(h, labels, prototype_mask, eval_mask, chunk: int = 2048) -> float:
    """1-nearest-neighbor error of the eval nodes against labeled prototypes.

    Euclidean distance; ties go to the prototype with the smaller node id and
    a node is never its own neighbor.
    """
    h = np.asarray(h, dtype=np.float64)
    labels = np.asarray(labels)
    proto = np.flatnonzero(np.asarray(prototype_mask, dtype=bool))
    evals = np.flatnonzero(np.asarray(eval_mask, dtype=bool))
    if evals.size == 0:
        raise DomainError("nearest-neighbor error over an empty eval mask")
    missing = set(np.unique(labels[evals]).tolist()) - set(np.unique(labels[proto]).tolist())
    if missing:
        raise InputError(f"classes {sorted(missing)} have no prototype")
    wrong = 0
    for start in range(0, evals.size, chunk):
        batch = evals[start : start + chunk]
        dist = cdist(h[batch], h[proto], metric="sqeuclidean")
        dist[batch[:, None] == proto[None, :]] = np.inf
        nearest = proto[np.argmin(dist, axis=1)]
        wrong += int(np.count_nonzero(labels[nearest] != labels[batch]))
    return wrong / evals.size


@dataclass(frozen=True)
class BayesBound:
    e_n: float
    lower: float
    upper: float
    pi: float
    clamped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def bayes_bounds(e_n: float, n_classes: int) -> BayesBound:
    """Bounds ``(1 - sqrt(1 - pi e_N)) / pi <= e_B <= e_N`` with ``pi = |C| / (|C| - 1)``.

    For ``e_N > 1/pi`` the radicand is clamped at zero and ``clamped`` is set.
    """
    if not 0.0 <= e_n <= 1.0:
        raise DomainError(f"e_N must lie in [0, 1], got {e_n}")
    if n_classes < 2:
        raise DomainError(f"need at least two classes, got {n_classes}")
    pi = n_classes / (n_classes - 1)
    limit = (n_classes - 1) / n_classes
    # inputs within rounding of 1/pi sit exactly on the boundary
    radicand = 0.0 if abs(e_n - limit) <= 4 * np.spacing(limit) else 1.0 - pi * e_n
    clamped = radicand < 0
    if clamped:
        warnings.warn(f"e_N={e_n} exceeds 1/pi={limit:.4f}; lower bound radicand clamped at 0", RuntimeWarning)
    # rationalized (1 - sqrt(r)) / pi, free of cancellation near r = 0
    lower = limit if clamped else e_n / (1.0 + np.sqrt(radicand))
    return BayesBound(e_n=float(e_n), lower=float(min(lower, e_n)), upper=float(e_n), pi=pi, clamped=bool(clamped))


# ---------------------------------------------------------------------------
# Monte Carlo checks of the representation distributions


@dataclass
class LemmaCheckResult:
    node: int
    layer: int
    predicted_mean: np.ndarray
    empirical_mean: np.ndarray
    predicted_cov: np.ndarray
    empirical_cov: np.ndarray
    predicted_scale: float
    empirical_scale: float
    samples: int
    mean_ok: bool
    cov_rel_error: float
    cov_ok: bool
    passed: bool
    propagation_scale: float = float("nan")
    degenerate: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("predicted_mean", "empirical_mean", "predicted_cov", "empirical_cov"):
            out[key] = np.asarray(out[key]).tolist()
        return out


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-10 * max(1.0, abs(vals).max()):
        raise DomainError("covariance matrix is not positive semi-definite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _weight_product(weights: Sequence[np.ndarray], d: int) -> np.ndarray:
    prod = np.eye(d)
    for w in weights:
        prod = prod @ np.asarray(w, dtype=np.float64)
    return prod


def propagate_samples(
    g: Graph, alpha: np.ndarray, x: np.ndarray, weights: Sequence[np.ndarray], layers: int
) -> np.ndarray:
    """Apply ``layers`` linear convolutions to a batch of feature draws.

    ``x`` has shape (n, B, d). Each layer aggregates with the fixed per-entry
    coefficients ``alpha`` and multiplies by the next weight matrix, with
    identity activation. Aggregation is linear per column, so all B draws go
    through the kernel at once.
    """
    n, batch, _ = x.shape
    alpha_t = Tensor(np.asarray(alpha, dtype=np.float64).reshape(-1, 1))
    h = x
    for l in range(layers):
        agg = ad.neighborhood_aggregate(alpha_t, Tensor(h.reshape(n, -1)), g.csr_offsets, g.csr_targets).value
        w = np.asarray(weights[l], dtype=np.float64)
        h = (agg.reshape(n * batch, -1) @ w).reshape(n, batch, w.shape[1])
    return h


def _empirical_moments(g, alpha, labels, means, covs, weights, layers, samples, rng, batch):
    n = g.n
    d = means.shape[1]
    roots = [_sqrt_psd(c) for c in covs]
    d_out = _weight_product(weights[:layers], d).shape[1]
    total = np.zeros((n, d_out))
    outer = np.zeros((n, d_out, d_out))
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        noise = rng.standard_normal((n, b, d))
        x = np.empty((n, b, d))
        for c in range(means.shape[0]):
            rows = labels == c
            x[rows] = means[c] + noise[rows] @ roots[c].T
        h = propagate_samples(g, alpha, x, weights, layers)
        total += h.sum(axis=1)
        outer += np.einsum("nbi,nbj->nij", h, h)
        done += b
    mean = total / samples
    cov = (outer - samples * np.einsum("ni,nj->nij", mean, mean)) / (samples - 1)
    return mean, cov


def _verdict(node, layer, pred_mean, emp_mean, pred_cov, emp_cov, pred_scale, base, samples, exact_scale, note=""):
    std = np.sqrt(np.clip(np.diag(pred_cov), 0.0, None))
    mean_ok = bool(np.all(np.abs(emp_mean - pred_mean) <= 4.0 * std / np.sqrt(samples) + 1e-12))
    denom = np.linalg.norm(pred_cov)
    cov_err = float(np.linalg.norm(emp_cov - pred_cov) / denom) if denom > 0 else float(np.linalg.norm(emp_cov))
    cov_ok = cov_err < 0.05
    base_norm = float(np.sum(base * base))
    emp_scale = float(np.sum(emp_cov * base) / base_norm) if base_norm > 0 else float("nan")
    passed = mean_ok and cov_ok and samples >= MIN_SAMPLES_FOR_VERDICT
    return LemmaCheckResult(
        node=int(node),
        layer=int(layer),
        predicted_mean=pred_mean,
        empirical_mean=emp_mean,
        predicted_cov=pred_cov,
        empirical_cov=emp_cov,
        predicted_scale=float(pred_scale),
        empirical_scale=emp_scale,
        samples=int(samples),
        mean_ok=mean_ok,
        cov_rel_error=cov_err,
        cov_ok=cov_ok,
        passed=passed,
        propagation_scale=float(exact_scale),
        note=note,
    )


def _as_class_arrays(means, covs):
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    covs = np.asarray(covs, dtype=np.float64)
    if covs.ndim == 2:
        covs = np.broadcast_to(covs, (means.shape[0],) + covs.shape)
    if covs.shape != (means.shape[0], means.shape[1], means.shape[1]):
        raise ContractError(f"covariances {covs.shape} do not match means {means.shape}")
    return means, covs


def _propagation_scales(g: Graph, alpha: np.ndarray, layers: int) -> np.ndarray:
    """``sum_u (P^l)_{vu}^2`` for the row-stochastic propagation matrix ``P``."""

    p = sp.csr_matrix((np.asarray(alpha).ravel(), g.csr_targets, g.csr_offsets), shape=(g.n, g.n))
    power = sp.identity(g.n, format="csr")
    for _ in range(layers):
        power = power @ p
    return np.asarray(power.multiply(power).sum(axis=1)).ravel()


def verify_lemma2(
    g: Graph,
    labels,
    means,
    covs,
    weights: Sequence[np.ndarray],
    layers: int,
    samples: int = 20_000,
    seed: int = 0,
    nodes: Optional[Sequence[int]] = None,
    batch: int = 4096,
) -> List[LemmaCheckResult]:
    """Monte Carlo check of oracle-attention representations.

    With identity activations and hard-oracle attention the representation of
    a class-``c`` node is predicted to follow
    ``N(mu_c W, r * W^T Sigma_c W)`` where ``W = W^1 ... W^l`` and
    ``r = ||pi||_2^2 / ||pi||_1^2`` for the same-class path counts ``pi``.
    ``propagation_scale`` records the scale actually implied by the
    propagation matrix, ``sum_u (P^l)_{vu}^2``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    means, covs = _as_class_arrays(means, covs)
    alpha = hard_oracle_attention(g, labels).value[:, 0]
    rng = np.random.default_rng(seed)
    emp_mean, emp_cov = _empirical_moments(g, alpha, labels, means, covs, weights, layers, samples, rng, batch)
    w = _weight_product(weights[:layers], means.shape[1])
    exact = _propagation_scales(g, alpha, layers)
    results = []
    for v in range(g.n) if nodes is None else nodes:
        c = int(labels[v])
        paths = count_paths(g, v, layers, class_filter=(labels, c))
        if paths.total == 0:
            results.append(
                LemmaCheckResult(v, layers, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, samples, False, np.nan, False, False, degenerate=True, note="no same-class path")
            )
            continue
        ratio = variance_ratio(paths)
        base = w.T @ covs[c] @ w
        results.append(
            _verdict(v, layers, means[c] @ w, emp_mean[v], ratio * base, emp_cov[v], ratio, base, samples, exact[v])
        )
    return results


def is_regular(g: Graph) -> bool:
    return g.n == 0 or bool(np.all(g.degrees == g.degrees[0]))


def path_class_fractions(g: Graph, labels, v: int, layers: int, n_classes: Optional[int] = None):
    """``(|P_{v,c}^l| / |P_v^l|, ||pi_{v,c}^l||_2^2 / |P_v^l|^2)`` per class ``c``.

    Ratios are formed from exact integer counts.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    counts = count_paths(g, v, layers).counts
    values = [int(c) for c in counts]
    total = sum(values)
    frac, sq = [], []
    for c in range(n_classes):
        members = [values[u] for u in range(g.n) if labels[u] == c]
        frac.append(sum(members) / total)
        sq.append(sum(m * m for m in members) / (total * total))
    return np.array(frac), np.array(sq)


def class_ratio_gap(g: Graph, labels, layers: int) -> np.ndarray:
    """Relative gap between ``|P_{v,0}^l| / |P_{v,1}^l|`` and ``|V_0| / |V_1|`` per node."""
    labels = np.asarray(labels, dtype=np.int64)
    target = np.count_nonzero(labels == 0) / np.count_nonzero(labels == 1)
    gaps = np.empty(g.n)
    for v in range(g.n):
        frac, _ = path_class_fractions(g, labels, v, layers, 2)
        gaps[v] = abs(frac[0] / frac[1] - target) / target
    return gaps


def verify_lemma1(
    g: Graph,
    labels,
    means,
    covs,
    weights: Sequence[np.ndarray],
    layers: int,
    samples: int = 20_000,
    seed: int = 0,
    strict: bool = True,
    nodes: Optional[Sequence[int]] = None,
    batch: int = 4096,
) -> List[LemmaCheckResult]:
    """Monte Carlo check of uniform-attention (GCN) representations.

    The prediction is the path-count mixture
    ``N(sum_c f_c mu_c W, sum_c s_c W^T Sigma_c W)`` with
    ``f_c = |P_{v,c}^l| / |P_v^l|`` and ``s_c = ||pi_{v,c}^l||_2^2 / |P_v^l|^2``.
    Uniform ``1/|N_v|`` weights reproduce path-count proportions only on
    degree-regular graphs; ``strict`` refuses anything else.
    """
    labels = np.asarray(labels, dtype=np.int64)
    means, covs = _as_class_arrays(means, covs)
    regular = is_regular(g)
    if strict and not regular:
        raise ContractError(
            "uniform attention matches path-count weights only on degree-regular graphs; "
            "pass strict=False to run anyway"
        )
    note = "" if regular else "non-regular graph: prediction is approximate"
    alpha = uniform_attention(g).value[:, 0]
    rng = np.random.default_rng(seed)
    emp_mean, emp_cov = _empirical_moments(g, alpha, labels, means, covs, weights, layers, samples, rng, batch)
    w = _weight_product(weights[:layers], means.shape[1])
    bases = [w.T @ c @ w for c in covs]
    exact = _propagation_scales(g, alpha, layers)
    results = []
    for v in range(g.n) if nodes is None else nodes:
        frac, sq = path_class_fractions(g, labels, v, layers, means.shape[0])
        pred_mean = sum(frac[c] * means[c] for c in range(means.shape[0])) @ w
        pred_cov = sum(sq[c] * bases[c] for c in range(means.shape[0]))
        scale = float(sq.sum())
        base = pred_cov / scale if scale > 0 else bases[0]
        results.append(_verdict(v, layers, pred_mean, emp_mean[v], pred_cov, emp_cov[v], scale, base, samples, exact[v], note))
    return results


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


# ---------------------------------------------------------------------------
# depth sweeps


@dataclass
class CurveResult:
    kind: str
    rows: List[dict]
    degradation: float
    best_layers: int
    params: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rows": self.rows, "degradation": self.degradation, "best_layers": self.best_layers}


def _curve_row(kind, dataset, model_config, train_config, L):
    params, report = train(kind, dataset, replace(model_config, n_layers=L), train_config)
    row = {
        "n_layers": L,
        "test_micro_f1": report.test_micro_f1,
        "best_val_micro_f1": report.best_val_micro_f1,
        "best_epoch": report.best_epoch,
    }
    return row, params


def oversmoothing_curve(
    kind: str,
    dataset,
    layer_counts: Sequence[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
    jobs: int = 1,
    keep_params: bool = False,
) -> CurveResult:
    """Train one model per depth and report test micro-F1.

    Degradation is the best score over depths minus the score at the deepest.
    With ``jobs > 1`` depths train in separate processes; every run is seeded
    identically, so the result does not depend on ``jobs``. ``keep_params``
    stores the trained parameters per depth in ``CurveResult.params``.
    """
    layer_counts = list(layer_counts)
    if not layer_counts or layer_counts != sorted(layer_counts):
        raise ContractError("layer counts must be non-empty and sorted ascending")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_curve_row, kind, dataset, model_config, train_config, L) for L in layer_counts]
            results = [f.result() for f in futures]
    else:
        results = [_curve_row(kind, dataset, model_config, train_config, L) for L in layer_counts]
    rows = [r for r, _ in results]
    scores = [r["test_micro_f1"] for r in rows]
    best = int(np.argmax(scores))
    return CurveResult(
        kind=kind,
        rows=rows,
        degradation=float(scores[best] - scores[-1]),
        best_layers=layer_counts[best],
        params={L: p for L, (_, p) in zip(layer_counts, results)} if keep_params else {},
    )


def representation_error(kind: str, dataset, params, model_config: ModelConfig) -> float:
    """1-NN error of test nodes against training prototypes on final representations."""
    trace = predict_trace(kind, dataset, params, model_config)
    return nn_error_rate(trace.representations(), dataset.labels, dataset.train_mask, dataset.test_mask)


def oracle_error_curve(
    dataset,
    layer_counts: Sequence[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> List[dict]:
    """``e_N`` and Bayes bounds of DeepGAT whose attention is the hard oracle, per depth."""
    rows = []
    oracle_config = replace(model_config, attention="oracle", hard_oracle=True)
    n_classes = model_config.n_classes
    for L in layer_counts:
        cfg = replace(oracle_config, n_layers=L)
        params, _ = train("deepgat", dataset, cfg, train_config)
        e_n = representation_error("deepgat", dataset, params, cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            bound = bayes_bounds(e_n, n_classes)
        rows.append({"n_layers": L, "e_n": e_n, "bayes_lower": bound.lower, "bayes_upper": bound.upper, "clamped": bound.clamped})
    return rows

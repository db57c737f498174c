"""Dataset bundles: TSV ingestion, persistence and planted-partition synthesis.

A dataset directory holds four tab-separated files::

    edges.tsv     <src> <dst>                  one undirected edge per line
    features.tsv  <node> <x_1> ... <x_d>       one row per node
    labels.tsv    <node> <class>
    masks.tsv     <node> {train|val|test}      missing nodes default to test

Floats are written with ``repr`` so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import ConfigError, InputError
from .graph import Graph, build_graph

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(eq=False)
class DatasetBundle:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    name: str = "dataset"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def validate(self):
        n = self.graph.n
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise InputError(f"features shape {self.features.shape} does not cover {n} nodes")
        if self.labels.shape != (n,):
            raise InputError(f"labels shape {self.labels.shape}, expected ({n},)")
        masks = [np.asarray(m, dtype=bool) for m in (self.train_mask, self.val_mask, self.test_mask)]
        if any(m.shape != (n,) for m in masks):
            raise InputError("masks must have one entry per node")
        overlap = (masks[0] & masks[1]) | (masks[0] & masks[2]) | (masks[1] & masks[2])
        if overlap.any():
            raise InputError(f"node {int(np.flatnonzero(overlap)[0])} appears in more than one split")
        self.train_mask, self.val_mask, self.test_mask = masks
        if n and self.train_mask.any():
            absent = set(range(self.n_classes)) - set(np.unique(self.labels[self.train_mask]).tolist())
            if absent:
                raise InputError(f"classes {sorted(absent)} have no training node")

    def split_of(self) -> np.ndarray:
        out = np.full(self.graph.n, "test", dtype=object)
        out[self.train_mask] = "train"
        out[self.val_mask] = "val"
        return out


def _parse_rows(path: Path, min_cols: int, exact_cols: Optional[int] = None) -> List[Tuple[int, List[str]]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t") if "\t" in stripped else stripped.split()
            if len(parts) < min_cols or (exact_cols is not None and len(parts) != exact_cols):
                raise InputError(f"{path.name}:{lineno}: expected {exact_cols or min_cols} columns, got {len(parts)}")
            rows.append((lineno, parts))
    return rows


def _int(path: Path, lineno: int, token: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise InputError(f"{path.name}:{lineno}: not an integer: {token!r}") from None


def load_dataset(directory) -> DatasetBundle:
    """Read and validate a TSV dataset directory."""
    root = Path(directory)
    for fname in ("edges.tsv", "features.tsv", "labels.tsv"):
        if not (root / fname).is_file():
            raise InputError(f"missing {fname} in {root}")
    fpath = root / "features.tsv"
    feature_rows = _parse_rows(fpath, 2)
    n = len(feature_rows)
    d = len(feature_rows[0][1]) - 1 if feature_rows else 0
    features = np.zeros((n, d))
    seen = np.zeros(n, dtype=bool)
    for lineno, parts in feature_rows:
        if len(parts) - 1 != d:
            raise InputError(f"{fpath.name}:{lineno}: expected {d} features, got {len(parts) - 1}")
        v = _int(fpath, lineno, parts[0])
        if not 0 <= v < n:
            raise InputError(f"{fpath.name}:{lineno}: unknown node id {v}")
        try:
            features[v] = [float(t) for t in parts[1:]]
        except ValueError:
            raise InputError(f"{fpath.name}:{lineno}: malformed feature value") from None
        seen[v] = True
    if not seen.all():
        raise InputError(f"{fpath.name}: no features for node {int(np.flatnonzero(~seen)[0])}")

    epath = root / "edges.tsv"
    edges = []
    for lineno, parts in _parse_rows(epath, 2, 2):
        a, b = _int(epath, lineno, parts[0]), _int(epath, lineno, parts[1])
        for v in (a, b):
            if not 0 <= v < n:
                raise InputError(f"{epath.name}:{lineno}: unknown node id {v}")
        edges.append((a, b))
    graph = build_graph(np.array(edges, dtype=np.int64).reshape(-1, 2), n)

    lpath = root / "labels.tsv"
    labels = np.full(n, -1, dtype=np.int64)
    for lineno, parts in _parse_rows(lpath, 2, 2):
        v = _int(lpath, lineno, parts[0])
        if not 0 <= v < n:
            raise InputError(f"{lpath.name}:{lineno}: unknown node id {v}")
        labels[v] = _int(lpath, lineno, parts[1])
    if np.any(labels < 0):
        raise InputError(f"{lpath.name}: no label for node {int(np.flatnonzero(labels < 0)[0])}")
    classes = np.unique(labels)
    if not np.array_equal(classes, np.arange(classes.size)):
        logger.warning("class ids %s are not contiguous; remapping to 0..%d", classes.tolist(), classes.size - 1)
        labels = np.searchsorted(classes, labels)

    split = np.full(n, "test", dtype=object)
    mpath = root / "masks.tsv"
    if mpath.is_file():
        for lineno, parts in _parse_rows(mpath, 2, 2):
            v = _int(mpath, lineno, parts[0])
            if not 0 <= v < n:
                raise InputError(f"{mpath.name}:{lineno}: unknown node id {v}")
            if parts[1] not in SPLITS:
                raise InputError(f"{mpath.name}:{lineno}: unknown split {parts[1]!r}")
            split[v] = parts[1]
    return DatasetBundle(
        graph=graph,
        features=features,
        labels=labels,
        train_mask=split == "train",
        val_mask=split == "val",
        test_mask=split == "test",
        name=root.name,
        provenance={"source": str(root), "files": sorted(p.name for p in root.glob("*.tsv"))},
    )


def save_dataset(bundle: DatasetBundle, directory) -> Path:
    """Write ``bundle`` in the TSV layout; floats use ``repr`` for exact round trips."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "edges.tsv", "w", encoding="utf-8") as fh:
        for a, b in bundle.graph.edge_list():
            fh.write(f"{a}\t{b}\n")
    with open(root / "features.tsv", "w", encoding="utf-8") as fh:
        for v, row in enumerate(bundle.features):
            fh.write(str(v) + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
    with open(root / "labels.tsv", "w", encoding="utf-8") as fh:
        for v, c in enumerate(bundle.labels):
            fh.write(f"{v}\t{int(c)}\n")
    with open(root / "masks.tsv", "w", encoding="utf-8") as fh:
        for v, s in enumerate(bundle.split_of()):
            fh.write(f"{v}\t{s}\n")
    return root


@dataclass
class SynthConfig:
    """Planted-partition graph with class-conditional Gaussian features.

    ``means`` is (n_classes, d); ``covariance`` is a shared (d, d) matrix or a
    per-class (n_classes, d, d) stack. When ``means`` is omitted, class ``c``
    gets ``+/- separation / 2`` on the first coordinate (two classes) or
    ``separation`` times a unit vector (more classes).
    """

    n: int = 1000
    n_classes: int = 2
    p_in: float = 0.05
    p_out: float = 0.01
    d: int = 16
    separation: float = 1.0
    means: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None
    seed: int = 0
    train_fraction: float = 0.1
    val_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ConfigError(f"need 0 <= p_out <= p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}")
        if self.n < 1 or self.n_classes < 1 or self.d < 1:
            raise ConfigError("n, n_classes and d must be positive")
        if self.train_fraction < 0 or self.val_fraction < 0 or self.train_fraction + self.val_fraction > 1:
            raise ConfigError("mask fractions must be non-negative and sum to at most 1")

    def class_means(self) -> np.ndarray:
        if self.means is not None:
            means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
            if means.shape != (self.n_classes, self.d):
                raise ConfigError(f"means shape {means.shape}, expected {(self.n_classes, self.d)}")
            return means
        means = np.zeros((self.n_classes, self.d))
        if self.n_classes == 2:
            means[0, 0], means[1, 0] = -self.separation / 2, self.separation / 2
        else:
            for c in range(self.n_classes):
                means[c, c % self.d] = self.separation
        return means

    def class_covariances(self) -> np.ndarray:
        if self.covariance is None:
            return np.broadcast_to(np.eye(self.d), (self.n_classes, self.d, self.d)).copy()
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.ndim == 2:
            cov = np.broadcast_to(cov, (self.n_classes,) + cov.shape).copy()
        if cov.shape != (self.n_classes, self.d, self.d):
            raise ConfigError(f"covariance shape {cov.shape} incompatible with d={self.d}")
        for c in range(self.n_classes):
            if not np.allclose(cov[c], cov[c].T):
                raise ConfigError(f"covariance of class {c} is not symmetric")
            if np.linalg.eigvalsh(cov[c]).min() < -1e-10:
                raise ConfigError(f"covariance of class {c} is not positive semi-definite")
        return cov


def _planted_partition_edges(labels: np.ndarray, p_in: float, p_out: float, rng: np.random.Generator) -> np.ndarray:
    n = labels.shape[0]
    chunks = []
    for v in range(n - 1):
        others = np.arange(v + 1, n)
        prob = np.where(labels[others] == labels[v], p_in, p_out)
        hit = others[rng.random(others.size) < prob]
        if hit.size:
            chunks.append(np.stack([np.full(hit.size, v), hit], axis=1))
    return np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)


def stratified_masks(labels: np.ndarray, train_fraction: float, val_fraction: float, rng: np.random.Generator):
    """Per-class random split; every class keeps at least one training node."""
    n = labels.shape[0]
    split = np.full(n, 2, dtype=np.int64)
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_train = max(1, int(round(train_fraction * members.size)))
        n_val = int(round(val_fraction * members.size))
        split[members[:n_train]] = 0
        split[members[n_train : n_train + n_val]] = 1
    return split == 0, split == 1, split == 2


def generate_synthetic(cfg: SynthConfig, name: str = "synthetic") -> DatasetBundle:
    """Sample a planted-partition dataset; deterministic given ``cfg.seed``."""
    means = cfg.class_means()
    covs = cfg.class_covariances()
    rng = np.random.default_rng(cfg.seed)
    labels = np.sort(rng.integers(0, cfg.n_classes, size=cfg.n)) if cfg.n_classes > 1 else np.zeros(cfg.n, dtype=np.int64)
    labels = rng.permutation(labels)
    edges = _planted_partition_edges(labels, cfg.p_in, cfg.p_out, rng)
    graph = build_graph(edges, cfg.n)
    features = np.empty((cfg.n, cfg.d))
    noise = rng.standard_normal((cfg.n, cfg.d))
    for c in range(cfg.n_classes):
        vals, vecs = np.linalg.eigh(covs[c])
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        rows = labels == c
        features[rows] = means[c] + noise[rows] @ root.T
    train_mask, val_mask, test_mask = stratified_masks(labels, cfg.train_fraction, cfg.val_fraction, rng)
    return DatasetBundle(
        graph=graph,
        features=features,
        labels=labels.astype(np.int64),
        train_mask=train_mask,
        val_mask=val_mask,
        test_mask=test_mask,
        name=name,
        provenance={
            "generator": "planted_partition",
            "seed": cfg.seed,
            "n": cfg.n,
            "n_classes": cfg.n_classes,
            "p_in": cfg.p_in,
            "p_out": cfg.p_out,
            "d": cfg.d,
            "separation": cfg.separation,
        },
    )


def convert_linqs(content_path, cites_path, out_dir, train_per_class: int = 20, n_val: int = 500, seed: int = 0) -> DatasetBundle:
    """Convert a LINQS-style citation archive (``*.content`` + ``*.cites``) to the TSV layout.

    ``*.content`` rows are ``<paper id> <binary features...> <class name>``;
    ``*.cites`` rows are ``<cited id> <citing id>``. Citations to unknown papers
    are dropped. The split takes ``train_per_class`` nodes per class for
    training and ``n_val`` random nodes for validation; the rest is test.
    """
    ids, rows, names = [], [], []
    with open(content_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise InputError(f"{Path(content_path).name}:{lineno}: too few columns")
            ids.append(parts[0])
            rows.append([float(t) for t in parts[1:-1]])
            names.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names], dtype=np.int64)
    edges = []
    with open(cites_path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2 and parts[0] in index and parts[1] in index:
                edges.append((index[parts[0]], index[parts[1]]))
    n = len(ids)
    rng = np.random.default_rng(seed)
    split = np.full(n, "none", dtype=object)
    for c in range(len(classes)):
        members = rng.permutation(np.flatnonzero(labels == c))
        split[members[:train_per_class]] = "train"
    rest = rng.permutation(np.flatnonzero(split == "none"))
    split[rest[:n_val]] = "val"
    split[rest[n_val:]] = "test"
    bundle = DatasetBundle(
        graph=build_graph(np.array(edges, dtype=np.int64).reshape(-1, 2), n),
        features=np.array(rows),
        labels=labels,
        train_mask=split == "train",
        val_mask=split == "val",
        test_mask=split == "test",
        name=Path(out_dir).name,
        provenance={"source": [str(content_path), str(cites_path)], "classes": classes, "seed": seed},
    )
    save_dataset(bundle, out_dir)
    return bundle

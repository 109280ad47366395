"""Per-view random forests and the prediction cache built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEPTH_PRESETS = {"stump": 1, "weak": 3, "strong": 6, "strong20": 20}
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 1
    seed: int = 0
    bootstrap: bool = True


@dataclass
class DecisionTree:
    """Array-backed binary tree; ``feature[i] == -1`` marks a leaf.

    Samples with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"feature count mismatch: tree expects {self.n_features}, got "
                f"{X.shape[1] if X.ndim == 2 else X.shape}")
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            r, nd, f = rows[inner], node[inner], feat[inner]
            go_left = X[r, f] <= self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]


@dataclass
class ViewEnsemble:
    trees: list
    view: int = 0

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("an ensemble needs at least one tree")

    def __len__(self):
        return len(self.trees)

    def predict(self, X) -> np.ndarray:
        """(n_trees, n_samples) matrix of predicted class ids."""
        return np.stack([t.predict(X) for t in self.trees])


def _gini_split(x, y, C):
    """Best midpoint threshold on one feature: (weighted child gini, threshold)."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.shape[0]
    valid = np.flatnonzero(xs[:-1] < xs[1:])
    if valid.size == 0:
        return math.inf, 0.0
    onehot = np.zeros((n, C))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[valid]
    right = onehot.sum(axis=0) - left
    nl = (valid + 1).astype(float)
    nr = n - nl
    gl = 1.0 - np.sum(left ** 2, axis=1) / nl ** 2
    gr = 1.0 - np.sum(right ** 2, axis=1) / nr ** 2
    score = (nl * gl + nr * gr) / n
    k = int(np.argmin(score))
    i = valid[k]
    return float(score[k]), 0.5 * (xs[i] + xs[i + 1])


def build_tree(X, y, n_classes, max_depth, rng, n_candidates=None) -> DecisionTree:
    """Grow one CART tree with Gini splits over random feature subsets."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    d = X.shape[1]
    k = n_candidates if n_candidates is not None else math.ceil(math.sqrt(d))
    k = min(max(k, 1), d)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=n_classes)
        value[node] = int(np.argmax(counts))
        n = idx.size
        if depth >= max_depth or n < 2 or np.count_nonzero(counts) <= 1:
            continue
        parent = 1.0 - np.sum((counts / n) ** 2)
        best = (parent, -1, 0.0)
        for f in rng.choice(d, size=k, replace=False):
            score, thr = _gini_split(X[idx, f], y[idx], n_classes)
            if score < best[0] - 1e-12:
                best = (score, int(f), thr)
        if best[1] < 0:
            continue
        _, f, thr = best
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[~mask], depth + 1))
        stack.append((lnode, idx[mask], depth + 1))

    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(value, dtype=np.int64), d)


def tree_seed(seed: int, view: int, tree: int) -> int:
    return int(seed) ^ (view * 10007 + tree)


def train_forest(view_features, labels, cfg: ForestConfig, view: int = 0,
                 n_classes: int | None = None) -> ViewEnsemble:
    """Random forest on one view: bootstrap resamples, ceil(sqrt(d)) features per split."""
    X = np.asarray(view_features, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ValueError("need at least one sample and one label per row")
    if np.unique(y).size < 2:
        raise ValueError("train_forest needs at least two classes in the labels")
    C = n_classes if n_classes is not None else int(y.max()) + 1
    m = X.shape[0]
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(tree_seed(cfg.seed, view, t))
        rows = rng.integers(0, m, size=m) if cfg.bootstrap else np.arange(m)
        trees.append(build_tree(X[rows], y[rows], C, cfg.max_depth, rng))
    return ViewEnsemble(trees, view)


# ---------------------------------------------------------------------------
# prediction cache
# ---------------------------------------------------------------------------

@dataclass
class PredictionCache:
    """Per-view (voters x samples) prediction matrices over stacked sample blocks.

    ``blocks`` maps a block name ("train", "unlabeled", "test", ...) to its
    ``(start, stop)`` column range.
    """

    preds: list
    blocks: dict
    n_classes: int
    _onehot: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.preds = [np.asarray(p, dtype=np.int64) for p in self.preds]
        if not self.preds:
            raise ValueError("cache needs at least one view")
        N = self.preds[0].shape[1]
        for v, p in enumerate(self.preds):
            if p.ndim != 2 or p.shape[1] != N or p.shape[0] < 1:
                raise ValueError(f"view {v}: predictions must be (voters, {N})")
            if p.size and (p.min() < 0 or p.max() >= self.n_classes):
                raise ValueError(f"view {v}: predictions outside 0..{self.n_classes - 1}")
        spans = sorted(tuple(map(int, b)) for b in self.blocks.values())
        pos = 0
        for a, b in spans:
            if a != pos or b < a:
                raise ValueError("block offsets must partition the sample columns")
            pos = b
        if pos != N:
            raise ValueError("block offsets must partition the sample columns")
        self.blocks = {k: (int(a), int(b)) for k, (a, b) in self.blocks.items()}

    @property
    def n_views(self) -> int:
        return len(self.preds)

    @property
    def n_voters(self) -> list:
        return [p.shape[0] for p in self.preds]

    def block_size(self, name) -> int:
        a, b = self.blocks.get(name, (0, 0))
        return b - a

    def block(self, name) -> list:
        """Per-view prediction matrices restricted to one block."""
        a, b = self.blocks[name]
        return [p[:, a:b] for p in self.preds]

    def block_onehot(self, name) -> list:
        """Per-view float arrays (C, voters, samples) of prediction indicators."""
        if name not in self._onehot:
            self._onehot[name] = [
                np.stack([(p == c).astype(float) for c in range(self.n_classes)])
                for p in self.block(name)
            ]
        return self._onehot[name]


def predict_cache(ensembles, blocks, n_classes: int) -> PredictionCache:
    """Evaluate every tree on every block.

    ``blocks`` is an ordered mapping ``name -> list of per-view matrices``.
    Blocks are stacked in the given order.
    """
    V = len(ensembles)
    preds = [[] for _ in range(V)]
    offsets, pos = {}, 0
    for name, views in blocks.items():
        if views is None:
            offsets[name] = (pos, pos)
            continue
        if len(views) != V:
            raise ValueError(f"block {name!r} has {len(views)} views, ensembles cover {V}")
        n = np.asarray(views[0]).shape[0]
        for v, (ens, X) in enumerate(zip(ensembles, views)):
            preds[v].append(ens.predict(X))
        offsets[name] = (pos, pos + n)
        pos += n
    mats = [np.concatenate(p, axis=1) if p else np.zeros((len(e), 0), dtype=np.int64)
            for p, e in zip(preds, ensembles)]
    return PredictionCache(mats, offsets, n_classes)


def load_prediction_cache(paths, blocks: dict, n_classes: int) -> PredictionCache:
    """Read external voters' predictions (rows = voters, columns = samples)."""
    mats = []
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        mats.append(np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.int64)))
    return PredictionCache(mats, blocks, n_classes)


def check_simplex(p, what="distribution"):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{what} is not on the probability simplex")
    return p


def vote_mass(cache: PredictionCache, rho, Q, block: str) -> np.ndarray:
    """(samples, C) label masses sum_v rho_v sum_h Q_v(h) [pred = y]."""
    rho = check_simplex(rho, "rho")
    if rho.shape[0] != cache.n_views or len(Q) != cache.n_views:
        raise ValueError("rho and Q must cover every view of the cache")
    Q = [check_simplex(q, f"Q[{v}]") for v, q in enumerate(Q)]
    onehot = cache.block_onehot(block)
    n = cache.block_size(block)
    mass = np.zeros((n, cache.n_classes))
    for r, q, oh in zip(rho, Q, onehot):
        if q.shape[0] != oh.shape[1]:
            raise ValueError("Q length does not match the number of voters")
        mass += r * np.einsum("h,chn->nc", q, oh)
    return mass

"""Random survival forests with log-rank splitting.

Each tree grows on a with-replacement bootstrap of the training data.
At every node a random subset of features is scanned; for each
candidate feature every midpoint between consecutive sorted unique
values is evaluated with the two-group log-rank statistic, and the
split with the largest absolute statistic wins. Leaves store the
Nelson-Aalen cumulative hazard of their bootstrap members.

Prediction uses Ishwaran-style ensemble mortality: route the subject to
one leaf per tree, average the leaf cumulative hazard curves pointwise
over the forest's time grid, and sum the averaged curve over the grid.
Higher mortality means riskier.

The split scan and leaf routing are numba-compiled; both use exact
integer risk-set counts, so results match a brute-force search.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .core import (
    CumulativeHazardCurve,
    SurvivalDataset,
    concordance_index,
    has_comparable_pairs,
    nelson_aalen_from_arrays,
)

_MASK64 = (1 << 64) - 1


@dataclass
class ForestConfig:
    """Forest growth settings.

    ``mtry`` of None means ceil(sqrt(p)) at fit time. A node is split
    only when both children would retain at least ``min_leaf_events``
    observed events.
    """

    n_trees: int = 100
    mtry: int | None = None
    min_leaf_events: int = 5
    max_depth: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive")
        if self.min_leaf_events < 1:
            raise ValueError("min_leaf_events must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")

    def resolved_mtry(self, n_features: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(math.sqrt(n_features))
        return min(m, n_features)


@njit(cache=True, nogil=True)
def _node_split(Xc, t, ev, min_leaf_events):  # pragma: no cover - compiled
    """Best log-rank split over candidate columns of one node.

    Returns (candidate_index, threshold, |statistic|); candidate_index
    is -1 when no admissible split exists. The numerator uses the
    martingale-residual identity sum_{i in L} (delta_i - H(t_i)); the
    hypergeometric variance is rebuilt per threshold from exact
    at-risk counts.
    """
    n = t.shape[0]
    k = Xc.shape[1]
    order = np.argsort(t)

    # unique event-time buckets: time, at-risk count, event count
    u = np.empty(n)
    n_at = np.empty(n, np.int64)
    d = np.zeros(n, np.int64)
    n_buckets = 0
    cur_first = 0
    for ii in range(n):
        i = order[ii]
        if ii > 0 and t[i] != t[order[ii - 1]]:
            cur_first = ii
        if ev[i]:
            if n_buckets > 0 and u[n_buckets - 1] == t[i]:
                d[n_buckets - 1] += 1
            else:
                u[n_buckets] = t[i]
                n_at[n_buckets] = n - cur_first
                d[n_buckets] = 1
                n_buckets += 1
    if n_buckets == 0:
        return -1, 0.0, 0.0

    # cumulative hazard and variance weight per bucket
    H = np.empty(n_buckets)
    w2 = np.empty(n_buckets)
    acc = 0.0
    for s in range(n_buckets):
        acc += d[s] / n_at[s]
        H[s] = acc
        if n_at[s] > 1:
            q = d[s] * (n_at[s] - d[s]) / (n_at[s] - 1.0)
            w2[s] = q / (n_at[s] * float(n_at[s]))
        else:
            w2[s] = 0.0

    # per-sample last bucket index and martingale residual
    b = np.empty(n, np.int64)
    r = np.empty(n)
    s_ptr = -1
    for ii in range(n):
        i = order[ii]
        while s_ptr + 1 < n_buckets and u[s_ptr + 1] <= t[i]:
            s_ptr += 1
        b[i] = s_ptr
        if s_ptr >= 0:
            r[i] = (1.0 if ev[i] else 0.0) - H[s_ptr]
        else:
            r[i] = 1.0 if ev[i] else 0.0

    total_events = 0
    for i in range(n):
        if ev[i]:
            total_events += 1

    best_feat = -1
    best_thr = 0.0
    best_stat = 0.0
    cnt_left = np.zeros(n_buckets, np.int64)
    for f in range(k):
        col = Xc[:, f]
        vord = np.argsort(col)
        for s in range(n_buckets):
            cnt_left[s] = 0
        numerator = 0.0
        events_left = 0
        i0 = 0
        while i0 < n:
            v = col[vord[i0]]
            j = i0
            while j < n and col[vord[j]] == v:
                idx = vord[j]
                numerator += r[idx]
                if ev[idx]:
                    events_left += 1
                if b[idx] >= 0:
                    cnt_left[b[idx]] += 1
                j += 1
            if j < n:
                if events_left >= min_leaf_events and total_events - events_left >= min_leaf_events:
                    at_risk_left = 0
                    variance = 0.0
                    for s in range(n_buckets - 1, -1, -1):
                        at_risk_left += cnt_left[s]
                        variance += w2[s] * at_risk_left * (n_at[s] - at_risk_left)
                    if variance > 1e-12:
                        stat = abs(numerator) / np.sqrt(variance)
                        if stat > best_stat:
                            best_stat = stat
                            best_feat = f
                            best_thr = 0.5 * (v + col[vord[j]])
            i0 = j
    return best_feat, best_thr, best_stat


@njit(cache=True, nogil=True)
def _route(feat, thr, left, right, leaf_idx, X):  # pragma: no cover - compiled
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = leaf_idx[node]
    return out


@dataclass(frozen=True)
class SurvivalTree:
    """One fitted tree, stored as flat preorder node arrays.

    Internal node i tests ``x[feature[i]] <= threshold[i]`` and routes
    to ``children_left[i]`` or ``children_right[i]``; leaves have
    ``feature == -1`` and index into ``leaf_curves`` via ``leaf_index``.
    ``importance`` is filled by ranking (single-tree validation
    concordance); ``bootstrap_seed`` records provenance: the bootstrap
    rows are ``default_rng(bootstrap_seed).integers(0, n, n)``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    children_left: np.ndarray
    children_right: np.ndarray
    leaf_index: np.ndarray
    leaf_curves: tuple[CumulativeHazardCurve, ...]
    n_features: int
    bootstrap_seed: int
    client_tag: str | None = None
    importance: float | None = None

    def route(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row of X."""
        return _route(
            self.feature, self.threshold, self.children_left,
            self.children_right, self.leaf_index, X,
        )

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_curves)


def fit_tree(
    train: SurvivalDataset,
    config: ForestConfig,
    tree_seed: int,
    client_tag: str | None = None,
) -> SurvivalTree:
    """Grow one survival tree on a bootstrap of ``train``.

    The same seed yields the identical tree: the bootstrap draw and the
    per-node candidate-feature draws all come from
    ``default_rng(tree_seed)`` in preorder growth order.
    """
    if len(train) == 0:
        raise ValueError("empty dataset")
    if train.n_events == 0:
        raise ValueError("cannot fit: zero events")
    rng = np.random.default_rng(tree_seed & _MASK64)
    n = len(train)
    p = train.n_features
    boot = rng.integers(0, n, size=n)
    X = train.features[boot]
    t = train.times[boot]
    ev = train.events[boot]
    mtry = config.resolved_mtry(p)

    feature, threshold = [], []
    child_left, child_right, leaf_index = [], [], []
    leaf_curves = []

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        child_left.append(-1)
        child_right.append(-1)
        leaf_index.append(-1)
        chosen = None
        n_node_events = int(ev[idx].sum())
        if depth < config.max_depth and n_node_events >= 2 * config.min_leaf_events:
            cand = rng.permutation(p)[:mtry]
            f_loc, thr, stat = _node_split(
                np.ascontiguousarray(X[idx][:, cand]),
                np.ascontiguousarray(t[idx]),
                np.ascontiguousarray(ev[idx]),
                config.min_leaf_events,
            )
            if f_loc >= 0:
                chosen = (int(cand[f_loc]), float(thr))
        if chosen is None:
            feature[node] = -1
            leaf_index[node] = len(leaf_curves)
            leaf_curves.append(nelson_aalen_from_arrays(t[idx], ev[idx]))
            return node
        f_global, thr = chosen
        feature[node] = f_global
        threshold[node] = thr
        goes_left = X[idx, f_global] <= thr
        child_left[node] = grow(idx[goes_left], depth + 1)
        child_right[node] = grow(idx[~goes_left], depth + 1)
        return node

    grow(np.arange(n), 0)
    return SurvivalTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        children_left=np.array(child_left, dtype=np.int64),
        children_right=np.array(child_right, dtype=np.int64),
        leaf_index=np.array(leaf_index, dtype=np.int64),
        leaf_curves=tuple(leaf_curves),
        n_features=p,
        bootstrap_seed=int(tree_seed & _MASK64),
        client_tag=client_tag,
    )


@dataclass(frozen=True)
class SurvivalForest:
    """Tree ensemble with a shared evaluation grid (union of event times)."""

    trees: tuple[SurvivalTree, ...]
    grid: np.ndarray
    _leaf_totals: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        trees = tuple(self.trees)
        if not trees:
            raise ValueError("forest needs at least one tree")
        grid = np.asarray(self.grid, dtype=np.float64)
        p = trees[0].n_features
        if any(tr.n_features != p for tr in trees):
            raise ValueError("trees disagree on feature count")
        # per tree: sum of each leaf curve over the grid
        totals = tuple(
            np.array([curve.grid_total(grid) for curve in tr.leaf_curves])
            for tr in trees
        )
        object.__setattr__(self, "trees", trees)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "_leaf_totals", totals)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def tree_scores(self, which: int, X: np.ndarray) -> np.ndarray:
        """Single-tree mortality for every row of X."""
        return self._leaf_totals[which][self.trees[which].route(X)]


def fit_forest(
    train: SurvivalDataset,
    config: ForestConfig | None = None,
    client_tag: str | None = None,
) -> SurvivalForest:
    """Fit ``config.n_trees`` trees with seeds ``config.seed + tree_index``."""
    config = config or ForestConfig()
    if len(train) == 0:
        raise ValueError("empty dataset")
    if train.n_events == 0:
        raise ValueError("cannot fit: zero events")
    trees = [
        fit_tree(train, config, config.seed + i, client_tag=client_tag)
        for i in range(config.n_trees)
    ]
    grid = np.unique(train.times[train.events])
    return SurvivalForest(tuple(trees), grid)


def predict_mortality_batch(forest: SurvivalForest, X) -> np.ndarray:
    """Ensemble mortality for each row: mean over trees of the per-leaf
    cumulative hazard summed over ``forest.grid``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValueError(f"expected (n, {forest.n_features}) feature matrix")
    acc = np.zeros(X.shape[0])
    for which in range(len(forest.trees)):
        acc += forest.tree_scores(which, X)
    return acc / len(forest.trees)


def predict_mortality(forest: SurvivalForest, features) -> float:
    """Ensemble mortality for one covariate vector (higher = riskier)."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (forest.n_features,):
        raise ValueError(f"expected {forest.n_features} features, got shape {x.shape}")
    return float(predict_mortality_batch(forest, x[None, :])[0])


def rank_trees(forest: SurvivalForest, validation: SurvivalDataset) -> SurvivalForest:
    """Score every tree by its solo concordance on ``validation`` and sort.

    Returns a new forest whose trees carry ``importance`` and are
    ordered by importance descending; equal importances keep their
    original order. Trees with constant scores (single-leaf stubs) get
    0.5, the all-ties concordance.
    """
    if len(validation) == 0:
        raise ValueError("empty dataset")
    if not has_comparable_pairs(validation):
        raise ValueError("no comparable pairs")
    X = np.ascontiguousarray(validation.features)
    scored = []
    for which, tree in enumerate(forest.trees):
        imp = concordance_index(forest.tree_scores(which, X), validation)
        scored.append(replace(tree, importance=float(imp)))
    order = sorted(range(len(scored)), key=lambda i: -scored[i].importance)
    return SurvivalForest(tuple(scored[i] for i in order), forest.grid)

"""Survival trees and forests: split search, mortality, ranking."""
import numpy as np
import pytest

from fedsurv import (
    CumulativeHazardCurve,
    ForestConfig,
    SurvivalDataset,
    SurvivalForest,
    SurvivalTree,
    concordance_index,
    fit_forest,
    fit_tree,
    predict_mortality,
    predict_mortality_batch,
    rank_trees,
)
from fedsurv.core import nelson_aalen_from_arrays
from fedsurv.forest import _node_split

from conftest import random_dataset, tied_dataset


def logrank_stat(times, events, left_mask):
    """Textbook two-group log-rank |O_L - E_L| / sqrt(V)."""
    numerator = 0.0
    variance = 0.0
    for s in np.unique(times[events]):
        at_risk = times >= s
        n_s = int(at_risk.sum())
        d_s = int((events & (times == s)).sum())
        n_l = int((at_risk & left_mask).sum())
        d_l = int((events & (times == s) & left_mask).sum())
        numerator += d_l - d_s * n_l / n_s
        if n_s > 1:
            variance += d_s * (n_s - d_s) / (n_s - 1) * (n_l / n_s) * (1 - n_l / n_s)
    if variance <= 1e-12:
        return None
    return abs(numerator) / np.sqrt(variance)


def brute_force_best_split(X, times, events, min_leaf_events):
    """Exhaustive scan over every feature and midpoint threshold."""
    best = (-1, 0.0, 0.0)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals, vals[1:]):
            thr = 0.5 * (lo + hi)
            left = X[:, f] <= thr
            ev_left = int((events & left).sum())
            ev_right = int((events & ~left).sum())
            if ev_left < min_leaf_events or ev_right < min_leaf_events:
                continue
            stat = logrank_stat(times, events, left)
            if stat is not None and stat > best[2]:
                best = (f, thr, stat)
    return best


def stump_tree(threshold, low_curve, high_curve, flip=False):
    """Hand-built one-split tree on feature 0."""
    curves = (high_curve, low_curve) if flip else (low_curve, high_curve)
    return SurvivalTree(
        feature=np.array([0, -1, -1], dtype=np.int64),
        threshold=np.array([threshold, np.nan, np.nan]),
        children_left=np.array([1, -1, -1], dtype=np.int64),
        children_right=np.array([2, -1, -1], dtype=np.int64),
        leaf_index=np.array([-1, 0, 1], dtype=np.int64),
        leaf_curves=curves,
        n_features=1,
        bootstrap_seed=0,
    )


class TestNodeSplit:
    def test_matches_brute_force_search(self, rng):
        for trial in range(15):
            n = int(rng.integers(10, 60))
            p = int(rng.integers(1, 4))
            min_ev = int(rng.integers(1, 6))
            if trial % 3 == 0:
                ds = tied_dataset(rng, n, p, censor_frac=0.35)
            else:
                ds = random_dataset(rng, n, p, censor_frac=0.35)
            X = ds.features
            if trial % 4 == 0:
                X = np.round(X)  # duplicate feature values
            f, thr, stat = _node_split(np.ascontiguousarray(X), ds.times,
                                       ds.events.astype(np.bool_), min_ev)
            bf, bthr, bstat = brute_force_best_split(X, ds.times, ds.events, min_ev)
            if bf == -1:
                assert f == -1
                continue
            assert f != -1
            assert stat == pytest.approx(bstat, rel=1e-9)
            # the returned split must be admissible and achieve the optimum
            left = X[:, f] <= thr
            assert int((ds.events & left).sum()) >= min_ev
            assert int((ds.events & ~left).sum()) >= min_ev
            assert logrank_stat(ds.times, ds.events, left) == pytest.approx(bstat, rel=1e-9)

    def test_no_admissible_split_returns_sentinel(self):
        # three events total cannot give both children two events
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        t = np.array([1.0, 2.0, 3.0, 4.0])
        ev = np.array([True, True, True, False])
        f, _, _ = _node_split(X, t, ev, 2)
        assert f == -1

    def test_constant_feature_cannot_split(self):
        X = np.ones((10, 1))
        t = np.arange(1.0, 11.0)
        ev = np.ones(10, dtype=bool)
        f, _, _ = _node_split(X, t, ev, 1)
        assert f == -1


class TestFitTree:
    def test_binary_signal_found_at_root(self):
        r = np.random.default_rng(11)
        n = 200
        group = r.integers(0, 2, size=n).astype(np.float64)
        noise = r.normal(size=n)
        X = np.column_stack([noise, group])
        t = np.maximum(r.exponential(1.0 / np.exp(2.5 * group)), 1e-9)
        ds = SurvivalDataset(X, t, np.ones(n, dtype=bool))
        tree = fit_tree(ds, ForestConfig(mtry=2, min_leaf_events=5), tree_seed=3)
        assert tree.feature[0] == 1
        assert 0.0 < tree.threshold[0] < 1.0

    def test_same_seed_same_tree(self, rng):
        ds = random_dataset(rng, 120, 4, beta=np.array([1.0, 0.0, -0.5, 0.0]))
        a = fit_tree(ds, ForestConfig(), tree_seed=42)
        b = fit_tree(ds, ForestConfig(), tree_seed=42)
        np.testing.assert_array_equal(a.feature, b.feature)
        np.testing.assert_array_equal(a.threshold, b.threshold)
        c = fit_tree(ds, ForestConfig(), tree_seed=43)
        assert not np.array_equal(a.feature, c.feature) or not np.array_equal(a.threshold, c.threshold)

    def test_leaves_respect_event_minimum(self, rng):
        ds = random_dataset(rng, 150, 3, beta=np.array([1.2, -0.8, 0.0]))
        min_ev = 5
        tree = fit_tree(ds, ForestConfig(min_leaf_events=min_ev), tree_seed=7)
        # rebuild the bootstrap sample the tree saw and route it
        boot = np.random.default_rng(7).integers(0, len(ds), size=len(ds))
        leaves = tree.route(ds.features[boot])
        ev = ds.events[boot]
        for leaf in np.unique(leaves):
            assert ev[leaves == leaf].sum() >= min_ev

    def test_max_depth_one_gives_stump(self, rng):
        ds = random_dataset(rng, 100, 3, beta=np.array([1.5, 0.0, 0.0]))
        tree = fit_tree(ds, ForestConfig(max_depth=1, min_leaf_events=1), tree_seed=1)
        assert tree.n_leaves == 2
        assert len(tree.feature) == 3

    def test_zero_events_rejected(self):
        ds = SurvivalDataset(np.zeros((5, 1)), np.arange(1.0, 6.0), np.zeros(5, dtype=bool))
        with pytest.raises(ValueError, match="zero events"):
            fit_tree(ds, ForestConfig(), tree_seed=0)


class TestMortality:
    def test_stump_orders_subjects_by_leaf_hazard(self):
        low = nelson_aalen_from_arrays(np.array([5.0, 6.0]), np.array([True, True]))
        high = nelson_aalen_from_arrays(np.array([1.0, 2.0]), np.array([True, True]))
        tree = stump_tree(0.5, low, high)
        forest = SurvivalForest((tree,), grid=np.array([1.0, 2.0, 5.0, 6.0]))
        m_low = predict_mortality(forest, np.array([0.0]))
        m_high = predict_mortality(forest, np.array([1.0]))
        assert m_high > m_low
        # mortality is the grid sum of the leaf curve
        assert m_high == pytest.approx(high.evaluate(forest.grid).sum())
        assert m_low == pytest.approx(low.evaluate(forest.grid).sum())

    def test_batch_matches_single(self, rng):
        ds = random_dataset(rng, 80, 3, beta=np.array([1.0, -0.5, 0.0]))
        forest = fit_forest(ds, ForestConfig(n_trees=10, seed=2))
        batch = predict_mortality_batch(forest, ds.features)
        singles = np.array([predict_mortality(forest, x) for x in ds.features])
        np.testing.assert_allclose(batch, singles, rtol=1e-12)

    def test_ensemble_average_over_trees(self, rng):
        ds = random_dataset(rng, 60, 2, beta=np.array([1.0, 0.0]))
        forest = fit_forest(ds, ForestConfig(n_trees=4, seed=3))
        x = ds.features[:5]
        per_tree = np.stack([forest.tree_scores(i, x) for i in range(4)])
        np.testing.assert_allclose(predict_mortality_batch(forest, x),
                                   per_tree.mean(axis=0), rtol=1e-12)

    def test_signal_recovers_concordance(self):
        r = np.random.default_rng(5)
        X = r.normal(size=(400, 3))
        risk = 1.5 * X[:, 0]
        t = np.maximum(r.exponential(1.0 / np.exp(risk)), 1e-9)
        c = r.exponential(np.quantile(t, 0.75), size=400)
        ds = SurvivalDataset(X, np.minimum(t, c), t <= c)
        forest = fit_forest(ds, ForestConfig(n_trees=60, seed=4))
        assert concordance_index(predict_mortality_batch(forest, ds.features), ds) > 0.7


class TestForestStructure:
    def test_forest_grid_is_training_event_times(self, rng):
        ds = random_dataset(rng, 50, 2)
        forest = fit_forest(ds, ForestConfig(n_trees=3, seed=1))
        np.testing.assert_array_equal(forest.grid, np.unique(ds.times[ds.events]))

    def test_duplicated_rows_change_nothing_in_split(self, rng):
        # doubling every subject preserves all hazard ratios; the root
        # split of a deterministic scan stays identical
        ds = random_dataset(rng, 40, 2, beta=np.array([1.5, 0.0]))
        X2 = np.vstack([ds.features, ds.features])
        t2 = np.concatenate([ds.times, ds.times])
        e2 = np.concatenate([ds.events, ds.events])
        f1, thr1, _ = _node_split(np.ascontiguousarray(ds.features), ds.times,
                                  ds.events.astype(np.bool_), 2)
        f2, thr2, _ = _node_split(np.ascontiguousarray(X2), t2, e2.astype(np.bool_), 4)
        assert f1 == f2
        assert thr1 == pytest.approx(thr2)

    def test_determinism_across_fits(self, rng):
        ds = random_dataset(rng, 100, 3)
        a = fit_forest(ds, ForestConfig(n_trees=8, seed=9))
        b = fit_forest(ds, ForestConfig(n_trees=8, seed=9))
        x = ds.features[:10]
        np.testing.assert_array_equal(predict_mortality_batch(a, x),
                                      predict_mortality_batch(b, x))


class TestRanking:
    def test_oracle_and_anti_oracle_importances(self):
        # deterministic data: x >= 0.5 dies at time 1 or 2, x < 0.5 at 9 or 10
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        t = np.array([9.0, 10.0, 1.0, 2.0])
        ds = SurvivalDataset(X, t, np.ones(4, dtype=bool))
        low = nelson_aalen_from_arrays(t[:2], np.array([True, True]))
        high = nelson_aalen_from_arrays(t[2:], np.array([True, True]))
        oracle = stump_tree(0.5, low, high)
        anti = stump_tree(0.5, low, high, flip=True)
        forest = SurvivalForest((anti, oracle), grid=np.unique(t))
        ranked = rank_trees(forest, ds)
        # 6 comparable pairs: 4 cross-leaf (all decided) plus one tied
        # score within each leaf counting 0.5, so 5/6 and 1/6 exactly
        assert [t_.importance for t_ in ranked.trees] == [5 / 6, 1 / 6]
        # the oracle tree sorted first
        assert ranked.trees[0].leaf_curves[1] is high

    def test_constant_tree_scores_half(self, rng):
        ds = random_dataset(rng, 30, 1)
        curve = nelson_aalen_from_arrays(ds.times, ds.events)
        stub = SurvivalTree(
            feature=np.array([-1], dtype=np.int64),
            threshold=np.array([np.nan]),
            children_left=np.array([-1], dtype=np.int64),
            children_right=np.array([-1], dtype=np.int64),
            leaf_index=np.array([0], dtype=np.int64),
            leaf_curves=(curve,),
            n_features=1,
            bootstrap_seed=0,
        )
        forest = SurvivalForest((stub,), grid=np.unique(ds.times[ds.events]))
        ranked = rank_trees(forest, ds)
        assert ranked.trees[0].importance == 0.5

    def test_importances_sorted_non_increasing(self, rng):
        ds = random_dataset(rng, 200, 3, beta=np.array([1.0, -0.5, 0.0]))
        forest = fit_forest(ds, ForestConfig(n_trees=20, seed=6))
        ranked = rank_trees(forest, ds)
        imps = [t.importance for t in ranked.trees]
        assert all(a >= b for a, b in zip(imps, imps[1:]))
        assert all(i is not None for i in imps)

    def test_rank_requires_comparable_pairs(self):
        ds = SurvivalDataset(np.zeros((2, 1)), np.array([1.0, 1.0]),
                             np.array([True, True]))
        curve = nelson_aalen_from_arrays(ds.times, ds.events)
        stub = SurvivalTree(
            feature=np.array([-1], dtype=np.int64),
            threshold=np.array([np.nan]),
            children_left=np.array([-1], dtype=np.int64),
            children_right=np.array([-1], dtype=np.int64),
            leaf_index=np.array([0], dtype=np.int64),
            leaf_curves=(curve,),
            n_features=1,
            bootstrap_seed=0,
        )
        forest = SurvivalForest((stub,), grid=np.unique(ds.times))
        with pytest.raises(ValueError, match="no comparable pairs"):
            rank_trees(forest, ds)


class TestConfigValidation:
    def test_bounds(self):
        with pytest.raises(ValueError):
            ForestConfig(n_trees=0)
        with pytest.raises(ValueError):
            ForestConfig(min_leaf_events=0)
        with pytest.raises(ValueError):
            ForestConfig(max_depth=0)
        with pytest.raises(ValueError):
            ForestConfig(mtry=0)

    def test_resolved_mtry(self):
        assert ForestConfig().resolved_mtry(27) == 6
        assert ForestConfig(mtry=3).resolved_mtry(27) == 3
        assert ForestConfig(mtry=50).resolved_mtry(4) == 4

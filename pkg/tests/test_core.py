"""Survival containers, risk sets, Nelson-Aalen, concordance."""
import numpy as np
import pytest

from fedsurv import (
    CumulativeHazardCurve,
    SurvivalDataset,
    SurvivalRecord,
    concordance_index,
    nelson_aalen,
    risk_set_sizes,
)
from fedsurv.core import (
    has_comparable_pairs,
    nelson_aalen_from_arrays,
    standardization_stats,
)

from conftest import brute_force_cindex, random_dataset, tied_dataset


class TestSurvivalDataset:
    def test_basic_shape_and_counts(self):
        ds = SurvivalDataset(
            np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 2.0]),
            np.array([True, False]),
        )
        assert len(ds) == 2
        assert ds.n_features == 2
        assert ds.n_events == 1
        assert ds.feature_names == ("x1", "x2")

    def test_rejects_nonpositive_times(self):
        with pytest.raises(ValueError, match="strictly positive"):
            SurvivalDataset(np.zeros((2, 1)), np.array([0.0, 1.0]), np.array([True, True]))
        with pytest.raises(ValueError, match="strictly positive"):
            SurvivalDataset(np.zeros((2, 1)), np.array([-1.0, 1.0]), np.array([True, True]))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="finite"):
            SurvivalDataset(np.array([[np.nan]]), np.array([1.0]), np.array([True]))
        with pytest.raises(ValueError, match="finite"):
            SurvivalDataset(np.zeros((1, 1)), np.array([np.inf]), np.array([True]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            SurvivalDataset(np.zeros((3, 1)), np.array([1.0, 2.0]), np.array([True, True]))
        with pytest.raises(ValueError, match="feature names"):
            SurvivalDataset(np.zeros((2, 2)), np.array([1.0, 2.0]),
                            np.array([True, True]), ("only_one",))

    def test_arrays_are_readonly(self):
        ds = SurvivalDataset(np.zeros((2, 1)), np.array([1.0, 2.0]), np.array([True, True]))
        with pytest.raises(ValueError):
            ds.features[0, 0] = 5.0
        with pytest.raises(ValueError):
            ds.times[0] = 5.0

    def test_sort_index_is_stable_time_order(self, rng):
        ds = tied_dataset(rng, 40, 2)
        t = ds.times[ds.sort_index]
        assert np.all(np.diff(t) >= 0)
        # stability: equal times keep original relative order
        for v in np.unique(t):
            idx = ds.sort_index[t == v]
            assert np.all(np.diff(idx) > 0)

    def test_from_records_round_trip(self):
        records = [
            SurvivalRecord(np.array([1.0, 0.0]), 2.0, True),
            SurvivalRecord(np.array([0.0, 1.0]), 1.0, False),
        ]
        ds = SurvivalDataset.from_records(records, ("a", "b"))
        assert len(ds) == 2
        r = ds.record(0)
        assert r.time == 2.0 and r.event is True
        np.testing.assert_array_equal(r.features, [1.0, 0.0])

    def test_subset_preserves_rows(self, rng):
        ds = random_dataset(rng, 20, 3)
        sub = ds.subset([5, 1, 7])
        np.testing.assert_array_equal(sub.features, ds.features[[5, 1, 7]])
        np.testing.assert_array_equal(sub.times, ds.times[[5, 1, 7]])
        assert sub.feature_names == ds.feature_names


class TestRiskSets:
    def test_distinct_times_worked_example(self):
        ds = SurvivalDataset(
            np.zeros((3, 1)), np.array([1.0, 2.0, 3.0]), np.array([True, True, True])
        )
        assert risk_set_sizes(ds) == [(1.0, 3, 1), (2.0, 2, 1), (3.0, 1, 1)]

    def test_tied_times_share_risk_set(self):
        ds = SurvivalDataset(
            np.zeros((3, 1)), np.array([1.0, 1.0, 2.0]), np.array([True, True, True])
        )
        assert risk_set_sizes(ds) == [(1.0, 3, 2), (2.0, 1, 1)]

    def test_censored_rows_do_not_create_entries(self):
        ds = SurvivalDataset(
            np.zeros((4, 1)),
            np.array([1.0, 1.5, 2.0, 3.0]),
            np.array([True, False, True, False]),
        )
        assert risk_set_sizes(ds) == [(1.0, 4, 1), (2.0, 2, 1)]

    def test_empty_dataset_raises(self):
        ds = SurvivalDataset(np.zeros((0, 1)), np.zeros(0), np.zeros(0, dtype=bool))
        with pytest.raises(ValueError, match="empty"):
            risk_set_sizes(ds)

    def test_at_risk_counts_decrease(self, rng):
        ds = random_dataset(rng, 60, 2)
        rows = risk_set_sizes(ds)
        at_risk = [r[1] for r in rows]
        assert all(a > b for a, b in zip(at_risk, at_risk[1:]))
        assert all(d >= 1 for _, _, d in rows)


class TestCumulativeHazardCurve:
    def test_step_evaluation(self):
        curve = CumulativeHazardCurve(np.array([1.0, 3.0]), np.array([0.5, 1.25]))
        got = curve.evaluate(np.array([0.5, 1.0, 2.0, 3.0, 9.0]))
        np.testing.assert_array_equal(got, [0.0, 0.5, 0.5, 1.25, 1.25])

    def test_empty_curve_is_flat_zero(self):
        curve = CumulativeHazardCurve(np.empty(0), np.empty(0))
        np.testing.assert_array_equal(curve.evaluate(np.array([0.1, 5.0])), [0.0, 0.0])

    def test_validation(self):
        with pytest.raises(ValueError):
            CumulativeHazardCurve(np.array([2.0, 1.0]), np.array([0.1, 0.2]))
        with pytest.raises(ValueError):
            CumulativeHazardCurve(np.array([1.0, 2.0]), np.array([0.3, 0.2]))
        with pytest.raises(ValueError):
            CumulativeHazardCurve(np.array([-1.0]), np.array([0.3]))

    def test_grid_total_matches_pointwise_sum(self, rng):
        times = np.sort(rng.uniform(0.1, 10.0, size=8))
        values = np.cumsum(rng.uniform(0.05, 0.4, size=8))
        curve = CumulativeHazardCurve(times, values)
        grid = np.sort(rng.uniform(0.0, 12.0, size=50))
        assert curve.grid_total(grid) == pytest.approx(curve.evaluate(grid).sum(), rel=1e-12)


class TestNelsonAalen:
    def test_worked_example_no_censoring(self):
        ds = SurvivalDataset(
            np.zeros((3, 1)), np.array([1.0, 2.0, 3.0]), np.array([True, True, True])
        )
        curve = nelson_aalen(ds)
        np.testing.assert_array_equal(curve.times, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(curve.values, [1 / 3, 1 / 3 + 1 / 2, 1 / 3 + 1 / 2 + 1.0],
                                   rtol=0, atol=1e-15)

    def test_worked_example_with_censoring(self):
        ds = SurvivalDataset(
            np.zeros((3, 1)), np.array([1.0, 2.0, 3.0]), np.array([True, False, True])
        )
        curve = nelson_aalen(ds)
        np.testing.assert_array_equal(curve.times, [1.0, 3.0])
        np.testing.assert_allclose(curve.values, [1 / 3, 1 / 3 + 1.0], rtol=0, atol=1e-15)

    def test_matches_hand_sum_on_random_data(self, rng):
        ds = tied_dataset(rng, 50, 1)
        curve = nelson_aalen(ds)
        expected = []
        total = 0.0
        for t, n_at, d in risk_set_sizes(ds):
            total += d / n_at
            expected.append((t, total))
        np.testing.assert_array_equal(curve.times, [t for t, _ in expected])
        np.testing.assert_allclose(curve.values, [v for _, v in expected], rtol=1e-15)

    def test_from_arrays_matches_dataset_path(self, rng):
        ds = tied_dataset(rng, 30, 1)
        a = nelson_aalen(ds)
        b = nelson_aalen_from_arrays(ds.times, ds.events)
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.values, b.values)

    def test_all_censored_gives_empty_curve(self):
        ds = SurvivalDataset(np.zeros((3, 1)), np.array([1.0, 2.0, 3.0]),
                             np.zeros(3, dtype=bool))
        curve = nelson_aalen(ds)
        assert len(curve.times) == 0


class TestConcordance:
    def test_perfect_and_reversed(self):
        ds = SurvivalDataset(np.zeros((3, 1)), np.array([1.0, 2.0, 3.0]),
                             np.array([True, True, True]))
        assert concordance_index(np.array([3.0, 2.0, 1.0]), ds) == 1.0
        assert concordance_index(np.array([1.0, 2.0, 3.0]), ds) == 0.0

    def test_constant_scores_are_half(self, rng):
        ds = random_dataset(rng, 25, 1)
        assert concordance_index(np.zeros(25), ds) == 0.5

    def test_tied_time_both_events_excluded(self):
        # two events at the same time are not comparable in either direction
        ds = SurvivalDataset(np.zeros((2, 1)), np.array([1.0, 1.0]),
                             np.array([True, True]))
        with pytest.raises(ValueError, match="no comparable pairs"):
            concordance_index(np.array([1.0, 2.0]), ds)

    def test_censored_before_event_not_comparable(self):
        # censored at 1.0, event at 2.0: censoring gives no ordering info
        ds = SurvivalDataset(np.zeros((2, 1)), np.array([1.0, 2.0]),
                             np.array([False, True]))
        with pytest.raises(ValueError, match="no comparable pairs"):
            concordance_index(np.array([1.0, 2.0]), ds)

    def test_event_then_censored_later_is_comparable(self):
        ds = SurvivalDataset(np.zeros((2, 1)), np.array([1.0, 2.0]),
                             np.array([True, False]))
        assert concordance_index(np.array([2.0, 1.0]), ds) == 1.0
        # event at t, censored exactly at t: the censored subject is
        # known to live at least as long, so the pair still counts
        ds2 = SurvivalDataset(np.zeros((2, 1)), np.array([1.0, 1.0]),
                              np.array([True, False]))
        assert concordance_index(np.array([2.0, 1.0]), ds2) == 1.0

    def test_matches_brute_force_exactly(self, rng):
        for trial in range(40):
            n = int(rng.integers(2, 50))
            ds = tied_dataset(rng, n, 1, censor_frac=float(rng.uniform(0.0, 0.7)))
            scores = rng.normal(size=n)
            if rng.random() < 0.3:
                scores = np.round(scores)  # force score ties
            if not has_comparable_pairs(ds):
                continue
            expected = brute_force_cindex(scores, ds.times, ds.events)
            assert concordance_index(scores, ds) == expected

    def test_rejects_nonfinite_scores(self, rng):
        ds = random_dataset(rng, 10, 1)
        scores = np.zeros(10)
        scores[3] = np.nan
        with pytest.raises(ValueError, match="finite"):
            concordance_index(scores, ds)

    def test_invariant_under_monotone_transform(self, rng):
        ds = random_dataset(rng, 40, 2)
        scores = rng.normal(size=40)
        a = concordance_index(scores, ds)
        b = concordance_index(np.exp(2.0 * scores), ds)
        assert a == b


class TestStandardizationStats:
    def test_population_moments(self):
        X = np.array([[1.0, 10.0], [3.0, 10.0]])
        ds = SurvivalDataset(X, np.array([1.0, 2.0]), np.array([True, True]))
        means, scales = standardization_stats(ds)
        np.testing.assert_array_equal(means, [2.0, 10.0])
        # population std of (1,3) is 1; constant column falls back to 1
        np.testing.assert_array_equal(scales, [1.0, 1.0])

    def test_standardized_data_has_unit_scale(self, rng):
        ds = random_dataset(rng, 200, 3)
        means, scales = standardization_stats(ds)
        Z = (ds.features - means) / scales
        np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(Z.std(axis=0), 1.0, rtol=1e-12)

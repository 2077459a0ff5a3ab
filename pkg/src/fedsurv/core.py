"""Survival data containers and rank statistics.

Shared foundation for every model family: right-censored datasets,
cumulative hazard step curves, risk-set tabulation, the Nelson-Aalen
estimator, and Harrell's concordance index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# A risk score is a plain float: higher means the subject is predicted
# to fail sooner. Only the ordering of scores ever matters.
RiskScore = float


@dataclass(frozen=True)
class SurvivalRecord:
    """One subject: covariate vector, follow-up time, event indicator.

    ``event`` is True when the endpoint was observed and False when the
    subject was censored at ``time``.
    """

    features: np.ndarray
    time: float
    event: bool


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SurvivalDataset:
    """Immutable right-censored survival dataset.

    Parameters
    ----------
    features : ndarray of shape (n, p)
        Covariate matrix, one row per subject. Must be finite.
    times : ndarray of shape (n,)
        Strictly positive follow-up times. Zero or negative times are
        rejected outright, never clamped.
    events : ndarray of shape (n,)
        Boolean event indicators (True = event, False = censored).
    feature_names : tuple of str, optional
        One name per feature column; defaults to ``x1`` .. ``xp``.

    ``sort_index`` is the permutation that orders subjects by ascending
    time; it is computed once so loss, gradient, and hazard code can
    share a single sorted view.
    """

    features: np.ndarray
    times: np.ndarray
    events: np.ndarray
    feature_names: tuple[str, ...] | None = None
    sort_index: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        t = np.asarray(self.times, dtype=np.float64)
        e = np.asarray(self.events, dtype=bool)
        if X.ndim != 2:
            raise ValueError("features must be a 2-d array")
        n, p = X.shape
        if t.shape != (n,) or e.shape != (n,):
            raise ValueError("times and events must have one entry per row of features")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if not np.all(np.isfinite(t)):
            raise ValueError("times must be finite")
        if np.any(t <= 0):
            raise ValueError("times must be strictly positive")
        if self.feature_names is None:
            names = tuple(f"x{i + 1}" for i in range(p))
        else:
            names = tuple(str(c) for c in self.feature_names)
            if len(names) != p:
                raise ValueError(f"expected {p} feature names, got {len(names)}")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "times", _readonly(t))
        object.__setattr__(self, "events", _readonly(e))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "sort_index", _readonly(np.argsort(t, kind="stable")))

    @classmethod
    def from_records(cls, records, feature_names) -> "SurvivalDataset":
        X = np.array([r.features for r in records], dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(len(records), -1)
        t = np.array([r.time for r in records], dtype=np.float64)
        e = np.array([r.event for r in records], dtype=bool)
        return cls(X, t, e, tuple(feature_names))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_events(self) -> int:
        return int(np.count_nonzero(self.events))

    def record(self, i: int) -> SurvivalRecord:
        return SurvivalRecord(self.features[i], float(self.times[i]), bool(self.events[i]))

    def subset(self, indices) -> "SurvivalDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return SurvivalDataset(
            self.features[idx], self.times[idx], self.events[idx], self.feature_names
        )


@dataclass(frozen=True)
class CumulativeHazardCurve:
    """Right-continuous step function H(t) with H(t) = 0 before the first step.

    ``times`` must be strictly increasing and positive; ``values`` are the
    cumulative hazard levels reached at each step and must be
    non-decreasing and non-negative. An empty curve is the flat zero
    hazard.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1 or v.shape != t.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if t.size:
            if not np.all(np.isfinite(t)) or not np.all(np.isfinite(v)):
                raise ValueError("curve entries must be finite")
            if np.any(t <= 0):
                raise ValueError("curve times must be strictly positive")
            if np.any(np.diff(t) <= 0):
                raise ValueError("curve times must be strictly increasing")
            if v[0] < 0 or np.any(np.diff(v) < 0):
                raise ValueError("curve values must be non-negative and non-decreasing")
        object.__setattr__(self, "times", _readonly(t))
        object.__setattr__(self, "values", _readonly(v))

    def evaluate(self, t):
        """Evaluate H at scalar or array ``t`` (right-continuous steps)."""
        t_arr = np.asarray(t, dtype=np.float64)
        if self.times.size == 0:
            out = np.zeros(t_arr.shape)
        else:
            idx = np.searchsorted(self.times, t_arr, side="right") - 1
            out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], 0.0)
        if t_arr.ndim == 0:
            return float(out)
        return out

    def grid_total(self, grid: np.ndarray) -> float:
        """Sum of H over the sorted evaluation grid.

        Equivalent to ``self.evaluate(grid).sum()`` but computed from step
        widths, which keeps ensemble mortality cheap on large grids.
        """
        if self.times.size == 0 or grid.size == 0:
            return 0.0
        pos = np.searchsorted(grid, self.times, side="left")
        counts = np.diff(np.append(pos, grid.size))
        return float(np.dot(self.values, counts))


def _event_table(dataset: SurvivalDataset):
    """Unique event times with at-risk and event counts.

    Returns ``(unique_times, at_risk, n_events, first_index)`` where
    ``first_index`` locates each unique event time in the time-sorted
    view of the dataset. All counts are exact integers.
    """
    order = dataset.sort_index
    t = dataset.times[order]
    e = dataset.events[order]
    event_times = t[e]
    if event_times.size == 0:
        empty = np.empty(0)
        return empty, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    uniq, counts = np.unique(event_times, return_counts=True)
    first = np.searchsorted(t, uniq, side="left")
    at_risk = len(dataset) - first
    return uniq, at_risk.astype(np.int64), counts.astype(np.int64), first.astype(np.int64)


def risk_set_sizes(dataset: SurvivalDataset) -> list[tuple[float, int, int]]:
    """Tabulate ``(event_time, at_risk_count, event_count)`` per unique event time.

    The at-risk set at time t is everyone still under observation,
    ``{j : t_j >= t}``, censored subjects included. Times with only
    censored exits do not appear.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    uniq, at_risk, d, _ = _event_table(dataset)
    return [(float(u), int(r), int(k)) for u, r, k in zip(uniq, at_risk, d)]


def _weighted_cumulative_hazard(dataset: SurvivalDataset, weights: np.ndarray) -> CumulativeHazardCurve:
    """Step curve sum_{s <= t} d_s / (sum of weights over the risk set at s).

    With unit weights this is Nelson-Aalen; with weights exp(beta' x)
    it is the Breslow baseline hazard.
    """
    order = dataset.sort_index
    t = dataset.times[order]
    w = np.asarray(weights, dtype=np.float64)[order]
    uniq, _, d, first = _event_table(dataset)
    if uniq.size == 0:
        return CumulativeHazardCurve(np.empty(0), np.empty(0))
    suffix = np.cumsum(w[::-1])[::-1]
    denom = suffix[first]
    return CumulativeHazardCurve(uniq, np.cumsum(d / denom))


def nelson_aalen(dataset: SurvivalDataset) -> CumulativeHazardCurve:
    """Nelson-Aalen cumulative hazard estimate H(t) = sum_{s <= t} d_s / n_s.

    A dataset with no events yields the flat zero curve.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    return _weighted_cumulative_hazard(dataset, np.ones(len(dataset)))


def nelson_aalen_from_arrays(times, events) -> CumulativeHazardCurve:
    """Nelson-Aalen from bare arrays, for callers without a dataset object."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    order = np.argsort(times, kind="stable")
    t = times[order]
    e = events[order]
    event_times = t[e]
    if event_times.size == 0:
        return CumulativeHazardCurve(np.empty(0), np.empty(0))
    uniq, d = np.unique(event_times, return_counts=True)
    at_risk = t.size - np.searchsorted(t, uniq, side="left")
    return CumulativeHazardCurve(uniq, np.cumsum(d / at_risk))


def _concordance_counts(scores: np.ndarray, dataset: SurvivalDataset, chunk: int = 256):
    """Exact integer counts of (concordant, tied, comparable) ordered pairs.

    A pair is comparable when the subject with the shorter time had an
    event, or when times are equal and exactly one subject had an event
    (the event subject is known to fail first). Equal-time pairs where
    both had events are not comparable. Concordance means the
    shorter-lived subject received the strictly higher risk score.
    """
    t = dataset.times
    e = dataset.events
    event_rows = np.flatnonzero(e)
    concordant = tied = comparable = 0
    not_e = ~e
    for start in range(0, event_rows.size, chunk):
        rows = event_rows[start : start + chunk]
        ti = t[rows, None]
        si = scores[rows, None]
        comp = (ti < t[None, :]) | ((ti == t[None, :]) & not_e[None, :])
        comparable += int(np.count_nonzero(comp))
        concordant += int(np.count_nonzero(comp & (si > scores[None, :])))
        tied += int(np.count_nonzero(comp & (si == scores[None, :])))
    return concordant, tied, comparable


def has_comparable_pairs(dataset: SurvivalDataset) -> bool:
    """True when the dataset admits at least one comparable pair."""
    _, _, comparable = _concordance_counts(np.zeros(len(dataset)), dataset)
    return comparable > 0


def concordance_index(scores, dataset: SurvivalDataset) -> float:
    """Harrell's C-index of risk scores against observed outcomes.

    Ties in score among comparable pairs count one half. Raises
    ``ValueError`` when no pair is comparable (for example, a dataset
    with no events).

    Parameters
    ----------
    scores : array-like of shape (n,)
        Finite risk scores, higher = riskier.
    dataset : SurvivalDataset
        Outcomes the scores are judged against.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (len(dataset),):
        raise ValueError(f"expected {len(dataset)} scores, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    concordant, tied, comparable = _concordance_counts(s, dataset)
    if comparable == 0:
        raise ValueError("no comparable pairs")
    return (concordant + 0.5 * tied) / comparable


def standardization_stats(dataset: SurvivalDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature means and scales (population std, zero mapped to 1)."""
    means = dataset.features.mean(axis=0)
    scales = dataset.features.std(axis=0)
    scales = np.where(scales > 0, scales, 1.0)
    return means, scales

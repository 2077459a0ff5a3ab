"""Shared helpers for the test suite."""
import numpy as np
import pytest

from fedsurv import SurvivalDataset


def random_dataset(rng, n, p, censor_frac=0.3, beta=None):
    """Random survival data with roughly the requested censoring share."""
    X = rng.normal(size=(n, p))
    risk = X @ beta if beta is not None else np.zeros(n)
    times = rng.exponential(1.0 / np.exp(risk))
    times = np.maximum(times, 1e-9)
    events = rng.random(n) >= censor_frac
    return SurvivalDataset(X, times, events)


def tied_dataset(rng, n, p, censor_frac=0.3, n_distinct=None):
    """Random data whose times are drawn from a small set, forcing ties."""
    n_distinct = n_distinct or max(2, n // 3)
    X = rng.normal(size=(n, p))
    times = rng.integers(1, n_distinct + 1, size=n).astype(np.float64)
    events = rng.random(n) >= censor_frac
    return SurvivalDataset(X, times, events)


def brute_force_cindex(scores, times, events):
    """O(n^2) pair enumeration, the definitional concordance index.

    A pair (i, j) is comparable when the earlier time is an event and
    the other subject is known to survive past it. Equal predicted
    risks count half.
    """
    n = len(times)
    concordant = 0.0
    comparable = 0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if events[i] and (times[i] < times[j] or (times[i] == times[j] and not events[j])):
                comparable += 1
                if scores[i] > scores[j]:
                    concordant += 1.0
                elif scores[i] == scores[j]:
                    concordant += 0.5
    if comparable == 0:
        raise ValueError("no comparable pairs")
    return concordant / comparable


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)

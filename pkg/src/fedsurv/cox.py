"""Cox proportional hazards model.

Hazard form lambda(t | x) = lambda0(t) * exp(beta' x). Fitting minimizes
the negative Breslow log partial likelihood

    L(beta) = - sum_{i: event} [ eta_i - log sum_{j: t_j >= t_i} exp(eta_j) ]

with Newton-Raphson, analytic gradient and Hessian, step halving, and a
small ridge term for numerical identifiability. Tied event times share
one risk set (Breslow handling). All risk-set sums are accumulated as
suffix sums over the time-sorted order, with log-sum-exp shifting where
overflow is possible.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CumulativeHazardCurve,
    SurvivalDataset,
    _event_table,
    _weighted_cumulative_hazard,
    standardization_stats,
)

_ZERO_EVENT_MSG = "dataset has zero events; partial likelihood is empty"


@dataclass
class CoxFitConfig:
    """Newton-Raphson settings for :func:`fit_cox`."""

    max_iterations: int = 50
    tolerance: float = 1e-9
    ridge: float = 1e-6
    step_halving_limit: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.step_halving_limit < 1:
            raise ValueError("step_halving_limit must be positive")


@dataclass
class CoxModel:
    """Fitted proportional hazards model.

    ``beta`` lives on the standardized feature scale; predictions
    standardize inputs with ``feature_means`` / ``feature_scales`` first.
    ``baseline`` is the Breslow cumulative baseline hazard estimated on
    the standardized training data. ``loss_history`` records the
    penalized loss at each accepted Newton iterate.
    """

    beta: np.ndarray
    baseline: CumulativeHazardCurve
    feature_means: np.ndarray
    feature_scales: np.ndarray
    converged: bool
    final_loss: float = float("nan")
    loss_history: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False, compare=False)

    @property
    def raw_beta(self) -> np.ndarray:
        """Coefficients on the original (unstandardized) feature scale."""
        return self.beta / self.feature_scales


def _check_beta(beta, dataset: SurvivalDataset) -> np.ndarray:
    b = np.asarray(beta, dtype=np.float64)
    if b.shape != (dataset.n_features,):
        raise ValueError(
            f"beta has shape {b.shape}, dataset has {dataset.n_features} features"
        )
    if not np.all(np.isfinite(b)):
        raise ValueError("beta must be finite")
    return b


def partial_likelihood_loss(scores, dataset: SurvivalDataset) -> float:
    """Negative Breslow log partial likelihood of precomputed risk scores.

    Emits a warning and returns 0.0 when the dataset has no events.
    """
    g = np.asarray(scores, dtype=np.float64)
    order = dataset.sort_index
    g_sorted = g[order]
    e_sorted = dataset.events[order]
    if not e_sorted.any():
        warnings.warn(_ZERO_EVENT_MSG, stacklevel=2)
        return 0.0
    # suffix log-sum-exp over the time-sorted scores
    log_s0 = np.logaddexp.accumulate(g_sorted[::-1])[::-1]
    uniq, _, d, first = _event_table(dataset)
    return float((d * log_s0[first]).sum() - g_sorted[e_sorted].sum())


def partial_likelihood_score_gradient(scores, dataset: SurvivalDataset) -> np.ndarray:
    """Gradient of the partial likelihood loss with respect to each score.

    dL/dg_i = -delta_i + exp(g_i) * sum_{k: event, t_k <= t_i} 1 / S0(t_k)
    where S0(t) = sum_{j: t_j >= t} exp(g_j). Returns zeros when there
    are no events.
    """
    g = np.asarray(scores, dtype=np.float64)
    n = len(dataset)
    order = dataset.sort_index
    g_sorted = g[order]
    e_sorted = dataset.events[order]
    t_sorted = dataset.times[order]
    out = np.zeros(n)
    if not e_sorted.any():
        return out
    shift = g_sorted.max()
    w = np.exp(g_sorted - shift)
    s0 = np.cumsum(w[::-1])[::-1]
    uniq, _, d, first = _event_table(dataset)
    # prefix sums of d_u / S0(u) over unique event times
    inv_mass = np.cumsum(d / s0[first])
    pos = np.searchsorted(uniq, t_sorted, side="right")
    accum = np.where(pos > 0, inv_mass[np.clip(pos - 1, 0, None)], 0.0)
    grad_sorted = -e_sorted.astype(np.float64) + w * accum
    out[order] = grad_sorted
    return out


def cox_loss(beta, dataset: SurvivalDataset, ridge: float = 0.0) -> float:
    """Negative log partial likelihood at ``beta`` (plus optional ridge)."""
    b = _check_beta(beta, dataset)
    loss = partial_likelihood_loss(dataset.features @ b, dataset)
    if ridge:
        loss += ridge * float(b @ b)
    return loss


def cox_gradient(beta, dataset: SurvivalDataset, ridge: float = 0.0) -> np.ndarray:
    """Analytic gradient of :func:`cox_loss` at ``beta``.

    Computed as -sum over events of (x_i - S1(t_i)/S0(t_i)) using suffix
    accumulation, plus ``2 * ridge * beta`` when penalized.
    """
    b = _check_beta(beta, dataset)
    order = dataset.sort_index
    X = dataset.features[order]
    e = dataset.events[order]
    grad = np.zeros_like(b)
    if e.any():
        eta = X @ b
        shift = eta.max()
        w = np.exp(eta - shift)
        s0 = np.cumsum(w[::-1])[::-1]
        s1 = np.cumsum((w[:, None] * X)[::-1], axis=0)[::-1]
        uniq, _, d, first = _event_table(dataset)
        ratios = s1[first] / s0[first, None]
        grad = (d[:, None] * ratios).sum(axis=0) - X[e].sum(axis=0)
    if ridge:
        grad = grad + 2.0 * ridge * b
    return grad


def cox_hessian(beta, dataset: SurvivalDataset, ridge: float = 0.0) -> np.ndarray:
    """Analytic Hessian of :func:`cox_loss` at ``beta`` (positive semidefinite)."""
    b = _check_beta(beta, dataset)
    p = dataset.n_features
    order = dataset.sort_index
    X = dataset.features[order]
    e = dataset.events[order]
    H = np.zeros((p, p))
    if e.any():
        eta = X @ b
        shift = eta.max()
        w = np.exp(eta - shift)
        s0 = np.cumsum(w[::-1])[::-1]
        s1 = np.cumsum((w[:, None] * X)[::-1], axis=0)[::-1]
        outer = w[:, None, None] * (X[:, :, None] * X[:, None, :])
        s2 = np.cumsum(outer[::-1], axis=0)[::-1]
        uniq, _, d, first = _event_table(dataset)
        for u_idx, f in enumerate(first):
            mean = s1[f] / s0[f]
            H += d[u_idx] * (s2[f] / s0[f] - np.outer(mean, mean))
    if ridge:
        H = H + 2.0 * ridge * np.eye(p)
    return H


def breslow_baseline(beta, dataset: SurvivalDataset) -> CumulativeHazardCurve:
    """Breslow cumulative baseline hazard H0(t) = sum_{s <= t} d_s / sum_{R(s)} exp(eta_j).

    At ``beta = 0`` this reduces exactly to the Nelson-Aalen estimator.
    A dataset with no events yields the flat zero curve.
    """
    b = _check_beta(beta, dataset)
    weights = np.exp(dataset.features @ b)
    return _weighted_cumulative_hazard(dataset, weights)


def _solve_newton_step(H: np.ndarray, grad: np.ndarray, ridge: float) -> np.ndarray:
    bump = max(ridge, 1e-8)
    eye = np.eye(H.shape[0])
    for attempt in range(4):
        H_try = H if attempt == 0 else H + bump * 10.0**attempt * eye
        try:
            step = np.linalg.solve(H_try, -grad)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(step)):
            return step
    raise RuntimeError("singular Hessian; Newton step failed after ridge bumps")


def fit_cox(
    train: SurvivalDataset,
    config: CoxFitConfig | None = None,
    standardization: tuple[np.ndarray, np.ndarray] | None = None,
    initial_beta: np.ndarray | None = None,
) -> CoxModel:
    """Fit a Cox model by Newton-Raphson on standardized features.

    Parameters
    ----------
    train : SurvivalDataset
        Training data with at least one event.
    config : CoxFitConfig, optional
        Iteration limits, tolerance, ridge penalty.
    standardization : (means, scales), optional
        Externally fixed standardization, used by federation so every
        client fits in one shared coordinate system. Defaults to the
        training data's own statistics.
    initial_beta : ndarray, optional
        Warm-start coefficients on the standardized scale.

    The penalized loss is non-increasing across accepted iterations;
    convergence is declared when it changes by less than
    ``config.tolerance``. A fit that exhausts ``max_iterations`` returns
    the best iterate with ``converged=False``.
    """
    config = config or CoxFitConfig()
    if len(train) == 0:
        raise ValueError("empty dataset")
    if train.n_events == 0:
        raise ValueError("cannot fit: zero events")
    if standardization is None:
        means, scales = standardization_stats(train)
    else:
        means = np.asarray(standardization[0], dtype=np.float64)
        scales = np.asarray(standardization[1], dtype=np.float64)
        if means.shape != (train.n_features,) or scales.shape != (train.n_features,):
            raise ValueError("standardization shape does not match feature count")
        if np.any(scales <= 0):
            raise ValueError("feature scales must be strictly positive")
    Z = (train.features - means) / scales
    std_train = SurvivalDataset(Z, train.times, train.events, train.feature_names)

    ridge = config.ridge
    beta = (
        np.zeros(train.n_features)
        if initial_beta is None
        else _check_beta(initial_beta, train).copy()
    )

    def penalized(b):
        return cox_loss(b, std_train, ridge=ridge)

    loss = penalized(beta)
    history = [loss]
    converged = False
    for _ in range(config.max_iterations):
        grad = cox_gradient(beta, std_train, ridge=ridge)
        H = cox_hessian(beta, std_train, ridge=ridge)
        step = _solve_newton_step(H, grad, ridge)
        accepted = False
        alpha = 1.0
        for _ in range(config.step_halving_limit):
            candidate = beta + alpha * step
            cand_loss = penalized(candidate)
            if np.isfinite(cand_loss) and cand_loss <= loss:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        delta = loss - cand_loss
        beta, loss = candidate, cand_loss
        history.append(loss)
        if delta < config.tolerance:
            converged = True
            break

    baseline = breslow_baseline(beta, std_train)
    return CoxModel(
        beta=beta,
        baseline=baseline,
        feature_means=means,
        feature_scales=scales,
        converged=converged,
        final_loss=float(loss),
        loss_history=np.array(history),
    )


def predict_risk(model: CoxModel, features) -> float:
    """Linear predictor beta' z for one standardized covariate vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != model.beta.shape:
        raise ValueError(f"expected {model.beta.shape[0]} features, got shape {x.shape}")
    z = (x - model.feature_means) / model.feature_scales
    return float(z @ model.beta)


def predict_risk_batch(model: CoxModel, dataset: SurvivalDataset) -> np.ndarray:
    """Linear predictors for every subject in ``dataset``."""
    Z = (dataset.features - model.feature_means) / model.feature_scales
    return Z @ model.beta

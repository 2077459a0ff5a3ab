"""Neural risk scoring trained on the Cox partial likelihood.

Two multilayer perceptron variants replace the linear predictor
beta' x with a learned g(x):

* ``deepsurv``: two hidden relu layers (default width 32), no extras.
* ``coxnnet``: one hidden relu layer (default width 16) with batch
  normalization before the activation and dropout after it.

Training is full-batch gradient descent because the partial likelihood
couples every subject through shared risk sets. Gradients are exact
backpropagation through the score gradient dL/dg_i; gradient descent
normalizes them by the event count so learning rates are comparable
across dataset sizes.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .core import SurvivalDataset, concordance_index, standardization_stats
from .cox import partial_likelihood_loss, partial_likelihood_score_gradient
from .data import split as _split_dataset
from .seeding import rng_for, seed_for

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1

VARIANTS = ("deepsurv", "coxnnet", "linear")
_DEFAULT_WIDTH = {"deepsurv": 32, "coxnnet": 16, "linear": 1}


@dataclass
class TrainConfig:
    """Gradient-descent settings for :func:`fit_neural`.

    ``grid`` optionally lists (learning_rate, hidden_width, l2) triples;
    when present, each triple is scored by concordance on an internal
    80/20 validation split and the winner is refit on the full data.
    """

    epochs: int = 100
    learning_rate: float = 0.05
    seed: int = 0
    l2: float = 0.0
    batch_mode: str = "full"
    hidden_width: int | None = None
    grid: list[tuple[float, int, float]] | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.batch_mode != "full":
            raise ValueError("only full-batch training is supported")


@dataclass
class NeuralRiskModel:
    """MLP risk model g(x); higher output means riskier.

    ``layer_specs`` lists (input_dim, output_dim, activation) per layer;
    the final layer is linear with output dimension 1. Weight matrices
    have shape (input_dim, output_dim). ``norm_means`` / ``norm_vars``
    are per-hidden-layer running batch-norm statistics (coxnnet only).
    Inputs are standardized with ``feature_means`` / ``feature_scales``
    before the first layer.
    """

    variant: str
    layer_specs: tuple[tuple[int, int, str], ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feature_means: np.ndarray
    feature_scales: np.ndarray
    dropout_rate: float = 0.0
    norm_means: list[np.ndarray] | None = None
    norm_vars: list[np.ndarray] | None = None
    training_loss: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return self.layer_specs[0][0]

    def flatten_weights(self) -> np.ndarray:
        """Concatenate all parameters: per layer, weights row-major then bias."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel(order="C"))
            parts.append(b)
        return np.concatenate(parts)

    def set_flat_weights(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        offset = 0
        for i, (din, dout, _) in enumerate(self.layer_specs):
            self.weights[i] = flat[offset : offset + din * dout].reshape(din, dout).copy()
            offset += din * dout
            self.biases[i] = flat[offset : offset + dout].copy()
            offset += dout
        if offset != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {offset}")

    def clone(self) -> "NeuralRiskModel":
        return copy.deepcopy(self)


def _layer_specs(variant: str, n_features: int, hidden_width: int) -> tuple:
    if variant == "deepsurv":
        return (
            (n_features, hidden_width, "relu"),
            (hidden_width, hidden_width, "relu"),
            (hidden_width, 1, "linear"),
        )
    if variant == "coxnnet":
        return (
            (n_features, hidden_width, "relu"),
            (hidden_width, 1, "linear"),
        )
    # degenerate architecture: one linear layer, so the model is exactly
    # a Cox risk function and trains against the same optimum
    return ((n_features, 1, "linear"),)


def build_model(
    variant: str,
    n_features: int,
    hidden_width: int | None = None,
    dropout_rate: float | None = None,
    seed: int = 0,
    standardization: tuple[np.ndarray, np.ndarray] | None = None,
) -> NeuralRiskModel:
    """Construct a freshly initialized model.

    Weights are drawn uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out));
    biases start at zero; batch-norm statistics start at mean 0, var 1.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    width = hidden_width or _DEFAULT_WIDTH[variant]
    specs = _layer_specs(variant, n_features, width)
    rng = rng_for(seed, "init")
    weights, biases = [], []
    for din, dout, _ in specs:
        s = np.sqrt(6.0 / (din + dout))
        weights.append(rng.uniform(-s, s, size=(din, dout)))
        biases.append(np.zeros(dout))
    if standardization is None:
        means, scales = np.zeros(n_features), np.ones(n_features)
    else:
        means = np.asarray(standardization[0], dtype=np.float64).copy()
        scales = np.asarray(standardization[1], dtype=np.float64).copy()
    norm_means = norm_vars = None
    drop = 0.0
    if variant == "coxnnet":
        drop = 0.3 if dropout_rate is None else dropout_rate
        hidden = specs[:-1]
        norm_means = [np.zeros(dout) for _, dout, _ in hidden]
        norm_vars = [np.ones(dout) for _, dout, _ in hidden]
    return NeuralRiskModel(
        variant=variant,
        layer_specs=specs,
        weights=weights,
        biases=biases,
        feature_means=means,
        feature_scales=scales,
        dropout_rate=drop,
        norm_means=norm_means,
        norm_vars=norm_vars,
    )


def _as_rng(rng_state) -> np.random.Generator | None:
    if rng_state is None:
        return None
    if isinstance(rng_state, np.random.Generator):
        return rng_state
    return np.random.default_rng(rng_state)


def _forward_batch(model: NeuralRiskModel, X: np.ndarray, training_mode: bool, rng):
    """Run the network on a batch; returns (scores, cache for backprop)."""
    h = (X - model.feature_means) / model.feature_scales
    n_layers = len(model.layer_specs)
    has_bn = model.variant == "coxnnet"
    use_dropout = training_mode and model.dropout_rate > 0 and has_bn
    if use_dropout and rng is None:
        raise ValueError("training-mode dropout requires an rng")
    cache = {"inputs": [], "pre_bn": [], "bn": [], "pre_act": [], "masks": []}
    for li, (_, _, act) in enumerate(model.layer_specs):
        cache["inputs"].append(h)
        z = h @ model.weights[li] + model.biases[li]
        hidden = li < n_layers - 1
        if has_bn and hidden:
            if training_mode:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
            else:
                mu = model.norm_means[li]
                var = model.norm_vars[li]
            inv_std = 1.0 / np.sqrt(var + _BN_EPS)
            z_hat = (z - mu) * inv_std
            cache["bn"].append((z_hat, inv_std, mu, var, training_mode))
        else:
            z_hat = z
            cache["bn"].append(None)
        cache["pre_bn"].append(z)
        cache["pre_act"].append(z_hat)
        a = np.maximum(z_hat, 0.0) if act == "relu" else z_hat
        if hidden and use_dropout:
            keep = rng.random(a.shape) >= model.dropout_rate
            a = a * keep / (1.0 - model.dropout_rate)
            cache["masks"].append(keep)
        else:
            cache["masks"].append(None)
        h = a
    return h[:, 0], cache


def forward(model: NeuralRiskModel, features, training_mode: bool = False, rng_state=None) -> float:
    """Risk score for a single covariate vector.

    In inference mode dropout is inactive (the scaling is folded into
    training-time masks) and running batch-norm statistics are used.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise ValueError(f"expected {model.n_features} features, got shape {x.shape}")
    scores, _ = _forward_batch(model, x[None, :], training_mode, _as_rng(rng_state))
    return float(scores[0])


def score_batch(model: NeuralRiskModel, dataset: SurvivalDataset) -> np.ndarray:
    """Inference-mode risk scores for every subject."""
    if dataset.n_features != model.n_features:
        raise ValueError("dataset feature count does not match model")
    scores, _ = _forward_batch(model, dataset.features, False, None)
    return scores


def neural_cox_loss(model: NeuralRiskModel, dataset: SurvivalDataset,
                    training_mode: bool = False, rng_state=None) -> float:
    """Cox partial likelihood loss with g(x) given by the network."""
    if dataset.n_features != model.n_features:
        raise ValueError("dataset feature count does not match model")
    scores, _ = _forward_batch(model, dataset.features, training_mode, _as_rng(rng_state))
    return partial_likelihood_loss(scores, dataset)


def _backward_from_cache(model: NeuralRiskModel, cache, dscores: np.ndarray):
    n_layers = len(model.layer_specs)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    d_h = dscores[:, None]
    for li in range(n_layers - 1, -1, -1):
        _, _, act = model.layer_specs[li]
        mask = cache["masks"][li]
        if mask is not None:
            d_h = d_h * mask / (1.0 - model.dropout_rate)
        z_hat = cache["pre_act"][li]
        d_zhat = d_h * (z_hat > 0) if act == "relu" else d_h
        bn = cache["bn"][li]
        if bn is not None:
            x_hat, inv_std, _, _, from_batch = bn
            if from_batch:
                # batch statistics depend on z, so backprop through them
                d_z = inv_std * (
                    d_zhat
                    - d_zhat.mean(axis=0)
                    - x_hat * (d_zhat * x_hat).mean(axis=0)
                )
            else:
                # running statistics are constants at inference time
                d_z = d_zhat * inv_std
        else:
            d_z = d_zhat
        h_in = cache["inputs"][li]
        grads_w[li] = h_in.T @ d_z
        grads_b[li] = d_z.sum(axis=0)
        d_h = d_z @ model.weights[li].T
    return grads_w, grads_b


def backward(model: NeuralRiskModel, dataset: SurvivalDataset,
             training_mode: bool = False, rng_state=None):
    """Exact loss gradients for every weight matrix and bias vector.

    Returns ``(grads_w, grads_b)`` aligned with ``model.weights`` and
    ``model.biases``. With the same ``training_mode`` and rng state this
    matches finite differences of :func:`neural_cox_loss`, including
    backpropagation through batch statistics. All-censored data yields
    all-zero gradients.
    """
    if dataset.n_features != model.n_features:
        raise ValueError("dataset feature count does not match model")
    scores, cache = _forward_batch(model, dataset.features, training_mode, _as_rng(rng_state))
    dscores = partial_likelihood_score_gradient(scores, dataset)
    return _backward_from_cache(model, cache, dscores)


class _Diverged(Exception):
    pass


def _train_epochs(
    model: NeuralRiskModel,
    dataset: SurvivalDataset,
    epochs: int,
    learning_rate: float,
    l2: float,
    seed: int,
    epoch_offset: int = 0,
) -> list[float]:
    """Run full-batch gradient descent epochs in place.

    The dropout mask for global epoch e is drawn from a generator keyed
    by (seed, e), so a training run split across federation rounds
    consumes the identical mask sequence as an uninterrupted run.
    Raises ``_Diverged`` when the loss stops being finite.
    """
    n_events = max(dataset.n_events, 1)
    losses = []
    for e in range(epochs):
        rng = rng_for(seed, "epoch", epoch_offset + e)
        # divergence shows up as inf/nan here and is handled, so the
        # intermediate float warnings are noise
        with np.errstate(over="ignore", invalid="ignore"):
            scores, cache = _forward_batch(model, dataset.features, True, rng)
            loss = partial_likelihood_loss(scores, dataset)
        if not np.isfinite(loss):
            raise _Diverged
        losses.append(loss)
        if model.norm_means is not None:
            for li, bn in enumerate(cache["bn"]):
                if bn is None:
                    continue
                _, _, mu, var, _ = bn
                model.norm_means[li] = (1 - _BN_MOMENTUM) * model.norm_means[li] + _BN_MOMENTUM * mu
                model.norm_vars[li] = (1 - _BN_MOMENTUM) * model.norm_vars[li] + _BN_MOMENTUM * var
        # extreme scores can overflow the backward pass even when the
        # loss is still finite; the finiteness check below catches it
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            dscores = partial_likelihood_score_gradient(scores, dataset)
            grads_w, grads_b = _backward_from_cache(model, cache, dscores)
        if not all(np.isfinite(g).all() for g in grads_w + grads_b):
            raise _Diverged
        for li in range(len(model.weights)):
            model.weights[li] -= learning_rate * (grads_w[li] / n_events + l2 * model.weights[li])
            model.biases[li] -= learning_rate * grads_b[li] / n_events
    return losses


def _fit_once(train, variant, config, learning_rate, hidden_width, l2, standardization):
    stats = standardization or standardization_stats(train)
    lr = learning_rate
    for attempt in range(4):
        model = build_model(
            variant,
            train.n_features,
            hidden_width=hidden_width,
            seed=config.seed,
            standardization=stats,
        )
        try:
            losses = _train_epochs(model, train, config.epochs, lr, l2, config.seed)
        except _Diverged:
            # halve the learning rate and restart from the same init
            lr *= 0.5
            continue
        model.training_loss = np.array(losses)
        return model
    raise RuntimeError("training diverged after 3 learning-rate restarts")


def fit_neural(
    train: SurvivalDataset,
    variant: str,
    config: TrainConfig | None = None,
    standardization: tuple[np.ndarray, np.ndarray] | None = None,
) -> NeuralRiskModel:
    """Train a neural risk model on the Cox loss.

    Deterministic given ``config.seed``. When ``config.grid`` is set,
    every (learning_rate, hidden_width, l2) triple is trained on an
    internal 80/20 split, scored by validation concordance, and the best
    triple (first wins ties) is refit on the full training data.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    config = config or TrainConfig()
    if len(train) == 0:
        raise ValueError("empty dataset")
    if train.n_events == 0:
        raise ValueError("cannot fit: zero events")

    if config.grid:
        sub_train, sub_val = _split_dataset(train, 0.8, seed=seed_for(config.seed, "grid-split"))
        best = None
        for triple in config.grid:
            lr, width, l2 = triple
            candidate = _fit_once(sub_train, variant, config, lr, int(width), l2, standardization)
            c = concordance_index(score_batch(candidate, sub_val), sub_val)
            if best is None or c > best[0]:
                best = (c, triple)
        lr, width, l2 = best[1]
        return _fit_once(train, variant, config, lr, int(width), l2, standardization)

    return _fit_once(
        train, variant, config, config.learning_rate, config.hidden_width, config.l2, standardization
    )

"""Federated training across simulated clients.

Three strategies, one per model family:

* ``cox_param_avg``: every client fits a Cox model in a shared global
  standardization, then coefficients are averaged with reliability
  weights, beta_global = sum(r_k beta_k) / sum(r_k).
* ``fedavg_neural``: iterative FedAvg; each round broadcasts global
  weights, clients run local full-batch epochs, and flattened weight
  vectors are averaged with weights n_k / N. The coxnnet variant also
  averages running batch-norm statistics.
* ``tree_union``: each client grows a forest on 80% of its training
  split, ranks trees by solo concordance on the held-out 20%, and the
  orchestrator keeps the top ``tree_budget`` trees of the pooled,
  importance-sorted list.

Raw subject data never leaves a client; only model parameters, feature
means/scales, and fitted trees are exchanged. Clients are processed in
client_id order so aggregation is independent of roster order.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    CumulativeHazardCurve,
    SurvivalDataset,
    concordance_index,
    standardization_stats,
)
from .cox import CoxFitConfig, CoxModel, fit_cox, predict_risk_batch
from .data import split as split_dataset
from .forest import ForestConfig, SurvivalForest, fit_forest, predict_mortality_batch, rank_trees
from .neural import TrainConfig, _train_epochs, build_model, neural_cox_loss, score_batch
from .serialize import snapshot_id
from .seeding import seed_for

MODEL_FAMILIES = ("cox", "deepsurv", "coxnnet", "rsf")
STRATEGY_FOR_FAMILY = {
    "cox": "cox_param_avg",
    "deepsurv": "fedavg_neural",
    "coxnnet": "fedavg_neural",
    "rsf": "tree_union",
}


class FederationError(RuntimeError):
    """A client-level failure that aborts the federated run."""


@dataclass(frozen=True)
class ClientState:
    """One participating site: an id plus local train and test splits."""

    client_id: str
    train: SurvivalDataset
    test: SurvivalDataset

    @property
    def n_k(self) -> int:
        return len(self.train)


@dataclass(frozen=True)
class FederationPlan:
    """How a federated run is orchestrated.

    ``rounds`` and ``local_epochs_per_round`` default per strategy:
    one round for cox and tree strategies, 10 rounds of 10 epochs for
    neural FedAvg (100 total local epochs). ``client_weights`` maps
    client_id to the reliability weight r_k used by cox averaging;
    None means n_k.
    """

    strategy: str
    rounds: int | None = None
    local_epochs_per_round: int | None = None
    tree_budget: int = 100
    client_weights: dict[str, float] | None = None

    def __post_init__(self):
        if self.strategy not in ("cox_param_avg", "fedavg_neural", "tree_union"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        rounds = self.rounds
        epochs = self.local_epochs_per_round
        if rounds is None:
            rounds = 10 if self.strategy == "fedavg_neural" else 1
        if epochs is None:
            epochs = 10 if self.strategy == "fedavg_neural" else 1
        if rounds < 1 or epochs < 1:
            raise ValueError("rounds and local_epochs_per_round must be positive")
        if self.tree_budget < 1:
            raise ValueError("tree_budget must be positive")
        if self.client_weights is not None:
            if any(w <= 0 for w in self.client_weights.values()):
                raise ValueError("client weights must be positive")
        object.__setattr__(self, "rounds", rounds)
        object.__setattr__(self, "local_epochs_per_round", epochs)


@dataclass(frozen=True)
class RoundReport:
    """Telemetry for one broadcast/aggregate round."""

    round_index: int
    local_losses: dict[str, float]
    snapshot: str
    test_cindex: dict[str, float]


def fedavg_weights(vectors, sizes) -> np.ndarray:
    """FedAvg: size-weighted mean of client weight vectors.

    w_global = sum_k (n_k / N) w_k. With one client this returns that
    client's vector unchanged.
    """
    vecs = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vecs:
        raise ValueError("no client vectors")
    shape = vecs[0].shape
    if any(v.shape != shape for v in vecs):
        raise ValueError("client vectors disagree on shape")
    n = np.asarray(sizes, dtype=np.float64)
    if n.shape != (len(vecs),):
        raise ValueError("need one size per client vector")
    if np.any(n <= 0):
        raise ValueError("client sizes must be positive")
    total = n.sum()
    out = np.zeros(shape)
    for w, nk in zip(vecs, n):
        out += (nk / total) * w
    return out


def aggregate_cox(betas, weights) -> np.ndarray:
    """Reliability-weighted coefficient average sum(r_k beta_k) / sum(r_k)."""
    vecs = [np.asarray(b, dtype=np.float64) for b in betas]
    if not vecs:
        raise ValueError("no client coefficients")
    shape = vecs[0].shape
    if any(v.shape != shape for v in vecs):
        raise ValueError("client coefficients disagree on shape")
    r = np.asarray(weights, dtype=np.float64)
    if r.shape != (len(vecs),):
        raise ValueError("need one weight per client")
    if np.any(r <= 0):
        raise ValueError("client weights must be positive")
    total = r.sum()
    out = np.zeros(shape)
    for b, rk in zip(vecs, r):
        out += (rk / total) * b
    return out


def union_forests(forests, tree_budget: int) -> SurvivalForest:
    """Pool ranked client forests and keep the top ``tree_budget`` trees.

    All (tree, importance) pairs are sorted by importance descending;
    equal importances rotate through tree position and then client id,
    so equally ranked clients contribute evenly. The unioned forest's
    grid is the union of the client grids.
    """
    forests = list(forests)
    if not forests:
        raise ValueError("no forests to union")
    pool = []
    for forest in forests:
        for position, tree in enumerate(forest.trees):
            if tree.importance is None:
                raise ValueError("forest is not ranked: tree importance missing")
            pool.append((position, tree))
    if tree_budget > len(pool):
        raise ValueError(f"tree_budget {tree_budget} exceeds {len(pool)} pooled trees")
    pool.sort(key=lambda item: (-item[1].importance, item[0], item[1].client_tag or ""))
    chosen = tuple(tree for _, tree in pool[:tree_budget])
    grid = np.unique(np.concatenate([f.grid for f in forests]))
    return SurvivalForest(chosen, grid)


def _global_standardization(clients):
    sizes = np.array([c.n_k for c in clients], dtype=np.float64)
    means = fedavg_weights([standardization_stats(c.train)[0] for c in clients], sizes)
    scales = fedavg_weights([standardization_stats(c.train)[1] for c in clients], sizes)
    return means, scales


def _wrap_client_errors(client_id):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, FederationError):
                raise FederationError(f"client {client_id!r}: {exc}") from exc
            return False

    return _Ctx()


def _run_cox(clients, plan, config: CoxFitConfig):
    means, scales = _global_standardization(clients)
    sizes = [c.n_k for c in clients]
    weights = (
        [plan.client_weights[c.client_id] for c in clients]
        if plan.client_weights is not None
        else sizes
    )
    global_model = None
    beta_global = None
    reports = []
    for round_index in range(plan.rounds):
        betas, losses, converged = [], {}, True
        for c in clients:
            with _wrap_client_errors(c.client_id):
                local = fit_cox(
                    c.train, config, standardization=(means, scales), initial_beta=beta_global
                )
            betas.append(local.beta)
            losses[c.client_id] = local.final_loss
            converged = converged and local.converged
        beta_global = aggregate_cox(betas, weights)
        # the shared model is rank-only: no pooled data exists for a baseline,
        # so it carries the flat zero curve
        global_model = CoxModel(
            beta=beta_global,
            baseline=CumulativeHazardCurve(np.empty(0), np.empty(0)),
            feature_means=means,
            feature_scales=scales,
            converged=converged,
        )
        cindex = {
            c.client_id: concordance_index(predict_risk_batch(global_model, c.test), c.test)
            for c in clients
        }
        reports.append(RoundReport(round_index, losses, snapshot_id(global_model), cindex))
    return global_model, reports


def _run_neural(clients, plan, variant: str, config: TrainConfig):
    means, scales = _global_standardization(clients)
    sizes = [c.n_k for c in clients]
    model = build_model(
        variant,
        clients[0].train.n_features,
        hidden_width=config.hidden_width,
        seed=config.seed,
        standardization=(means, scales),
    )
    reports = []
    epoch = 0
    for round_index in range(plan.rounds):
        flats, losses = [], {}
        stats_m, stats_v = [], []
        for c in clients:
            local = model.clone()
            with _wrap_client_errors(c.client_id):
                _train_epochs(
                    local, c.train, plan.local_epochs_per_round,
                    config.learning_rate, config.l2, config.seed, epoch_offset=epoch,
                )
            flats.append(local.flatten_weights())
            losses[c.client_id] = neural_cox_loss(local, c.train)
            if local.norm_means is not None:
                stats_m.append(np.concatenate(local.norm_means))
                stats_v.append(np.concatenate(local.norm_vars))
        epoch += plan.local_epochs_per_round
        model.set_flat_weights(fedavg_weights(flats, sizes))
        if stats_m:
            flat_m = fedavg_weights(stats_m, sizes)
            flat_v = fedavg_weights(stats_v, sizes)
            offset = 0
            for li in range(len(model.norm_means)):
                width = model.norm_means[li].size
                model.norm_means[li] = flat_m[offset : offset + width].copy()
                model.norm_vars[li] = flat_v[offset : offset + width].copy()
                offset += width
        cindex = {
            c.client_id: concordance_index(score_batch(model, c.test), c.test)
            for c in clients
        }
        reports.append(RoundReport(round_index, losses, snapshot_id(model), cindex))
    return model, reports


def _run_tree(clients, plan, config: ForestConfig):
    reports = []
    global_forest = None
    for round_index in range(plan.rounds):
        ranked, losses = [], {}
        for c in clients:
            with _wrap_client_errors(c.client_id):
                fit_part, rank_part = split_dataset(
                    c.train, 0.8, seed=seed_for(config.seed, "rank-split", c.client_id)
                )
                local_cfg = replace(config, seed=seed_for(config.seed, "client", c.client_id))
                forest = fit_forest(fit_part, local_cfg, client_tag=c.client_id)
                ranked.append(rank_trees(forest, rank_part))
            # forests have no training loss; report the mean tree importance
            losses[c.client_id] = float(
                np.mean([t.importance for t in ranked[-1].trees])
            )
        global_forest = union_forests(ranked, plan.tree_budget)
        cindex = {
            c.client_id: concordance_index(
                predict_mortality_batch(global_forest, c.test.features), c.test
            )
            for c in clients
        }
        reports.append(RoundReport(round_index, losses, snapshot_id(global_forest), cindex))
    return global_forest, reports


def run_federation(
    clients,
    plan: FederationPlan,
    model_family: str,
    *,
    cox_config: CoxFitConfig | None = None,
    train_config: TrainConfig | None = None,
    forest_config: ForestConfig | None = None,
):
    """Run one federated training session.

    Returns ``(global_model, [RoundReport, ...])``. Clients are sorted
    by client_id internally, so the result does not depend on roster
    order. Any client-level error aborts the run as a
    :class:`FederationError` naming the client.
    """
    if model_family not in MODEL_FAMILIES:
        raise ValueError(f"unknown model family {model_family!r}")
    expected = STRATEGY_FOR_FAMILY[model_family]
    if plan.strategy != expected:
        raise ValueError(
            f"family {model_family!r} requires strategy {expected!r}, plan has {plan.strategy!r}"
        )
    roster = sorted(clients, key=lambda c: c.client_id)
    if not roster:
        raise ValueError("no clients")
    ids = [c.client_id for c in roster]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client ids")
    p = roster[0].train.n_features
    if any(c.train.n_features != p for c in roster):
        raise FederationError("clients disagree on feature count")
    if plan.client_weights is not None:
        missing = [i for i in ids if i not in plan.client_weights]
        if missing:
            raise ValueError(f"client_weights missing entries for {missing}")

    if model_family == "cox":
        return _run_cox(roster, plan, cox_config or CoxFitConfig())
    if model_family in ("deepsurv", "coxnnet"):
        return _run_neural(roster, plan, model_family, train_config or TrainConfig())
    return _run_tree(roster, plan, forest_config or ForestConfig())

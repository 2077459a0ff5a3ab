"""Federated survival analysis on simulated hospital networks.

Trains proportional-hazards, neural risk, and random survival forest
models on per-zone cohorts and combines them without pooling records:
coefficient averaging for the linear model, weight averaging for the
networks, and an importance-ranked tree union for the forests.
"""
from .core import (
    CumulativeHazardCurve,
    SurvivalDataset,
    SurvivalRecord,
    concordance_index,
    nelson_aalen,
    risk_set_sizes,
)
from .cox import CoxFitConfig, CoxModel, breslow_baseline, cox_loss, fit_cox, predict_risk, predict_risk_batch
from .data import (
    DatasetSchema,
    InteractionTruth,
    LinearTruth,
    ScenarioConfig,
    ZoneSpec,
    generate_scenario,
    generic_schema,
    load_csv,
    dialysis_schema,
    split,
    write_csv,
)
from .experiment import (
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    load_config,
    parse_config,
    run_experiment,
)
from .federation import (
    ClientState,
    FederationError,
    FederationPlan,
    aggregate_cox,
    fedavg_weights,
    run_federation,
    union_forests,
)
from .forest import (
    ForestConfig,
    SurvivalForest,
    SurvivalTree,
    fit_forest,
    fit_tree,
    predict_mortality,
    predict_mortality_batch,
    rank_trees,
)
from .neural import NeuralRiskModel, TrainConfig, fit_neural, score_batch
from .serialize import deserialize_model, serialize_model, snapshot_id

__version__ = "0.1.0"

__all__ = [
    "ClientState",
    "ConfigError",
    "CoxFitConfig",
    "CoxModel",
    "CumulativeHazardCurve",
    "DatasetSchema",
    "ExperimentConfig",
    "ExperimentReport",
    "FederationError",
    "FederationPlan",
    "ForestConfig",
    "InteractionTruth",
    "LinearTruth",
    "NeuralRiskModel",
    "ScenarioConfig",
    "SurvivalDataset",
    "SurvivalForest",
    "SurvivalRecord",
    "SurvivalTree",
    "TrainConfig",
    "ZoneSpec",
    "aggregate_cox",
    "breslow_baseline",
    "concordance_index",
    "cox_loss",
    "deserialize_model",
    "fedavg_weights",
    "fit_cox",
    "fit_forest",
    "fit_neural",
    "fit_tree",
    "generate_scenario",
    "generic_schema",
    "load_config",
    "load_csv",
    "nelson_aalen",
    "dialysis_schema",
    "parse_config",
    "predict_mortality",
    "predict_mortality_batch",
    "predict_risk",
    "predict_risk_batch",
    "rank_trees",
    "risk_set_sizes",
    "run_experiment",
    "run_federation",
    "score_batch",
    "serialize_model",
    "snapshot_id",
    "split",
    "union_forests",
    "write_csv",
]

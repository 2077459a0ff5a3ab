"""Experiment harness: local-vs-federated concordance over a client grid.

A run crosses every client zone with every requested model family in
two settings, ``local`` (train and evaluate on the client alone) and
``federated`` (one federated session per family, evaluated on each
client's test split), optionally repeated with derived seeds. Failures
are recorded per cell and never abort the grid.

Reports are deterministic: identical configurations produce
byte-identical CSV and markdown files, whether cells run serially or in
parallel (``FEDSURV_THREADS``).
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import SurvivalDataset, concordance_index
from .cox import CoxFitConfig, fit_cox, predict_risk_batch
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
)
from .federation import (
    STRATEGY_FOR_FAMILY,
    ClientState,
    FederationPlan,
    run_federation,
)
from .forest import ForestConfig, fit_forest, predict_mortality_batch
from .neural import TrainConfig, fit_neural, score_batch
from .seeding import seed_for
from .serialize import serialize_model

SETTINGS = ("local", "federated")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    families: tuple[str, ...]
    scenario: ScenarioConfig | None
    zone_csvs: dict[str, str] | None
    schema: DatasetSchema
    split_ratio: float
    split_seed: int
    n_repeats: int
    output_dir: str
    cox: CoxFitConfig
    deepsurv: TrainConfig
    coxnnet: TrainConfig
    rsf: ForestConfig
    plans: dict[str, FederationPlan]

    @property
    def zone_names(self) -> tuple[str, ...]:
        if self.scenario is not None:
            return tuple(z.name for z in self.scenario.zones)
        return tuple(self.zone_csvs)


@dataclass(frozen=True)
class CellResult:
    client: str
    family: str
    setting: str
    repeat: int
    cindex: float | None
    error: str | None = None


@dataclass(frozen=True)
class ExperimentReport:
    clients: tuple[str, ...]
    families: tuple[str, ...]
    n_repeats: int
    cells: tuple[CellResult, ...]

    def cell_map(self) -> dict:
        return {(c.client, c.family, c.setting, c.repeat): c for c in self.cells}

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.cells if c.error is not None)


# ---------------------------------------------------------------------------
# config parsing


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing key {key!r}")
    return mapping[key]


def _check_keys(mapping: dict, allowed: set[str], context: str):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{context}: unknown key {sorted(unknown)[0]!r}")


def _parse_truth(raw: dict, context: str):
    _check_keys(raw, {"kind", "beta", "pairs"}, context)
    kind = _require(raw, "kind", context)
    try:
        if kind == "linear":
            return LinearTruth(np.asarray(_require(raw, "beta", context), dtype=np.float64))
        if kind == "interaction":
            pairs = _require(raw, "pairs", context)
            beta = raw.get("beta")
            return InteractionTruth(
                tuple((int(i), int(j), float(c)) for i, j, c in pairs),
                None if beta is None else np.asarray(beta, dtype=np.float64),
            )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc
    raise ConfigError(f"{context}: unknown truth kind {kind!r}")


def _parse_scenario(raw: dict) -> ScenarioConfig:
    ctx = "scenario"
    _check_keys(raw, {"seed", "baseline_rate", "n_features", "truth", "zones"}, ctx)
    zones = []
    for zi, z in enumerate(_require(raw, "zones", ctx)):
        zctx = f"scenario.zones[{zi}]"
        _check_keys(z, {"name", "n_patients", "censoring_target", "risk_shift", "skew"}, zctx)
        try:
            zones.append(
                ZoneSpec(
                    name=str(_require(z, "name", zctx)),
                    n_patients=int(_require(z, "n_patients", zctx)),
                    censoring_target=float(_require(z, "censoring_target", zctx)),
                    risk_shift=float(z.get("risk_shift", 0.0)),
                    skew=float(z.get("skew", 0.0)),
                )
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{zctx}: {exc}") from exc
    try:
        return ScenarioConfig(
            zones=tuple(zones),
            truth=_parse_truth(_require(raw, "truth", ctx), "scenario.truth"),
            n_features=int(raw.get("n_features", 17)),
            baseline_rate=float(raw.get("baseline_rate", 1.0)),
            seed=int(raw.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def _parse_schema_name(name: str) -> DatasetSchema:
    if name == "dialysis":
        return dialysis_schema()
    if name.startswith("generic:"):
        return generic_schema(int(name.split(":", 1)[1]))
    raise ConfigError(f"unknown schema {name!r} (use 'dialysis' or 'generic:<k>')")


def _parse_training(raw: dict, families):
    _check_keys(raw, {"cox", "deepsurv", "coxnnet", "rsf"}, "training")
    try:
        cox_raw = dict(raw.get("cox", {}))
        cox = CoxFitConfig(**cox_raw)
        deepsurv_raw = dict(raw.get("deepsurv", {}))
        if "grid" in deepsurv_raw and deepsurv_raw["grid"] is not None:
            deepsurv_raw["grid"] = [tuple(t) for t in deepsurv_raw["grid"]]
        deepsurv = TrainConfig(**deepsurv_raw)
        coxnnet_raw = dict(raw.get("coxnnet", {}))
        if "grid" in coxnnet_raw and coxnnet_raw["grid"] is not None:
            coxnnet_raw["grid"] = [tuple(t) for t in coxnnet_raw["grid"]]
        coxnnet = TrainConfig(**coxnnet_raw)
        rsf = ForestConfig(**dict(raw.get("rsf", {})))
    except TypeError as exc:
        raise ConfigError(f"training: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"training: {exc}") from exc
    return cox, deepsurv, coxnnet, rsf


def _parse_plans(raw: dict, families):
    _check_keys(raw, {"cox", "deepsurv", "coxnnet", "rsf"}, "federation")
    plans = {}
    for family in families:
        entry = dict(raw.get(family, {}))
        _check_keys(
            entry,
            {"rounds", "local_epochs_per_round", "tree_budget", "client_weights"},
            f"federation.{family}",
        )
        try:
            plans[family] = FederationPlan(
                strategy=STRATEGY_FOR_FAMILY[family],
                rounds=entry.get("rounds"),
                local_epochs_per_round=entry.get("local_epochs_per_round"),
                tree_budget=int(entry.get("tree_budget", 100)),
                client_weights=entry.get("client_weights"),
            )
        except ValueError as exc:
            raise ConfigError(f"federation.{family}: {exc}") from exc
    return plans


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a parsed JSON document into an :class:`ExperimentConfig`.

    ``base_dir`` anchors relative paths (normally the config file's
    directory).
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    _check_keys(
        raw,
        {"families", "scenario", "zones_csv", "schema", "split", "n_repeats",
         "output_dir", "training", "federation"},
        "config",
    )
    families = tuple(_require(raw, "families", "config"))
    if not families:
        raise ConfigError("config: families must not be empty")
    for f in families:
        if f not in STRATEGY_FOR_FAMILY:
            raise ConfigError(f"config: unknown model family {f!r}")
    if len(set(families)) != len(families):
        raise ConfigError("config: duplicate model family")

    scenario = None
    zone_csvs = None
    if "scenario" in raw and "zones_csv" in raw:
        raise ConfigError("config: give either scenario or zones_csv, not both")
    if "scenario" in raw:
        scenario = _parse_scenario(raw["scenario"])
        schema = scenario.schema
    elif "zones_csv" in raw:
        zone_csvs = {
            str(name): str(base / path) for name, path in raw["zones_csv"].items()
        }
        if not zone_csvs:
            raise ConfigError("config: zones_csv must not be empty")
        schema = _parse_schema_name(raw.get("schema", "dialysis"))
    else:
        raise ConfigError("config: needs a scenario or zones_csv section")

    split_raw = dict(raw.get("split", {}))
    _check_keys(split_raw, {"ratio", "seed"}, "split")
    ratio = float(split_raw.get("ratio", 0.8))
    if not 0.0 < ratio < 1.0:
        raise ConfigError("split: ratio must be in (0, 1)")
    n_repeats = int(raw.get("n_repeats", 1))
    if n_repeats < 1:
        raise ConfigError("config: n_repeats must be positive")

    cox, deepsurv, coxnnet, rsf = _parse_training(dict(raw.get("training", {})), families)
    plans = _parse_plans(dict(raw.get("federation", {})), families)
    return ExperimentConfig(
        families=families,
        scenario=scenario,
        zone_csvs=zone_csvs,
        schema=schema,
        split_ratio=ratio,
        split_seed=int(split_raw.get("seed", 0)),
        n_repeats=n_repeats,
        output_dir=str(base / raw.get("output_dir", "out")),
        cox=cox,
        deepsurv=deepsurv,
        coxnnet=coxnnet,
        rsf=rsf,
        plans=plans,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return parse_config(raw, base_dir=path.parent)


# ---------------------------------------------------------------------------
# running


def _family_config(config: ExperimentConfig, family: str):
    return {
        "cox": config.cox,
        "deepsurv": config.deepsurv,
        "coxnnet": config.coxnnet,
        "rsf": config.rsf,
    }[family]


def _reseeded(cfg, seed: int):
    return replace(cfg, seed=seed) if hasattr(cfg, "seed") else cfg


def _fit_and_score_local(family, cfg, train, test) -> float:
    if family == "cox":
        model = fit_cox(train, cfg)
        scores = predict_risk_batch(model, test)
    elif family in ("deepsurv", "coxnnet"):
        model = fit_neural(train, family, cfg)
        scores = score_batch(model, test)
    else:
        model = fit_forest(train, cfg)
        scores = predict_mortality_batch(model, test.features)
    return concordance_index(scores, test)


def _load_zones(config: ExperimentConfig, repeat: int) -> dict[str, SurvivalDataset]:
    if config.scenario is not None:
        scenario = replace(
            config.scenario, seed=seed_for(config.scenario.seed, "repeat", repeat)
        )
        return generate_scenario(scenario)
    return {name: load_csv(path, config.schema) for name, path in config.zone_csvs.items()}


def _split_clients(config: ExperimentConfig, zones: dict, repeat: int) -> list[ClientState]:
    clients = []
    for name, ds in zones.items():
        train, test = split(
            ds, config.split_ratio, seed=seed_for(config.split_seed, "split", repeat, name)
        )
        clients.append(ClientState(name, train, test))
    return clients


def run_experiment(config: ExperimentConfig, threads: int | None = None):
    """Execute the full grid; returns ``(ExperimentReport, global_models)``.

    ``global_models`` maps (family, repeat) to the federated global
    model. ``threads`` defaults to the FEDSURV_THREADS environment
    variable (else 1); parallel execution changes no output because
    every cell derives its own seeds.
    """
    if threads is None:
        threads = max(1, int(os.environ.get("FEDSURV_THREADS", "1")))
    results: dict[tuple, CellResult] = {}
    global_models: dict[tuple, object] = {}
    tasks = []

    for repeat in range(config.n_repeats):
        zones = _load_zones(config, repeat)
        clients = _split_clients(config, zones, repeat)
        by_id = {c.client_id: c for c in clients}

        def local_task(family, client_id, repeat=repeat, by_id=by_id):
            c = by_id[client_id]
            base_cfg = _family_config(config, family)
            cfg = _reseeded(
                base_cfg,
                seed_for(getattr(base_cfg, "seed", 0), "local", repeat, client_id),
            )
            key = (client_id, family, "local", repeat)
            try:
                cindex = _fit_and_score_local(family, cfg, c.train, c.test)
                return key, CellResult(client_id, family, "local", repeat, cindex)
            except Exception as exc:  # cell failures are reported, not fatal
                return key, CellResult(client_id, family, "local", repeat, None, str(exc))

        def federated_task(family, repeat=repeat, clients=clients):
            base_cfg = _family_config(config, family)
            cfg = _reseeded(
                base_cfg, seed_for(getattr(base_cfg, "seed", 0), "fed", repeat)
            )
            kwargs = {}
            if family == "cox":
                kwargs["cox_config"] = cfg
            elif family in ("deepsurv", "coxnnet"):
                kwargs["train_config"] = cfg
            else:
                kwargs["forest_config"] = cfg
            out = []
            try:
                model, reports = run_federation(clients, config.plans[family], family, **kwargs)
                final = reports[-1].test_cindex
                for c in clients:
                    key = (c.client_id, family, "federated", repeat)
                    out.append(
                        (key, CellResult(c.client_id, family, "federated", repeat,
                                         final[c.client_id]))
                    )
                return out, ((family, repeat), model)
            except Exception as exc:
                msg = str(exc)
                for c in clients:
                    key = (c.client_id, family, "federated", repeat)
                    out.append(
                        (key, CellResult(c.client_id, family, "federated", repeat, None, msg))
                    )
                return out, None

        for family in config.families:
            for c in clients:
                tasks.append(("local", family, c.client_id, local_task))
            tasks.append(("federated", family, None, federated_task))

    def execute(task):
        kind, family, client_id, fn = task
        if kind == "local":
            return ("local", fn(family, client_id))
        return ("federated", fn(family))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(execute, tasks))
    else:
        outcomes = [execute(t) for t in tasks]

    for kind, payload in outcomes:
        if kind == "local":
            key, cell = payload
            results[key] = cell
        else:
            cells, model_entry = payload
            for key, cell in cells:
                results[key] = cell
            if model_entry is not None:
                global_models[model_entry[0]] = model_entry[1]

    zone_names = config.zone_names
    ordered = []
    for repeat in range(config.n_repeats):
        for client in zone_names:
            for family in config.families:
                for setting in SETTINGS:
                    ordered.append(results[(client, family, setting, repeat)])
    report = ExperimentReport(
        clients=zone_names,
        families=config.families,
        n_repeats=config.n_repeats,
        cells=tuple(ordered),
    )
    return report, global_models


# ---------------------------------------------------------------------------
# rendering


def render_csv(report: ExperimentReport) -> str:
    """Deterministic CSV: full-precision repr so values round-trip exactly."""
    if not report.cells:
        raise ValueError("report has no cells to render")
    lines = ["client,family,setting,repeat,cindex"]
    for cell in report.cells:
        value = "" if cell.cindex is None else repr(cell.cindex)
        lines.append(f"{cell.client},{cell.family},{cell.setting},{cell.repeat},{value}")
    return "\n".join(lines) + "\n"


def parse_results_csv(text: str) -> list[CellResult]:
    """Inverse of :func:`render_csv` (errors come back as bare failures)."""
    lines = text.strip("\n").split("\n")
    if lines[0] != "client,family,setting,repeat,cindex":
        raise ValueError("unexpected results header")
    out = []
    for line in lines[1:]:
        client, family, setting, repeat, value = line.split(",")
        out.append(
            CellResult(
                client, family, setting, int(repeat),
                None if value == "" else float(value),
                None if value != "" else "failed",
            )
        )
    return out


def _cell_mean(report, client, family, setting):
    vals = [
        c.cindex
        for c in report.cells
        if c.client == client and c.family == family and c.setting == setting
    ]
    if any(v is None for v in vals):
        return None
    return float(np.mean(vals))


def render_markdown(report: ExperimentReport) -> str:
    """Zone-by-model table of local vs federated mean concordance.

    The federated entry is bold when it is at least the local one, and
    a second table names each client's best setting (ties reported as
    'Federated & Local').
    """
    if not report.cells:
        raise ValueError("report has no cells to render")
    lines = ["# Local vs federated test concordance", ""]
    header = ["Model"]
    for client in report.clients:
        header += [f"{client} (local)", f"{client} (federated)"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for family in report.families:
        row = [family]
        for client in report.clients:
            local = _cell_mean(report, client, family, "local")
            fed = _cell_mean(report, client, family, "federated")
            row.append("failed" if local is None else f"{local:.3f}")
            if fed is None:
                row.append("failed")
            else:
                text = f"{fed:.3f}"
                row.append(f"**{text}**" if local is not None and fed >= local else text)
        lines.append("| " + " | ".join(row) + " |")
    lines += ["", "## Best setting per client", ""]
    lines.append("| Client | Best |")
    lines.append("|---|---|")
    for client in report.clients:
        best_val = None
        best_settings = set()
        for family in report.families:
            for setting in SETTINGS:
                v = _cell_mean(report, client, family, setting)
                if v is None:
                    continue
                if best_val is None or v > best_val:
                    best_val, best_settings = v, {setting}
                elif v == best_val:
                    best_settings.add(setting)
        if best_val is None:
            label = "failed"
        elif best_settings == {"local", "federated"}:
            label = "Federated & Local"
        else:
            label = "Federated" if "federated" in best_settings else "Local"
        lines.append(f"| {client} | {label} |")
    failed = [c for c in report.cells if c.error is not None]
    if failed:
        lines += ["", "## Failed cells", ""]
        for c in failed:
            lines.append(f"- {c.client}/{c.family}/{c.setting}/repeat {c.repeat}: {c.error}")
    return "\n".join(lines) + "\n"


def report_to_json(report: ExperimentReport) -> str:
    doc = {
        "clients": list(report.clients),
        "families": list(report.families),
        "n_repeats": report.n_repeats,
        "cells": [
            {
                "client": c.client,
                "family": c.family,
                "setting": c.setting,
                "repeat": c.repeat,
                "cindex": c.cindex,
                "error": c.error,
            }
            for c in report.cells
        ],
    }
    return json.dumps(doc, indent=1)


def report_from_json(text: str) -> ExperimentReport:
    doc = json.loads(text)
    cells = tuple(
        CellResult(c["client"], c["family"], c["setting"], c["repeat"], c["cindex"], c["error"])
        for c in doc["cells"]
    )
    return ExperimentReport(
        clients=tuple(doc["clients"]),
        families=tuple(doc["families"]),
        n_repeats=doc["n_repeats"],
        cells=cells,
    )


def emit_report(report: ExperimentReport, out_dir, fmt: str = "both") -> list[Path]:
    """Write results.csv / report.md (and always report.json) into ``out_dir``."""
    if not report.cells:
        raise ValueError("report has no cells to render")
    if fmt not in ("csv", "markdown", "both"):
        raise ValueError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        path = out / "results.csv"
        path.write_text(render_csv(report))
        written.append(path)
    if fmt in ("markdown", "both"):
        path = out / "report.md"
        path.write_text(render_markdown(report))
        written.append(path)
    path = out / "report.json"
    path.write_text(report_to_json(report))
    written.append(path)
    return written


def save_global_models(global_models: dict, out_dir) -> list[Path]:
    out = Path(out_dir) / "models"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (family, repeat), model in sorted(global_models.items(), key=lambda kv: kv[0]):
        path = out / f"{family}_global_r{repeat}.json"
        path.write_text(serialize_model(model) + "\n")
        written.append(path)
    return written

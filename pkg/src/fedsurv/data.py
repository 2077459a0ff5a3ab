"""Synthetic cohort generation, CSV interchange, and train/test splitting.

Scenarios describe a handful of geographic zones that share one ground
truth hazard but differ in size, covariate distribution, censoring
level, and a zone-level hazard shift, which makes the zones usable as
non-IID federation clients. Event times follow

    T ~ Exponential(rate = baseline_rate * exp(g(x) + risk_shift))

drawn by inverse CDF, with independent exponential censoring whose rate
is calibrated by bisection to hit the requested censoring fraction.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import SurvivalDataset
from .seeding import rng_for

# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class ColumnSpec:
    """One raw variable: ``kind`` is continuous, binary, or categorical."""

    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("continuous", "binary", "categorical"):
            raise ValueError(f"unknown column kind {self.kind!r}")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise ValueError(f"categorical column {self.name!r} needs at least 2 levels")
        object.__setattr__(self, "levels", tuple(self.levels))


@dataclass(frozen=True)
class DatasetSchema:
    """Ordered raw variables plus the derived one-hot expansion."""

    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names in schema")

    @property
    def raw_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def expanded_names(self) -> tuple[str, ...]:
        out = []
        for c in self.columns:
            if c.kind == "categorical":
                out.extend(f"{c.name}={lvl}" for lvl in c.levels)
            else:
                out.append(c.name)
        return tuple(out)

    @property
    def expanded_width(self) -> int:
        return len(self.expanded_names)


def generic_schema(n_features: int) -> DatasetSchema:
    """All-continuous schema x1..xn for abstract simulation studies."""
    return DatasetSchema(tuple(ColumnSpec(f"x{i + 1}", "continuous") for i in range(n_features)))


def dialysis_schema() -> DatasetSchema:
    """Dialysis-registry style schema: 2 continuous, 10 binary, 5 categorical.

    Level sets are synthetic stand-ins, not clinical claims.
    """
    cols = [
        ColumnSpec("age", "continuous"),
        ColumnSpec("vas_value", "continuous"),
        ColumnSpec("gender", "binary"),
        ColumnSpec("hematuria", "binary"),
        ColumnSpec("diabetes", "binary"),
        ColumnSpec("dislipidemia", "binary"),
        ColumnSpec("ecg_abnormality", "binary"),
        ColumnSpec("heart_attack_history", "binary"),
        ColumnSpec("heart_failure_history", "binary"),
        ColumnSpec("peripheral_vascular_disease", "binary"),
        ColumnSpec("stroke_history", "binary"),
        ColumnSpec("hypertension_history", "binary"),
        ColumnSpec("guest_type", "categorical", ("regular", "visiting", "transient")),
        ColumnSpec("esrd_cause", "categorical", ("diabetic", "hypertensive", "other")),
        ColumnSpec("alcohol_intake", "categorical", ("none", "moderate", "heavy")),
        ColumnSpec("exercise_level", "categorical", ("low", "medium", "high")),
        ColumnSpec("smoking_status", "categorical", ("never", "former", "current")),
    ]
    return DatasetSchema(tuple(cols))


# ---------------------------------------------------------------------------
# scenario configuration


@dataclass(frozen=True)
class LinearTruth:
    """Ground truth g(x) = beta' x on the expanded feature vector."""

    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64))

    def scores(self, X: np.ndarray) -> np.ndarray:
        return X @ self.beta


@dataclass(frozen=True)
class InteractionTruth:
    """Ground truth driven by feature products, optionally plus a linear part.

    ``pairs`` lists (i, j, coefficient) product terms over expanded
    feature indices.
    """

    pairs: tuple[tuple[int, int, float], ...]
    beta: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "pairs", tuple((int(i), int(j), float(c)) for i, j, c in self.pairs)
        )
        if self.beta is not None:
            object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64))

    def scores(self, X: np.ndarray) -> np.ndarray:
        g = np.zeros(X.shape[0])
        for i, j, c in self.pairs:
            g += c * X[:, i] * X[:, j]
        if self.beta is not None:
            g += X @ self.beta
        return g


@dataclass(frozen=True)
class ZoneSpec:
    """One simulated site.

    ``censoring_target`` is the desired censored fraction (0 disables
    censoring entirely); ``risk_shift`` adds a constant to every
    subject's log hazard; ``skew`` scales how far the zone's covariate
    distribution drifts from the scenario baseline.
    """

    name: str
    n_patients: int
    censoring_target: float
    risk_shift: float = 0.0
    skew: float = 0.0

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")
        if not 0.0 <= self.censoring_target < 1.0:
            raise ValueError("censoring_target must be in [0, 1)")


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of a synthetic multi-zone cohort."""

    zones: tuple[ZoneSpec, ...]
    truth: LinearTruth | InteractionTruth
    n_features: int = 17
    baseline_rate: float = 1.0
    seed: int = 0
    schema: DatasetSchema | None = None

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        if not self.zones:
            raise ValueError("scenario needs at least one zone")
        names = [z.name for z in self.zones]
        if len(set(names)) != len(names):
            raise ValueError("duplicate zone names")
        if self.baseline_rate <= 0:
            raise ValueError("baseline_rate must be positive")
        schema = self.schema
        if schema is None:
            schema = dialysis_schema() if self.n_features == 17 else generic_schema(self.n_features)
            object.__setattr__(self, "schema", schema)
        if len(schema.columns) != self.n_features:
            raise ValueError(
                f"schema has {len(schema.columns)} raw columns, n_features is {self.n_features}"
            )
        width = schema.expanded_width
        beta = getattr(self.truth, "beta", None)
        if beta is not None and beta.shape != (width,):
            raise ValueError(f"truth beta has shape {beta.shape}, expanded width is {width}")
        if isinstance(self.truth, InteractionTruth):
            for i, j, _ in self.truth.pairs:
                if not (0 <= i < width and 0 <= j < width):
                    raise ValueError("interaction pair index out of range")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _draw_zone_features(schema: DatasetSchema, zone: ZoneSpec, base_rng, zone_rng, n: int):
    """Expanded feature matrix for one zone.

    Scenario-level draws (shared across zones) set baseline prevalences;
    zone-level draws add skew-scaled shifts, so zones are non-IID but
    comparable.
    """
    blocks = []
    for col in schema.columns:
        if col.kind == "continuous":
            base_mu = base_rng.normal(0.0, 0.25)
            mu = base_mu + zone.skew * zone_rng.uniform(-1.0, 1.0)
            blocks.append(zone_rng.normal(mu, 1.0, size=n)[:, None])
        elif col.kind == "binary":
            base_logit = base_rng.normal(0.0, 0.5)
            logit = base_logit + zone.skew * zone_rng.uniform(-1.0, 1.0)
            prob = float(np.clip(_sigmoid(logit), 0.05, 0.95))
            blocks.append((zone_rng.random(n) < prob).astype(np.float64)[:, None])
        else:
            k = len(col.levels)
            base_logits = base_rng.normal(0.0, 0.5, size=k)
            logits = base_logits + zone.skew * zone_rng.uniform(-1.0, 1.0, size=k)
            probs = np.exp(logits - logits.max())
            probs /= probs.sum()
            draws = zone_rng.choice(k, size=n, p=probs)
            onehot = np.zeros((n, k))
            onehot[np.arange(n), draws] = 1.0
            blocks.append(onehot)
    return np.hstack(blocks)


def _calibrate_censoring(event_times: np.ndarray, censor_draws: np.ndarray,
                         target: float, max_steps: int = 50) -> float:
    """Bisection on the censoring rate so the realized fraction hits ``target``.

    ``censor_draws`` are unit exponentials; candidate censoring times are
    draws / rate, so the censored fraction is monotone in the rate.
    """
    def realized(rate):
        return float(np.mean(censor_draws / rate < event_times))

    lo = 1e-12 / float(np.mean(event_times))
    hi = 1.0 / float(np.mean(event_times))
    for _ in range(64):
        if realized(hi) >= target:
            break
        hi *= 2.0
    best_rate, best_err = hi, abs(realized(hi) - target)
    for _ in range(max_steps):
        mid = math.sqrt(lo * hi)
        frac = realized(mid)
        err = abs(frac - target)
        if err < best_err:
            best_rate, best_err = mid, err
        if frac < target:
            lo = mid
        else:
            hi = mid
        if err <= 0.005:
            return mid
    if best_err <= 0.03:
        return best_rate
    raise ValueError(
        f"censoring calibration failed: target {target:.3f}, achieved {realized(best_rate):.3f}"
    )


def generate_scenario(config: ScenarioConfig) -> dict[str, SurvivalDataset]:
    """Simulate every zone; returns ``{zone_name: dataset}`` in config order.

    Each zone uses a seed derived from (scenario seed, zone index), so
    zones could be generated independently or in parallel without
    changing any draw.
    """
    schema = config.schema
    names = schema.expanded_names
    out = {}
    for zi, zone in enumerate(config.zones):
        base_rng = rng_for(config.seed, "scenario-base")  # replayed per zone, shared draws
        zone_rng = rng_for(config.seed, "zone", zi)
        X = _draw_zone_features(schema, zone, base_rng, zone_rng, zone.n_patients)
        g = config.truth.scores(X) + zone.risk_shift
        rates = config.baseline_rate * np.exp(g)
        event_times = zone_rng.exponential(1.0, size=zone.n_patients) / rates
        event_times = np.maximum(event_times, 1e-12)
        if zone.censoring_target == 0.0:
            times, events = event_times, np.ones(zone.n_patients, dtype=bool)
        else:
            censor_draws = zone_rng.exponential(1.0, size=zone.n_patients)
            rate_c = _calibrate_censoring(event_times, censor_draws, zone.censoring_target)
            censor_times = censor_draws / rate_c
            events = event_times <= censor_times
            times = np.minimum(event_times, censor_times)
        out[zone.name] = SurvivalDataset(X, times, events, names)
    return out


# ---------------------------------------------------------------------------
# CSV interchange


def write_csv(dataset: SurvivalDataset, schema: DatasetSchema, path) -> None:
    """Write one zone as CSV with raw (un-expanded) columns plus time and event.

    Floats are written with ``repr`` so a read-back reproduces every
    value bit for bit.
    """
    if dataset.feature_names != schema.expanded_names:
        raise ValueError("dataset feature names do not match schema expansion")
    X = dataset.features
    columns = []
    offset = 0
    for col in schema.columns:
        if col.kind == "categorical":
            block = X[:, offset : offset + len(col.levels)]
            if not np.all(np.isin(block, (0.0, 1.0))) or not np.all(block.sum(axis=1) == 1.0):
                raise ValueError(f"column {col.name!r} is not exactly one-hot")
            columns.append([col.levels[k] for k in block.argmax(axis=1)])
            offset += len(col.levels)
        elif col.kind == "binary":
            vals = X[:, offset]
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise ValueError(f"column {col.name!r} has non-binary values")
            columns.append([str(int(v)) for v in vals])
            offset += 1
        else:
            columns.append([repr(float(v)) for v in X[:, offset]])
            offset += 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(schema.raw_names) + ["time", "event"])
        for i in range(len(dataset)):
            row = [columns[j][i] for j in range(len(schema.columns))]
            row.append(repr(float(dataset.times[i])))
            row.append(str(int(dataset.events[i])))
            writer.writerow(row)


def load_csv(path, schema: DatasetSchema) -> SurvivalDataset:
    """Load a zone CSV, expanding categorical columns to one-hot indicators.

    The header must be exactly the schema's raw columns plus ``time``
    and ``event``. Malformed cells raise ``ValueError`` naming the
    1-based data row and the column.
    """
    expected = list(schema.raw_names) + ["time", "event"]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty csv file") from None
        if header != expected:
            unknown = [c for c in header if c not in expected]
            if unknown:
                raise ValueError(f"unknown column {unknown[0]!r}")
            raise ValueError(f"header mismatch: expected {expected}, got {header}")
        rows = list(reader)
    if not rows:
        raise ValueError("csv contains no data rows")
    n = len(rows)
    X = np.zeros((n, schema.expanded_width))
    times = np.zeros(n)
    events = np.zeros(n, dtype=bool)

    def fail(row_idx, col_name, why):
        raise ValueError(f"row {row_idx + 1}, column {col_name!r}: {why}")

    for ri, row in enumerate(rows):
        if len(row) != len(expected):
            raise ValueError(f"row {ri + 1}: expected {len(expected)} cells, got {len(row)}")
        offset = 0
        for ci, col in enumerate(schema.columns):
            cell = row[ci].strip()
            if cell == "":
                fail(ri, col.name, "missing value")
            if col.kind == "categorical":
                if cell not in col.levels:
                    fail(ri, col.name, f"unknown level {cell!r}")
                X[ri, offset + col.levels.index(cell)] = 1.0
                offset += len(col.levels)
            elif col.kind == "binary":
                if cell not in ("0", "1"):
                    fail(ri, col.name, f"binary value must be 0 or 1, got {cell!r}")
                X[ri, offset] = float(cell)
                offset += 1
            else:
                try:
                    X[ri, offset] = float(cell)
                except ValueError:
                    fail(ri, col.name, f"not a number: {cell!r}")
                if not np.isfinite(X[ri, offset]):
                    fail(ri, col.name, "value must be finite")
                offset += 1
        t_cell = row[-2].strip()
        try:
            t = float(t_cell)
        except ValueError:
            fail(ri, "time", f"not a number: {t_cell!r}")
        if not np.isfinite(t) or t <= 0:
            fail(ri, "time", f"time must be a positive real, got {t_cell}")
        times[ri] = t
        e_cell = row[-1].strip()
        if e_cell not in ("0", "1"):
            fail(ri, "event", f"event must be 0 or 1, got {e_cell!r}")
        events[ri] = e_cell == "1"
    return SurvivalDataset(X, times, events, schema.expanded_names)


# ---------------------------------------------------------------------------
# splitting


def split(dataset: SurvivalDataset, ratio: float, seed: int) -> tuple[SurvivalDataset, SurvivalDataset]:
    """Seeded train/test partition; train receives ceil(ratio * n) rows.

    The shuffle is applied to a canonical row ordering (sorted by time,
    event, then features), so any permutation of the input rows yields
    the same partition. Both parts must keep at least one event; the
    shuffle is retried up to 20 times before giving up.
    """
    n = len(dataset)
    if n < 5:
        raise ValueError("dataset too small to split (need n >= 5)")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    X = dataset.features
    keys = tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1))
    canonical = np.lexsort(keys + (dataset.events, dataset.times))
    n_train = math.ceil(ratio * n)
    if n_train >= n:
        raise ValueError("ratio leaves an empty test set")
    rng = rng_for(seed, "split")
    for _ in range(20):
        perm = canonical[rng.permutation(n)]
        train_idx, test_idx = perm[:n_train], perm[n_train:]
        if dataset.events[train_idx].any() and dataset.events[test_idx].any():
            return dataset.subset(train_idx), dataset.subset(test_idx)
    raise ValueError("no events in partition after 20 reshuffles")

"""Experiment runner: parameter sweeps, replication management, metric output.

A sweep varies one parameter over a value list; every (value, replication)
cell regenerates data from a derived seed, runs the configured method and
records squared coefficient error, selection F1 and accounting columns.
Failed replications are recorded with NaN metrics instead of aborting.
"""

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .data import generate_correlated, generate_independent, generate_sparse_mean
from .privacy import derive_words
from .protocols import ProtocolConfig, multi_round_slr, sparse_mean, two_round_slr
from .selectors import SelectorConfig, local_selection

CSV_COLUMNS = [
    "sweep_name",
    "sweep_value",
    "rep",
    "l2_sq_error",
    "f1",
    "runtime_ms",
    "budget_max",
    "bits_total",
    "error",
]

METHODS = ("two_slr", "m_slr", "local_lasso", "sparse_mean")


def f1_score(selected, support) -> float:
    """Harmonic mean of selection precision and recall; 0 when undefined."""
    selected = set(int(v) for v in selected)
    support = set(int(v) for v in support)
    if not support:
        raise ValueError("support must be non-empty")
    if not selected:
        return 0.0
    hits = len(selected & support)
    precision = hits / len(selected)
    recall = hits / len(support)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def l2_sq_error(beta_hat, beta_star) -> float:
    """Squared Euclidean distance between coefficient vectors."""
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    beta_star = np.asarray(beta_star, dtype=np.float64)
    if beta_hat.shape != beta_star.shape:
        raise ValueError(f"length mismatch: {beta_hat.shape} vs {beta_star.shape}")
    diff = beta_hat - beta_star
    return float(diff @ diff)


@dataclass
class DataSpec:
    """Synthetic data parameters for one experiment."""

    design: str = "independent"  # "independent" | "correlated" | "sparse_mean"
    n: int = 400
    m: int = 100
    d: int = 256
    s_star: int = 8
    coef_value: float = 0.2
    noise_std: float = 1.0
    corr_dims: int = 50

    def generate(self, seed: int):
        if self.design == "independent":
            return generate_independent(
                self.n, self.m, self.d, self.s_star, self.coef_value, self.noise_std, seed
            )
        if self.design == "correlated":
            return generate_correlated(
                self.n, self.m, self.d, self.s_star, self.coef_value,
                self.noise_std, self.corr_dims, seed,
            )
        if self.design == "sparse_mean":
            return generate_sparse_mean(
                self.n, self.m, self.d, self.s_star, self.coef_value, self.noise_std, seed
            )
        raise ValueError(f"unknown design {self.design!r}")


@dataclass
class ExperimentConfig:
    method: str = "two_slr"
    data: DataSpec = field(default_factory=DataSpec)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    sweep_name: str = "epsilon"
    sweep_values: tuple = (1.0, 2.0, 4.0, 8.0)
    replications: int = 30
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.sweep_values:
            raise ValueError("sweep_values must be non-empty")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")


@dataclass
class MetricsRecord:
    sweep_name: str
    sweep_value: float
    rep: int
    l2_sq_error: float
    f1: float
    runtime_ms: float
    budget_max: float
    bits_total: int
    error: str = ""

    def as_row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


_DATA_FIELDS = {f.name for f in dataclasses.fields(DataSpec)}
_PROTO_FIELDS = {f.name for f in dataclasses.fields(ProtocolConfig)}
_INT_FIELDS = {"n", "m", "d", "s_star", "corr_dims", "iterations", "s_target",
               "tree_hashes", "tree_width"}


def _apply_sweep(config: ExperimentConfig, value):
    name = config.sweep_name
    if name in _INT_FIELDS:
        value = int(value)
    if name in _DATA_FIELDS:
        return dataclasses.replace(config.data, **{name: value}), config.protocol
    if name in _PROTO_FIELDS:
        return config.data, dataclasses.replace(config.protocol, **{name: value})
    raise ValueError(f"sweep parameter {name!r} is neither a data nor a protocol field")


def _local_lasso_metrics(dataset, truth, selector: SelectorConfig):
    """Per-user lasso baseline: the median user's error and F1."""
    errors, f1s = [], []
    for shard in dataset.shards:
        result = local_selection(shard, selector)
        beta = np.zeros(dataset.d)
        beta[result.screened] = result.coef
        errors.append(l2_sq_error(beta, truth.beta_star))
        f1s.append(f1_score(result.selected, truth.support))
    return float(np.median(errors)), float(np.median(f1s))


def run_one(config: ExperimentConfig, sweep_value, rep: int) -> MetricsRecord:
    """Run a single replication cell; exceptions become an error record."""
    data_spec, proto = _apply_sweep(config, sweep_value)
    rep_seed = derive_words(config.seed, "rep", config.sweep_name, repr(sweep_value), rep)[0]
    start = time.perf_counter()
    try:
        dataset, truth = data_spec.generate(rep_seed)
        if config.method == "local_lasso":
            err, f1 = _local_lasso_metrics(dataset, truth, proto.selector)
            budget_max, bits_total = 0.0, 0
        else:
            runner = {
                "two_slr": two_round_slr,
                "m_slr": multi_round_slr,
                "sparse_mean": sparse_mean,
            }[config.method]
            estimate, transcript = runner(dataset, proto, rep_seed)
            err = l2_sq_error(estimate.beta, truth.beta_star)
            f1 = f1_score(estimate.selected, truth.support)
            budget_max = transcript.budget_max
            bits_total = transcript.bits_total
        runtime_ms = 1e3 * (time.perf_counter() - start)
        return MetricsRecord(
            config.sweep_name, float(sweep_value), rep, err, f1,
            runtime_ms, budget_max, bits_total,
        )
    except Exception as exc:  # noqa: BLE001 - sweep must survive bad cells
        runtime_ms = 1e3 * (time.perf_counter() - start)
        return MetricsRecord(
            config.sweep_name, float(sweep_value), rep,
            float("nan"), float("nan"), runtime_ms, float("nan"), 0,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_experiment(config: ExperimentConfig) -> list[MetricsRecord]:
    """All (sweep value, replication) cells in deterministic order."""
    cells = [(v, r) for v in config.sweep_values for r in range(config.replications)]
    if config.workers > 1:
        records = Parallel(n_jobs=config.workers)(
            delayed(run_one)(config, v, r) for v, r in cells
        )
    else:
        records = [run_one(config, v, r) for v, r in cells]
    return list(records)


def emit(records, fmt: str, path) -> None:
    """Write records to CSV or JSON; refuses to create a file for no records."""
    if not records:
        raise ValueError("no records to emit")
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for rec in records:
                writer.writerow(rec.as_row())
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([dict(zip(CSV_COLUMNS, r.as_row())) for r in records], fh, indent=1)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def parse_records(path) -> list[MetricsRecord]:
    """Read back a CSV produced by emit."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        records = []
        for row in reader:
            records.append(
                MetricsRecord(
                    row["sweep_name"],
                    float(row["sweep_value"]),
                    int(row["rep"]),
                    float(row["l2_sq_error"]),
                    float(row["f1"]),
                    float(row["runtime_ms"]),
                    float(row["budget_max"]),
                    int(row["bits_total"]),
                    row.get("error", ""),
                )
            )
    return records


def summarize(records) -> list[dict]:
    """Quantile table per sweep value: 2.5 / 50 / 97.5 percentiles (95% band)."""
    by_value: dict[float, list[MetricsRecord]] = {}
    for rec in records:
        by_value.setdefault(rec.sweep_value, []).append(rec)
    rows = []
    for value in sorted(by_value):
        group = by_value[value]
        errs = np.array([r.l2_sq_error for r in group])
        f1s = np.array([r.f1 for r in group])
        ok = ~np.isnan(errs)
        row = {"sweep_value": value, "n_reps": len(group), "n_failed": int((~ok).sum())}
        if ok.any():
            for name, arr in (("l2_sq_error", errs[ok]), ("f1", f1s[ok])):
                lo, med, hi = np.percentile(arr, [2.5, 50.0, 97.5])
                row[f"{name}_q025"] = float(lo)
                row[f"{name}_median"] = float(med)
                row[f"{name}_q975"] = float(hi)
        rows.append(row)
    return rows

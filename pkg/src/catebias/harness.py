"""Experiment runner: configure estimators and DGPs, sweep settings and
seeds, emit per-replicate CSV rows plus aggregates.

Seed policy: the replicate index runs over (setting, seed slot) cells as
``replicate = setting_index * n_seeds + seed_slot`` and each cell uses
``base_seed + replicate`` for both data generation and training, so every
cell owns an independent stream, draws are independent across settings, and
any cell can be reproduced in isolation. Estimators within a cell share the
data draw, which pairs their comparisons.
"""

from __future__ import annotations

import csv
import sys
import time
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import architectures as arch
from . import metalearners as meta
from . import simulation as sim
from .data import Dataset
from .evaluation import evaluate_predictions
from .training import TrainConfig

ARCH_STRATEGIES = set(arch.STRATEGIES)
META_STRATEGIES = ("s_learner", "t_learner", "ra_learner", "pw_learner",
                   "dr_learner", "x_learner", "r_learner")
ALL_STRATEGIES = tuple(sorted(ARCH_STRATEGIES)) + META_STRATEGIES

RESULT_FIELDS = ("setup", "rho", "n0", "n1", "seed", "estimator", "rmse_cate",
                 "normalized_rmse", "rmse_mu0", "rmse_mu1", "train_seconds",
                 "stop_step", "error")

METRIC_FIELDS = ("rmse_cate", "normalized_rmse", "rmse_mu0", "rmse_mu1")


class ConfigError(ValueError):
    """A config field failed validation; the message names the field."""


@dataclass
class EstimatorEntry:
    name: str
    strategy: str
    options: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    setup: str = "A"
    rho_values: Sequence[float] = (0.0,)
    n0_values: Sequence[int] = (2000,)
    n1_values: Sequence[int] = (200,)
    n_test: int = 500
    intercept: float = 0.0
    covariates_csv: Optional[str] = None
    d_cont: int = 10
    d_bin: int = 5
    n_units: int = 747       # C/D synthetic fallback rows
    treated_fraction: float = 0.18
    estimators: Sequence[EstimatorEntry] = ()
    spec: arch.NetworkSpec = field(default_factory=arch.NetworkSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_seeds: int = 1
    base_seed: int = 42
    jobs: int = 1
    out: Optional[str] = None


@dataclass
class ResultRow:
    setup: str
    rho: Optional[float]
    n0: int
    n1: int
    seed: int
    estimator: str
    rmse_cate: Optional[float] = None
    normalized_rmse: Optional[float] = None
    rmse_mu0: Optional[float] = None
    rmse_mu1: Optional[float] = None
    train_seconds: Optional[float] = None
    stop_step: Optional[int] = None
    error: str = ""


# -- config loading ----------------------------------------------------------------


def _expect(table: dict, key: str, types, where: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"{where}.{key}: missing required field")
        return default
    value = table[key]
    if not isinstance(value, types):
        raise ConfigError(f"{where}.{key}: expected {types}, got {type(value).__name__}")
    return value


def _as_list(value, where):
    if isinstance(value, (int, float)):
        return [value]
    if isinstance(value, list) and value:
        return value
    raise ConfigError(f"{where}: expected a nonempty list or a scalar")


def load_experiment_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment file (see README for the schema)."""
    with open(path, "rb") as handle:
        raw = tomllib.load(handle)
    return parse_experiment_config(raw)


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    dgp = raw.get("dgp", {})
    setup = str(_expect(dgp, "setup", str, "dgp", required=True)).upper()
    if setup not in ("A", "B", "C", "D"):
        raise ConfigError(f"dgp.setup: unknown setup {setup!r}")
    cfg = ExperimentConfig(setup=setup)
    cfg.rho_values = [float(v) for v in _as_list(dgp.get("rho", [0.0]), "dgp.rho")]
    for rho in cfg.rho_values:
        if not 0.0 <= rho <= 1.0:
            raise ConfigError(f"dgp.rho: value {rho} outside [0, 1]")
    cfg.n0_values = [int(v) for v in _as_list(dgp.get("n0", [2000]), "dgp.n0")]
    cfg.n1_values = [int(v) for v in _as_list(dgp.get("n1", [200]), "dgp.n1")]
    cfg.n_test = int(_expect(dgp, "n_test", int, "dgp", default=500))
    cfg.intercept = float(_expect(dgp, "intercept", (int, float), "dgp", default=0.0))
    cfg.covariates_csv = _expect(dgp, "covariates", str, "dgp")
    cfg.d_cont = int(_expect(dgp, "d_cont", int, "dgp", default=10))
    cfg.d_bin = int(_expect(dgp, "d_bin", int, "dgp", default=5))
    cfg.n_units = int(_expect(dgp, "n_units", int, "dgp", default=747))
    cfg.treated_fraction = float(
        _expect(dgp, "treated_fraction", (int, float), "dgp", default=0.18))

    network = raw.get("network", {})
    try:
        cfg.spec = arch.NetworkSpec(
            d_r=int(network.get("d_r", 1)),
            n_r=int(network.get("n_r", 200)),
            d_h=int(network.get("d_h", 1)),
            n_h=int(network.get("n_h", 100)),
            binary_y=bool(network.get("binary_y", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"network: {exc}") from None

    train = raw.get("train", {})
    try:
        cfg.train = TrainConfig(
            batch_size=int(train.get("batch_size", 100)),
            val_fraction=float(train.get("val_fraction", 0.3)),
            patience=int(train.get("patience", 10)),
            max_steps=int(train["max_steps"]) if "max_steps" in train else None,
            step_size=float(train.get("step_size", 1e-4)),
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None

    sweep = raw.get("sweep", {})
    cfg.n_seeds = int(_expect(sweep, "n_seeds", int, "sweep", default=1))
    if cfg.n_seeds < 1:
        raise ConfigError("sweep.n_seeds: must be >= 1")
    cfg.base_seed = int(_expect(sweep, "base_seed", int, "sweep", default=42))
    cfg.jobs = int(_expect(sweep, "jobs", int, "sweep", default=1))
    cfg.out = _expect(sweep, "out", str, "sweep")

    entries = raw.get("estimators", [])
    if not isinstance(entries, list) or not entries:
        raise ConfigError("estimators: at least one [[estimators]] table is required")
    parsed = []
    names = set()
    for i, entry in enumerate(entries):
        where = f"estimators[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: expected a table")
        strategy = str(_expect(entry, "strategy", str, where, required=True)).lower()
        if strategy not in ALL_STRATEGIES:
            raise ConfigError(
                f"{where}.strategy: unknown strategy {strategy!r}; "
                f"expected one of {ALL_STRATEGIES}"
            )
        name = str(entry.get("name", strategy))
        if name in names:
            raise ConfigError(f"{where}.name: duplicate estimator name {name!r}")
        names.add(name)
        options = {k: v for k, v in entry.items() if k not in ("name", "strategy")}
        if strategy in ARCH_STRATEGIES:
            try:
                _entry_estimator_config(strategy, options)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{where}: {exc}") from None
        parsed.append(EstimatorEntry(name=name, strategy=strategy, options=options))
    cfg.estimators = parsed
    return cfg


def _entry_estimator_config(strategy: str, options: dict) -> arch.EstimatorConfig:
    known = {"lam1", "lam2", "lam_o", "reg_shared_rep", "reverse_offset"}
    extra = set(options) - known
    if extra:
        raise ValueError(f"unknown option(s) {sorted(extra)} for strategy {strategy!r}")
    return arch.EstimatorConfig(strategy=strategy, **options)


# -- datasets ------------------------------------------------------------------------


def build_dataset(cfg: ExperimentConfig, rho: float, n0: int, n1: int,
                  seed: int) -> sim.SimulatedDataset:
    """Generate the replicate dataset for one cell (pure in (setting, seed))."""
    if cfg.setup in ("A", "B"):
        pool_size = n0 + n1 + cfg.n_test
        if cfg.covariates_csv:
            X_pool, col_types = sim.load_covariates_csv(cfg.covariates_csv)
        else:
            X_pool = sim.gen_covariates_synthetic(pool_size, cfg.d_cont, cfg.d_bin,
                                                  seed=seed + 7_000_000)
            col_types = None
        dgp = sim.DGPConfigAB(setup=cfg.setup, rho=rho, n0=n0, n1=n1,
                              n_test=cfg.n_test, intercept=cfg.intercept, seed=seed)
        return sim.simulate_ab(X_pool, dgp, col_types)
    # C/D: synthetic stand-in covariates and a random imbalanced assignment
    # unless a covariate file is supplied (its last column is the treatment).
    if cfg.covariates_csv:
        X, _ = sim.load_covariates_csv(cfg.covariates_csv)
        w_assign = X[:, -1]
        X = X[:, :-1]
    else:
        rng = np.random.default_rng(seed + 7_000_000)
        X = sim.gen_covariates_synthetic(cfg.n_units, max(cfg.d_cont, 1), cfg.d_bin,
                                         seed=seed + 7_000_001)
        w_assign = (rng.random(cfg.n_units) < cfg.treated_fraction).astype(float)
        if w_assign.sum() == 0:
            w_assign[0] = 1.0
    dgp = sim.DGPConfigIHDP(setup=cfg.setup, seed=seed)
    return sim.simulate_ihdp(X, w_assign, dgp)


# -- estimator dispatch -----------------------------------------------------------------


def fit_named_estimator(entry: EstimatorEntry, dataset: Dataset,
                        spec: arch.NetworkSpec, train_cfg: TrainConfig):
    """Fit one estimator entry (architecture or meta-learner) on a dataset."""
    strategy = entry.strategy
    options = dict(entry.options)
    if options.pop("fit_propensity", False):
        dataset = replace(dataset)
        dataset.pi = None
    if strategy in ARCH_STRATEGIES:
        est_cfg = _entry_estimator_config(strategy, options)
        return arch.fit_estimator(est_cfg, spec, dataset, train_cfg)
    if strategy == "s_learner":
        return meta.fit_s_learner(dataset, spec, train_cfg, **options)
    if strategy == "t_learner":
        return meta.fit_t_learner(dataset, spec, train_cfg, **options)
    if strategy in ("ra_learner", "pw_learner", "dr_learner"):
        kind = strategy.split("_")[0]
        first = options.pop("first_stage", None)
        if first is not None:
            first_cfg = _entry_estimator_config(str(first).lower(), {})

            def factory(ds, sp, tc, _cfg=first_cfg):
                return arch.fit_estimator(_cfg, sp, ds, tc)

            options["first_stage"] = factory
        return meta.fit_pseudo_learner(kind, dataset, spec, train_cfg, **options)
    if strategy == "x_learner":
        return meta.fit_x_learner(dataset, spec, train_cfg, **options)
    if strategy == "r_learner":
        return meta.fit_r_learner(dataset, spec, train_cfg, **options)
    raise ConfigError(f"unknown strategy {strategy!r}")


# -- sweep ---------------------------------------------------------------------------


def _settings(cfg: ExperimentConfig) -> list[tuple[Optional[float], int, int]]:
    if cfg.setup in ("A", "B"):
        combos = [(rho, n0, n1)
                  for rho, n0, n1 in product(cfg.rho_values, cfg.n0_values, cfg.n1_values)
                  if n1 <= n0]
        if not combos:
            raise ConfigError("dgp: no valid (rho, n0, n1) combination with n1 <= n0")
        return combos
    return [(None, 0, 0)]


def run_cell(cfg: ExperimentConfig, setting_index: int, seed_slot: int,
             entry: EstimatorEntry) -> ResultRow:
    """Run one (setting, seed, estimator) cell; failures become error rows."""
    rho, n0, n1 = _settings(cfg)[setting_index]
    replicate = setting_index * cfg.n_seeds + seed_slot
    seed = cfg.base_seed + replicate
    data = build_dataset(cfg, rho if rho is not None else 0.0, n0, n1, seed)
    row = ResultRow(
        setup=cfg.setup, rho=rho,
        n0=data.train.n_control, n1=data.train.n_treated,
        seed=seed, estimator=entry.name,
    )
    train_cfg = replace(cfg.train, seed=seed)
    started = time.perf_counter()
    try:
        fitted = fit_named_estimator(entry, data.train, cfg.spec, train_cfg)
        pred = fitted.predict(data.test.X)
        metrics = evaluate_predictions(pred, data.test, factual_train_y=data.train.y)
    except Exception as exc:  # noqa: BLE001 - recorded, run continues
        row.error = f"{type(exc).__name__}: {exc}"
        row.train_seconds = time.perf_counter() - started
        return row
    row.train_seconds = time.perf_counter() - started
    row.rmse_cate = metrics.rmse_cate
    row.normalized_rmse = metrics.normalized_rmse_cate
    row.rmse_mu0 = metrics.rmse_mu0
    row.rmse_mu1 = metrics.rmse_mu1
    row.stop_step = getattr(fitted, "stop_step", None)
    return row


def _cell_worker(args):
    cfg, setting_index, seed_slot, entry = args
    return run_cell(cfg, setting_index, seed_slot, entry)


def run_experiment(cfg: ExperimentConfig, jobs: Optional[int] = None) -> list[ResultRow]:
    """Every (setting x seed x estimator) cell exactly once, canonically ordered.

    Cells are independent; with jobs > 1 they run in a process pool and the
    results are still written in (setting, seed, estimator) order.
    """
    settings = _settings(cfg)
    cells = [
        (cfg, si, ss, entry)
        for si in range(len(settings))
        for ss in range(cfg.n_seeds)
        for entry in cfg.estimators
    ]
    jobs = jobs if jobs is not None else cfg.jobs
    if jobs > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(jobs) as pool:
            rows = pool.map(_cell_worker, cells)
    else:
        rows = [_cell_worker(cell) for cell in cells]
    return rows


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_results_csv(rows: Sequence[ResultRow], path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RESULT_FIELDS)
        for row in rows:
            writer.writerow([format_value(getattr(row, name)) for name in RESULT_FIELDS])


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != list(RESULT_FIELDS):
            raise ConfigError(f"{path}: unexpected results header {reader.fieldnames}")
        return list(reader)


def rows_to_dicts(rows: Sequence[ResultRow]) -> list[dict]:
    """ResultRow objects in the string form read_results_csv would produce."""
    return [{name: format_value(getattr(row, name)) for name in RESULT_FIELDS}
            for row in rows]


# -- aggregation -----------------------------------------------------------------------


AGGREGATE_FIELDS = ("setup", "rho", "n0", "n1", "estimator", "n_seeds", "n_errors") + tuple(
    f"{m}_{s}" for m in METRIC_FIELDS for s in ("mean", "se")
) + ("flag",)


def aggregate_rows(rows: Sequence[dict]) -> list[dict]:
    """Per-(setting, estimator) mean and standard error across seeds.

    SE = SD / sqrt(n) with the n-1 variance denominator; single-seed cells
    report SE 0 and are flagged.
    """
    if not rows:
        raise ValueError("no result rows to aggregate")
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["setup"], row["rho"], row["n0"], row["n1"], row["estimator"])
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups):
        members = groups[key]
        good = [r for r in members if not r.get("error")]
        record = dict(zip(("setup", "rho", "n0", "n1", "estimator"), key))
        record["n_seeds"] = len(good)
        record["n_errors"] = len(members) - len(good)
        record["flag"] = "single_seed" if len(good) == 1 else ""
        for metric in METRIC_FIELDS:
            values = [float(r[metric]) for r in good if r.get(metric) not in ("", None)]
            if not values:
                record[f"{metric}_mean"] = ""
                record[f"{metric}_se"] = ""
                continue
            mean = float(np.mean(values))
            se = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
            record[f"{metric}_mean"] = repr(mean)
            record[f"{metric}_se"] = repr(se)
        out.append(record)
    return out


def write_aggregate_csv(records: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=AGGREGATE_FIELDS)
        writer.writeheader()
        for record in records:
            writer.writerow(record)


# -- penalty tuning recipe ----------------------------------------------------------------


def factual_rmse(fitted, test: Dataset) -> float:
    """Held-out predictive performance: RMSE of each test row's own-arm prediction."""
    pred = fitted.predict(test.X)
    if pred.mu0 is None or pred.mu1 is None:
        raise ValueError("estimator does not predict potential outcomes")
    factual = np.where(test.w == 1.0, pred.mu1, pred.mu0)
    return float(np.sqrt(np.mean((factual - test.y) ** 2)))


@dataclass
class Lambda2Trace:
    chosen: float
    trace: list  # (lam2, factual_rmse) in grid order
    delta: float


def select_lambda2(trace: Sequence[tuple], delta: float) -> float:
    """Largest lam2 whose factual RMSE is within a relative delta of the
    trace minimum (delta = 0 keeps exact ties only)."""
    if not trace:
        raise ValueError("lam2 trace is empty")
    best = min(rmse for _, rmse in trace)
    return max(lam2 for lam2, rmse in trace if rmse <= best * (1.0 + delta))


def tune_lambda2(data: sim.SimulatedDataset, base_cfg: arch.EstimatorConfig,
                 spec: arch.NetworkSpec, train_cfg: TrainConfig,
                 grid: Sequence[float], delta: float = 0.02) -> Lambda2Trace:
    """Increase lam2 while held-out factual RMSE does not deteriorate.

    Returns the largest grid value whose factual RMSE stays within a relative
    ``delta`` of the grid minimum, plus the full trace.
    """
    grid = [float(v) for v in grid]
    if not grid:
        raise ValueError("lam2 grid is empty")
    if sorted(grid) != grid:
        raise ValueError("lam2 grid must be sorted ascending")
    trace = []
    for lam2 in grid:
        cfg = replace(base_cfg, lam2=lam2)
        fitted = arch.fit_estimator(cfg, spec, data.train, train_cfg)
        trace.append((lam2, factual_rmse(fitted, data.test)))
    return Lambda2Trace(chosen=select_lambda2(trace, delta), trace=trace, delta=delta)

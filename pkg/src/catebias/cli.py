"""Command-line harness.

Subcommands: simulate (emit a dataset CSV), fit (train one estimator and dump
its parameters), eval (metrics for a model on a dataset), sweep (full
experiment from a TOML config), aggregate (per-setting means and standard
errors), tune-lambda2 (the heldout-factual-performance penalty recipe) and
weight-report (per-layer subspace weight norms of a trained FlexTENet).

Exit code 0 on success; failures print the failing stage to stderr and exit
nonzero.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import architectures as arch
from . import harness
from . import simulation as sim
from .evaluation import evaluate_predictions
from .serialize import load_estimator, save_estimator
from .training import TrainConfig


def _add_seed_out(parser: argparse.ArgumentParser, out_required: bool = True):
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", required=out_required, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catebias")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a semi-synthetic dataset CSV")
    p.add_argument("--setup", required=True, choices=["A", "B", "C", "D"])
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--n0", type=int, default=2000)
    p.add_argument("--n1", type=int, default=200)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--intercept", type=float, default=0.0)
    p.add_argument("--covariates", help="processed covariate CSV (else synthetic)")
    p.add_argument("--d-cont", type=int, default=10)
    p.add_argument("--d-bin", type=int, default=5)
    p.add_argument("--n-units", type=int, default=747, help="rows for setups C/D")
    p.add_argument("--treated-fraction", type=float, default=0.18)
    _add_seed_out(p)

    p = sub.add_parser("fit", help="train one estimator and dump the model")
    p.add_argument("--data", required=True, help="dataset CSV from `simulate`")
    p.add_argument("--strategy", required=True, choices=list(harness.ALL_STRATEGIES))
    _add_spec_args(p)
    _add_train_args(p)
    p.add_argument("--lam1", type=float, default=1e-4)
    p.add_argument("--lam2", type=float, default=1e-2)
    p.add_argument("--lam-o", type=float, default=0.1)
    _add_seed_out(p)

    p = sub.add_parser("eval", help="metrics for a dumped model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_seed_out(p)

    p = sub.add_parser("sweep", help="run a full experiment from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="results CSV (overrides sweep.out)")
    p.add_argument("--jobs", type=int, help="parallel cells (overrides sweep.jobs)")

    p = sub.add_parser("aggregate", help="mean and standard error per setting")
    p.add_argument("--results", required=True, help="results CSV from `sweep`")
    p.add_argument("--out", required=True)

    p = sub.add_parser("tune-lambda2", help="largest lam2 keeping factual RMSE flat")
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", required=True,
                   choices=["tnet_soft", "tarnet_soft", "offset", "flextenet"])
    p.add_argument("--grid", required=True,
                   help="comma-separated ascending lam2 values")
    p.add_argument("--delta", type=float, default=0.02,
                   help="relative factual-RMSE tolerance")
    _add_spec_args(p)
    _add_train_args(p)
    _add_seed_out(p)

    p = sub.add_parser("weight-report", help="FlexTENet per-layer subspace norms")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    return parser


def _add_spec_args(p: argparse.ArgumentParser):
    p.add_argument("--d-r", type=int, default=1)
    p.add_argument("--n-r", type=int, default=200)
    p.add_argument("--d-h", type=int, default=1)
    p.add_argument("--n-h", type=int, default=100)
    p.add_argument("--binary-y", action="store_true")


def _add_train_args(p: argparse.ArgumentParser):
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--step-size", type=float, default=1e-4)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--max-steps", type=int, default=None)


def _spec_from_args(args) -> arch.NetworkSpec:
    return arch.NetworkSpec(d_r=args.d_r, n_r=args.n_r, d_h=args.d_h, n_h=args.n_h,
                            binary_y=args.binary_y)


def _train_from_args(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, step_size=args.step_size,
                       patience=args.patience, max_steps=args.max_steps, seed=args.seed)


def cmd_simulate(args) -> int:
    if args.setup in ("A", "B"):
        pool_size = args.n0 + args.n1 + args.n_test
        if args.covariates:
            X_pool, col_types = sim.load_covariates_csv(args.covariates)
        else:
            X_pool = sim.gen_covariates_synthetic(pool_size, args.d_cont, args.d_bin,
                                                  seed=args.seed + 7_000_000)
            col_types = None
        cfg = sim.DGPConfigAB(setup=args.setup, rho=args.rho, n0=args.n0, n1=args.n1,
                              n_test=args.n_test, intercept=args.intercept,
                              seed=args.seed)
        data = sim.simulate_ab(X_pool, cfg, col_types)
    else:
        if args.covariates:
            X, _ = sim.load_covariates_csv(args.covariates)
            w_assign = X[:, -1]
            X = X[:, :-1]
        else:
            rng = np.random.default_rng(args.seed + 7_000_000)
            X = sim.gen_covariates_synthetic(args.n_units, max(args.d_cont, 1),
                                             args.d_bin, seed=args.seed + 7_000_001)
            w_assign = (rng.random(args.n_units) < args.treated_fraction).astype(float)
        cfg = sim.DGPConfigIHDP(setup=args.setup, seed=args.seed)
        data = sim.simulate_ihdp(X, w_assign, cfg)
    sim.export_dataset_csv(data, args.out)
    print(f"wrote {args.out} (train n={data.train.n}, test n={data.test.n})")
    return 0


def cmd_fit(args) -> int:
    data = sim.load_dataset_csv(args.data)
    spec = _spec_from_args(args)
    train_cfg = _train_from_args(args)
    entry = harness.EstimatorEntry(name=args.strategy, strategy=args.strategy)
    if args.strategy in harness.ARCH_STRATEGIES:
        entry.options = {"lam1": args.lam1, "lam2": args.lam2, "lam_o": args.lam_o}
    fitted = harness.fit_named_estimator(entry, data.train, spec, train_cfg)
    save_estimator(fitted, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    data = sim.load_dataset_csv(args.data)
    fitted = load_estimator(args.model)
    pred = fitted.predict(data.test.X)
    metrics = evaluate_predictions(pred, data.test, factual_train_y=data.train.y)
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        items = sorted(metrics.as_dict().items())
        writer.writerow([k for k, _ in items])
        writer.writerow([harness.format_value(v) for _, v in items])
    print(f"wrote {args.out} (rmse_cate={metrics.rmse_cate:.6g})")
    return 0


def cmd_sweep(args) -> int:
    cfg = harness.load_experiment_config(args.config)
    out = args.out or cfg.out
    if not out:
        raise harness.ConfigError("sweep.out: no output path given (config or --out)")
    rows = harness.run_experiment(cfg, jobs=args.jobs)
    harness.write_results_csv(rows, out)
    failed = sum(1 for r in rows if r.error)
    print(f"wrote {out} ({len(rows)} rows, {failed} errors)")
    return 0


def cmd_aggregate(args) -> int:
    rows = harness.read_results_csv(args.results)
    records = harness.aggregate_rows(rows)
    harness.write_aggregate_csv(records, args.out)
    print(f"wrote {args.out} ({len(records)} groups)")
    return 0


def cmd_tune_lambda2(args) -> int:
    data = sim.load_dataset_csv(args.data)
    grid = [float(v) for v in args.grid.split(",")]
    base = arch.EstimatorConfig(strategy=args.strategy)
    result = harness.tune_lambda2(data, base, _spec_from_args(args),
                                  _train_from_args(args), grid, delta=args.delta)
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["lam2", "factual_rmse", "chosen"])
        for lam2, rmse in result.trace:
            writer.writerow([repr(lam2), repr(rmse), int(lam2 == result.chosen)])
    print(f"chosen lam2 = {result.chosen:g}; wrote {args.out}")
    return 0


def cmd_weight_report(args) -> int:
    fitted = load_estimator(args.model)
    model = getattr(fitted, "model", None)
    if not isinstance(model, arch.FlexTENetModel):
        raise ValueError("weight-report requires a FlexTENet model dump")
    rows = arch.weight_norm_report(model)
    with open(args.out, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=["layer", "subspace",
                                                    "mean_unit_norm", "n_units"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "aggregate": cmd_aggregate,
    "tune-lambda2": cmd_tune_lambda2,
    "weight-report": cmd_weight_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - reported with the failing stage
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""
Evaluation commands - PFN and GP metrics on prior, power-flow or Rosenbrock suites.
"""
import copy
import logging
from typing import List

import pandas as pd

from dvapfn.commands.common import CommandGroup, RunContext, int_list
from dvapfn.config import get_settings
from dvapfn.errors import UsageError
from dvapfn.models.datasets import SyntheticDataset
from dvapfn.models.enums import EvaluationSuite
from dvapfn.models.results import MetricsRow, write_metrics, write_records
from dvapfn.services.checkpoint import load_checkpoint
from dvapfn.services.evaluation import (
    GPPredictor,
    PFNPredictor,
    coverage,
    evaluate,
    generate_rosenbrock_dataset,
    k_sensitivity,
    sweep_context,
)
from dvapfn.services.powerflow import DESK_FEEDER_BUSES, generate_pf_dataset, load_network_file, truncate_network
from dvapfn.services.presets import PRIOR_TEMPLATES, preset_names
from dvapfn.services.priors import sample_dataset

logger = logging.getLogger(__name__)

group = CommandGroup()


# ==================== Suites ====================

def _suite_arguments(parser) -> None:
    parser.add_argument("--suite", default=EvaluationSuite.PRIOR.value, choices=[s.value for s in EvaluationSuite])
    parser.add_argument("--preset", default="1d", choices=preset_names(), help="prior row for --suite prior")
    parser.add_argument("--context", type=int, default=80, help="context points per test dataset")
    parser.add_argument("--test", type=int, default=20, help="test points per test dataset")
    parser.add_argument("--datasets", type=int, default=64, help="number of test datasets")
    parser.add_argument("--sweep", type=int_list, default=None, help="context sizes for context_sweep.csv")
    parser.add_argument("--network", default=None, help="network file for --suite powerflow")
    parser.add_argument("--buses", type=int, default=DESK_FEEDER_BUSES)
    parser.add_argument("--delta", type=float, default=5.0, help="load perturbation in percent")
    parser.add_argument("--target-bus", type=int, default=None)


def _suite_defaults(args) -> dict:
    return {"prior": copy.deepcopy(PRIOR_TEMPLATES[args.preset])}


def n_points_needed(args) -> int:
    return max([args.context, *(args.sweep or [])]) + args.test


def build_suite(ctx: RunContext, n_points: int) -> List[SyntheticDataset]:
    """``--datasets`` test datasets of ``n_points`` rows, dataset k seeded by (seed, k)."""
    args = ctx.args
    seeds = [ctx.stream_seed(k) for k in range(args.datasets)]
    suite = EvaluationSuite(args.suite)
    if suite == EvaluationSuite.PRIOR:
        prior = ctx.prior_config().model_copy(update={"points_per_dataset": n_points})
        return [sample_dataset(prior, seed) for seed in seeds]
    if suite == EvaluationSuite.ROSENBROCK:
        return [generate_rosenbrock_dataset(n_points, seed) for seed in seeds]
    network = load_network_file(args.network or get_settings().NETWORK_FILE)
    if args.buses < network.n_buses:
        network = truncate_network(network, args.buses)
    target = args.target_bus or network.n_buses
    return [generate_pf_dataset(network, args.delta, n_points, target, seed) for seed in seeds]


def _report(ctx: RunContext, predictors, suite) -> None:
    args = ctx.args
    rows = [MetricsRow.from_metrics(p.name, args.context, evaluate(p, suite, args.context, args.test)) for p in predictors]
    write_metrics(rows, ctx.path("metrics.csv"), ctx.path("timing.csv"))
    if args.sweep:
        sweep_rows = [row for p in predictors for row in sweep_context(p, suite, sorted(args.sweep), args.test)]
        write_metrics(sweep_rows, ctx.path("context_sweep.csv"), ctx.path("context_sweep_timing.csv"))


# ==================== Commands ====================

def _evaluate_arguments(parser) -> None:
    parser.add_argument("--checkpoint", default=None, help="trained model file")
    _suite_arguments(parser)
    parser.add_argument("--with-gp", action="store_true", help="add the grid-fitted GP baseline")
    parser.add_argument("--coverage", action="store_true", help="write coverage.csv")
    parser.add_argument("--knn", type=int_list, default=None, help="k values for k_sensitivity.csv")


@group.command("evaluate", help="metrics of a trained model on a test suite", arguments=_evaluate_arguments, defaults=_suite_defaults)
def evaluate_model(ctx: RunContext) -> None:
    args = ctx.args
    predictors = []
    if args.checkpoint:
        predictors.append(PFNPredictor(load_checkpoint(args.checkpoint)))
    if args.with_gp:
        predictors.append(GPPredictor())
    if not predictors:
        raise UsageError("evaluate needs --checkpoint, --with-gp or both")

    suite = build_suite(ctx, n_points_needed(args))
    _report(ctx, predictors, suite)
    if args.coverage:
        write_records([coverage(p, suite, args.context, args.test) for p in predictors], ctx.path("coverage.csv"))
    if args.knn:
        rows = [row for p in predictors for row in k_sensitivity(p, suite, args.context, args.knn, args.test)]
        write_metrics(rows, ctx.path("k_sensitivity.csv"), ctx.path("k_sensitivity_timing.csv"))


def _gp_arguments(parser) -> None:
    _suite_arguments(parser)
    parser.add_argument("--ard", action="store_true", help="per-input lengthscales")


@group.command("gp-baseline", help="exact GP metrics and fitted hyperparameters", arguments=_gp_arguments, defaults=_suite_defaults)
def gp_baseline(ctx: RunContext) -> None:
    args = ctx.args
    predictor = GPPredictor(ard=args.ard, name="GP-ARD" if args.ard else "GP")
    suite = build_suite(ctx, n_points_needed(args))
    _report(ctx, [predictor], suite)

    records = []
    for k, ds in enumerate(suite):
        hyper = predictor.fitted(ds.head(args.context))
        records.append({
            "dataset": k,
            "lengthscales": ";".join(repr(ls) for ls in hyper.lengthscales),
            "signal_variance": hyper.signal_variance,
            "noise_variance": hyper.noise_variance,
        })
    pd.DataFrame(records).to_csv(ctx.path("gp_hypers.csv"), index=False, float_format="%.17g")

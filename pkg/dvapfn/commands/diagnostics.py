"""
Diagnostic commands - attention locality of a trained model and per-step timing.
"""
import copy
import logging

import numpy as np
import pandas as pd

from dvapfn.commands.common import CommandGroup, RunContext, csv_list, int_list
from dvapfn.commands.train import preset_arguments, preset_defaults
from dvapfn.errors import UsageError
from dvapfn.models.enums import AttentionKind
from dvapfn.models.results import LocalitySummaryRow, write_records
from dvapfn.schemas import AttentionSpec
from dvapfn.services.attention import far_mass, locality_profile, locality_spearman
from dvapfn.services.backbones import forward_with_weights
from dvapfn.services.checkpoint import load_checkpoint
from dvapfn.services.evaluation import linear_scaling_fit, throughput_compare
from dvapfn.services.presets import PRIOR_TEMPLATES, preset_names
from dvapfn.services.priors import sample_dataset

logger = logging.getLogger(__name__)

group = CommandGroup()


def _locality_arguments(parser) -> None:
    parser.add_argument("--checkpoint", required=True, help="trained model file")
    parser.add_argument("--preset", default="1d", choices=preset_names(), help="prior the diagnostic datasets come from")
    parser.add_argument("--layer", type=int, default=1, help="attention layer, 1-based")
    parser.add_argument("--contexts", type=int_list, default=[20, 40, 80], help="context sizes")
    parser.add_argument("--test", type=int, default=20, help="query points per dataset")
    parser.add_argument("--datasets", type=int, default=32)
    parser.add_argument("--epsilon", type=float, default=0.3, help="far-mass distance threshold")


def _locality_defaults(args) -> dict:
    return {"prior": copy.deepcopy(PRIOR_TEMPLATES[args.preset])}


@group.command("diagnose-locality", help="distance/weight profile of one attention layer", arguments=_locality_arguments, defaults=_locality_defaults)
def diagnose_locality(ctx: RunContext) -> None:
    args = ctx.args
    model = load_checkpoint(args.checkpoint)
    contexts = sorted(args.contexts)
    n_points = contexts[-1] + args.test
    prior = ctx.prior_config().model_copy(update={"points_per_dataset": n_points})
    suite = [sample_dataset(prior, ctx.stream_seed(k)) for k in range(args.datasets)]

    rows = []
    for n_context in contexts:
        rhos, masses = [], []
        for ds in suite:
            subset = ds.take(list(range(n_context)) + list(range(n_points - args.test, n_points)))
            profile = locality_profile(model, subset, args.layer, n_context)
            rhos.append(locality_spearman(profile))
            context, query = subset.split(n_context)
            _, captured = forward_with_weights(model, context, query.X)
            masses.append(float(np.mean(far_mass(captured[args.layer - 1], context.X, query.X, args.epsilon))))
            if ds is suite[0] and n_context == contexts[-1]:
                profile.to_csv(ctx.path("locality_profile.csv"))
        rows.append(LocalitySummaryRow(args.layer, n_context, float(np.mean(rhos)), float(np.mean(masses)), len(suite)))
        logger.info("context %d: spearman %.3f, far mass %.4f", n_context, rows[-1].spearman, rows[-1].far_mass)
    write_records(rows, ctx.path("locality_summary.csv"))


def _timing_arguments(parser) -> None:
    preset_arguments(parser)
    parser.add_argument("--contexts", type=int_list, default=[64, 128, 256])
    parser.add_argument("--attentions", type=csv_list, default=[k.value for k in AttentionKind])
    parser.add_argument("--steps", type=int, default=20)
    parser.add_argument("--warmup", type=int, default=5)
    parser.add_argument("--query", type=int, default=16, help="query points per dataset")
    parser.add_argument("--batch", type=int, default=4)


@group.command("timing", help="median seconds per training step per attention rule", arguments=_timing_arguments, defaults=preset_defaults)
def timing(ctx: RunContext) -> None:
    args = ctx.args
    base = ctx.train_config().model
    unknown = [k for k in args.attentions if k not in {a.value for a in AttentionKind}]
    if unknown:
        raise UsageError(f"unknown attention kinds: {unknown}")
    attentions = [
        AttentionSpec(kind=AttentionKind(kind), d_k=base.attention.d_k, heads=base.heads, tie_qk=base.attention.tie_qk)
        for kind in args.attentions
    ]
    rows = []
    for n_context in sorted(args.contexts):
        rows.extend(throughput_compare(
            base, attentions, n_context=n_context, n_query=args.query, batch_size=args.batch,
            steps=args.steps, warmup=args.warmup, seed=ctx.seed,
        ))
    write_records(rows, ctx.path("timing.csv"))

    if len(args.contexts) >= 2:
        fits = []
        for kind in args.attentions:
            mine = [r for r in rows if r.attention == kind]
            slope, intercept, r2 = linear_scaling_fit([r.n_context for r in mine], [r.seconds_per_step for r in mine])
            fits.append({"attention": kind, "slope": slope, "intercept": intercept, "r2": r2})
        pd.DataFrame(fits).to_csv(ctx.path("scaling_timing.csv"), index=False, float_format="%.6g")

"""
Generation commands - synthetic prior datasets and power-flow datasets.
"""
import copy
import logging

from dvapfn.commands.common import CommandGroup, RunContext
from dvapfn.config import get_settings
from dvapfn.models.enums import RobustnessPrior
from dvapfn.services.powerflow import DESK_FEEDER_BUSES, generate_pf_dataset, load_network_file, truncate_network, write_network_file
from dvapfn.services.presets import PRIOR_TEMPLATES, preset_names
from dvapfn.services.priors import linear_periodic_config, robustness_prior_config, sample_dataset

logger = logging.getLogger(__name__)

group = CommandGroup()

PRIOR_FAMILIES = ["gp", "linear_periodic", *[p.value for p in RobustnessPrior]]


def _prior_arguments(parser) -> None:
    parser.add_argument("--preset", default="1d", choices=preset_names(), help="prior row to start from")
    parser.add_argument("--family", default="gp", choices=PRIOR_FAMILIES, help="function family drawn from")
    parser.add_argument("--datasets", type=int, default=8, help="number of datasets to write")


def _prior_defaults(args) -> dict:
    return {"prior": copy.deepcopy(PRIOR_TEMPLATES[args.preset])}


@group.command("gen-prior", help="sample datasets from a GP prior", arguments=_prior_arguments, defaults=_prior_defaults)
def gen_prior(ctx: RunContext) -> None:
    cfg = ctx.prior_config()
    family = ctx.args.family
    if family == "linear_periodic":
        cfg = linear_periodic_config(cfg)
    elif family != "gp":
        cfg = robustness_prior_config(family, cfg)
    for k in range(ctx.args.datasets):
        ds = sample_dataset(cfg, ctx.stream_seed(k))
        ds.to_csv(ctx.path(f"datasets/dataset_{k:04d}.csv"))
    logger.info("wrote %d %s datasets of %d points", ctx.args.datasets, family, cfg.points_per_dataset)


def _powerflow_arguments(parser) -> None:
    parser.add_argument("--network", default=None, help="network file (default: DVAPFN_NETWORK_FILE)")
    parser.add_argument("--buses", type=int, default=DESK_FEEDER_BUSES, help="keep the first n buses of the feeder")
    parser.add_argument("--delta", type=float, default=5.0, help="load perturbation in percent")
    parser.add_argument("--samples", type=int, default=600, help="scenarios to solve")
    parser.add_argument("--target-bus", type=int, default=None, help="bus whose |V| is the target (default: last bus)")
    parser.add_argument("--raw", action="store_true", help="skip per-column input standardization")


@group.command("gen-powerflow", help="solve load scenarios on a radial feeder", arguments=_powerflow_arguments)
def gen_powerflow(ctx: RunContext) -> None:
    args = ctx.args
    network = load_network_file(args.network or get_settings().NETWORK_FILE)
    if args.buses < network.n_buses:
        network = truncate_network(network, args.buses)
    target = args.target_bus or network.n_buses
    ds = generate_pf_dataset(network, args.delta, args.samples, target, ctx.seed, standardize=not args.raw)
    write_network_file(network, ctx.path("network.csv"))
    ds.to_csv(ctx.path("dataset.csv"))
    logger.info("solved %d scenarios on %d buses, target bus %d", args.samples, network.n_buses, target)

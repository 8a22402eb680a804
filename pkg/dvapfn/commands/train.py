"""
Training commands - meta-train one model, or sweep one design choice.
"""
import logging

from dvapfn.commands.common import CommandGroup, RunContext, csv_list
from dvapfn.errors import UsageError
from dvapfn.models.enums import AttentionKind, BackboneKind
from dvapfn.models.results import AblationRow, write_records
from dvapfn.schemas import TrainConfig
from dvapfn.services.checkpoint import save_checkpoint
from dvapfn.services.manifest import apply_overrides, format_value
from dvapfn.services.presets import ABLATION_VALUES, get_preset, preset_names
from dvapfn.services.training import train

logger = logging.getLogger(__name__)

group = CommandGroup()

ABLATION_KEYS = {
    "phi_x": "model.phi_x.kind",
    "phi_y": "model.phi_y.kind",
    "head": "model.head",
    "tie_qk": "model.attention.tie_qk",
    "bucket_size": "model.bucket_count",
    "attention": "model.attention.kind",
    "backbone": "model.backbone",
}


def preset_arguments(parser) -> None:
    parser.add_argument("--preset", default="1d", choices=preset_names(), help="task row the config starts from")
    parser.add_argument("--backbone", default="transformer", choices=[b.value for b in BackboneKind])
    parser.add_argument("--attention", default="DVA", choices=[a.value for a in AttentionKind])
    parser.add_argument("--desk", action="store_true", help="laptop-scale reduction of the preset")


def preset_defaults(args) -> dict:
    return get_preset(args.preset, args.backbone, args.attention, args.desk)


@group.command("train", help="meta-train a PFN on its prior", arguments=preset_arguments, defaults=preset_defaults)
def train_model(ctx: RunContext) -> None:
    cfg = ctx.train_config()
    model, log = train(cfg)
    save_checkpoint(model, ctx.path("model.ckpt"))
    log.write(ctx.path("train_log.csv"), ctx.path("timing.csv"))
    logger.info("best validation NLL %.4f", log.best_val_nll)


def _ablate_arguments(parser) -> None:
    preset_arguments(parser)
    parser.add_argument("--sweep", required=True, choices=sorted(ABLATION_KEYS), help="design choice to vary")
    parser.add_argument("--values", type=csv_list, default=None, help="comma-separated values (default: every option)")


def variant_config(body: dict, sweep: str, value) -> TrainConfig:
    return TrainConfig.parse(apply_overrides(body, [f"{ABLATION_KEYS[sweep]}={format_value(value)}"]))


@group.command("ablate", help="train one model per value of a design choice", arguments=_ablate_arguments, defaults=preset_defaults)
def ablate(ctx: RunContext) -> None:
    sweep = ctx.args.sweep
    values = ctx.args.values or ABLATION_VALUES[sweep]
    if not values:
        raise UsageError("--values must list at least one value")
    body = ctx.body()
    variants = [variant_config(body, sweep, value) for value in values]

    rows = []
    for i, (value, cfg) in enumerate(zip(values, variants)):
        logger.info("ablation %s=%s (%d/%d)", sweep, value, i + 1, len(values))
        model, log = train(cfg)
        log.write(ctx.path(f"variant-{i:02d}/train_log.csv"), ctx.path(f"variant-{i:02d}/timing.csv"))
        rows.append(AblationRow(sweep, format_value(value), model.n_params, log.val_nlls[-1], log.best_val_nll))
    write_records(rows, ctx.path("ablation.csv"))

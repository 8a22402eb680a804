"""
Command plumbing - subcommand registry, config resolution and run directories.

Each command module owns a ``CommandGroup`` and registers handlers on it the
way a web router registers endpoints; ``dvapfn.main`` includes every group.
"""
import argparse
import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from dvapfn.errors import UsageError
from dvapfn.numerics import derive_seed
from dvapfn.schemas import PriorConfig, RunManifest, TrainConfig
from dvapfn.services.manifest import (
    apply_overrides,
    dump_flat,
    finalize_manifest,
    load_flat,
    load_manifest,
    new_manifest,
    parse_value,
    run_directory,
    write_manifest,
)

logger = logging.getLogger(__name__)

COMMON_DESTS = {"command", "config", "set", "seed", "manifest", "out"}


# ==================== Argument types ====================

def csv_list(text: str) -> List[Any]:
    """``10,20,40`` -> [10, 20, 40]; used for list-valued flags."""
    value = parse_value(text if "," in text else text + ",")
    if not value:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}")
    return value


def int_list(text: str) -> List[int]:
    values = csv_list(text)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return values


# ==================== Registry ====================

@dataclass
class Command:
    name: str
    help: str
    handler: Callable[["RunContext"], None]
    arguments: Optional[Callable[[argparse.ArgumentParser], None]] = None
    defaults: Optional[Callable[[argparse.Namespace], Dict[str, Any]]] = None
    arg_names: List[str] = field(default_factory=list)


class CommandGroup:
    """Collects subcommands declared with ``@group.command(...)``."""

    def __init__(self):
        self.commands: List[Command] = []

    def command(self, name: str, help: str, arguments=None, defaults=None):
        def decorator(handler):
            self.commands.append(Command(name, help, handler, arguments, defaults))
            return handler
        return decorator


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable, last wins)")
    parser.add_argument("--seed", type=int, help="root seed of every random stream")
    parser.add_argument("--manifest", help="replay the config recorded in a run manifest")
    parser.add_argument("--out", help="run directory (default: <RUNS_DIR>/<subcommand>-<seed>-<utc timestamp>)")


# ==================== Runs ====================

@dataclass
class RunContext:
    args: argparse.Namespace
    config: Dict[str, Any]
    seed: int
    run_dir: Path

    def path(self, name: str) -> Path:
        target = self.run_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def body(self) -> Dict[str, Any]:
        """Config without the recorded command-line arguments."""
        return {k: copy.deepcopy(v) for k, v in self.config.items() if k != "args"}

    def train_config(self) -> TrainConfig:
        return TrainConfig.parse(self.body())

    def prior_config(self) -> PriorConfig:
        return PriorConfig.parse(self.config.get("prior", {}))

    def stream_seed(self, *stream: int) -> int:
        return derive_seed(self.seed, *stream)


def merge_trees(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_trees(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_config(command: Command, args: argparse.Namespace) -> Dict[str, Any]:
    """Defaults, then the config file, then ``--set``, then ``--seed``."""
    if args.manifest:
        if args.config or args.set or args.seed is not None:
            raise UsageError("--manifest replays a recorded run; drop --config/--set/--seed")
        recorded = load_manifest(args.manifest)
        if recorded.subcommand != command.name:
            raise UsageError(f"manifest records {recorded.subcommand!r}, not {command.name!r}")
        for name, value in recorded.config.get("args", {}).items():
            setattr(args, name, value)
        args.set = list(recorded.overrides)
        return recorded.config

    base = command.defaults(args) if command.defaults else {}
    if args.config:
        base = merge_trees(base, load_flat(args.config))
    config = apply_overrides(base, args.set)
    if args.seed is not None:
        config["seed"] = args.seed
    config.setdefault("seed", 0)
    config["args"] = {name: getattr(args, name) for name in command.arg_names}
    return config


def execute(command: Command, args: argparse.Namespace) -> RunManifest:
    """Resolve, write the manifest, run the handler, then record artifact hashes."""
    config = resolve_config(command, args)
    seed = int(config["seed"])
    run_dir = run_directory(command.name, seed, args.out)
    manifest = new_manifest(command.name, config, seed, args.set)
    path = write_manifest(run_dir, manifest)
    logger.info("%s run in %s (manifest %s)", command.name, run_dir, path.name)
    (run_dir / "config.txt").write_text(dump_flat(config))
    command.handler(RunContext(args=args, config=config, seed=seed, run_dir=run_dir))
    return finalize_manifest(run_dir, manifest)

"""
Manifest Service - flat text configs, run directories and run manifests.

Flat configs are ``key=value`` lines with dotted section prefixes::

    # 1D transformer with decoupled values
    prior.kernel.lengthscale=0.6
    model.attention.kind=DVA
    prior.output_shift_range=0.9,1.1

Commas make lists (a trailing comma marks a one-element list), ``true`` /
``false`` / ``none`` are literals, and numeric path segments index lists of
sections.
"""
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from dvapfn import __version__
from dvapfn.config import get_settings
from dvapfn.errors import ConfigError
from dvapfn.schemas import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
# wall-clock outputs, left out of the artifact hashes
VOLATILE_SUFFIX = "timing.csv"


# ==================== Flat config ====================

def _scalar(text: str) -> Any:
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(text: str) -> Any:
    if "," not in text:
        return _scalar(text)
    items = text.split(",")
    if items and items[-1].strip() == "":
        items = items[:-1]
    return [_scalar(item) for item in items if item.strip() != ""]


def _listify(node: Any) -> Any:
    if not isinstance(node, dict):
        return node
    node = {key: _listify(value) for key, value in node.items()}
    if node and all(key.isdigit() for key in node):
        return [node[key] for key in sorted(node, key=int)]
    return node


def _assign(tree: Dict[str, Any], dotted: str, value: Any, where: str) -> None:
    parts = [p.strip() for p in dotted.split(".")]
    if any(not p for p in parts):
        raise ConfigError(f"{where}: empty section in key {dotted!r}")
    node = tree
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{where}: {dotted!r} descends into the value of {part!r}")
        node = child
    node[parts[-1]] = value


def _unlistify(tree: Dict[str, Any]) -> Dict[str, Any]:
    """Turn lists back into index-keyed sections so overrides can reach inside them."""
    out = {}
    for key, value in tree.items():
        if isinstance(value, dict):
            out[key] = _unlistify(value)
        elif isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            out[key] = {str(i): _unlistify(v) for i, v in enumerate(value)}
        else:
            out[key] = value
    return out


def parse_flat(text: str) -> Dict[str, Any]:
    """Nested dict from flat ``key=value`` text; later keys win."""
    tree: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {number}: expected key=value, got {raw!r}")
        _assign(tree, key.strip(), parse_value(value), f"line {number}")
    return _listify(tree)


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        if not value:
            return ","
        body = ",".join(format_value(v) for v in value)
        return body + "," if len(value) == 1 else body
    return str(value)


def flatten(tree: Dict[str, Any], prefix: str = "") -> Dict[str, str]:
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, dotted + "."))
        elif isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            for i, item in enumerate(value):
                flat.update(flatten(item, f"{dotted}.{i}."))
        else:
            flat[dotted] = format_value(value)
    return flat


def dump_flat(tree: Dict[str, Any]) -> str:
    """Flat text in sorted key order; ``parse_flat(dump_flat(t)) == t`` for JSON-like trees."""
    flat = flatten(tree)
    return "".join(f"{key}={flat[key]}\n" for key in sorted(flat))


def apply_overrides(tree: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """``--set key=value`` assignments applied in order (last wins)."""
    merged = _unlistify(json.loads(json.dumps(tree)))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {item!r}")
        _assign(merged, key.strip(), parse_value(value), f"override {item!r}")
    return _listify(merged)


def load_flat(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_flat(path.read_text())


# ==================== Run directories ====================

def run_directory(subcommand: str, seed: int, out: Optional[Union[str, Path]] = None) -> Path:
    """``out`` if given, else ``<RUNS_DIR>/<subcommand>-<seed>-<utc timestamp>``."""
    if out is not None:
        path = Path(out)
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        path = Path(get_settings().RUNS_DIR) / f"{subcommand}-{seed}-{stamp}"
    path.mkdir(parents=True, exist_ok=True)
    return path


# ==================== Manifests ====================

def new_manifest(subcommand: str, config: Dict[str, Any], seed: int, overrides: List[str]) -> RunManifest:
    return RunManifest(subcommand=subcommand, config=config, seed=seed, overrides=list(overrides), tool_version=__version__)


def write_manifest(run_dir: Path, manifest: RunManifest) -> Path:
    path = Path(run_dir) / MANIFEST_NAME
    payload = json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True)
    path.write_text(payload + "\n")
    return path


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def artifact_hashes(run_dir: Path) -> Dict[str, str]:
    """sha256 of every file under ``run_dir`` except the manifest and timing files, keyed by relative path."""
    run_dir = Path(run_dir)
    return {
        path.relative_to(run_dir).as_posix(): file_sha256(path)
        for path in sorted(run_dir.rglob("*"))
        if path.is_file() and path.name != MANIFEST_NAME and not path.name.endswith(VOLATILE_SUFFIX)
    }


def finalize_manifest(run_dir: Path, manifest: RunManifest) -> RunManifest:
    """Record artifact hashes and rewrite the manifest."""
    final = manifest.model_copy(update={"artifacts": artifact_hashes(run_dir)})
    path = write_manifest(run_dir, final)
    logger.info("wrote %s with %d artifact hashes", path, len(final.artifacts))
    return final


def load_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    try:
        return RunManifest.model_validate_json(path.read_text())
    except ValueError as exc:
        raise ConfigError(f"invalid manifest {path}: {exc}") from exc


def verify_manifest(run_dir: Union[str, Path]) -> List[str]:
    """Artifacts whose current hash differs from the manifest (missing files included)."""
    manifest = load_manifest(run_dir)
    current = artifact_hashes(Path(run_dir))
    return sorted(name for name, digest in manifest.artifacts.items() if current.get(name) != digest)

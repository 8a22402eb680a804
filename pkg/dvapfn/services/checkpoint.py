"""
Checkpoint Service - versioned binary model files.

Layout (little-endian, see docs/FILE_FORMATS.md):

  8 bytes   magic b"DVAPFNCK"
  uint32    format version
  uint32    header length in bytes
  header    UTF-8 JSON: model spec, bucket count, parameter names and shapes, metadata
  float64   bucket edges (B + 1 values)
  float64   parameters, concatenated in header order, row-major
"""
import json
import logging
from pathlib import Path
from typing import Union

import numpy as np

from dvapfn.errors import ContractError
from dvapfn.schemas import ModelSpec
from dvapfn.services.backbones import PFNModel
from dvapfn.services.bardist import BucketSpec

logger = logging.getLogger(__name__)

MAGIC = b"DVAPFNCK"
FORMAT_VERSION = 1
_F64 = np.dtype("<f8")
_U32 = np.dtype("<u4")


def checkpoint_bytes(model: PFNModel) -> bytes:
    header = {
        "model_spec": model.spec.model_dump(mode="json"),
        "bucket_count": model.buckets.B,
        "params": [[name, list(value.shape)] for name, value in model.params.items()],
        "metadata": model.metadata,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [
        MAGIC,
        np.array([FORMAT_VERSION, len(header_bytes)], dtype=_U32).tobytes(),
        header_bytes,
        model.buckets.edges.astype(_F64).tobytes(),
    ]
    chunks.extend(np.ascontiguousarray(value, dtype=_F64).tobytes() for value in model.params.values())
    return b"".join(chunks)


def save_checkpoint(model: PFNModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model))
    logger.info("saved checkpoint %s (%d parameters)", path, model.n_params)
    return path


def checkpoint_from_bytes(blob: bytes) -> PFNModel:
    if blob[:len(MAGIC)] != MAGIC:
        raise ContractError("not a model checkpoint (bad magic)")
    offset = len(MAGIC)
    version, header_len = np.frombuffer(blob, dtype=_U32, count=2, offset=offset)
    if version != FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    offset += 2 * _U32.itemsize
    header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    offset += int(header_len)

    def take(count: int) -> np.ndarray:
        nonlocal offset
        end = offset + count * _F64.itemsize
        if end > len(blob):
            raise ContractError("checkpoint is truncated")
        values = np.frombuffer(blob[offset:end], dtype=_F64).astype(np.float64)
        offset = end
        return values

    buckets = BucketSpec(take(header["bucket_count"] + 1))
    params = {}
    for name, shape in header["params"]:
        params[name] = take(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    if offset != len(blob):
        raise ContractError(f"checkpoint has {len(blob) - offset} trailing bytes")
    return PFNModel(
        spec=ModelSpec.parse(header["model_spec"]),
        params=params,
        buckets=buckets,
        metadata=header.get("metadata", {}),
    )


def load_checkpoint(path: Union[str, Path]) -> PFNModel:
    path = Path(path)
    if not path.exists():
        raise ContractError(f"checkpoint not found: {path}")
    return checkpoint_from_bytes(path.read_bytes())

"""Checkpoint file format (little-endian):

  magic      8 bytes  b"PCFOLD1\\0"
  version    u32
  tensors    u32      tensor count
  config     u32 length + UTF-8 JSON blob (config echo + design metadata)
  per tensor:
    name     u16 length + UTF-8 bytes
    dtype    u8 (0 = f32, 1 = f64)
    rank     u8
    extents  rank * u64
    data     raw little-endian scalars
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from . import pipeline
from .config import PipelineConfig, config_dict
from .params import named_tensors

MAGIC = b"PCFOLD1\x00"
VERSION = 1

# design choices that are not recoverable from the weights alone
DESIGN_METADATA = {
    "attention_projection_bias": False,
    "normalization_layers": "none",
    "self_attention": "gated-residual, channel-reduced q/k, bias-free value",
    "error_path_up": "duplication + shared bias-free linear, no positional codes",
}

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params, pcfg: PipelineConfig, train_cfg=None, extra=None):
    tensors = list(named_tensors(params))
    blob = {
        "pipeline": dataclasses.asdict(pcfg),
        "design": DESIGN_METADATA,
    }
    if train_cfg is not None:
        blob["train"] = dataclasses.asdict(train_cfg)
    if extra:
        blob.update(extra)
    cfg_bytes = json.dumps(blob, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        for name, t in tensors:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", _DTYPE_TAGS[t.data.dtype], t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data).astype(t.data.dtype.newbyteorder("<")).tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path, expected_config: PipelineConfig = None):
    """Load a checkpoint into freshly initialized ModelParams.

    Returns (params, config blob dict). If expected_config is given, the
    stored pipeline config must match it exactly.
    """
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(MAGIC), "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        blob = json.loads(_read_exact(fh, cfg_len, "config blob").decode("utf-8"))
        stored = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
            name = _read_exact(fh, nlen, "tensor name").decode("utf-8")
            tag, rank = struct.unpack("<BB", _read_exact(fh, 2, "tensor header"))
            if tag not in _TAG_DTYPES:
                raise CheckpointError(f"unknown dtype tag {tag} for tensor {name!r}")
            extents = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "tensor extents"))
            dtype = _TAG_DTYPES[tag]
            nbytes = int(np.prod(extents, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
            raw = _read_exact(fh, nbytes, f"tensor data for {name!r}")
            stored[name] = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(extents)

    pcfg = PipelineConfig(**blob["pipeline"])
    if expected_config is not None and dataclasses.asdict(expected_config) != blob["pipeline"]:
        raise CheckpointError("checkpoint config does not match the runtime config")
    params = pipeline.ModelParams.init(pcfg, seed=0)
    current = dict(named_tensors(params))
    if set(current) != set(stored):
        missing = set(current) ^ set(stored)
        raise CheckpointError(f"tensor name mismatch: {sorted(missing)[:5]}")
    for name, arr in stored.items():
        t = current[name]
        if t.data.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name!r}: {t.data.shape} vs {arr.shape}")
        # keep 0-d tensors 0-d (ascontiguousarray would promote them)
        t.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
    return params, blob

"""Versioned, byte-stable checkpoint container.

Layout::

    b"MBAFCKPT"                      8-byte magic
    uint32 little-endian             format version
    uint64 little-endian             header length H
    H bytes                          UTF-8 JSON header (sorted keys)
    payload                          raw little-endian tensor bytes

The header stores the experiment config, the training step, free-form
metadata, the optimizer's non-tensor settings, and a manifest of
``(name, dtype, shape, offset, nbytes)`` for every tensor in the payload.
Tensors are written in sorted name order, so saving the same state twice
gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import config as config_io
from .config import ExperimentConfig
from .errors import CheckpointVersionError

MAGIC = b"MBAFCKPT"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int64": torch.int64,
    "bool": torch.bool,
    "uint8": torch.uint8,
}


@dataclass
class Checkpoint:
    config: ExperimentConfig
    model_state: dict
    optimizer_state: dict | None = None
    step: int = 0
    meta: dict = field(default_factory=dict)


def _dtype_name(t: torch.Tensor) -> str:
    for name, dt in _DTYPES.items():
        if t.dtype == dt:
            return name
    raise TypeError(f"unsupported tensor dtype {t.dtype}")


def _split_optimizer(state: dict) -> tuple[dict, dict]:
    tensors, scalars = {}, {}
    for idx, entry in state["state"].items():
        for key, value in entry.items():
            if isinstance(value, torch.Tensor):
                tensors[f"optim/{idx}/{key}"] = value
            else:
                scalars[f"{idx}/{key}"] = value
    return tensors, {"param_groups": state["param_groups"], "scalars": scalars}


def _join_optimizer(tensors: dict, info: dict) -> dict:
    state: dict = {}
    for name, value in tensors.items():
        _, idx, key = name.split("/", 2)
        state.setdefault(int(idx), {})[key] = value
    for name, value in info["scalars"].items():
        idx, key = name.split("/", 1)
        state.setdefault(int(idx), {})[key] = value
    return {"state": state, "param_groups": info["param_groups"]}


def encode(ckpt: Checkpoint) -> bytes:
    tensors = {f"model/{k}": v for k, v in ckpt.model_state.items()}
    optim_info = None
    if ckpt.optimizer_state is not None:
        optim_tensors, optim_info = _split_optimizer(ckpt.optimizer_state)
        tensors.update(optim_tensors)
    manifest, chunks, offset = [], [], 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        raw = t.numpy().astype(t.numpy().dtype.newbyteorder("<"), copy=False).tobytes()
        manifest.append({"name": name, "dtype": _dtype_name(t), "shape": list(t.shape),
                         "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.config.to_dict(),
        "step": int(ckpt.step),
        "meta": ckpt.meta,
        "optimizer": optim_info,
        "tensors": manifest,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + b"".join(chunks)


def decode(blob: bytes) -> Checkpoint:
    """Parse a checkpoint; any structural problem raises before anything is returned."""
    if len(blob) < 20 or blob[:8] != MAGIC:
        raise CheckpointVersionError("not an MBAF checkpoint (bad magic header)")
    version, head_len = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is not supported "
            f"(this build reads version {FORMAT_VERSION})")
    try:
        header = json.loads(blob[20:20 + head_len].decode("utf-8"))
        cfg = config_io.from_dict(header["config"])
        payload = blob[20 + head_len:]
        tensors = {}
        for entry in header["tensors"]:
            start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
            if stop > len(payload):
                raise ValueError(f"tensor {entry['name']} runs past end of file")
            dt = _DTYPES[entry["dtype"]]
            np_dtype = torch.empty(0, dtype=dt).numpy().dtype.newbyteorder("<")
            arr = np.frombuffer(payload[start:stop], dtype=np_dtype).reshape(entry["shape"])
            tensors[entry["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CheckpointVersionError(f"corrupted checkpoint header: {exc}") from exc
    model_state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    optim = None
    if header["optimizer"] is not None:
        optim = _join_optimizer({k: v for k, v in tensors.items() if k.startswith("optim/")},
                                header["optimizer"])
    return Checkpoint(config=cfg, model_state=model_state, optimizer_state=optim,
                      step=header["step"], meta=header["meta"])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())

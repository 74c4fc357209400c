"""Self-describing binary checkpoints for the backbone and heads.

Layout: magic `E3DP`, uint32 version, uint64 header length, a sorted-key JSON
header (configs, iteration, seed, array manifest), then the raw little-endian
array blobs. Arrays carry a dtype tag (`<f8` by default so a resumed run
reproduces the uninterrupted one bit-for-bit; `<f4` is accepted for compact
export). Optimizer velocity buffers are stored under an `opt/` name prefix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"E3DP"
VERSION = 1
_DTYPES = {"<f4", "<f8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    backbone_config: dict
    head_configs: dict
    iteration: int = 0
    seed: int = 0
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str, dtype: str = "<f8") -> None:
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {dtype!r}")
    manifest = []
    blobs = []
    offset = 0
    named = [(n, a, False) for n, a in sorted(ckpt.params.items())]
    named += [(f"opt/{n}", a, True) for n, a in sorted(ckpt.opt_state.items())]
    for name, arr, _ in named:
        blob = np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": VERSION,
        "backbone": ckpt.backbone_config,
        "heads": ckpt.head_configs,
        "iteration": ckpt.iteration,
        "seed": ckpt.seed,
        "extra": ckpt.extra,
        "arrays": manifest,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<Q", data, 8)
    header = json.loads(data[16 : 16 + hlen].decode())
    base = 16 + hlen
    params: dict[str, np.ndarray] = {}
    opt_state: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        arr = np.frombuffer(data, dtype=dt, count=count, offset=start).reshape(shape).copy()
        name = entry["name"]
        if name.startswith("opt/"):
            opt_state[name[4:]] = arr
        else:
            params[name] = arr
    return Checkpoint(
        params=params,
        backbone_config=header["backbone"],
        head_configs=header["heads"],
        iteration=header["iteration"],
        seed=header["seed"],
        opt_state=opt_state,
        extra=header.get("extra", {}),
    )


def describe_checkpoint(path: str) -> str:
    ckpt = load_checkpoint(path)
    lines = [
        f"checkpoint {path}",
        f"  version: {VERSION}",
        f"  iteration: {ckpt.iteration}",
        f"  seed: {ckpt.seed}",
        f"  backbone: {json.dumps(ckpt.backbone_config, sort_keys=True)}",
        f"  heads: {json.dumps(ckpt.head_configs, sort_keys=True)}",
    ]
    total = 0
    for name in sorted(ckpt.params):
        arr = ckpt.params[name]
        total += arr.size
        lines.append(f"  param {name}: shape={list(arr.shape)} dtype={arr.dtype.str}")
    for name in sorted(ckpt.opt_state):
        arr = ckpt.opt_state[name]
        lines.append(f"  opt   {name}: shape={list(arr.shape)} dtype={arr.dtype.str}")
    lines.append(f"  total parameters: {total}")
    return "\n".join(lines)

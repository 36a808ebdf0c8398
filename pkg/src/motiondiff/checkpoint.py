"""Self-describing checkpoint container.

Layout: an 8-byte magic, a little-endian ``uint32`` header length, a UTF-8
JSON header, then the tensor blobs back to back as little-endian float32.
The header lists every blob by name with its shape and byte offset
(relative to the start of the blob section), plus the model config,
optimizer hyper-parameters and step, the RNG seed, normalization stats,
the skeleton, the diffusion schedule and an optional adapter section.
Output bytes depend only on the content, so identical runs produce
identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from .adapter import AdapterParams, JointGrouping
from .denoiser.model import DTYPE, DenoiserConfig, DenoiserModel
from .denoiser.train import AdamW
from .kinematics import Skeleton
from .motion_data import NormStats

MAGIC = b"MDIFCKPT"
FORMAT = "motiondiff.checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: DenoiserModel
    schedule_T: int
    seed: int = 0
    stats: Optional[NormStats] = None
    skeleton: Optional[Skeleton] = None
    optimizer: Optional[AdamW] = None
    adapter: Optional[AdapterParams] = None
    fine_skeleton: Optional[Skeleton] = None
    fine_stats: Optional[NormStats] = None
    extra: Dict = field(default_factory=dict)


def _flat(t) -> np.ndarray:
    a = t.detach().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    return np.ascontiguousarray(a, dtype="<f4")


def save_checkpoint(path, ck: Checkpoint) -> None:
    blobs = {}
    for name in sorted(ck.model.params):
        blobs[f"param/{name}"] = ck.model.params[name]
    opt_head = None
    if ck.optimizer is not None:
        opt_head = ck.optimizer.state_dict()
        for name in sorted(ck.optimizer.m):
            blobs[f"adam_m/{name}"] = ck.optimizer.m[name]
            blobs[f"adam_v/{name}"] = ck.optimizer.v[name]
    adapter_head = None
    if ck.adapter is not None:
        a = ck.adapter
        blobs["adapter/q"] = a.q
        for g in sorted(a.m):
            blobs[f"adapter/m.{g}"] = a.m[g]
        adapter_head = {"scale": a.scale, "pre": a.pre.to_dict(), "fine": a.fine.to_dict(),
                        "fine_skeleton": None if ck.fine_skeleton is None else ck.fine_skeleton.to_dict(),
                        "fine_stats": None if ck.fine_stats is None else ck.fine_stats.to_dict()}
    index, chunks, offset = [], [], 0
    for name, t in blobs.items():
        arr = _flat(t)
        data = arr.tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": ck.model.cfg.to_dict(),
        "schedule": {"T": ck.schedule_T},
        "seed": ck.seed,
        "optimizer": opt_head,
        "norm_stats": None if ck.stats is None else ck.stats.to_dict(),
        "skeleton": None if ck.skeleton is None else ck.skeleton.to_dict(),
        "adapter": adapter_head,
        "extra": ck.extra,
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for c in chunks:
            f.write(c)


def read_header(path) -> dict:
    return _read(path)[0]


def _read(path):
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    if header.get("format") != FORMAT:
        raise CheckpointError("unknown checkpoint format")
    if header.get("version") != VERSION:
        raise CheckpointVersionError(f"checkpoint version {header.get('version')} != supported {VERSION}")
    body = raw[12 + n:]
    tensors = {}
    for e in header["tensors"]:
        chunk = body[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"truncated blob {e['name']}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(e["shape"]).astype(np.float64)
        tensors[e["name"]] = torch.as_tensor(arr, dtype=DTYPE)
    return header, tensors


def load_checkpoint(path) -> Checkpoint:
    header, tensors = _read(path)
    cfg = DenoiserConfig.from_dict(header["config"])
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    model = DenoiserModel(cfg, params)
    opt = None
    if header["optimizer"] is not None:
        h = header["optimizer"]
        opt = AdamW(h["beta1"], h["beta2"], h["eps"], h["weight_decay"], h["step"])
        for k, v in tensors.items():
            if k.startswith("adam_m/"):
                opt.m[k[len("adam_m/"):]] = v
            elif k.startswith("adam_v/"):
                opt.v[k[len("adam_v/"):]] = v
    adapter = fine_skel = fine_stats = None
    if header["adapter"] is not None:
        h = header["adapter"]
        m = {k[len("adapter/m."):]: v for k, v in tensors.items() if k.startswith("adapter/m.")}
        adapter = AdapterParams(tensors["adapter/q"], m, float(h["scale"]),
                                JointGrouping.from_dict(h["pre"]), JointGrouping.from_dict(h["fine"]))
        fine_skel = None if h["fine_skeleton"] is None else Skeleton.from_dict(h["fine_skeleton"])
        fine_stats = None if h["fine_stats"] is None else NormStats.from_dict(h["fine_stats"])
    return Checkpoint(
        model=model,
        schedule_T=int(header["schedule"]["T"]),
        seed=int(header["seed"]),
        stats=None if header["norm_stats"] is None else NormStats.from_dict(header["norm_stats"]),
        skeleton=None if header["skeleton"] is None else Skeleton.from_dict(header["skeleton"]),
        optimizer=opt,
        adapter=adapter,
        fine_skeleton=fine_skel,
        fine_stats=fine_stats,
        extra=header.get("extra", {}),
    )

"""Clip comparison metrics: L2Q, L2P, and the APE/AVE families.

Conventions fixed here:

* L2Q compares sign-canonicalized quaternions of *global* joint rotations,
  averaged over frames and joints.
* L2P compares FK positions after z-normalization with per-axis mean and
  standard deviation pooled over all frames and joints of the ground truth
  (or caller-supplied stats); averaged per joint.
* APE averages the per-joint Euclidean error over frames and the variant's
  joints; ``local`` expresses every joint in the root's frame, removing
  both root translation and full root orientation.
* AVE takes the population variance (ddof 0) over time of each coordinate,
  then averages the per-joint Euclidean distance of variance vectors.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .geometry import canonicalize_quat, quat_from_rotmat
from .kinematics import Skeleton, fk_arrays
from .motion_data import MotionClip, decode_arrays

VARIANTS = ("root", "trajectory", "local", "global")
GROUND_AXES = [0, 2]
METRIC_NAMES = ("l2q", "l2p") + tuple(f"ape_{v}" for v in VARIANTS) + tuple(f"ave_{v}" for v in VARIANTS)


@dataclass(frozen=True)
class Kinematics:
    positions: np.ndarray   # (N, J, 3) world
    global_rots: np.ndarray  # (N, J, 3, 3)
    root: int

    @classmethod
    def from_clip(cls, clip: MotionClip, skel: Skeleton) -> "Kinematics":
        root_pos, rots = decode_arrays(clip, skel)
        return cls.from_arrays(skel, root_pos, rots)

    @classmethod
    def from_arrays(cls, skel: Skeleton, root_pos: np.ndarray, rots: np.ndarray) -> "Kinematics":
        pos, G = fk_arrays(skel, np.asarray(root_pos, dtype=np.float64), np.asarray(rots, dtype=np.float64))
        return cls(pos, G, skel.root)

    @property
    def frames(self) -> int:
        return self.positions.shape[0]


def _kin(x, skel: Optional[Skeleton]) -> Kinematics:
    if isinstance(x, Kinematics):
        return x
    if skel is None:
        raise ValueError("a skeleton is needed to evaluate clips")
    return Kinematics.from_clip(x, skel)


def _pair(pred, gt, skel) -> Tuple[Kinematics, Kinematics]:
    a, b = _kin(pred, skel), _kin(gt, skel)
    if a.positions.shape != b.positions.shape:
        raise ValueError(f"shape mismatch: {a.positions.shape} vs {b.positions.shape}")
    return a, b


def l2q(pred, gt, skel: Optional[Skeleton] = None) -> float:
    a, b = _pair(pred, gt, skel)
    qa = canonicalize_quat(quat_from_rotmat(a.global_rots))
    qb = canonicalize_quat(quat_from_rotmat(b.global_rots))
    return float(np.linalg.norm(qa - qb, axis=-1).mean())


def l2p(pred, gt, skel: Optional[Skeleton] = None, normalize: bool = True,
        stats: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> float:
    a, b = _pair(pred, gt, skel)
    pa, pb = a.positions, b.positions
    if normalize:
        if stats is None:
            mean = pb.reshape(-1, 3).mean(axis=0)
            std = pb.reshape(-1, 3).std(axis=0)
        else:
            mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
        std = np.maximum(std, 1e-8)
        pa = (pa - mean) / std
        pb = (pb - mean) / std
    return float(np.linalg.norm(pa - pb, axis=-1).mean())


def _subset(k: Kinematics, variant: str) -> np.ndarray:
    """``(N, K, C)`` coordinates measured by ``variant``."""
    r = k.root
    if variant == "root":
        return k.positions[:, r:r + 1, :]
    if variant == "trajectory":
        return k.positions[:, r:r + 1, GROUND_AXES]
    if variant == "local":
        rel = k.positions - k.positions[:, r:r + 1, :]
        return np.einsum("nji,nkj->nki", k.global_rots[:, r], rel)
    if variant == "global":
        return k.positions
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def ape(pred, gt, skel: Optional[Skeleton] = None, variant: str = "global") -> float:
    a, b = _pair(pred, gt, skel)
    return float(np.linalg.norm(_subset(a, variant) - _subset(b, variant), axis=-1).mean())


def ave(pred, gt, skel: Optional[Skeleton] = None, variant: str = "global") -> float:
    a, b = _pair(pred, gt, skel)
    if a.frames < 2:
        raise ValueError("variance needs at least two frames")
    va = _subset(a, variant).var(axis=0)
    vb = _subset(b, variant).var(axis=0)
    return float(np.linalg.norm(va - vb, axis=-1).mean())


@dataclass(frozen=True)
class MetricReport:
    values: Dict[str, float]

    def __post_init__(self):
        for k, v in self.values.items():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"metric {k} = {v} is not a finite non-negative number")

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def to_dict(self) -> Dict[str, float]:
        return {k: self.values[k] for k in METRIC_NAMES if k in self.values}

    def csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.to_dict()
        if header:
            w.writerow(list(d))
        w.writerow([repr(v) for v in d.values()])
        return buf.getvalue()


def evaluate(pred, gt, skel: Optional[Skeleton] = None, normalize_l2p: bool = True) -> MetricReport:
    a, b = _pair(pred, gt, skel)
    vals = {"l2q": l2q(a, b), "l2p": l2p(a, b, normalize=normalize_l2p)}
    for v in VARIANTS:
        vals[f"ape_{v}"] = ape(a, b, variant=v)
    if a.frames >= 2:
        for v in VARIANTS:
            vals[f"ave_{v}"] = ave(a, b, variant=v)
    return MetricReport(vals)

"""Learned bridge between a fine-tuning skeleton and the pretraining skeleton.

The input path maps per-group joint rows through ``m`` and then composes the
rotation of every pretraining joint ``j`` with its offset ``Q_j``; the output
path undoes ``Q_j`` first and then applies the pseudo-inverse of ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .denoiser.model import DTYPE, DenoiserModel, forward
from .denoiser.train import AdamW, annealed_lr, corrupt_frames, frame_steps
from .kinematics import Skeleton, fk_arrays, skeleton_height
from .motion_data import NormStats
from .schedule import DiffusionSchedule
from .torch_geometry import rotmat_to_6d, sixd_to_rotmat

GROUP_ORDER = ("left_leg", "right_leg", "spine", "left_arm", "right_arm", "head")
PINV_CUTOFF = 1e-8
IDENTITY_6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
DEGENERATE = 1e-9


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class JointGrouping:
    """Named joint-index lists (topological order) plus the root index."""

    root: int
    groups: Dict[str, List[int]]
    num_joints: int

    def names(self) -> List[str]:
        return [g for g in GROUP_ORDER if g in self.groups]

    def to_dict(self) -> dict:
        return {"root": self.root, "num_joints": self.num_joints,
                "groups": {k: list(map(int, v)) for k, v in self.groups.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "JointGrouping":
        return cls(int(d["root"]), {k: list(v) for k, v in d["groups"].items()}, int(d["num_joints"]))


def _mean_x(pos: np.ndarray, joints: Sequence[int]) -> float:
    return float(pos[list(joints), 0].mean())


def _split_pair(subtrees, what):
    sizes = [len(s) for s in subtrees]
    pairs = [(i, k) for i in range(len(subtrees)) for k in range(i + 1, len(subtrees)) if sizes[i] == sizes[k]]
    if not pairs:
        raise TopologyError(f"no symmetric pair of {what} subtrees")
    return pairs


def group_joints(skel: Skeleton) -> JointGrouping:
    """Find legs, spine, arms and optional head from the tree structure alone."""
    root = skel.root
    kids = skel.children(root)
    if len(kids) != 3:
        raise TopologyError(f"root has {len(kids)} subtrees, expected 3")
    pos, _ = fk_arrays(skel, np.zeros(3), skel.default_rots)
    subtrees = [skel.subtree(k) for k in kids]

    def spine_chain(start):
        chain = [start]
        while len(skel.children(chain[-1])) == 1:
            chain.append(skel.children(chain[-1])[0])
        return chain

    candidates = []
    for i, k in _split_pair(subtrees, "leg"):
        s = 3 - i - k
        chain = spine_chain(kids[s])
        if len(skel.children(chain[-1])) in (2, 3):
            candidates.append((i, k, s, chain))
    if not candidates:
        raise TopologyError("spine branching yields neither 2 nor 3 subtrees")
    i, k, s, chain = candidates[0]
    legs = sorted([subtrees[i], subtrees[k]], key=lambda js: _mean_x(pos, js))
    groups = {"left_leg": legs[0], "right_leg": legs[1], "spine": chain}

    branch = skel.children(chain[-1])
    bsub = [skel.subtree(b) for b in branch]
    if len(branch) == 2:
        if len(bsub[0]) != len(bsub[1]):
            raise TopologyError("no symmetric pair of arm subtrees")
        arms, head = bsub, None
    else:
        a, b = _split_pair(bsub, "arm")[0]
        arms, head = [bsub[a], bsub[b]], bsub[3 - a - b]
    arms = sorted(arms, key=lambda js: _mean_x(pos, js))
    groups["left_arm"], groups["right_arm"] = arms
    if head is not None:
        groups["head"] = head
    return JointGrouping(root, {g: sorted(v) for g, v in groups.items()}, skel.num_joints)


@dataclass
class AdapterParams:
    """Trainable ``q`` (one 6D row per pretraining joint) and per-group ``m``."""

    q: torch.Tensor
    m: Dict[str, torch.Tensor]
    scale: float
    pre: JointGrouping
    fine: JointGrouping

    def tensors(self) -> Dict[str, torch.Tensor]:
        out = {"q": self.q}
        out.update({f"m.{g}": v for g, v in self.m.items()})
        return out

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.q.detach().clone(), {g: v.detach().clone() for g, v in self.m.items()},
                             self.scale, self.pre, self.fine)

    def offsets(self) -> np.ndarray:
        """Decoded ``Q_j`` matrices ``(J_p, 3, 3)``."""
        with torch.no_grad():
            return sixd_to_rotmat(self.q).numpy()


def init_adapter(pre: JointGrouping, fine: JointGrouping, skel_pre: Optional[Skeleton] = None,
                 skel_fine: Optional[Skeleton] = None) -> AdapterParams:
    """Identity offsets, top-left identity blocks for ``m``, height ratio as scale."""
    if set(pre.groups) != set(fine.groups):
        raise TopologyError("the two skeletons do not share the same set of groups")
    q = torch.tensor([IDENTITY_6D] * pre.num_joints, dtype=DTYPE)
    m = {g: torch.eye(len(pre.groups[g]), len(fine.groups[g]), dtype=DTYPE) for g in pre.names()}
    scale = 1.0
    if skel_pre is not None and skel_fine is not None:
        scale = skeleton_height(skel_pre) / skeleton_height(skel_fine)
    return AdapterParams(q, m, scale, pre, fine)


def pinv(m: torch.Tensor) -> torch.Tensor:
    return torch.linalg.pinv(m, atol=PINV_CUTOFF, rtol=0.0)


def _rows(x: torch.Tensor, J: int):
    rot = x[..., :6 * J].reshape(*x.shape[:-1], J, 6)
    pos = x[..., 6 * J:].reshape(*x.shape[:-1], J, 3)
    return rot, pos


def _fill_empty(rot: torch.Tensor) -> torch.Tensor:
    """Rows that received no rotation (padding or truncation in ``m``) become identity."""
    with torch.no_grad():
        a, b = rot[..., :3], rot[..., 3:]
        na = torch.linalg.norm(a, dim=-1)
        perp = torch.linalg.norm(torch.linalg.cross(a, b, dim=-1), dim=-1)
        empty = (na < DEGENERATE) | (perp < DEGENERATE * torch.clamp(na, min=1.0))
    ident = torch.tensor(IDENTITY_6D, dtype=rot.dtype).expand_as(rot)
    return torch.where(empty[..., None], ident, rot)


def _join(rot: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
    return torch.cat([rot.flatten(-2), pos.flatten(-2)], dim=-1)


def _remap(params: AdapterParams, src: JointGrouping, dst: JointGrouping, rot, pos, mats, pos_scale):
    """Scatter source joint rows into destination joints group by group."""
    out_r: List[Optional[torch.Tensor]] = [None] * dst.num_joints
    out_p: List[Optional[torch.Tensor]] = [None] * dst.num_joints
    out_r[dst.root] = rot[..., src.root, :]
    out_p[dst.root] = pos[..., src.root, :] * pos_scale
    for g in params.pre.names():
        M = mats[g]
        rr = torch.einsum("pf,...fc->...pc", M, rot[..., src.groups[g], :])
        pp = torch.einsum("pf,...fc->...pc", M, pos[..., src.groups[g], :]) * pos_scale
        for r, j in enumerate(dst.groups[g]):
            out_r[j] = rr[..., r, :]
            out_p[j] = pp[..., r, :]
    return torch.stack(out_r, dim=-2), torch.stack(out_p, dim=-2)


def adapt_in_t(params: AdapterParams, x: torch.Tensor) -> torch.Tensor:
    """Fine-tune features ``(..., 9 J_f)`` to pretraining features ``(..., 9 J_p)``."""
    if x.shape[-1] != 9 * params.fine.num_joints:
        raise ValueError("features do not match the fine-tuning layout")
    rot, pos = _rows(x, params.fine.num_joints)
    rot, pos = _remap(params, params.fine, params.pre, rot, pos, params.m, params.scale)
    R = sixd_to_rotmat(_fill_empty(rot)) @ sixd_to_rotmat(params.q)
    return _join(rotmat_to_6d(R), pos)


def adapt_out_t(params: AdapterParams, x: torch.Tensor) -> torch.Tensor:
    """Pretraining features back to the fine-tuning layout."""
    if x.shape[-1] != 9 * params.pre.num_joints:
        raise ValueError("features do not match the pretraining layout")
    rot, pos = _rows(x, params.pre.num_joints)
    R = sixd_to_rotmat(rot) @ sixd_to_rotmat(params.q).transpose(-1, -2)
    mp = {g: pinv(v) for g, v in params.m.items()}
    rot, pos = _remap(params, params.pre, params.fine, rotmat_to_6d(R), pos, mp, 1.0 / params.scale)
    return _join(rotmat_to_6d(sixd_to_rotmat(_fill_empty(rot))), pos)


def adapt_in(params: AdapterParams, x: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return adapt_in_t(params, torch.as_tensor(np.asarray(x), dtype=DTYPE)).numpy()


def adapt_out(params: AdapterParams, x: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return adapt_out_t(params, torch.as_tensor(np.asarray(x), dtype=DTYPE)).numpy()


def adapter_loss_t(params: AdapterParams, model: DenoiserModel, schedule: DiffusionSchedule, x_fine: torch.Tensor,
                   steps, noise: torch.Tensor, stats_pre: NormStats, stats_fine: NormStats) -> torch.Tensor:
    """Unconditional L2 denoising loss through ``adapt_out . f . adapt_in``.

    Corruption happens in the pretraining skeleton's normalized space, the
    loss is measured in the fine-tuning skeleton's normalized space.
    """
    mu_p = torch.as_tensor(stats_pre.mean, dtype=DTYPE)
    sd_p = torch.as_tensor(stats_pre.std, dtype=DTYPE)
    sd_f = torch.as_tensor(stats_fine.std, dtype=DTYPE)
    z0 = (adapt_in_t(params, x_fine) - mu_p) / sd_p
    B, N, _ = z0.shape
    st = frame_steps(steps, B, N)
    z_t = corrupt_frames(schedule, z0, st, noise)
    z_hat = forward(model.params, model.cfg, z_t, st)
    x_hat = adapt_out_t(params, z_hat * sd_p + mu_p)
    r = (x_hat - x_fine) / sd_f
    return (r * r).mean()


@dataclass
class TuneResult:
    params: AdapterParams
    losses: List[float] = field(default_factory=list)


def tune_adapter(model: DenoiserModel, schedule: DiffusionSchedule, params: AdapterParams, clips: np.ndarray,
                 stats_pre: NormStats, stats_fine: NormStats, steps: int, rng: np.random.Generator,
                 lr_max: float = 1e-2, lr_min: float = 1e-4, batch_size: Optional[int] = None,
                 tune_m: bool = True, log=None) -> TuneResult:
    """Fit ``q`` (and ``m``) with the backbone frozen; control signals are ignored.

    ``clips`` is ``(K, N, 9 J_f)`` in raw fine-tuning units. Backbone
    parameters are detached so they receive no gradient.
    """
    clips = np.asarray(clips, dtype=np.float64)
    params = params.copy()
    frozen = DenoiserModel(model.cfg, {k: v.detach() for k, v in model.params.items()})
    opt = AdamW(weight_decay=0.0)
    K = clips.shape[0]
    bs = K if batch_size is None else min(batch_size, K)
    Dp = 9 * params.pre.num_joints
    losses = []
    for i in range(steps):
        idx = np.arange(K) if bs == K else rng.choice(K, size=bs, replace=False)
        t = rng.integers(1, schedule.T + 1, size=bs)
        noise = torch.as_tensor(rng.standard_normal((bs, clips.shape[1], Dp)), dtype=DTYPE)
        names = ["q"] + ([f"m.{g}" for g in params.m] if tune_m else [])
        tensors = {k: v.detach().requires_grad_(k in names) for k, v in params.tensors().items()}
        live = AdapterParams(tensors["q"], {g: tensors[f"m.{g}"] for g in params.m}, params.scale,
                             params.pre, params.fine)
        value = adapter_loss_t(live, frozen, schedule, torch.as_tensor(clips[idx]), t, noise, stats_pre, stats_fine)
        grads = torch.autograd.grad(value, [tensors[n] for n in names])
        lr = annealed_lr(i, steps, lr_max, lr_min)
        flat = {k: v.detach() for k, v in tensors.items()}
        opt.update(flat, dict(zip(names, grads)), lr)
        params = AdapterParams(flat["q"], {g: flat[f"m.{g}"] for g in params.m}, params.scale,
                               params.pre, params.fine)
        losses.append(float(value.detach()))
        if log is not None:
            log(i, losses[-1], lr)
    return TuneResult(params, losses)

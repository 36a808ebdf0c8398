"""Differentiable counterparts of the NumPy rotation and FK routines."""

from __future__ import annotations

import torch

from .kinematics import Skeleton

DTYPE = torch.float64


def sixd_to_rotmat(x: torch.Tensor) -> torch.Tensor:
    """Gram-Schmidt decode ``(..., 6) -> (..., 3, 3)``."""
    a = x[..., 0:3]
    b = x[..., 3:6]
    c1 = a / torch.linalg.norm(a, dim=-1, keepdim=True)
    b = b - (c1 * b).sum(-1, keepdim=True) * c1
    c2 = b / torch.linalg.norm(b, dim=-1, keepdim=True)
    c3 = torch.linalg.cross(c1, c2, dim=-1)
    return torch.stack([c1, c2, c3], dim=-1)


def rotmat_to_6d(R: torch.Tensor) -> torch.Tensor:
    return torch.cat([R[..., :, 0], R[..., :, 1]], dim=-1)


def fk(skel: Skeleton, root_pos: torch.Tensor, rots: torch.Tensor) -> torch.Tensor:
    """Joint world positions ``(..., J, 3)`` from ``root_pos (..., 3)`` and local ``rots (..., J, 3, 3)``."""
    offsets = torch.as_tensor(skel.offsets, dtype=rots.dtype)
    G = [None] * skel.num_joints
    P = [None] * skel.num_joints
    for j, parent in enumerate(skel.parents):
        if parent < 0:
            G[j] = rots[..., j, :, :]
            P[j] = root_pos
        else:
            G[j] = G[parent] @ rots[..., j, :, :]
            P[j] = P[parent] + (G[parent] @ offsets[j][:, None])[..., 0]
    return torch.stack(P, dim=-2)

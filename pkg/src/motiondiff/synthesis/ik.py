"""Inverse kinematics: in-paint from position constraints, then refine with FK gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch

from ..denoiser.model import ControlEncoding, DenoiserModel
from ..geometry import rotmat_to_6d as np_rotmat_to_6d
from ..kinematics import Skeleton, UP_AXIS
from ..motion_data import FrameLayout, MotionClip, NormStats, encode_arrays
from ..schedule import DiffusionSchedule
from ..torch_geometry import DTYPE, fk, sixd_to_rotmat
from .sampling import inpaint

REFINE_STEPS = 200
STEP_SIZE = 1e-2
BACKTRACK = 0.5
MAX_HALVINGS = 30


@dataclass(frozen=True)
class IkConstraint:
    frame: int
    joint: int
    target: tuple

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        if len(self.target) != 3:
            raise ValueError("constraint target must be a 3-vector")


@dataclass
class IkResult:
    clip: MotionClip
    root_pos: np.ndarray
    rot6: np.ndarray
    residual: float
    history: List[float] = field(default_factory=list)


def _check(constraints: Sequence[IkConstraint], N: int, J: int) -> None:
    if not constraints:
        raise ValueError("need at least one constraint")
    for c in constraints:
        if not (0 <= c.frame < N and 0 <= c.joint < J):
            raise IndexError(f"constraint {c} out of range")


def ik_residual_t(skel: Skeleton, root_pos: torch.Tensor, rot6: torch.Tensor,
                  constraints: Sequence[IkConstraint]) -> torch.Tensor:
    """Sum over constraints of the L1 distance between FK joint and target."""
    frames = sorted({c.frame for c in constraints})
    row = {f: i for i, f in enumerate(frames)}
    pos = fk(skel, root_pos[frames], sixd_to_rotmat(rot6[frames]))
    total = torch.zeros((), dtype=DTYPE)
    for c in constraints:
        total = total + (pos[row[c.frame], c.joint] - torch.tensor(c.target, dtype=DTYPE)).abs().sum()
    return total


def _residual_vector(skel, root_pos, rot6, constraints, frames, row, targets):
    pos = fk(skel, root_pos, sixd_to_rotmat(rot6))
    return torch.stack([pos[row[c.frame], c.joint] for c in constraints]).reshape(-1) - targets


def refine_ik(skel: Skeleton, root_pos: np.ndarray, rot6: np.ndarray, constraints: Sequence[IkConstraint],
              steps: int = REFINE_STEPS, step_size: Optional[float] = None, optimize_root: bool = True,
              method: str = "gauss-newton"):
    """Descent with backtracking on the L1 constraint residual.

    ``method="gradient"`` steps along the negative (sub)gradient.
    ``method="gauss-newton"`` (default) preconditions the same gradient
    ``J^T sign(r)`` by the damped Gauss-Newton matrix of the reweighted
    residuals (``w = 1 / |r|``), which keeps moving where plain subgradient
    steps stall on a coordinate kink. Its damping adapts: it shrinks after a
    full step and grows when the step had to be halved. Every iteration starts at
    ``step_size`` and halves until the residual does not increase; if no
    halving helps, the iterate is kept, so the history never increases.
    Returns ``(root_pos, rot6, history)`` with ``history[0]`` the initial
    residual. Only frames carrying a constraint are touched.
    """
    if method not in ("gradient", "gauss-newton"):
        raise ValueError(f"unknown IK method {method!r}")
    if step_size is None:
        step_size = STEP_SIZE if method == "gradient" else 1.0
    root_all = np.array(root_pos, dtype=np.float64)
    rot_all = np.array(rot6, dtype=np.float64)
    frames = sorted({c.frame for c in constraints})
    row = {f: i for i, f in enumerate(frames)}
    targets = torch.tensor([c.target for c in constraints], dtype=DTYPE).reshape(-1)
    r = torch.as_tensor(root_all[frames])
    q = torch.as_tensor(rot_all[frames])
    nq = q.numel()

    def unpack(theta):
        qq = theta[:nq].reshape(q.shape)
        rr = theta[nq:].reshape(r.shape) if optimize_root else r
        return rr, qq

    def residuals(theta):
        rr, qq = unpack(theta)
        return _residual_vector(skel, rr, qq, constraints, frames, row, targets)

    def value(theta):
        with torch.no_grad():
            return float(residuals(theta).abs().sum())

    theta = torch.cat([q.reshape(-1)] + ([r.reshape(-1)] if optimize_root else []))
    current = value(theta)
    history = [current]
    damping = 1e-3
    for _ in range(steps):
        if current == 0.0:
            history.append(current)
            continue
        res = residuals(theta)
        Jac = torch.autograd.functional.jacobian(residuals, theta)
        g = Jac.T @ torch.sign(res.detach())
        if method == "gradient":
            direction = g
        else:
            w = 1.0 / torch.clamp(res.detach().abs(), min=1e-12)
            H = Jac.T @ (w[:, None] * Jac)
            lam = damping * (1e-12 + float(H.diagonal().max()))
            direction = torch.linalg.solve(H + lam * torch.eye(H.shape[0], dtype=DTYPE), g)
        eta = step_size
        halvings = 0
        for halvings in range(MAX_HALVINGS):
            cand = theta - eta * direction
            v = value(cand)
            if v <= current:
                theta, current = cand, v
                break
            eta *= BACKTRACK
        # Levenberg-Marquardt style: trust the quadratic model more after a full step
        damping = max(damping / 3.0, 1e-12) if halvings == 0 else min(damping * 4.0, 1e6)
        history.append(current)
    rr, qq = unpack(theta)
    root_all[frames] = rr.detach().numpy()
    rot_all[frames] = qq.detach().numpy()
    return root_all, rot_all, history


def solve_ik(model: DenoiserModel, schedule: DiffusionSchedule, constraints: Sequence[IkConstraint], N: int,
             skel: Skeleton, rng: np.random.Generator, refine_steps: int = REFINE_STEPS,
             step_size: Optional[float] = None, stats: Optional[NormStats] = None,
             control: Optional[ControlEncoding] = None, optimize_root: bool = True,
             fps: float = 30.0, method: str = "gauss-newton") -> IkResult:
    """Two-phase IK.

    Phase 1 in-paints a clip whose constrained position channels are known.
    Targets are world positions; they are placed in the rotation-invariant
    position block assuming the root starts at the ground-plane origin with
    zero heading. Phase 2 decodes that clip (root at x = z = 0, height from
    the position block) and refines rotations, and optionally the root
    position, against the constraints through differentiable FK.
    """
    J = skel.num_joints
    layout = FrameLayout(J)
    _check(constraints, N, J)
    stats = NormStats.identity(layout.D) if stats is None else stats
    raw_known = np.zeros((N, layout.D))
    known = np.zeros((N, layout.D), dtype=bool)
    for c in constraints:
        ch = layout.pos_channels(c.joint)
        raw_known[c.frame, ch] = c.target
        known[c.frame, ch] = True
    x_known = np.where(known, stats.apply(raw_known), 0.0)
    z = inpaint(model, schedule, x_known, known, control, rng)
    raw = stats.invert(z)
    rot6, pos = layout.split(raw)
    root_pos = np.zeros((N, 3))
    root_pos[:, UP_AXIS] = pos[:, skel.root, UP_AXIS]
    root_pos, rot6, history = refine_ik(skel, root_pos, rot6, constraints, refine_steps, step_size,
                                          optimize_root, method)
    with torch.no_grad():
        R = sixd_to_rotmat(torch.as_tensor(rot6)).numpy()
    clip = encode_arrays(skel, root_pos, R, fps)
    return IkResult(clip, root_pos, np_rotmat_to_6d(R), history[-1], history)

"""Skeletons, forward kinematics and the heading-free position transform."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import rot_y

HEADING_EPS = 1e-6
# local axis of the root treated as "forward" and the global vertical axis
FORWARD_AXIS = 2
UP_AXIS = 1


class SkeletonError(ValueError):
    pass


class DegenerateHeadingError(ValueError):
    """The root forward axis is (nearly) vertical and no earlier heading exists."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent: Optional[int]
    offset: np.ndarray
    default_rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    end_site: bool = False


@dataclass(frozen=True)
class Skeleton:
    """Rooted joint tree; joints are stored in topological order."""

    joints: tuple

    def __post_init__(self):
        joints = tuple(self.joints)
        object.__setattr__(self, "joints", joints)
        roots = [i for i, j in enumerate(joints) if j.parent is None]
        if len(roots) != 1:
            raise SkeletonError(f"expected exactly one root, found {len(roots)}")
        for i, j in enumerate(joints):
            if j.parent is not None and not (0 <= j.parent < i):
                raise SkeletonError(f"joint {j.name!r}: parent index must precede child")
            if not np.all(np.isfinite(j.offset)):
                raise SkeletonError(f"joint {j.name!r}: non-finite offset")

    @classmethod
    def from_arrays(cls, names, parents, offsets, default_rots=None, end_sites=None) -> "Skeleton":
        n = len(names)
        default_rots = [np.eye(3)] * n if default_rots is None else list(default_rots)
        end_sites = [False] * n if end_sites is None else list(end_sites)
        joints = [
            Joint(
                name=str(names[i]),
                parent=None if parents[i] is None or parents[i] < 0 else int(parents[i]),
                offset=np.asarray(offsets[i], dtype=np.float64),
                default_rot=np.asarray(default_rots[i], dtype=np.float64),
                end_site=bool(end_sites[i]),
            )
            for i in range(n)
        ]
        return cls(tuple(joints))

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def root(self) -> int:
        return next(i for i, j in enumerate(self.joints) if j.parent is None)

    @property
    def names(self) -> list:
        return [j.name for j in self.joints]

    @property
    def parents(self) -> np.ndarray:
        return np.array([-1 if j.parent is None else j.parent for j in self.joints])

    @property
    def offsets(self) -> np.ndarray:
        return np.stack([j.offset for j in self.joints])

    @property
    def default_rots(self) -> np.ndarray:
        return np.stack([j.default_rot for j in self.joints])

    def children(self, index: int) -> list:
        return [i for i, j in enumerate(self.joints) if j.parent == index]

    def subtree(self, index: int) -> list:
        """Indices of ``index`` and all its descendants, in topological order."""
        members = {index}
        for i, j in enumerate(self.joints):
            if j.parent in members:
                members.add(i)
        return sorted(members)

    def bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.offsets, axis=-1)

    def default_pose(self) -> "Pose":
        return Pose(np.zeros(3), self.default_rots.copy())

    def with_offsets(self, offsets) -> "Skeleton":
        return Skeleton(tuple(replace(j, offset=np.asarray(o, dtype=np.float64))
                              for j, o in zip(self.joints, offsets)))

    def with_default_rots(self, rots) -> "Skeleton":
        return Skeleton(tuple(replace(j, default_rot=np.asarray(r, dtype=np.float64))
                              for j, r in zip(self.joints, rots)))

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "parents": self.parents.tolist(),
            "offsets": self.offsets.tolist(),
            "default_rots": self.default_rots.tolist(),
            "end_sites": [j.end_site for j in self.joints],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls.from_arrays(d["names"], d["parents"], d["offsets"],
                               d.get("default_rots"), d.get("end_sites"))


@dataclass
class Pose:
    """Root position plus per-joint rotations (root global, others parent-relative)."""

    root_pos: np.ndarray
    rots: np.ndarray


def fk_arrays(skel: Skeleton, root_pos: np.ndarray, rots: np.ndarray):
    """Vectorized forward kinematics.

    Parameters
    ----------
    root_pos : (..., 3)
    rots : (..., J, 3, 3) parent-relative rotations (root global)

    Returns
    -------
    positions : (..., J, 3)
    global_rots : (..., J, 3, 3)
    """
    rots = np.asarray(rots, dtype=np.float64)
    root_pos = np.asarray(root_pos, dtype=np.float64)
    J = skel.num_joints
    if rots.shape[-3] != J:
        raise SkeletonError(f"pose has {rots.shape[-3]} joints, skeleton has {J}")
    offsets = skel.offsets
    pos = np.empty(rots.shape[:-2] + (3,))
    glob = np.empty_like(rots)
    for i, joint in enumerate(skel.joints):
        if joint.parent is None:
            glob[..., i, :, :] = rots[..., i, :, :]
            pos[..., i, :] = root_pos
        else:
            p = joint.parent
            glob[..., i, :, :] = glob[..., p, :, :] @ rots[..., i, :, :]
            pos[..., i, :] = pos[..., p, :] + glob[..., p, :, :] @ offsets[i]
    return pos, glob


def forward_kinematics(skel: Skeleton, pose: Pose) -> np.ndarray:
    return fk_arrays(skel, pose.root_pos, pose.rots)[0]


def heading_angle(root_rot: np.ndarray) -> np.ndarray:
    """Yaw of the root's forward axis projected on the ground plane.

    Returns ``psi`` such that ``rot_y(psi) @ [0, 0, 1]`` points along the
    projected forward axis. Raises ``DegenerateHeadingError`` wherever the
    projection is shorter than ``1e-6``; use ``heading_track`` for sequences.
    """
    fwd = np.asarray(root_rot)[..., :, FORWARD_AXIS]
    fx, fz = fwd[..., 0], fwd[..., 2]
    if np.any(np.hypot(fx, fz) < HEADING_EPS):
        raise DegenerateHeadingError("root forward axis is vertical")
    return np.arctan2(fx, fz)


def heading_track(root_rots: np.ndarray) -> np.ndarray:
    """Per-frame heading, reusing the previous frame's value on degenerate frames."""
    fwd = np.asarray(root_rots)[..., :, FORWARD_AXIS]
    fx, fz = fwd[..., 0], fwd[..., 2]
    ok = np.hypot(fx, fz) >= HEADING_EPS
    if not ok[0]:
        raise DegenerateHeadingError("root forward axis is vertical on the first frame")
    psi = np.arctan2(fx, fz)
    for i in range(1, len(psi)):
        if not ok[i]:
            psi[i] = psi[i - 1]
    return psi


def remove_heading(positions: np.ndarray, root_pos: np.ndarray, psi) -> np.ndarray:
    """``R_y(-psi) (p - (x_root, 0, z_root))`` applied jointwise."""
    positions = np.asarray(positions, dtype=np.float64)
    shift = np.asarray(root_pos, dtype=np.float64).copy()
    shift[..., UP_AXIS] = 0.0
    R = rot_y(-np.asarray(psi, dtype=np.float64))
    return np.einsum("...ij,...kj->...ki", R, positions - shift[..., None, :])


def restore_heading(local: np.ndarray, root_x, root_z, psi) -> np.ndarray:
    """Inverse of ``remove_heading``."""
    R = rot_y(np.asarray(psi, dtype=np.float64))
    out = np.einsum("...ij,...kj->...ki", R, np.asarray(local, dtype=np.float64))
    out[..., 0] += np.asarray(root_x)[..., None]
    out[..., 2] += np.asarray(root_z)[..., None]
    return out


def rotation_invariant_positions(skel: Skeleton, pose: Pose, prev_heading: Optional[float] = None) -> np.ndarray:
    """FK positions with the root's ground-plane translation and heading removed.

    If the root's forward axis is within ``1e-6`` of vertical, ``prev_heading``
    is used instead; without one a ``DegenerateHeadingError`` is raised.
    """
    pos = forward_kinematics(skel, pose)
    try:
        psi = heading_angle(pose.rots[skel.root])
    except DegenerateHeadingError:
        if prev_heading is None:
            raise
        psi = prev_heading
    return remove_heading(pos, pose.root_pos, psi)


def skeleton_height(skel: Skeleton) -> float:
    pos = forward_kinematics(skel, skel.default_pose())
    return float(pos[:, UP_AXIS].max() - pos[:, UP_AXIS].min())


def rescale_to_height(skel: Skeleton, target_height: float) -> Skeleton:
    if target_height <= 0:
        raise ValueError("target height must be positive")
    h = skeleton_height(skel)
    if h <= 0:
        raise SkeletonError("skeleton has zero height in its default pose")
    return skel.with_offsets(skel.offsets * (target_height / h))


def constraint_residual(skel: Skeleton, pose: Pose, constraints: Sequence) -> float:
    """Sum of L1 distances between constrained joints and their targets.

    ``constraints`` holds ``(joint_index, target)`` pairs.
    """
    pos = forward_kinematics(skel, pose)
    total = 0.0
    for joint, target in constraints:
        if not 0 <= joint < skel.num_joints:
            raise IndexError(f"joint index {joint} out of range")
        total += float(np.abs(pos[joint] - np.asarray(target, dtype=np.float64)).sum())
    return total

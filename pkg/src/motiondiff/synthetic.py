"""Bundled synthetic data: a 6-joint humanoid with sinusoidal joint motion.

Every acceptance check trains and samples on this corpus, so nothing outside
the repository is needed.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from .geometry import axis_angle_to_rotmat, rot_y
from .kinematics import Skeleton
from .motion_data import MotionClip, encode_arrays

HUMANOID_NAMES = ["hips", "left_leg", "right_leg", "spine", "left_arm", "right_arm"]
HUMANOID_PARENTS = [-1, 0, 0, 0, 3, 3]
HUMANOID_OFFSETS = [
    [0.0, 0.0, 0.0],
    [-0.1, -0.45, 0.0],
    [0.1, -0.45, 0.0],
    [0.0, 0.25, 0.0],
    [-0.2, 0.3, 0.0],
    [0.2, 0.3, 0.0],
]


def humanoid6() -> Skeleton:
    return Skeleton.from_arrays(HUMANOID_NAMES, HUMANOID_PARENTS, HUMANOID_OFFSETS)


def sinusoid_clip(skel: Skeleton, rng: np.random.Generator, n_frames: int = 24, fps: float = 12.5):
    """One clip of sinusoidal joint rotations plus a walking root.

    Returns ``(clip, freq)``; ``freq`` (Hz) drives the matching beat grid.
    """
    J = skel.num_joints
    t = np.arange(n_frames) / fps
    freq = rng.uniform(0.4, 1.2)
    phase = 2.0 * np.pi * freq * t
    rots = np.empty((n_frames, J, 3, 3))
    for j in range(J):
        axis = rng.normal(size=3)
        amp = rng.uniform(0.3, 0.9)
        ph = rng.uniform(0.0, 2.0 * np.pi)
        rots[:, j] = axis_angle_to_rotmat(axis, amp * np.sin(phase + ph))
    yaw0 = rng.uniform(-np.pi, np.pi)
    yaw_rate = rng.uniform(-0.5, 0.5)
    yaw = yaw0 + yaw_rate * t
    rots[:, skel.root] = rot_y(yaw) @ rots[:, skel.root]
    speed = rng.uniform(0.2, 1.0)
    root = np.zeros((n_frames, 3))
    step = speed / fps
    root[:, 0] = np.cumsum(step * np.sin(yaw)) + rng.uniform(-1, 1)
    root[:, 2] = np.cumsum(step * np.cos(yaw)) + rng.uniform(-1, 1)
    root[:, 1] = 1.0 + 0.05 * np.sin(2.0 * phase)
    return encode_arrays(skel, root, rots, fps), freq


def beat_grid(freq: float, n_frames: int, fps: float = 12.5) -> np.ndarray:
    """``n_frames x 4`` control features: beat phase (sin, cos), onset pulse, tempo."""
    t = np.arange(n_frames) / fps
    ph = 2.0 * np.pi * freq * t
    pulse = np.exp(-((np.mod(ph + np.pi, 2 * np.pi) - np.pi) ** 2) / 0.2)
    return np.stack([np.sin(ph), np.cos(ph), pulse, np.full_like(t, freq)], axis=-1)


def sinusoid_dataset(n_clips: int = 16, n_frames: int = 24, fps: float = 12.5, seed: int = 0,
                     ) -> Tuple[Skeleton, List[MotionClip], List[np.ndarray]]:
    """The bundled corpus: skeleton, clips and one beat grid per clip."""
    skel = humanoid6()
    rng = np.random.default_rng(seed)
    clips, grids = [], []
    for _ in range(n_clips):
        clip, freq = sinusoid_clip(skel, rng, n_frames, fps)
        clips.append(clip)
        grids.append(beat_grid(freq, n_frames, fps))
    return skel, clips, grids

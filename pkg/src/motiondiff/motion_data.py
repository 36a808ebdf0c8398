"""Frame tensor layout, clip encoding, normalization, resampling, windowing.

A frame of a clip over a ``J``-joint skeleton has ``D = 9J`` channels:
``6J`` rotation channels (6D per joint, joint-major) followed by ``3J``
rotation-invariant position channels. The root's ground-plane trajectory and
heading, which that position format discards, travel alongside the tensor in
a :class:`RootTrack` so clips can be decoded back to global poses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import rotmat_to_6d, sixd_to_rotmat, slerp_rot
from .kinematics import Pose, Skeleton, fk_arrays, heading_track, remove_heading, UP_AXIS

CLIP_FORMAT = "motiondiff.clip"
CLIP_VERSION = 1
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class FrameLayout:
    joint_count: int

    @property
    def D(self) -> int:
        return 9 * self.joint_count

    @property
    def rot_slice(self) -> slice:
        return slice(0, 6 * self.joint_count)

    @property
    def pos_slice(self) -> slice:
        return slice(6 * self.joint_count, 9 * self.joint_count)

    def rot_channels(self, joint: int) -> np.ndarray:
        return np.arange(6 * joint, 6 * joint + 6)

    def pos_channels(self, joint: int) -> np.ndarray:
        base = 6 * self.joint_count + 3 * joint
        return np.arange(base, base + 3)

    def split(self, frames: np.ndarray):
        """``(..., D)`` -> rotations ``(..., J, 6)`` and positions ``(..., J, 3)``."""
        J = self.joint_count
        rot = frames[..., self.rot_slice].reshape(frames.shape[:-1] + (J, 6))
        pos = frames[..., self.pos_slice].reshape(frames.shape[:-1] + (J, 3))
        return rot, pos

    def join(self, rot6: np.ndarray, pos: np.ndarray) -> np.ndarray:
        lead = rot6.shape[:-2]
        return np.concatenate([rot6.reshape(lead + (-1,)), pos.reshape(lead + (-1,))], axis=-1)


@dataclass
class RootTrack:
    """Per-frame ground-plane root position and heading (radians)."""

    x: np.ndarray
    z: np.ndarray
    heading: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "RootTrack":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def slice(self, sl: slice) -> "RootTrack":
        return RootTrack(self.x[sl].copy(), self.z[sl].copy(), self.heading[sl].copy())


@dataclass
class MotionClip:
    frames: np.ndarray
    layout: FrameLayout
    fps: float
    track: Optional[RootTrack] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("clip must be a non-empty N x D array")
        if self.frames.shape[1] != self.layout.D:
            raise ValueError(f"frame width {self.frames.shape[1]} does not match layout D={self.layout.D}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("clip contains NaN or Inf")
        if self.track is None:
            self.track = RootTrack.zeros(len(self.frames))

    def __len__(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames: np.ndarray) -> "MotionClip":
        return MotionClip(frames, self.layout, self.fps, self.track)


def encode_clip(skel: Skeleton, poses: Sequence[Pose], fps: float) -> MotionClip:
    if len(poses) == 0:
        raise ValueError("need at least one pose")
    root_pos = np.stack([p.root_pos for p in poses])
    rots = np.stack([p.rots for p in poses])
    return encode_arrays(skel, root_pos, rots, fps)


def encode_arrays(skel: Skeleton, root_pos: np.ndarray, rots: np.ndarray, fps: float) -> MotionClip:
    """Array form of :func:`encode_clip`: ``root_pos (N, 3)``, ``rots (N, J, 3, 3)``."""
    layout = FrameLayout(skel.num_joints)
    pos, _ = fk_arrays(skel, root_pos, rots)
    psi = heading_track(rots[:, skel.root])
    local = remove_heading(pos, root_pos, psi)
    frames = layout.join(rotmat_to_6d(rots), local)
    track = RootTrack(root_pos[:, 0].copy(), root_pos[:, 2].copy(), psi)
    return MotionClip(frames, layout, fps, track)


def decode_arrays(clip: MotionClip, skel: Skeleton):
    """Recover ``(root_pos (N, 3), rots (N, J, 3, 3))`` from a clip.

    Rotations are authoritative; of the position block only the root's
    height is read, the ground-plane part comes from the root track.
    """
    if clip.layout.joint_count != skel.num_joints:
        raise ValueError("clip layout does not match skeleton")
    rot6, pos = clip.layout.split(clip.frames)
    rots = sixd_to_rotmat(rot6)
    root_pos = np.stack([clip.track.x, pos[:, skel.root, UP_AXIS], clip.track.z], axis=-1)
    return root_pos, rots


def decode_clip(clip: MotionClip, skel: Skeleton) -> list:
    root_pos, rots = decode_arrays(clip, skel)
    return [Pose(root_pos[i], rots[i]) for i in range(len(clip))]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, frames: np.ndarray) -> np.ndarray:
        return (np.asarray(frames) - self.mean) / self.std

    def invert(self, frames: np.ndarray) -> np.ndarray:
        return np.asarray(frames) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))

    @classmethod
    def identity(cls, D: int) -> "NormStats":
        return cls(np.zeros(D), np.ones(D))


def fit_norm_stats(clips: Iterable) -> NormStats:
    """Per-channel mean and std over every frame of every clip (std floored at 1e-8)."""
    arrays = [c.frames if isinstance(c, MotionClip) else np.asarray(c) for c in clips]
    if not arrays:
        raise ValueError("cannot fit normalization statistics on an empty corpus")
    data = np.concatenate(arrays, axis=0)
    if data.shape[0] < 2:
        raise ValueError("need at least two frames to fit normalization statistics")
    return NormStats(data.mean(axis=0), np.maximum(data.std(axis=0), STD_FLOOR))


def apply_norm(clip: MotionClip, stats: NormStats) -> MotionClip:
    return clip.with_frames(stats.apply(clip.frames))


def invert_norm(clip: MotionClip, stats: NormStats) -> MotionClip:
    return clip.with_frames(stats.invert(clip.frames))


def _interp_angle(a: np.ndarray, b: np.ndarray, u: np.ndarray) -> np.ndarray:
    d = np.angle(np.exp(1j * (b - a)))
    return a + u * d


def resample(clip: MotionClip, target_fps: float) -> MotionClip:
    """Resample to ``target_fps`` keeping the first and last frames.

    The output has ``round((N - 1) * target / source) + 1`` frames spread
    evenly over the source duration. Rotations are slerped between the
    bracketing source frames; every other channel is interpolated linearly.
    """
    if target_fps <= 0:
        raise ValueError("target fps must be positive")
    n = len(clip)
    if target_fps == clip.fps or n == 1:
        return MotionClip(clip.frames.copy(), clip.layout, target_fps, clip.track.slice(slice(None)))
    m = int(round((n - 1) * target_fps / clip.fps)) + 1
    m = max(m, 2)
    src_t = np.linspace(0.0, n - 1, m)
    lo = np.minimum(np.floor(src_t).astype(int), n - 2)
    u = src_t - lo
    hi = lo + 1
    f = clip.frames
    out = f[lo] + u[:, None] * (f[hi] - f[lo])
    rot6, _ = clip.layout.split(f)
    R = sixd_to_rotmat(rot6)
    J = clip.layout.joint_count
    Rs = slerp_rot(R[lo], R[hi], np.repeat(u[:, None], J, axis=1))
    out[:, clip.layout.rot_slice] = rotmat_to_6d(Rs).reshape(m, -1)
    # exact endpoints
    out[0] = f[0]
    out[-1] = f[-1]
    tr = clip.track
    track = RootTrack(
        tr.x[lo] + u * (tr.x[hi] - tr.x[lo]),
        tr.z[lo] + u * (tr.z[hi] - tr.z[lo]),
        _interp_angle(tr.heading[lo], tr.heading[hi], u),
    )
    for arr, src in ((track.x, tr.x), (track.z, tr.z), (track.heading, tr.heading)):
        arr[0], arr[-1] = src[0], src[-1]
    return MotionClip(out, clip.layout, target_fps, track)


class ClipTooShortError(ValueError):
    pass


def sample_window(clip: MotionClip, rng: np.random.Generator, w_min: int = 8, w_max: int = 512,
                  length: Optional[int] = None) -> MotionClip:
    """Uniform-length, uniform-offset contiguous window.

    ``length`` pins the window length (used to build equal-length batches);
    otherwise it is drawn uniformly from ``[w_min, min(w_max, N)]``.
    """
    n = len(clip)
    if n < w_min:
        raise ClipTooShortError(f"clip has {n} frames, window needs at least {w_min}")
    hi = min(w_max, n)
    w = int(rng.integers(w_min, hi + 1)) if length is None else int(length)
    if not 1 <= w <= n:
        raise ClipTooShortError(f"window length {w} exceeds clip length {n}")
    start = int(rng.integers(0, n - w + 1))
    sl = slice(start, start + w)
    return MotionClip(clip.frames[sl].copy(), clip.layout, clip.fps, clip.track.slice(sl))


# -- on-disk container -------------------------------------------------------

def clip_to_dict(clip: MotionClip, skel: Optional[Skeleton] = None) -> dict:
    d = {
        "format": CLIP_FORMAT,
        "version": CLIP_VERSION,
        "joint_count": clip.layout.joint_count,
        "fps": clip.fps,
        "channel_order": ["rotation_6d", "position_rotation_invariant"],
        "frames": clip.frames.tolist(),
        "root_track": {
            "x": clip.track.x.tolist(),
            "z": clip.track.z.tolist(),
            "heading": clip.track.heading.tolist(),
        },
    }
    if skel is not None:
        d["skeleton"] = skel.to_dict()
    return d


def clip_from_dict(d: dict):
    if d.get("format") != CLIP_FORMAT:
        raise ValueError("not a motion clip container")
    if d.get("version") != CLIP_VERSION:
        raise ValueError(f"unsupported clip container version {d.get('version')!r}")
    layout = FrameLayout(int(d["joint_count"]))
    tr = d["root_track"]
    track = RootTrack(np.asarray(tr["x"], float), np.asarray(tr["z"], float), np.asarray(tr["heading"], float))
    clip = MotionClip(np.asarray(d["frames"], dtype=np.float64), layout, float(d["fps"]), track)
    skel = Skeleton.from_dict(d["skeleton"]) if "skeleton" in d else None
    return clip, skel


def save_clip(path, clip: MotionClip, skel: Optional[Skeleton] = None) -> None:
    Path(path).write_text(json.dumps(clip_to_dict(clip, skel)))


def load_clip(path):
    return clip_from_dict(json.loads(Path(path).read_text()))

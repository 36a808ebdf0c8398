"""BVH parsing, canonical serialization, and conversion to clips."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import rot_x, rot_y, rot_z
from .kinematics import Skeleton
from .motion_data import MotionClip, decode_arrays, encode_arrays

log = logging.getLogger(__name__)

CHANNEL_TOKENS = ("Xposition", "Yposition", "Zposition", "Xrotation", "Yrotation", "Zrotation")
EXPORT_ORDER = "ZYX"
_ELEMENTARY = {"X": rot_x, "Y": rot_y, "Z": rot_z}


class BvhSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass
class BvhJoint:
    name: str
    parent: Optional[int]
    offset: Tuple[float, float, float]
    channels: List[str]
    end_site: Optional[Tuple[float, float, float]] = None

    @property
    def rotation_order(self) -> str:
        return "".join(c[0] for c in self.channels if c.endswith("rotation"))


@dataclass
class BvhDocument:
    joints: List[BvhJoint]
    frame_time: float
    frames: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def channel_count(self) -> int:
        return sum(len(j.channels) for j in self.joints)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, BvhDocument):
            return NotImplemented
        return (
            self.joints == other.joints
            and self.frame_time == other.frame_time
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )


class _Tokens:
    def __init__(self, text: str):
        self.items = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for m in re.finditer(r"\S+", line):
                self.items.append((m.group(), lineno, m.start() + 1))
        self.i = 0
        self.last = (text.count("\n") + 1, 1)

    def peek(self):
        return self.items[self.i][0] if self.i < len(self.items) else None

    def where(self):
        if self.i < len(self.items):
            return self.items[self.i][1:]
        return self.last

    def next(self, what: str = "token"):
        if self.i >= len(self.items):
            raise BvhSyntaxError(f"unexpected end of file, expected {what}", *self.last)
        tok = self.items[self.i]
        self.i += 1
        return tok

    def expect(self, word: str):
        tok, line, col = self.next(repr(word))
        if tok != word:
            raise BvhSyntaxError(f"expected {word!r}, found {tok!r}", line, col)

    def number(self, kind=float):
        tok, line, col = self.next("number")
        try:
            return kind(tok)
        except ValueError:
            raise BvhSyntaxError(f"expected number, found {tok!r}", line, col) from None


def parse_bvh(text: str) -> BvhDocument:
    toks = _Tokens(text)
    toks.expect("HIERARCHY")
    joints: List[BvhJoint] = []
    tok, line, col = toks.next("ROOT")
    if tok != "ROOT":
        raise BvhSyntaxError(f"expected 'ROOT', found {tok!r}", line, col)
    _parse_joint(toks, joints, None)
    if toks.peek() != "MOTION":
        line, col = toks.where()
        found = toks.peek()
        raise BvhSyntaxError(f"expected 'MOTION', found {found!r}" if found else "missing MOTION section", line, col)
    toks.next()
    toks.expect("Frames:")
    n = toks.number(int)
    toks.expect("Frame")
    toks.expect("Time:")
    frame_time = toks.number(float)
    width = sum(len(j.channels) for j in joints)
    values = []
    for _ in range(n * width):
        values.append(toks.number(float))
    if toks.peek() is not None:
        tok, line, col = toks.next()
        raise BvhSyntaxError(f"channel count mismatch: unexpected trailing value {tok!r}", line, col)
    frames = np.asarray(values, dtype=np.float64).reshape(n, width)
    return BvhDocument(joints, frame_time, frames)


def _parse_joint(toks: _Tokens, joints: List[BvhJoint], parent: Optional[int]) -> None:
    name, _, _ = toks.next("joint name")
    toks.expect("{")
    toks.expect("OFFSET")
    offset = (toks.number(), toks.number(), toks.number())
    toks.expect("CHANNELS")
    count = toks.number(int)
    channels = []
    for _ in range(count):
        tok, line, col = toks.next("channel name")
        if tok not in CHANNEL_TOKENS:
            raise BvhSyntaxError(f"unsupported channel {tok!r}", line, col)
        channels.append(tok)
    index = len(joints)
    joint = BvhJoint(name, parent, offset, channels)
    joints.append(joint)
    while True:
        tok, line, col = toks.next("'}'")
        if tok == "}":
            return
        if tok == "JOINT":
            _parse_joint(toks, joints, index)
        elif tok == "End":
            toks.expect("Site")
            toks.expect("{")
            toks.expect("OFFSET")
            joint.end_site = (toks.number(), toks.number(), toks.number())
            toks.expect("}")
        else:
            raise BvhSyntaxError(f"unexpected token {tok!r}", line, col)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def serialize_bvh(doc: BvhDocument) -> str:
    """Canonical text: tab indentation, six decimals, one frame per line."""
    out = ["HIERARCHY"]
    children = {i: [] for i in range(len(doc.joints))}
    for i, j in enumerate(doc.joints):
        if j.parent is not None:
            children[j.parent].append(i)

    def emit(i: int, depth: int) -> None:
        j = doc.joints[i]
        pad = "\t" * depth
        out.append(f"{pad}{'ROOT' if j.parent is None else 'JOINT'} {j.name}")
        out.append(pad + "{")
        out.append(f"{pad}\tOFFSET {' '.join(_fmt(v) for v in j.offset)}")
        out.append(f"{pad}\tCHANNELS {len(j.channels)}" + "".join(" " + c for c in j.channels))
        for c in children[i]:
            emit(c, depth + 1)
        if j.end_site is not None:
            out.append(f"{pad}\tEnd Site")
            out.append(pad + "\t{")
            out.append(f"{pad}\t\tOFFSET {' '.join(_fmt(v) for v in j.end_site)}")
            out.append(pad + "\t}")
        out.append(pad + "}")

    emit(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {doc.frame_count}")
    out.append(f"Frame Time: {_fmt(doc.frame_time)}")
    for row in doc.frames:
        out.append(" ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def euler_to_rotmat(angles_deg: np.ndarray, order: str) -> np.ndarray:
    """Intrinsic Euler angles in channel order: ``R = R_a1 R_a2 R_a3``."""
    angles = np.radians(np.asarray(angles_deg, dtype=np.float64))
    R = np.broadcast_to(np.eye(3), angles.shape[:-1] + (3, 3)).copy()
    for k, axis in enumerate(order):
        R = R @ _ELEMENTARY[axis](angles[..., k])
    return R


def bvh_to_clip(doc: BvhDocument, fps: Optional[float] = None):
    """Convert a document to ``(Skeleton, MotionClip)``.

    End Sites become zero-channel leaf joints named ``<parent>_end``. Rest
    rotations are identity. Translation channels on non-root joints are
    ignored (the skeleton's offsets are static).
    """
    names, parents, offsets, end_flags = [], [], [], []
    bvh_to_skel = []
    for j in doc.joints:
        bvh_to_skel.append(len(names))
        names.append(j.name)
        parents.append(None if j.parent is None else bvh_to_skel[j.parent])
        offsets.append(j.offset)
        end_flags.append(False)
        if j.end_site is not None:
            names.append(f"{j.name}_end")
            parents.append(bvh_to_skel[-1])
            offsets.append(j.end_site)
            end_flags.append(True)
    skel = Skeleton.from_arrays(names, parents, offsets, end_sites=end_flags)

    n = doc.frame_count
    J = skel.num_joints
    rots = np.broadcast_to(np.eye(3), (n, J, 3, 3)).copy()
    root_pos = np.broadcast_to(np.asarray(doc.joints[0].offset, dtype=np.float64), (n, 3)).copy()
    col = 0
    for bi, j in enumerate(doc.joints):
        vals = doc.frames[:, col:col + len(j.channels)]
        col += len(j.channels)
        rot_cols = [k for k, c in enumerate(j.channels) if c.endswith("rotation")]
        pos_cols = {c[0]: k for k, c in enumerate(j.channels) if c.endswith("position")}
        if rot_cols:
            rots[:, bvh_to_skel[bi]] = euler_to_rotmat(vals[:, rot_cols], j.rotation_order)
        if pos_cols:
            if j.parent is None:
                for a, axis in enumerate("XYZ"):
                    if axis in pos_cols:
                        root_pos[:, a] = vals[:, pos_cols[axis]]
            else:
                log.warning("ignoring translation channels on non-root joint %s", j.name)
    fps = fps if fps is not None else (1.0 / doc.frame_time if doc.frame_time > 0 else 30.0)
    clip = encode_arrays(skel, root_pos, rots, fps)
    return skel, clip


def clip_to_bvh(skel: Skeleton, clip: MotionClip) -> BvhDocument:
    """Export with ZYX rotation channels; the root also gets XYZ translation."""
    root_pos, rots = decode_arrays(clip, skel)
    n = len(clip)
    joints: List[BvhJoint] = []
    skel_to_bvh = {}
    columns = []
    for i, j in enumerate(skel.joints):
        if j.end_site:
            parent = skel_to_bvh[j.parent]
            if joints[parent].end_site is None and not skel.children(i):
                joints[parent].end_site = tuple(float(v) for v in j.offset)
                continue
        skel_to_bvh[i] = len(joints)
        parent = None if j.parent is None else skel_to_bvh[j.parent]
        rot_ch = [f"{a}rotation" for a in EXPORT_ORDER]
        eul = Rotation.from_matrix(rots[:, i]).as_euler(EXPORT_ORDER, degrees=True)
        if parent is None:
            joints.append(BvhJoint(j.name, None, (0.0, 0.0, 0.0),
                                   ["Xposition", "Yposition", "Zposition"] + rot_ch))
            columns.append(np.concatenate([root_pos, eul], axis=-1))
        else:
            joints.append(BvhJoint(j.name, parent, tuple(float(v) for v in j.offset), rot_ch))
            columns.append(eul)
    frames = np.concatenate(columns, axis=-1) if n else np.zeros((0, sum(len(j.channels) for j in joints)))
    return BvhDocument(joints, 1.0 / clip.fps, frames)

"""Rotation representations and interpolation.

All functions are NumPy-vectorized: leading axes are batch axes, so a
``(..., 3, 3)`` stack of matrices maps to a ``(..., 6)`` stack of 6D vectors
and so on. Quaternions are scalar-first ``(w, x, y, z)``.
"""

from __future__ import annotations

import numpy as np

DEGENERATE_EPS = 1e-9


class DegenerateRotationError(ValueError):
    """A 6D vector whose Gram-Schmidt step would divide by ~zero."""


def rotmat_to_6d(R: np.ndarray) -> np.ndarray:
    """Return the first two columns of ``R`` stacked column-first."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def sixd_to_rotmat(v: np.ndarray) -> np.ndarray:
    """Decode 6D vectors into rotation matrices via Gram-Schmidt.

    Raises
    ------
    DegenerateRotationError
        If the first half, or the residual of the second half after
        projection, has norm below ``1e-9``.
    """
    v = np.asarray(v, dtype=np.float64)
    a1 = v[..., 0:3]
    a2 = v[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < DEGENERATE_EPS):
        raise DegenerateRotationError("first 6D column has near-zero norm")
    c1 = a1 / n1
    r2 = a2 - np.sum(c1 * a2, axis=-1, keepdims=True) * c1
    n2 = np.linalg.norm(r2, axis=-1, keepdims=True)
    if np.any(n2 < DEGENERATE_EPS):
        raise DegenerateRotationError("second 6D column is (anti)parallel to the first")
    c2 = r2 / n2
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def reorthonormalize_6d(v: np.ndarray) -> np.ndarray:
    """Project 6D vectors onto the valid (orthonormal-halves) set."""
    return rotmat_to_6d(sixd_to_rotmat(v))


def quat_from_rotmat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0`` (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    batch = R.shape[:-2]
    m = R.reshape(-1, 3, 3)
    r00, r11, r22 = m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]
    tr = r00 + r11 + r22
    pick = np.argmax(np.stack([tr, r00, r11, r22], axis=-1), axis=-1)
    s = 2.0 * np.sqrt(np.maximum(np.stack(
        [1.0 + tr, 1.0 + r00 - r11 - r22, 1.0 - r00 + r11 - r22, 1.0 - r00 - r11 + r22], axis=-1
    )[np.arange(m.shape[0]), pick], 1e-300))
    d21, d02, d10 = m[:, 2, 1] - m[:, 1, 2], m[:, 0, 2] - m[:, 2, 0], m[:, 1, 0] - m[:, 0, 1]
    s01, s02, s12 = m[:, 0, 1] + m[:, 1, 0], m[:, 0, 2] + m[:, 2, 0], m[:, 1, 2] + m[:, 2, 1]
    cands = np.stack(
        [
            np.stack([0.25 * s, d21 / s, d02 / s, d10 / s], axis=-1),
            np.stack([d21 / s, 0.25 * s, s01 / s, s02 / s], axis=-1),
            np.stack([d02 / s, s01 / s, 0.25 * s, s12 / s], axis=-1),
            np.stack([d10 / s, s02 / s, s12 / s, 0.25 * s], axis=-1),
        ],
        axis=1,
    )
    q = cands[np.arange(m.shape[0]), pick]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return canonicalize_quat(q).reshape(*batch, 4)


def canonicalize_quat(q: np.ndarray) -> np.ndarray:
    """Flip quaternions so the scalar part is non-negative.

    For ``w == 0`` the first nonzero vector component is made positive, so
    ``q`` and ``-q`` always map to the same representative.
    """
    q = np.asarray(q, dtype=np.float64)
    flat = q.reshape(-1, 4)
    first = np.argmax(flat != 0.0, axis=-1)
    lead = flat[np.arange(flat.shape[0]), first]
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return (flat * sign[:, None]).reshape(q.shape)


def rotmat_from_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def axis_angle_to_rotmat(axis: np.ndarray, angle) -> np.ndarray:
    """Rodrigues' formula. ``axis`` need not be unit length."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=np.float64)[..., None, None]
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    K = np.stack(
        [np.stack([zero, -z, y], -1), np.stack([z, zero, -x], -1), np.stack([-y, x, zero], -1)],
        axis=-2,
    )
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rot_x(angle) -> np.ndarray:
    return axis_angle_to_rotmat(np.array([1.0, 0.0, 0.0]), angle)


def rot_y(angle) -> np.ndarray:
    return axis_angle_to_rotmat(np.array([0.0, 1.0, 0.0]), angle)


def rot_z(angle) -> np.ndarray:
    return axis_angle_to_rotmat(np.array([0.0, 0.0, 1.0]), angle)


def geodesic_dist(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Angle in ``[0, pi]`` of the relative rotation ``Ra^T Rb``.

    Uses ``atan2(|sin|, cos)`` so the result stays accurate near 0 and pi,
    where ``arccos`` of the trace loses precision.
    """
    rel = np.swapaxes(np.asarray(Ra, dtype=np.float64), -1, -2) @ np.asarray(Rb, dtype=np.float64)
    cos = 0.5 * (rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2] - 1.0)
    vee = 0.5 * np.stack(
        [rel[..., 2, 1] - rel[..., 1, 2], rel[..., 0, 2] - rel[..., 2, 0], rel[..., 1, 0] - rel[..., 0, 1]],
        axis=-1,
    )
    return np.arctan2(np.linalg.norm(vee, axis=-1), cos)


def slerp_quat(qa: np.ndarray, qb: np.ndarray, u) -> np.ndarray:
    """Shortest-arc spherical interpolation of unit quaternions."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)[..., None]
    dot = np.sum(qa * qb, axis=-1, keepdims=True)
    qb = np.where(dot < 0.0, -qb, qb)
    # angle from atan2 of the chord lengths; exact for tiny angles
    theta = 2.0 * np.arctan2(np.linalg.norm(qa - qb, axis=-1, keepdims=True),
                             np.linalg.norm(qa + qb, axis=-1, keepdims=True))
    sin_theta = np.sin(theta)
    small = sin_theta < 1e-12
    safe = np.where(small, 1.0, sin_theta)
    wa = np.where(small, 1.0 - u, np.sin((1.0 - u) * theta) / safe)
    wb = np.where(small, u, np.sin(u * theta) / safe)
    out = wa * qa + wb * qb
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def slerp_rot(Ra: np.ndarray, Rb: np.ndarray, u) -> np.ndarray:
    """Geodesic interpolation between rotation matrices at fraction ``u``.

    ``u = 0`` returns ``Ra`` exactly and ``u = 1`` returns ``Rb`` exactly.
    """
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any((u_arr < 0.0) | (u_arr > 1.0)):
        raise ValueError("interpolation fraction must lie in [0, 1]")
    # interpolate the relative rotation so the endpoints are reproduced bit-exactly
    rel = np.swapaxes(Ra, -1, -2) @ Rb
    q = quat_from_rotmat(rel)
    ident = np.zeros_like(q)
    ident[..., 0] = 1.0
    qu = slerp_quat(ident, q, u_arr)
    out = Ra @ rotmat_from_quat(qu)
    out = np.where((u_arr == 0.0)[..., None, None], Ra, out)
    out = np.where((u_arr == 1.0)[..., None, None], Rb, out)
    return out


def is_rotation(R: np.ndarray, tol: float = 1e-6) -> bool:
    R = np.asarray(R, dtype=np.float64)
    eye = np.eye(3)
    ortho = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max() <= tol
    return bool(ortho and np.abs(np.linalg.det(R) - 1.0).max() <= tol)

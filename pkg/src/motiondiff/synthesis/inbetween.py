"""Keyframe in-betweening: fine-tuning objective, slerp fill, delta in-painting."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
import torch

from ..denoiser.model import ControlEncoding, DenoiserModel
from ..denoiser.train import loss_fn
from ..geometry import geodesic_dist, reorthonormalize_6d, rotmat_to_6d, sixd_to_rotmat, slerp_rot
from ..motion_data import FrameLayout, NormStats
from ..schedule import DiffusionSchedule


class MissingKeyframeError(ValueError):
    pass


def inbetween_mask(n_a: int, n_b: int, n_c: int) -> np.ndarray:
    return np.concatenate([np.ones(n_a, bool), np.zeros(n_b, bool), np.ones(n_c, bool)])


def inbetween_steps(split: Tuple[int, int, int], t: int) -> np.ndarray:
    n_a, n_b, n_c = split
    return np.concatenate([np.zeros(n_a, np.int64), np.full(n_b, t, np.int64), np.zeros(n_c, np.int64)])


def inbetween_loss(model: DenoiserModel, schedule: DiffusionSchedule, x0, split: Tuple[int, int, int], t,
                   noise, controls=None, channel_weights=None, *, grad: bool = False):
    """L1 loss with only the middle segment corrupted.

    ``x0``/``noise`` are ``(N, D)`` or ``(B, N, D)``; ``t`` is a scalar or a
    per-clip vector. Known frames get step 0. All frames enter the loss.
    Returns a float, or the autograd tensor if ``grad`` is set.
    """
    n_a, n_b, n_c = split
    if n_b < 1:
        raise ValueError("need at least one unknown frame")
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    single = x0.ndim == 2
    if single:
        x0, noise = x0[None], noise[None]
    B, N, _ = x0.shape
    if n_a + n_b + n_c != N:
        raise ValueError("segment lengths must sum to the clip length")
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
    steps = np.stack([inbetween_steps(split, int(tb)) for tb in t])
    if grad:
        return loss_fn(model.params, model, schedule, x0, steps, noise, controls, "l1", channel_weights)
    with torch.no_grad():
        return float(loss_fn(model.params, model, schedule, x0, steps, noise, controls, "l1", channel_weights))


def _brackets(mask: np.ndarray):
    known = np.flatnonzero(mask)
    if known.size == 0:
        raise MissingKeyframeError("no known frames to interpolate from")
    idx = np.arange(len(mask))
    unknown = idx[~mask]
    pos = np.searchsorted(known, unknown)
    if np.any(pos == 0) or np.any(pos == known.size):
        raise MissingKeyframeError("every unknown frame needs a known frame on both sides")
    a = known[pos - 1]
    b = known[pos]
    return unknown, a, b, (unknown - a) / (b - a)


def slerp_fill(x: np.ndarray, mask: np.ndarray, layout: FrameLayout,
               stats: Optional[NormStats] = None) -> np.ndarray:
    """Fill unknown frames by interpolating their bracketing known frames.

    Rotation channels are slerped (6D -> matrix -> slerp -> 6D), all other
    channels interpolated linearly. When ``stats`` is given, ``x`` is in
    normalized space and is mapped to raw units around the slerp.
    """
    mask = np.asarray(mask).astype(bool)
    x = np.asarray(x, dtype=np.float64)
    if mask.all():
        return x.copy()
    unknown, a, b, u = _brackets(mask)
    raw = x if stats is None else stats.invert(x)
    out = raw.copy()
    out[unknown] = raw[a] + u[:, None] * (raw[b] - raw[a])
    rot6, _ = layout.split(raw)
    Ra = sixd_to_rotmat(rot6[a])
    Rb = sixd_to_rotmat(rot6[b])
    J = layout.joint_count
    R = slerp_rot(Ra, Rb, np.repeat(u[:, None], J, axis=1))
    out[np.ix_(unknown, np.arange(layout.rot_slice.start, layout.rot_slice.stop))] = rotmat_to_6d(R).reshape(len(unknown), -1)
    if stats is not None:
        out = stats.apply(out)
        out[mask] = x[mask]
    return out


def inbetween_delta(model: DenoiserModel, schedule: DiffusionSchedule, x_known: np.ndarray, mask: np.ndarray,
                    rng: np.random.Generator, layout: FrameLayout, stats: Optional[NormStats] = None,
                    control: Optional[ControlEncoding] = None) -> np.ndarray:
    """Delta in-painting for in-betweening (normalized features in and out).

    Each step the network sees clean known frames at step 0 and the noisy
    unknown frames at step ``t``. Its prediction is shifted by the difference
    between the slerp fill of the keyframes and the slerp fill of the
    prediction, which pins known frames and spreads the keyframe mismatch
    smoothly over the gap. Only unknown frames take the posterior step.
    """
    x_known = np.asarray(x_known, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    N, D = x_known.shape
    if mask.shape != (N,):
        raise ValueError("delta in-painting needs a per-frame mask")
    target_fill = slerp_fill(x_known, mask, layout, stats)
    m2 = mask[:, None]
    x = rng.standard_normal((N, D))
    x = np.where(m2, x_known, x)
    for t in range(schedule.T, 0, -1):
        steps = np.where(mask, 0, t)
        pred = model.predict(x, steps, control)
        delta = target_fill - slerp_fill(pred, mask, layout, stats)
        x0_hat = pred + delta
        x = np.where(m2, x_known, schedule.posterior_sample(x, x0_hat, t, rng))
    raw = x if stats is None else stats.invert(x)
    rot6, pos = layout.split(raw)
    fixed = layout.join(reorthonormalize_6d(rot6), pos)
    fixed = fixed if stats is None else stats.apply(fixed)
    return np.where(m2, x_known, fixed)


def boundary_gap(x: np.ndarray, last_known: int, layout: FrameLayout, stats: Optional[NormStats] = None) -> float:
    """Mean per-joint geodesic angle between frame ``last_known`` and the next frame."""
    raw = x if stats is None else stats.invert(x)
    rot6, _ = layout.split(raw)
    R = sixd_to_rotmat(rot6[last_known:last_known + 2])
    return float(geodesic_dist(R[0], R[1]).mean())

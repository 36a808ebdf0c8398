"""Ancestral sampling loops over normalized feature tensors.

Every function takes and returns ``(N, D)`` arrays in the model's normalized
feature space; use :class:`~motiondiff.motion_data.NormStats` to map back.
"""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..denoiser.model import ControlEncoding, DenoiserModel
from ..motion_data import FrameLayout
from ..schedule import DiffusionSchedule

Predictor = Callable[[np.ndarray, int], np.ndarray]


def _loop(schedule: DiffusionSchedule, shape, rng: np.random.Generator, predict: Predictor,
          before_step: Optional[Callable[[int], None]] = None) -> np.ndarray:
    x = rng.standard_normal(shape)
    for t in range(schedule.T, 0, -1):
        if before_step is not None:
            before_step(t)
        x0_hat = predict(x, t)
        x = schedule.posterior_sample(x, x0_hat, t, rng)
    return x


def sample(model: DenoiserModel, schedule: DiffusionSchedule, N: int,
           control: Optional[ControlEncoding], rng: np.random.Generator) -> np.ndarray:
    """Generate one clip from pure noise."""
    return _loop(schedule, (N, model.cfg.width), rng, lambda x, t: model.predict(x, t, control))


def full_mask(mask: np.ndarray, D: int) -> np.ndarray:
    """Broadcast a frame mask ``(N,)`` or element mask ``(N, D)`` to boolean ``(N, D)``."""
    m = np.asarray(mask).astype(bool)
    if m.ndim == 1:
        m = np.repeat(m[:, None], D, axis=1)
    if m.ndim != 2 or m.shape[1] != D:
        raise ValueError(f"mask of shape {np.shape(mask)} does not fit width {D}")
    return m


def inpaint(model: DenoiserModel, schedule: DiffusionSchedule, x_known: np.ndarray, mask: np.ndarray,
            control: Optional[ControlEncoding], rng: np.random.Generator) -> np.ndarray:
    """Sampling with known entries pasted into every ``x0`` prediction.

    Known entries (mask 1) of the result equal ``x_known`` bit for bit. An
    all-known mask returns a copy of ``x_known`` without sampling.
    """
    x_known = np.asarray(x_known, dtype=np.float64)
    m = full_mask(mask, x_known.shape[1])
    if m.shape != x_known.shape:
        raise ValueError("mask and known clip differ in shape")
    if m.all():
        return x_known.copy()

    def predict(x, t):
        return np.where(m, x_known, model.predict(x, t, control))

    out = _loop(schedule, x_known.shape, rng, predict)
    return np.where(m, x_known, out)


def alternating_control(model: DenoiserModel, schedule: DiffusionSchedule, c_coarse: ControlEncoding,
                        c_fine: ControlEncoding, gamma: float, N: int,
                        rng: np.random.Generator) -> Tuple[np.ndarray, List[str]]:
    """Mix two controls by picking one per step with ``P(coarse) = (t / T) ** gamma``.

    The per-step uniform is drawn, before the network call, from a child
    stream spawned off ``rng``; the parent stream therefore feeds exactly the
    same noise as :func:`sample` would. Returns the clip and the sequence of
    choices (``"coarse"`` / ``"fine"``) from ``t = T`` down to 1.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    choice_rng = rng.spawn(1)[0]
    choices: List[str] = []

    def before(t):
        p = (t / schedule.T) ** gamma
        choices.append("coarse" if choice_rng.random() < p else "fine")

    def predict(x, t):
        c = c_coarse if choices[-1] == "coarse" else c_fine
        return model.predict(x, t, c)

    out = _loop(schedule, (N, model.cfg.width), rng, predict, before)
    return out, choices


def coarse_probability(t: int, T: int, gamma: float) -> float:
    return (t / T) ** gamma


def edit_body_part(model: DenoiserModel, schedule: DiffusionSchedule, x_source: np.ndarray,
                   element_mask: np.ndarray, control: Optional[ControlEncoding],
                   rng: np.random.Generator) -> np.ndarray:
    """Re-synthesize the entries where ``element_mask`` is 0, keep the rest."""
    x_source = np.asarray(x_source, dtype=np.float64)
    if np.shape(element_mask) != x_source.shape:
        raise ValueError("element mask must match the source clip shape")
    return inpaint(model, schedule, x_source, element_mask, control, rng)


def joints_mask(layout: FrameLayout, N: int, regenerate: Sequence[int], rotations: bool = True,
                positions: bool = False) -> np.ndarray:
    """Element mask keeping everything except the listed joints' channels."""
    m = np.ones((N, layout.D), dtype=bool)
    for j in regenerate:
        if rotations:
            m[:, layout.rot_channels(j)] = False
        if positions:
            m[:, layout.pos_channels(j)] = False
    return m


def lower_body_mask(layout: FrameLayout, grouping, N: int, root: int = 0, positions: bool = False) -> np.ndarray:
    """Regenerate both legs' rotation channels plus the root's."""
    joints = [root] + list(grouping.groups["left_leg"]) + list(grouping.groups["right_leg"])
    return joints_mask(layout, N, joints, rotations=True, positions=positions)


def upper_body_mask(layout: FrameLayout, grouping, N: int, positions: bool = False) -> np.ndarray:
    joints = []
    for name in ("spine", "left_arm", "right_arm", "head"):
        joints += list(grouping.groups.get(name, ()))
    return joints_mask(layout, N, joints, rotations=True, positions=positions)

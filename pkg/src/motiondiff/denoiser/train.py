"""Denoising loss, gradients, AdamW and the training step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from ..schedule import DiffusionSchedule
from .model import DTYPE, ControlEncoding, DenoiserModel, Params, batch_controls, encode_control, forward


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=DTYPE)


def frame_steps(steps, B: int, N: int) -> torch.Tensor:
    """Broadcast scalar, per-clip ``(B,)`` or per-frame ``(B, N)`` steps to ``(B, N)``."""
    s = torch.as_tensor(np.asarray(steps, dtype=np.int64))
    if s.ndim == 0:
        s = s.expand(B)
    if s.ndim == 1:
        s = s[:, None].expand(B, N)
    return s.contiguous()


def corrupt_frames(schedule: DiffusionSchedule, x0: torch.Tensor, steps: torch.Tensor, noise: torch.Tensor):
    """Per-frame closed-form corruption; frames at step 0 stay clean."""
    ab = torch.as_tensor(schedule.alpha_bar, dtype=DTYPE)[steps][..., None]
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * noise


def reduce_loss(pred: torch.Tensor, target: torch.Tensor, norm: str = "l2",
                channel_weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Channel-weighted mean of squared (``l2``) or absolute (``l1``) error."""
    r = pred - target
    if norm == "l2":
        e = r * r
    elif norm == "l1":
        e = r.abs()
    else:
        raise ValueError(f"unknown loss norm {norm!r}")
    if channel_weights is None:
        return e.mean()
    w = _as_tensor(channel_weights)
    return ((e * w).sum(dim=-1) / w.sum()).mean()


def encode_batch(p: Params, model: DenoiserModel, controls: Optional[Sequence], B: int):
    if controls is None:
        return None, None, None
    encs = [None if c is None else (c if isinstance(c, ControlEncoding) else encode_control(p, model.cfg, c))
            for c in controls]
    if len(encs) != B:
        raise ValueError("need one control entry per clip")
    return batch_controls(encs, model.cfg.hidden)


def loss_fn(p: Params, model: DenoiserModel, schedule: DiffusionSchedule, x0, steps, noise,
            controls: Optional[Sequence] = None, norm: str = "l2", channel_weights=None,
            gate: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Denoising loss ``|| f(corrupt(x0, t), t, c) - x0 ||`` for a batch.

    ``x0`` and ``noise`` are ``(B, N, D)``; ``steps`` may be a scalar,
    per-clip or per-frame. ``controls`` holds one raw signal (or encoding, or
    None) per clip and is encoded with the parameters in ``p`` so encoder
    weights receive gradients. ``gate`` further masks control per clip.
    """
    x0 = _as_tensor(x0)
    noise = _as_tensor(noise)
    B, N, _ = x0.shape
    st = frame_steps(steps, B, N)
    x_t = corrupt_frames(schedule, x0, st, noise)
    ctrl, mask, present = encode_batch(p, model, controls, B)
    if ctrl is not None and gate is not None:
        present = present * gate
    if ctrl is not None and not bool((present > 0).any()):
        ctrl = mask = present = None
    pred = forward(p, model.cfg, x_t, st, ctrl, mask, present)
    return reduce_loss(pred, x0, norm, channel_weights)


def loss(model: DenoiserModel, schedule: DiffusionSchedule, x0, steps, noise, controls=None,
         norm: str = "l2", channel_weights=None) -> float:
    with torch.no_grad():
        return float(loss_fn(model.params, model, schedule, x0, steps, noise, controls, norm, channel_weights))


def loss_and_grad(model: DenoiserModel, schedule: DiffusionSchedule, x0, steps, noise, controls=None,
                  norm: str = "l2", channel_weights=None, gate=None, names: Optional[List[str]] = None):
    """Loss value and exact gradients for ``names`` (default: trainable params)."""
    names = model.trainable_names() if names is None else names
    leaf = {k: v.detach().requires_grad_(k in names) for k, v in model.params.items()}
    value = loss_fn(leaf, model, schedule, x0, steps, noise, controls, norm, channel_weights, gate)
    grads = torch.autograd.grad(value, [leaf[n] for n in names], allow_unused=True)
    out = {n: torch.zeros_like(leaf[n]) if g is None else g for n, g in zip(names, grads)}
    return float(value.detach()), out


def backward(model: DenoiserModel, schedule: DiffusionSchedule, x0, steps, noise, controls=None,
             norm: str = "l2", channel_weights=None) -> Dict[str, torch.Tensor]:
    return loss_and_grad(model, schedule, x0, steps, noise, controls, norm, channel_weights)[1]


@dataclass
class AdamW:
    """Adam with decoupled weight decay.

    ``m <- b1 m + (1 - b1) g``; ``v <- b2 v + (1 - b2) g^2``;
    ``theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)``
    with bias-corrected ``m_hat``, ``v_hat``.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)

    def update(self, params: Dict[str, torch.Tensor], grads: Dict[str, torch.Tensor], lr: float) -> None:
        self.step += 1
        bc1 = 1.0 - self.beta1 ** self.step
        bc2 = 1.0 - self.beta2 ** self.step
        with torch.no_grad():
            for name, g in grads.items():
                m = self.m.get(name)
                if m is None:
                    m = self.m[name] = torch.zeros_like(g)
                    self.v[name] = torch.zeros_like(g)
                v = self.v[name]
                m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
                theta = params[name]
                step = (m / bc1) / (torch.sqrt(v / bc2) + self.eps) + self.weight_decay * theta
                params[name] = theta - lr * step

    def state_dict(self) -> dict:
        return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay, "step": self.step}


def annealed_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from ``lr_max`` (step 0) to ``lr_min`` (last step)."""
    if total <= 1:
        return lr_max
    frac = min(max(step / (total - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))


def train_step(model: DenoiserModel, opt: AdamW, schedule: DiffusionSchedule, batch: np.ndarray,
               rng: np.random.Generator, lr: float, controls: Optional[Sequence] = None,
               control_dropout: float = 0.5, norm: str = "l2", channel_weights=None) -> float:
    """One optimizer update on a ``(B, N, D)`` batch; returns the batch loss.

    Random draws, in order: one step per clip, the noise tensor, one dropout
    uniform per clip. The dropout draw happens even without controls so that
    runs with and without control consume the stream identically.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[0] == 0:
        raise ValueError("batch must be a non-empty (B, N, D) array")
    B = batch.shape[0]
    t = rng.integers(1, schedule.T + 1, size=B)
    noise = rng.standard_normal(batch.shape)
    keep = torch.as_tensor(rng.random(B) >= control_dropout, dtype=DTYPE)
    value, grads = loss_and_grad(model, schedule, batch, t, noise, controls, norm, channel_weights, gate=keep)
    opt.update(model.params, grads, lr)
    return value


@dataclass
class FitResult:
    losses: List[float]
    probe_before: float
    probe_after: float


def probe_loss(model: DenoiserModel, schedule: DiffusionSchedule, data: np.ndarray, seed: int = 12345,
               repeats: int = 4, controls=None, norm: str = "l2", channel_weights=None) -> float:
    """Loss on a fixed draw of steps and noise, for comparing checkpoints."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(repeats):
        t = rng.integers(1, schedule.T + 1, size=data.shape[0])
        noise = rng.standard_normal(data.shape)
        total += loss(model, schedule, data, t, noise, controls, norm, channel_weights)
    return total / repeats


def fit(model: DenoiserModel, schedule: DiffusionSchedule, data: np.ndarray, steps: int, rng: np.random.Generator,
        lr_max: float = 1e-3, lr_min: float = 1e-6, batch_size: Optional[int] = None,
        controls: Optional[Sequence] = None, control_dropout: float = 0.5, norm: str = "l2",
        channel_weights=None, opt: Optional[AdamW] = None, log=None) -> FitResult:
    """Train on a fixed ``(K, N, D)`` array of equal-length clips."""
    opt = AdamW() if opt is None else opt
    K = data.shape[0]
    bs = K if batch_size is None else min(batch_size, K)
    before = probe_loss(model, schedule, data, controls=controls, norm=norm, channel_weights=channel_weights)
    losses = []
    for i in range(steps):
        idx = np.arange(K) if bs == K else rng.choice(K, size=bs, replace=False)
        ctrl = None if controls is None else [controls[j] for j in idx]
        lr = annealed_lr(i, steps, lr_max, lr_min)
        value = train_step(model, opt, schedule, data[idx], rng, lr, ctrl, control_dropout, norm, channel_weights)
        losses.append(value)
        if log is not None:
            log(i, value, lr)
    after = probe_loss(model, schedule, data, controls=controls, norm=norm, channel_weights=channel_weights)
    return FitResult(losses, before, after)

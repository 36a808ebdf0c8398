"""Transformer denoiser predicting the clean clip from a noisy one.

The network is written functionally over a flat ``{name: tensor}`` parameter
dict so the same code serves training, inference, checkpointing and batched
finite-difference checks (via ``torch.func.vmap``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch

DTYPE = torch.float64

Params = Dict[str, torch.Tensor]


@dataclass
class DenoiserConfig:
    width: int = 54
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    ff_width: int = 128
    max_step: int = 200
    max_len: int = 64
    control_dim: int = 0
    text_buckets: int = 0
    freeze_encoders: bool = False

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden size must be divisible by the number of heads")
        if self.layers < 1:
            raise ValueError("need at least one layer")

    @property
    def has_control(self) -> bool:
        return self.control_dim > 0 or self.text_buckets > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


@dataclass
class ControlEncoding:
    """Encoded control tokens ``(M, hidden)``; ``M = 0`` means unconditional."""

    tokens: torch.Tensor

    @property
    def empty(self) -> bool:
        return self.tokens.shape[0] == 0


def _uniform(gen: torch.Generator, shape, bound: float) -> torch.Tensor:
    return (torch.rand(shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound


def init_params(cfg: DenoiserConfig, seed: int = 0) -> Params:
    """Fan-in scaled uniform init; step table starts near zero."""
    gen = torch.Generator().manual_seed(seed)
    Dh, D, F = cfg.hidden, cfg.width, cfg.ff_width
    p: Params = {}

    def linear(name, fan_in, fan_out):
        p[f"{name}.w"] = _uniform(gen, (fan_in, fan_out), 1.0 / math.sqrt(fan_in))
        p[f"{name}.b"] = torch.zeros(fan_out, dtype=DTYPE)

    def norm(name):
        p[f"{name}.g"] = torch.ones(Dh, dtype=DTYPE)
        p[f"{name}.b"] = torch.zeros(Dh, dtype=DTYPE)

    linear("in_proj", D, Dh)
    p["pos_emb"] = _uniform(gen, (cfg.max_len, Dh), 0.1)
    p["step_emb"] = _uniform(gen, (cfg.max_step + 1, Dh), 1e-3)
    for l in range(cfg.layers):
        b = f"blocks.{l}"
        norm(f"{b}.ln_self")
        for k in "qkvo":
            linear(f"{b}.self.{k}", Dh, Dh)
        if cfg.has_control:
            norm(f"{b}.ln_cross")
            for k in "qkvo":
                linear(f"{b}.cross.{k}", Dh, Dh)
        norm(f"{b}.ln_ff")
        linear(f"{b}.ff1", Dh, F)
        linear(f"{b}.ff2", F, Dh)
    norm("ln_out")
    linear("out_proj", Dh, D)
    if cfg.control_dim > 0:
        linear("ctrl_feat", cfg.control_dim, Dh)
    if cfg.text_buckets > 0:
        p["ctrl_text.table"] = _uniform(gen, (cfg.text_buckets, Dh), 1.0)
        linear("ctrl_text.proj", Dh, Dh)
    return p


def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * g + b


def _attention(p: Params, prefix: str, heads: int, x, ctx, key_mask=None):
    B, N, Dh = x.shape
    M = ctx.shape[1]
    dh = Dh // heads
    q = (x @ p[f"{prefix}.q.w"] + p[f"{prefix}.q.b"]).reshape(B, N, heads, dh).transpose(1, 2)
    k = (ctx @ p[f"{prefix}.k.w"] + p[f"{prefix}.k.b"]).reshape(B, M, heads, dh).transpose(1, 2)
    v = (ctx @ p[f"{prefix}.v.w"] + p[f"{prefix}.v.b"]).reshape(B, M, heads, dh).transpose(1, 2)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
    att = torch.softmax(scores, dim=-1)
    out = (att @ v).transpose(1, 2).reshape(B, N, Dh)
    return out @ p[f"{prefix}.o.w"] + p[f"{prefix}.o.b"]


def forward(p: Params, cfg: DenoiserConfig, x_t: torch.Tensor, steps: torch.Tensor,
            ctrl: Optional[torch.Tensor] = None, ctrl_mask: Optional[torch.Tensor] = None,
            ctrl_gate: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Predict ``x0`` from ``x_t``.

    Parameters
    ----------
    x_t : (B, N, D)
    steps : (B, N) integer diffusion step per frame, in ``[0, max_step]``
    ctrl : (B, M, hidden) encoded control tokens, or None for unconditional
    ctrl_mask : (B, M) bool, True for real (non-padding) tokens
    ctrl_gate : (B,) 1.0 where the clip attends to its control, 0.0 where
        the cross-attention branch is skipped (dropped or absent control)
    """
    B, N, D = x_t.shape
    if D != cfg.width:
        raise ValueError(f"input width {D} does not match model width {cfg.width}")
    if N > cfg.max_len:
        raise ValueError(f"sequence of {N} frames exceeds max_len={cfg.max_len}")
    if steps.min() < 0 or steps.max() > cfg.max_step:
        raise ValueError("diffusion step out of range")
    h = x_t @ p["in_proj.w"] + p["in_proj.b"] + p["pos_emb"][:N] + p["step_emb"][steps]
    use_ctrl = ctrl is not None and ctrl.shape[1] > 0 and cfg.has_control
    for l in range(cfg.layers):
        b = f"blocks.{l}"
        hn = _layer_norm(h, p[f"{b}.ln_self.g"], p[f"{b}.ln_self.b"])
        h = h + _attention(p, f"{b}.self", cfg.heads, hn, hn)
        if use_ctrl:
            hn = _layer_norm(h, p[f"{b}.ln_cross.g"], p[f"{b}.ln_cross.b"])
            mask = ctrl_mask
            if mask is not None:
                # rows with no valid token would softmax over -inf only
                mask = mask | ~mask.any(dim=1, keepdim=True)
            ca = _attention(p, f"{b}.cross", cfg.heads, hn, ctrl, mask)
            if ctrl_gate is not None:
                ca = ca * ctrl_gate[:, None, None]
            h = h + ca
        hn = _layer_norm(h, p[f"{b}.ln_ff.g"], p[f"{b}.ln_ff.b"])
        h = h + torch.nn.functional.gelu(hn @ p[f"{b}.ff1.w"] + p[f"{b}.ff1.b"]) @ p[f"{b}.ff2.w"] + p[f"{b}.ff2.b"]
    hn = _layer_norm(h, p["ln_out.g"], p["ln_out.b"])
    return hn @ p["out_proj.w"] + p["out_proj.b"]


# -- control encoders ---------------------------------------------------------

def hash_token(token: str, buckets: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


def text_token_ids(text: str, buckets: int) -> List[int]:
    return [hash_token(tok, buckets) for tok in text.lower().split()]


def embed_text(p: Params, text: str) -> torch.Tensor:
    """Pre-projection text rows: one table row per whitespace token."""
    table = p["ctrl_text.table"]
    ids = text_token_ids(text, table.shape[0])
    return table[torch.tensor(ids, dtype=torch.long)] if ids else table[:0]


Signal = Union[None, str, np.ndarray, torch.Tensor]


def encode_control(p: Params, cfg: DenoiserConfig, signal: Signal) -> ControlEncoding:
    """Encode a text string or a ``K x F`` feature matrix into control tokens.

    ``None``, an empty string or a zero-row matrix all encode to ``M = 0``.
    """
    if signal is None:
        return ControlEncoding(torch.zeros(0, cfg.hidden, dtype=DTYPE))
    if isinstance(signal, str):
        if cfg.text_buckets <= 0:
            raise ValueError("model has no text encoder")
        rows = embed_text(p, signal)
        if rows.shape[0] == 0:
            return ControlEncoding(torch.zeros(0, cfg.hidden, dtype=DTYPE))
        return ControlEncoding(rows @ p["ctrl_text.proj.w"] + p["ctrl_text.proj.b"])
    feats = torch.as_tensor(np.asarray(signal), dtype=DTYPE)
    if feats.ndim != 2:
        raise ValueError("feature control must be a K x F matrix")
    if feats.shape[0] == 0:
        return ControlEncoding(torch.zeros(0, cfg.hidden, dtype=DTYPE))
    if cfg.control_dim <= 0 or feats.shape[1] != cfg.control_dim:
        raise ValueError(f"feature control width {feats.shape[1]} does not match control_dim={cfg.control_dim}")
    return ControlEncoding(feats @ p["ctrl_feat.w"] + p["ctrl_feat.b"])


def batch_controls(encodings: Sequence[Optional[ControlEncoding]], hidden: int):
    """Pad encodings to a common length.

    Returns ``(tokens (B, M, hidden), mask (B, M), present (B,))`` or
    ``(None, None, None)`` when no clip carries a control signal.
    """
    lengths = [0 if e is None else e.tokens.shape[0] for e in encodings]
    M = max(lengths, default=0)
    if M == 0:
        return None, None, None
    rows, mask = [], []
    for e, n in zip(encodings, lengths):
        t = torch.zeros(M, hidden, dtype=DTYPE) if n == 0 else e.tokens
        if n and n < M:
            t = torch.cat([t, torch.zeros(M - n, hidden, dtype=DTYPE)])
        rows.append(t)
        mask.append(torch.arange(M) < n)
    present = torch.tensor([float(n > 0) for n in lengths], dtype=DTYPE)
    return torch.stack(rows), torch.stack(mask), present


class DenoiserModel:
    """Parameters plus config; ``predict`` is the NumPy-facing inference entry."""

    def __init__(self, cfg: DenoiserConfig, params: Optional[Params] = None, seed: int = 0):
        self.cfg = cfg
        self.params = init_params(cfg, seed) if params is None else params

    def trainable_names(self) -> List[str]:
        names = sorted(self.params)
        if self.cfg.freeze_encoders:
            names = [n for n in names if not n.startswith("ctrl_")]
        return names

    def encode(self, signal: Signal) -> ControlEncoding:
        return encode_control(self.params, self.cfg, signal)

    def __call__(self, x_t, steps, ctrl=None, ctrl_mask=None, ctrl_gate=None):
        return forward(self.params, self.cfg, x_t, steps, ctrl, ctrl_mask, ctrl_gate)

    @torch.no_grad()
    def predict(self, x_t: np.ndarray, steps, control: Optional[ControlEncoding] = None) -> np.ndarray:
        """Single-clip inference: ``x_t (N, D)``, ``steps`` scalar or ``(N,)``."""
        x = torch.as_tensor(np.asarray(x_t), dtype=DTYPE)[None]
        N = x.shape[1]
        st = torch.as_tensor(np.broadcast_to(np.asarray(steps, dtype=np.int64), (N,)).copy())[None]
        ctrl = None
        if control is not None and not control.empty:
            ctrl = control.tokens[None]
        return forward(self.params, self.cfg, x, st, ctrl)[0].numpy()

    def copy(self) -> "DenoiserModel":
        return DenoiserModel(self.cfg, {k: v.detach().clone() for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return sum(v.numel() for v in self.params.values())

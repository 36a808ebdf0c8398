"""Batched central finite differences over every scalar of every parameter."""

import torch
from torch.func import vmap

H = 1e-5


def fd_gradient(loss_of_params, params, name, chunk=1024, h=H):
    """Central differences of ``loss_of_params(params)`` w.r.t. every entry of ``params[name]``."""
    base = params[name]
    n = base.numel()
    out = torch.empty(n, dtype=base.dtype)

    def f(delta):
        p = dict(params)
        p[name] = base + delta.reshape(base.shape)
        return loss_of_params(p)

    fv = vmap(f)
    for start in range(0, n, chunk):
        idx = torch.arange(start, min(start + chunk, n))
        d = torch.zeros(len(idx), n, dtype=base.dtype)
        d[torch.arange(len(idx)), idx] = h
        out[idx] = (fv(d) - fv(-d)) / (2 * h)
    return out.reshape(base.shape)


def relative_error(a, b, floor):
    return (a - b).abs() / torch.clamp(torch.maximum(a.abs(), b.abs()), min=floor)

import json
import struct

import numpy as np
import pytest
import torch

from motiondiff.adapter import group_joints, init_adapter
from motiondiff.checkpoint import (Checkpoint, CheckpointError, CheckpointVersionError, load_checkpoint,
                                   read_header, save_checkpoint)
from motiondiff.denoiser.model import DenoiserConfig, DenoiserModel
from motiondiff.denoiser.train import AdamW, train_step
from motiondiff.motion_data import fit_norm_stats
from motiondiff.schedule import cosine_schedule
from motiondiff.synthetic import humanoid6, sinusoid_dataset

CFG = DenoiserConfig(width=54, hidden=16, layers=1, heads=2, ff_width=16, max_step=20, max_len=8)


def trained():
    skel, clips, _ = sinusoid_dataset(n_clips=4, n_frames=8)
    stats = fit_norm_stats(clips)
    model = DenoiserModel(CFG, seed=3)
    opt = AdamW()
    batch = np.stack([stats.apply(c.frames) for c in clips])
    train_step(model, opt, cosine_schedule(20), batch, np.random.default_rng(0), 1e-3)
    return Checkpoint(model, 20, seed=5, stats=stats, skeleton=skel, optimizer=opt, extra={"fps": 12.5})


def f32(t):
    return t.detach().numpy().astype(np.float32).astype(np.float64)


def test_round_trip(tmp_path):
    ck = trained()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.model.cfg == ck.model.cfg
    assert back.schedule_T == 20 and back.seed == 5 and back.extra == {"fps": 12.5}
    assert set(back.model.params) == set(ck.model.params)
    for k, v in ck.model.params.items():
        np.testing.assert_array_equal(back.model.params[k].numpy(), f32(v))
    assert back.optimizer.step == 1
    for k in ck.optimizer.m:
        np.testing.assert_array_equal(back.optimizer.m[k].numpy(), f32(ck.optimizer.m[k]))
        np.testing.assert_array_equal(back.optimizer.v[k].numpy(), f32(ck.optimizer.v[k]))
    np.testing.assert_array_equal(back.stats.mean, ck.stats.mean)
    assert back.skeleton.names == ck.skeleton.names
    assert back.adapter is None


def test_identical_content_identical_bytes(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, trained())
    save_checkpoint(b, trained())
    assert a.read_bytes() == b.read_bytes()
    save_checkpoint(b, load_checkpoint(a))
    assert a.read_bytes() == b.read_bytes()


def test_adapter_section(tmp_path):
    ck = trained()
    g = group_joints(humanoid6())
    ad = init_adapter(g, g)
    ad.q = ad.q + 0.01 * torch.arange(ad.q.numel(), dtype=ad.q.dtype).reshape(ad.q.shape)
    ck.adapter, ck.fine_skeleton, ck.fine_stats = ad, humanoid6(), ck.stats
    save_checkpoint(tmp_path / "a.ckpt", ck)
    back = load_checkpoint(tmp_path / "a.ckpt")
    np.testing.assert_array_equal(back.adapter.q.numpy(), f32(ad.q))
    assert set(back.adapter.m) == set(ad.m)
    assert back.adapter.pre.groups == ad.pre.groups
    assert back.fine_skeleton.names == humanoid6().names


def test_header_contents(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", trained())
    h = read_header(tmp_path / "a.ckpt")
    assert h["version"] == 1 and h["schedule"] == {"T": 20}
    assert h["optimizer"]["step"] == 1
    names = [e["name"] for e in h["tensors"]]
    assert all(n.startswith(("param/", "adam_m/", "adam_v/")) for n in names)


def rewrite_header(path, **changes):
    raw = path.read_bytes()
    (n,) = struct.unpack("<I", raw[8:12])
    head = json.loads(raw[12:12 + n])
    head.update(changes)
    new = json.dumps(head, sort_keys=True).encode()
    path.write_bytes(raw[:8] + struct.pack("<I", len(new)) + new + raw[12 + n:])


def test_version_mismatch(tmp_path):
    p = tmp_path / "a.ckpt"
    save_checkpoint(p, trained())
    rewrite_header(p, version=2)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(p)
    rewrite_header(p, version=1, format="other")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "a.ckpt"
    save_checkpoint(p, trained())
    raw = p.read_bytes()
    p.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    p.write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)
    p.write_bytes(raw[:40])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)

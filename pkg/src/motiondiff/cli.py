"""Command-line interface.

Every subcommand is deterministic given ``--seed``. Progress goes to stderr
(or ``--log``) as one JSON object per line; on failure a single JSON line
``{"error": ..., "message": ...}`` is written to stderr and the exit code
is nonzero.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import adapter as adp
from .bvh_io import BvhSyntaxError, bvh_to_clip, clip_to_bvh, parse_bvh, serialize_bvh
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .denoiser.model import DenoiserConfig, DenoiserModel
from .denoiser.train import AdamW, annealed_lr, probe_loss, train_step
from .evaluation import evaluate
from .kinematics import Skeleton
from .motion_data import (FrameLayout, MotionClip, RootTrack, fit_norm_stats, load_clip, resample,
                          sample_window, save_clip)
from .schedule import cosine_schedule
from .synthesis import ik as ik_mod
from .synthesis.inbetween import inbetween_delta, inbetween_loss
from .synthesis.sampling import (alternating_control, edit_body_part, inpaint, joints_mask, lower_body_mask, sample,
                                 upper_body_mask)
from .synthetic import sinusoid_dataset

EXIT_FAILURE = 1
EXIT_USAGE = 2

DEFAULT_CONFIG = {
    "model": DenoiserConfig().to_dict(),
    "diffusion": {"T": 200},
    "data": {"source": "synthetic", "synthetic_clips": 16, "synthetic_frames": 24, "fps": 12.5,
             "synthetic_controls": False},
    "train": {
        "steps": 2000,
        "lr_max": 3e-3,
        "lr_min": 1e-6,
        "weight_decay": 0.01,
        "batch_size": 16,
        "control_dropout": 0.5,
        "loss_norm": "l2",
        "channel_weights": None,
        "window_min": 24,
        "window_max": 24,
        "objective": "denoise",
        "context": [4, 4],
    },
    "adapt": {"steps": 300, "lr_max": 1e-2, "lr_min": 1e-4, "batch_size": 8, "tune_m": True},
    "synthesis": {"frames": 24, "refine_steps": ik_mod.REFINE_STEPS, "ik_method": "gauss-newton"},
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, EXIT_USAGE)


class Logger:
    def __init__(self, path: Optional[str]):
        self.fh = open(path, "w") if path else sys.stderr
        self.own = bool(path)

    def __call__(self, **event):
        self.fh.write(json.dumps(event, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        if self.own:
            self.fh.close()


# -- config and task files ------------------------------------------------------

def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise CliError("config", f"unknown config key {where}{k}")
        if isinstance(base[k], dict) and k != "model":
            if not isinstance(v, dict):
                raise CliError("config", f"config key {where}{k} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _read_json(path, kind: str) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(kind, f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CliError(kind, f"malformed JSON in {path}: {e}") from None
    if not isinstance(d, dict):
        raise CliError(kind, f"{path} must hold a JSON object")
    return d


def load_config(path: Optional[str]) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        cfg = _merge(cfg, _read_json(path, "config"))
    try:
        DenoiserConfig.from_dict(cfg["model"])
    except (TypeError, ValueError) as e:
        raise CliError("config", f"invalid model config: {e}") from None
    return cfg


def load_task(path: Optional[str]) -> dict:
    return {} if path is None else _read_json(path, "task")


# -- datasets -------------------------------------------------------------------

def _read_control(path: Path):
    side = path.with_name(path.stem + ".control.json")
    if not side.exists():
        return None
    d = _read_json(side, "data")
    if "text" in d:
        return str(d["text"])
    if "features" in d:
        return np.asarray(d["features"], dtype=np.float64)
    raise CliError("data", f"{side} needs a 'text' or 'features' entry")


def load_dataset(source: str, data_cfg: dict):
    """Returns ``(skeleton, clips, controls)``; clips are resampled to ``fps``."""
    fps = float(data_cfg["fps"])
    if source == "synthetic":
        skel, clips, grids = sinusoid_dataset(int(data_cfg["synthetic_clips"]), int(data_cfg["synthetic_frames"]),
                                              fps, seed=0)
        controls = list(grids) if data_cfg.get("synthetic_controls") else [None] * len(clips)
        return skel, clips, controls
    root = Path(source)
    if not root.is_dir():
        raise CliError("data", f"dataset directory not found: {source}")
    files = sorted(p for p in root.iterdir() if p.suffix in (".bvh", ".json") and not p.name.endswith(".control.json"))
    if not files:
        raise CliError("data", f"no .bvh or .json clips in {source}")
    skel, clips, controls = None, [], []
    for p in files:
        s, c = read_motion(p)
        if skel is None:
            skel = s
        elif s is not None and s.names != skel.names:
            raise CliError("data", f"{p.name} uses a different skeleton")
        clips.append(resample(c, fps))
        controls.append(_read_control(p))
    if skel is None:
        raise CliError("data", "no clip in the dataset carries a skeleton")
    return skel, clips, controls


def read_motion(path):
    path = Path(path)
    try:
        if path.suffix == ".bvh":
            return bvh_to_clip(parse_bvh(path.read_text()))
        clip, skel = load_clip(path)
        return skel, clip
    except FileNotFoundError:
        raise CliError("io", f"file not found: {path}") from None
    except BvhSyntaxError as e:
        raise CliError("bvh", f"{path}: {e}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise CliError("clip", f"{path}: {e}") from None


def write_motion(path, clip: MotionClip, skel: Optional[Skeleton]) -> None:
    path = Path(path)
    if path.suffix == ".bvh":
        if skel is None:
            raise CliError("io", "BVH output needs a skeleton")
        path.write_text(serialize_bvh(clip_to_bvh(skel, clip)))
    else:
        save_clip(path, clip, skel)


# -- shared helpers -------------------------------------------------------------

def _open_checkpoint(path) -> Checkpoint:
    try:
        ck = load_checkpoint(path)
    except FileNotFoundError:
        raise CliError("checkpoint", f"file not found: {path}") from None
    except CheckpointError as e:
        raise CliError("checkpoint", str(e)) from None
    if ck.stats is None or ck.skeleton is None:
        raise CliError("checkpoint", "checkpoint lacks normalization stats or skeleton")
    return ck


class _Space:
    """Maps between user clips and the backbone's normalized feature space."""

    def __init__(self, ck: Checkpoint):
        self.ck = ck
        self.layout = FrameLayout(ck.skeleton.num_joints)
        self.adapted = ck.adapter is not None

    @property
    def skeleton(self) -> Skeleton:
        return self.ck.fine_skeleton if self.adapted else self.ck.skeleton

    def to_model(self, frames: np.ndarray) -> np.ndarray:
        raw = adp.adapt_in(self.ck.adapter, frames) if self.adapted else frames
        return self.ck.stats.apply(raw)

    def from_model(self, z: np.ndarray) -> np.ndarray:
        raw = self.ck.stats.invert(z)
        return adp.adapt_out(self.ck.adapter, raw) if self.adapted else raw

    def clip(self, z: np.ndarray, fps: float, track: Optional[RootTrack] = None) -> MotionClip:
        frames = self.from_model(z)
        layout = FrameLayout(self.skeleton.num_joints)
        return MotionClip(frames, layout, fps, RootTrack.zeros(len(frames)) if track is None else track)


def _control(model: DenoiserModel, entry):
    """Task control entry: None, a string, ``{"text"}``, ``{"features"}`` or ``{"file"}``."""
    if entry is None:
        return None
    if isinstance(entry, str):
        return model.encode(entry)
    if isinstance(entry, dict):
        if "text" in entry:
            return model.encode(str(entry["text"]))
        if "features" in entry:
            return model.encode(np.asarray(entry["features"], dtype=np.float64))
        if "file" in entry:
            return _control(model, _read_json(entry["file"], "task"))
    raise CliError("task", f"cannot interpret control entry {entry!r}")


def _pick(args_value, task: dict, key: str, default):
    if args_value is not None:
        return args_value
    return task.get(key, default)


def _fps(ck: Checkpoint, task: dict, args) -> float:
    return float(_pick(getattr(args, "fps", None), task, "fps", ck.extra.get("fps", 30.0)))


def _write_outputs(args, clip: MotionClip, skel: Skeleton, log: Logger) -> None:
    if args.out is None and args.bvh is None:
        raise CliError("usage", "give --out and/or --bvh", EXIT_USAGE)
    if args.out:
        write_motion(args.out, clip, skel)
        log(event="wrote", path=str(args.out))
    if args.bvh:
        write_motion(Path(args.bvh).with_suffix(".bvh"), clip, skel)
        log(event="wrote", path=str(args.bvh))


def _joint_index(skel: Skeleton, j) -> int:
    if isinstance(j, str):
        if j not in skel.names:
            raise CliError("task", f"unknown joint {j!r}")
        return skel.names.index(j)
    return int(j)


# -- subcommands ----------------------------------------------------------------

def cmd_train(args, log: Logger) -> None:
    cfg = load_config(args.config)
    tr = cfg["train"]
    for key in ("steps", "lr_max", "lr_min", "batch_size", "control_dropout", "loss_norm", "window_min",
                "window_max", "objective"):
        v = getattr(args, key, None)
        if v is not None:
            tr[key] = v
    if args.channel_weights is not None:
        tr["channel_weights"] = json.loads(args.channel_weights)
    if args.fps is not None:
        cfg["data"]["fps"] = args.fps
    if args.data is not None:
        cfg["data"]["source"] = args.data
    seed = args.seed
    rng = np.random.default_rng(seed)
    skel, clips, controls = load_dataset(cfg["data"]["source"], cfg["data"])

    init = None
    if args.init:
        init = _open_checkpoint(args.init)
        model, stats = init.model, init.stats
        if init.skeleton.names != skel.names:
            raise CliError("data", "dataset skeleton differs from the checkpoint's; use `adapt`")
    else:
        mcfg = dict(cfg["model"])
        mcfg["width"] = FrameLayout(skel.num_joints).D
        mcfg["max_step"] = int(cfg["diffusion"]["T"])
        model = DenoiserModel(DenoiserConfig.from_dict(mcfg), seed=seed)
        stats = fit_norm_stats(clips)
    schedule = cosine_schedule(model.cfg.max_step)
    opt = AdamW(weight_decay=float(tr["weight_decay"]))
    steps = int(tr["steps"])
    K = len(clips)
    bs = min(int(tr["batch_size"]), K)
    shortest = min(len(c) for c in clips)
    w_lo, w_hi = int(tr["window_min"]), min(int(tr["window_max"]), shortest, model.cfg.max_len)
    if w_lo > w_hi:
        raise CliError("data", f"window bounds [{w_lo}, {w_hi}] are empty for this dataset")
    cw = tr["channel_weights"]
    norm = tr["loss_norm"]
    has_ctrl = any(c is not None for c in controls) and model.cfg.has_control

    probe_data = np.stack([stats.apply(c.frames[:w_lo]) for c in clips])
    probe_ctrl = controls if has_ctrl else None
    before = probe_loss(model, schedule, probe_data, controls=_trim(probe_ctrl, w_lo), norm=norm, channel_weights=cw)
    log(event="start", steps=steps, clips=K, probe=before, parameters=model.num_parameters())
    for i in range(steps):
        idx = np.arange(K) if bs == K else rng.choice(K, size=bs, replace=False)
        length = int(rng.integers(w_lo, w_hi + 1))
        batch, ctrl = [], []
        for j in idx:
            win = sample_window(clips[j], rng, length=length)
            batch.append(stats.apply(win.frames))
            ctrl.append(controls[j])
        batch = np.stack(batch)
        ctrl = _trim(ctrl, length) if has_ctrl else None
        lr = annealed_lr(i, steps, float(tr["lr_max"]), float(tr["lr_min"]))
        if tr["objective"] == "inbetween":
            value = _inbetween_step(model, opt, schedule, batch, rng, lr, tr["context"], cw)
        elif tr["objective"] == "denoise":
            value = train_step(model, opt, schedule, batch, rng, lr, ctrl, float(tr["control_dropout"]), norm, cw)
        else:
            raise CliError("config", f"unknown objective {tr['objective']!r}")
        log(event="step", step=i, loss=value, lr=lr)
    after = probe_loss(model, schedule, probe_data, controls=_trim(probe_ctrl, w_lo), norm=norm, channel_weights=cw)
    log(event="done", probe_before=before, probe_after=after, ratio=after / before)
    save_checkpoint(args.out, Checkpoint(model, schedule.T, seed, stats, skel, opt,
                                         extra={"fps": float(cfg["data"]["fps"])}))
    log(event="wrote", path=str(args.out))


def _trim(controls, length):
    """Feature controls follow the frames, so crop them with the window."""
    if controls is None:
        return None
    return [c[:length] if isinstance(c, np.ndarray) else c for c in controls]


def _inbetween_step(model, opt, schedule, batch, rng, lr, context, cw) -> float:
    import torch

    B, N, _ = batch.shape
    n_a, n_c = int(context[0]), int(context[1])
    split = (n_a, N - n_a - n_c, n_c)
    t = rng.integers(1, schedule.T + 1, size=B)
    noise = rng.standard_normal(batch.shape)
    names = model.trainable_names()
    leaf = {k: v.detach().requires_grad_(k in names) for k, v in model.params.items()}
    frozen = DenoiserModel(model.cfg, leaf)
    value = inbetween_loss(frozen, schedule, batch, split, t, noise, channel_weights=cw, grad=True)
    grads = torch.autograd.grad(value, [leaf[n] for n in names], allow_unused=True)
    opt.update(model.params, {n: torch.zeros_like(leaf[n]) if g is None else g for n, g in zip(names, grads)}, lr)
    return float(value.detach())


def cmd_adapt(args, log: Logger) -> None:
    cfg = load_config(args.config)
    ac = cfg["adapt"]
    for key in ("steps", "lr_max", "lr_min", "batch_size"):
        v = getattr(args, key, None)
        if v is not None:
            ac[key] = v
    ck = _open_checkpoint(args.checkpoint)
    data_cfg = dict(cfg["data"])
    data_cfg["fps"] = ck.extra.get("fps", data_cfg["fps"]) if args.fps is None else args.fps
    skel_f, clips, _ = load_dataset(args.data, data_cfg)
    try:
        gp = adp.group_joints(ck.skeleton)
        gf = adp.group_joints(skel_f)
        params = adp.init_adapter(gp, gf, ck.skeleton, skel_f)
    except adp.TopologyError as e:
        raise CliError("topology", str(e)) from None
    N = min(min(len(c) for c in clips), ck.model.cfg.max_len)
    data = np.stack([c.frames[:N] for c in clips])
    stats_f = fit_norm_stats([d for d in data])
    schedule = cosine_schedule(ck.schedule_T)
    rng = np.random.default_rng(args.seed)
    res = adp.tune_adapter(ck.model, schedule, params, data, ck.stats, stats_f, int(ac["steps"]), rng,
                           float(ac["lr_max"]), float(ac["lr_min"]), int(ac["batch_size"]), bool(ac["tune_m"]),
                           log=lambda i, v, lr: log(event="step", step=i, loss=v, lr=lr))
    log(event="done", loss_first=res.losses[0] if res.losses else None,
        loss_last=res.losses[-1] if res.losses else None)
    ck.adapter = res.params
    ck.fine_skeleton = skel_f
    ck.fine_stats = stats_f
    ck.seed = args.seed
    save_checkpoint(args.out, ck)
    log(event="wrote", path=str(args.out))


def cmd_sample(args, log: Logger) -> None:
    task = load_task(args.task)
    ck = _open_checkpoint(args.checkpoint)
    sp = _Space(ck)
    seed = int(_pick(args.seed, task, "seed", 0))
    N = int(_pick(args.frames, task, "frames", DEFAULT_CONFIG["synthesis"]["frames"]))
    control = _control(ck.model, _pick(args.control, task, "control", None))
    z = sample(ck.model, cosine_schedule(ck.schedule_T), N, control, np.random.default_rng(seed))
    _write_outputs(args, sp.clip(z, _fps(ck, task, args)), sp.skeleton, log)


def _known_frames(task: dict, N: int, args) -> np.ndarray:
    if args.keep is not None:
        spans = json.loads(args.keep)
    else:
        spans = task.get("mask", {}).get("known_frames")
    if spans is None:
        raise CliError("task", "in-betweening needs known frame spans (--keep or mask.known_frames)")
    m = np.zeros(N, bool)
    for a, b in spans:
        if not 0 <= a < b <= N:
            raise CliError("task", f"frame span [{a}, {b}) outside [0, {N})")
        m[a:b] = True
    return m


def cmd_inbetween(args, log: Logger) -> None:
    task = load_task(args.task)
    ck = _open_checkpoint(args.checkpoint)
    sp = _Space(ck)
    skel, clip = read_motion(args.clip)
    seed = int(_pick(args.seed, task, "seed", 0))
    N = len(clip)
    mask = _known_frames(task, N, args)
    x_known = sp.to_model(clip.frames)
    schedule = cosine_schedule(ck.schedule_T)
    control = _control(ck.model, task.get("control"))
    rng = np.random.default_rng(seed)
    method = _pick(args.method, task, "method", "delta")
    if method == "delta":
        z = inbetween_delta(ck.model, schedule, x_known, mask, rng, sp.layout, ck.stats, control)
    elif method == "inpaint":
        z = inpaint(ck.model, schedule, x_known, mask, control, rng)
    else:
        raise CliError("task", f"unknown in-betweening method {method!r}")
    out = sp.clip(z, clip.fps, clip.track)
    out = MotionClip(np.where(mask[:, None], clip.frames, out.frames), out.layout, out.fps, out.track)
    _write_outputs(args, out, sp.skeleton, log)


def cmd_edit(args, log: Logger) -> None:
    task = load_task(args.task)
    ck = _open_checkpoint(args.checkpoint)
    sp = _Space(ck)
    if sp.adapted:
        raise CliError("task", "body-part editing works on the backbone skeleton only")
    skel, clip = read_motion(args.clip)
    seed = int(_pick(args.seed, task, "seed", 0))
    N = len(clip)
    part = _pick(args.part, task.get("mask", {}), "part", None)
    joints = _pick(json.loads(args.joints) if args.joints else None, task.get("mask", {}), "joints", None)
    layout = sp.layout
    if joints is not None:
        m = joints_mask(layout, N, [_joint_index(ck.skeleton, j) for j in joints])
    elif part in ("lower", "upper"):
        grouping = adp.group_joints(ck.skeleton)
        m = (lower_body_mask(layout, grouping, N, root=ck.skeleton.root) if part == "lower"
             else upper_body_mask(layout, grouping, N))
    else:
        raise CliError("task", "edit needs --part lower|upper or --joints")
    z = edit_body_part(ck.model, cosine_schedule(ck.schedule_T), sp.to_model(clip.frames), m,
                       _control(ck.model, task.get("control")), np.random.default_rng(seed))
    frames = np.where(m, clip.frames, ck.stats.invert(z))
    _write_outputs(args, MotionClip(frames, clip.layout, clip.fps, clip.track), ck.skeleton, log)


def cmd_ik(args, log: Logger) -> None:
    task = load_task(args.task)
    ck = _open_checkpoint(args.checkpoint)
    if ck.adapter is not None:
        raise CliError("task", "IK works on the backbone skeleton only")
    skel = ck.skeleton
    seed = int(_pick(args.seed, task, "seed", 0))
    N = int(_pick(args.frames, task, "frames", DEFAULT_CONFIG["synthesis"]["frames"]))
    raw = task.get("constraints")
    if args.constraints:
        raw = json.loads(args.constraints)
    if not raw:
        raise CliError("task", "IK needs a non-empty constraint list")
    try:
        cons = [ik_mod.IkConstraint(int(c["frame"]), _joint_index(skel, c["joint"]), tuple(c["target"])) for c in raw]
    except (KeyError, TypeError, ValueError) as e:
        raise CliError("task", f"malformed constraint: {e}") from None
    steps = int(task.get("refine_steps", DEFAULT_CONFIG["synthesis"]["refine_steps"]))
    res = ik_mod.solve_ik(ck.model, cosine_schedule(ck.schedule_T), cons, N, skel, np.random.default_rng(seed),
                          refine_steps=steps, step_size=task.get("step_size"), stats=ck.stats,
                          control=_control(ck.model, task.get("control")),
                          optimize_root=bool(task.get("optimize_root", True)), fps=_fps(ck, task, args),
                          method=task.get("method", DEFAULT_CONFIG["synthesis"]["ik_method"]))
    log(event="ik", residual_initial=res.history[0], residual=res.residual)
    _write_outputs(args, res.clip, skel, log)


def cmd_mix(args, log: Logger) -> None:
    task = load_task(args.task)
    ck = _open_checkpoint(args.checkpoint)
    sp = _Space(ck)
    seed = int(_pick(args.seed, task, "seed", 0))
    N = int(_pick(args.frames, task, "frames", DEFAULT_CONFIG["synthesis"]["frames"]))
    gamma = _pick(args.gamma, task, "gamma", None)
    if gamma is None:
        raise CliError("task", "mix needs --gamma")
    coarse = _control(ck.model, _pick(args.coarse, task, "coarse", None))
    fine = _control(ck.model, _pick(args.fine, task, "fine", None))
    if coarse is None or fine is None:
        raise CliError("task", "mix needs both a coarse and a fine control")
    z, choices = alternating_control(ck.model, cosine_schedule(ck.schedule_T), coarse, fine, float(gamma), N,
                                     np.random.default_rng(seed))
    log(event="choices", choices=choices)
    _write_outputs(args, sp.clip(z, _fps(ck, task, args)), sp.skeleton, log)


def cmd_eval(args, log: Logger) -> None:
    skel_p, pred = read_motion(args.pred)
    skel_g, gt = read_motion(args.gt)
    skel = skel_g or skel_p
    if args.skeleton:
        skel, _ = read_motion(args.skeleton)
    if skel is None:
        raise CliError("eval", "no skeleton available; pass --skeleton")
    try:
        report = evaluate(pred, gt, skel, normalize_l2p=not args.raw_l2p)
    except ValueError as e:
        raise CliError("eval", str(e)) from None
    sys.stdout.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    if args.csv:
        Path(args.csv).write_text(report.csv_row(header=True))


def cmd_convert(args, log: Logger) -> None:
    src, dst = Path(args.input), Path(args.output)
    if args.canonical:
        if src.suffix != ".bvh":
            raise CliError("usage", "--canonical re-serializes BVH input", EXIT_USAGE)
        try:
            doc = parse_bvh(src.read_text())
        except BvhSyntaxError as e:
            raise CliError("bvh", f"{src}: {e}") from None
        except FileNotFoundError:
            raise CliError("io", f"file not found: {src}") from None
        dst.write_text(serialize_bvh(doc))
        return
    skel, clip = read_motion(src)
    if args.fps is not None:
        clip = resample(clip, args.fps)
    write_motion(dst, clip, skel)


def cmd_schedule_dump(args, log: Logger) -> None:
    if args.T < 1:
        raise CliError("usage", "--T must be at least 1", EXIT_USAGE)
    text = cosine_schedule(args.T).to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="motiondiff", description="Motion diffusion toolkit")
    p.add_argument("--print-config", action="store_true", help="print the default configuration and exit")
    p.add_argument("--log", help="write JSON-lines log here instead of stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def outputs(sp):
        sp.add_argument("--out", help="output clip (.json container, or .bvh)")
        sp.add_argument("--bvh", help="additional BVH output")

    t = sub.add_parser("train", help="pretrain or fine-tune the denoiser")
    t.add_argument("--config")
    t.add_argument("--data", help="dataset directory, or 'synthetic'")
    t.add_argument("--init", help="checkpoint to fine-tune from")
    t.add_argument("--steps", type=int)
    t.add_argument("--epochs", type=int, help="alias: steps = epochs * ceil(clips / batch)")
    t.add_argument("--lr-max", dest="lr_max", type=float)
    t.add_argument("--lr-min", dest="lr_min", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--control-dropout", dest="control_dropout", type=float)
    t.add_argument("--loss-norm", dest="loss_norm", choices=["l1", "l2"])
    t.add_argument("--channel-weights", dest="channel_weights", help="JSON list of per-channel weights")
    t.add_argument("--fps", type=float)
    t.add_argument("--window-min", dest="window_min", type=int)
    t.add_argument("--window-max", dest="window_max", type=int)
    t.add_argument("--objective", choices=["denoise", "inbetween"])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("adapt", help="tune a skeleton adapter with the backbone frozen")
    a.add_argument("--config")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--steps", type=int)
    a.add_argument("--lr-max", dest="lr_max", type=float)
    a.add_argument("--lr-min", dest="lr_min", type=float)
    a.add_argument("--batch-size", dest="batch_size", type=int)
    a.add_argument("--fps", type=float)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_adapt)

    s = sub.add_parser("sample", help="unconditional or controlled generation")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--task")
    s.add_argument("--frames", type=int)
    s.add_argument("--control", help="text control")
    s.add_argument("--fps", type=float)
    s.add_argument("--seed", type=int)
    outputs(s)
    s.set_defaults(func=cmd_sample)

    ib = sub.add_parser("inbetween", help="fill the frames between keyframes")
    ib.add_argument("--checkpoint", required=True)
    ib.add_argument("--clip", required=True)
    ib.add_argument("--task")
    ib.add_argument("--keep", help='JSON list of known [start, stop) spans, e.g. "[[0,4],[20,24]]"')
    ib.add_argument("--method", choices=["delta", "inpaint"])
    ib.add_argument("--seed", type=int)
    outputs(ib)
    ib.set_defaults(func=cmd_inbetween)

    e = sub.add_parser("edit", help="re-synthesize a body part")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--clip", required=True)
    e.add_argument("--task")
    e.add_argument("--part", choices=["lower", "upper"])
    e.add_argument("--joints", help="JSON list of joint names or indices to regenerate")
    e.add_argument("--seed", type=int)
    outputs(e)
    e.set_defaults(func=cmd_edit)

    k = sub.add_parser("ik", help="inverse kinematics from joint position constraints")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--task")
    k.add_argument("--constraints", help='JSON list of {"frame", "joint", "target"}')
    k.add_argument("--frames", type=int)
    k.add_argument("--fps", type=float)
    k.add_argument("--seed", type=int)
    outputs(k)
    k.set_defaults(func=cmd_ik)

    mx = sub.add_parser("mix", help="alternate between a coarse and a fine control")
    mx.add_argument("--checkpoint", required=True)
    mx.add_argument("--task")
    mx.add_argument("--coarse", help="coarse text control")
    mx.add_argument("--fine", help="fine text control")
    mx.add_argument("--gamma", type=float)
    mx.add_argument("--frames", type=int)
    mx.add_argument("--fps", type=float)
    mx.add_argument("--seed", type=int)
    outputs(mx)
    mx.set_defaults(func=cmd_mix)

    ev = sub.add_parser("eval", help="metric report between two clips")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--skeleton", help="clip or BVH carrying the skeleton")
    ev.add_argument("--raw-l2p", dest="raw_l2p", action="store_true", help="skip z-normalization in L2P")
    ev.add_argument("--csv")
    ev.set_defaults(func=cmd_eval)

    c = sub.add_parser("convert", help="BVH <-> clip container")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--canonical", action="store_true", help="re-serialize BVH in canonical form")
    c.add_argument("--fps", type=float)
    c.set_defaults(func=cmd_convert)

    sd = sub.add_parser("schedule-dump", help="CSV of the diffusion schedule")
    sd.add_argument("--T", type=int, default=200)
    sd.add_argument("--out")
    sd.set_defaults(func=cmd_schedule_dump)
    return p


def _resolve_epochs(args) -> None:
    if getattr(args, "epochs", None) is not None:
        if args.steps is not None:
            raise CliError("usage", "give --steps or --epochs, not both", EXIT_USAGE)
        cfg = load_config(args.config)
        skel_clips = cfg["data"]["synthetic_clips"] if (args.data or cfg["data"]["source"]) == "synthetic" else None
        if skel_clips is None:
            src = Path(args.data or cfg["data"]["source"])
            skel_clips = len([p for p in src.glob("*") if p.suffix in (".bvh", ".json")
                              and not p.name.endswith(".control.json")])
        bs = args.batch_size or cfg["train"]["batch_size"]
        args.steps = args.epochs * max(1, -(-skel_clips // bs))


def main(argv: Optional[Sequence[str]] = None) -> int:
    log = None
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.print_config:
            sys.stdout.write(json.dumps(DEFAULT_CONFIG, indent=2, sort_keys=True) + "\n")
            return 0
        if args.command is None:
            raise CliError("usage", "missing subcommand", EXIT_USAGE)
        log = Logger(args.log)
        if args.command == "train":
            _resolve_epochs(args)
        args.func(args, log)
        return 0
    except CliError as e:
        sys.stderr.write(json.dumps({"error": e.kind, "message": str(e)}) + "\n")
        return e.code
    except (ValueError, IndexError, KeyError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return EXIT_FAILURE
    finally:
        if log is not None:
            log.close()


if __name__ == "__main__":
    sys.exit(main())

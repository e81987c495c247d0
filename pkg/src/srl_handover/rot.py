"""Region-of-Transfer (RoT) prediction with a conditional VAE.

The RoT is the midpoint of the two palms at the moment of transfer plus the
unit direction from the giver's palm to the receiver's. The model predicts
it from the last ``T+1`` frames of both participants, expressed in the hip
frame of the newest frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dataio import HandoverState, WindowSet, facing_transforms, segment_handovers, to_hip_frame, transfer_frame
from .dataio.synth import sub_seed
from .training import (
    MotionEncoder,
    Standardizer,
    check_finite,
    config_dict,
    config_from_dict,
    gaussian_kl,
    load_checkpoint,
    load_state,
    lr_schedule,
    mlp,
    save_checkpoint,
    set_lr,
)

PALM_JOINTS = ("r_hand", "RightHand")


class DegenerateRoTError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RegionOfTransfer:
    position: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if not n > 0:
            raise DegenerateRoTError("RoT direction has zero length")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "direction", d / n)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.direction])


def rot_ground_truth(primary_palm, robot_palm, kind=HandoverState.HANDING_OVER) -> RegionOfTransfer:
    """RoT from the two palms. The robot gives during HandingOver, the user during TakingBack."""
    a = np.asarray(primary_palm, dtype=float)
    b = np.asarray(robot_palm, dtype=float)
    if np.linalg.norm(a - b) <= 1e-6:
        raise DegenerateRoTError("palms coincide; the transfer direction is undefined")
    if HandoverState(kind) == HandoverState.HANDING_OVER:
        giver, receiver = b, a
    elif HandoverState(kind) == HandoverState.TAKING_BACK:
        giver, receiver = a, b
    else:
        raise ValueError("an Idle segment has no transfer")
    return RegionOfTransfer(0.5 * (a + b), receiver - giver)


def rot_loss(pred, gt):
    """Half the summed squared errors of position and direction.

    Accepts ``(..., 6)`` arrays or tensors; batched inputs are averaged.
    """
    if isinstance(pred, RegionOfTransfer):
        pred = pred.as_vector()
    if isinstance(gt, RegionOfTransfer):
        gt = gt.as_vector()
    if isinstance(pred, torch.Tensor):
        per = 0.5 * (torch.sum((pred[..., :3] - gt[..., :3]) ** 2, -1) + torch.sum((pred[..., 3:] - gt[..., 3:]) ** 2, -1))
        return per.mean()
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if pred.shape[-1] != 6 or gt.shape[-1] != 6:
        raise ValueError("RoT vectors have 6 entries")
    per = 0.5 * (np.sum((pred[..., :3] - gt[..., :3]) ** 2, -1) + np.sum((pred[..., 3:] - gt[..., 3:]) ** 2, -1))
    return float(np.mean(per))


def spherical_angles(d: np.ndarray) -> np.ndarray:
    """``(yaw, pitch)`` of direction vectors: yaw about +y from +z, pitch toward +y."""
    d = np.asarray(d, dtype=float)
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(n <= 1e-12):
        raise ValueError("zero-length direction")
    d = d / n
    return np.stack([np.arctan2(d[..., 0], d[..., 2]), np.arcsin(np.clip(d[..., 1], -1.0, 1.0))], axis=-1)


def meae(pred_dir, gt_dir) -> float:
    """Mean absolute yaw/pitch difference in radians (yaw wrapped to [-pi, pi])."""
    a, b = spherical_angles(pred_dir), spherical_angles(gt_dir)
    diff = a - b
    diff[..., 0] = (diff[..., 0] + np.pi) % (2 * np.pi) - np.pi
    return float(np.mean(np.abs(diff)))


def palm_joint(skeleton) -> int:
    for name in PALM_JOINTS:
        if name in skeleton.names:
            return skeleton.index(name)
    raise LookupError(f"skeleton has none of the palm joints {PALM_JOINTS}")


def segment_rots(clip, joint: int | None = None) -> list[tuple[int, int, HandoverState, RegionOfTransfer]]:
    """World-frame RoT of every handover segment, taken at its transfer frame."""
    j = palm_joint(clip.skeleton) if joint is None else joint
    out = []
    for start, end, kind in segment_handovers(clip):
        f = transfer_frame(clip, start, end)
        out.append((start, end, kind, rot_ground_truth(clip.positions[f, j], clip.ee_positions[f], kind)))
    return out


class RotWindows:
    """Past-only windows inside handover segments with their hip-frame RoT labels."""

    def __init__(self, clips, T: int = 25):
        clips = list(clips)
        labels_per_clip = []
        for clip in clips:
            heading, hip = facing_transforms(clip)
            lab = np.full((len(clip), 6), np.nan)
            for start, end, _, rot in segment_rots(clip):
                sl = slice(start, end + 1)
                lab[sl, :3] = to_hip_frame(np.broadcast_to(rot.position, (end + 1 - start, 3)), heading[sl], hip[sl])
                lab[sl, 3:] = np.einsum("nji,j->ni", heading[sl], rot.direction)
            labels_per_clip.append(lab)
        self.ws = WindowSet(
            clips, T=T, future=False,
            center_filter=lambda clip, c: np.asarray(clip.states)[c] != HandoverState.IDLE,
        )
        self.labels = np.concatenate(labels_per_clip)[self.ws.centers]
        self.activities = np.array([self.ws.clips[i].activity for i in self.ws.clip_ids])

    def __len__(self) -> int:
        return len(self.ws)

    def batch(self, idx):
        b = self.ws.batch(idx, future=False)
        b["label"] = self.labels[np.asarray(idx)]
        return b


@dataclass
class RotConfig:
    latent_dim: int = 32
    hidden_dim: int = 256
    embed_dim: int = 64
    attention_heads: int = 4
    T: int = 25
    epochs: int = 250
    lr_start: float = 1e-4
    lr_end: float = 1e-7
    lr_decay_start_epoch: int = 50
    beta: float = 1e-3
    batch_size: int = 64
    context_stride: int = 5
    seed: int = 0

    def validate(self) -> "RotConfig":
        for name in ("latent_dim", "hidden_dim", "embed_dim", "attention_heads", "T", "batch_size",
                     "context_stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0 or self.lr_decay_start_epoch < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        return self


class RotModel(nn.Module):
    def __init__(self, cfg: RotConfig, h_dim: int):
        super().__init__()
        self.cfg = cfg.validate()
        self.h_dim = h_dim
        T = cfg.T
        torch.manual_seed(sub_seed(cfg.seed, "rot", "init"))
        self.h_norm = Standardizer(h_dim)
        self.r_norm = Standardizer(9)
        self.y_norm = Standardizer(3)
        self.register_buffer("ctx_index", torch.arange(T, -1, -cfg.context_stride))
        self.encoder = MotionEncoder(h_dim + 9, T + 1, cfg.embed_dim, cfg.attention_heads, cfg.hidden_dim,
                                     cfg.latent_dim)
        ctx_dim = len(self.ctx_index) * (h_dim + 9)
        self.decoder = mlp([cfg.latent_dim + ctx_dim, cfg.hidden_dim, cfg.hidden_dim, 6])

    def fit_normalization(self, data: RotWindows) -> None:
        self.h_norm.fit(data.ws.h)
        self.r_norm.fit(data.ws.r)
        self.y_norm.fit(data.labels[:, :3])

    def encode(self, h, r):
        return self.encoder(torch.cat([self.h_norm(h), self.r_norm(r)], dim=-1))

    def decode(self, z, h, r):
        idx = self.ctx_index
        ctx = torch.cat([self.h_norm(h[:, idx]).flatten(1), self.r_norm(r[:, idx]).flatten(1)], dim=-1)
        out = self.decoder(torch.cat([z, ctx], dim=-1))
        pos = out[:, :3] * self.y_norm.std + self.y_norm.mean
        return torch.cat([pos, out[:, 3:]], dim=-1)

    def forward(self, h, r, sample: bool = False, generator=None):
        mu, log_var, _ = self.encode(h, r)
        z = mu
        if sample:
            z = mu + (0.5 * log_var).exp() * torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        return self.decode(z, h, r), mu, log_var


def _tensor(model, x):
    dtype = next(model.parameters()).dtype
    return x.to(dtype) if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=dtype)


def predict_rot_batch(model: RotModel, h_past, r_past) -> np.ndarray:
    """Raw predictions ``(B, 6)`` with unit-normalized directions (mean-latent mode)."""
    n = model.cfg.T + 1
    h, r = _tensor(model, h_past), _tensor(model, r_past)
    if h.dim() == 2:
        h, r = h[None], r[None]
    if h.shape[1:] != (n, model.h_dim) or r.shape[1:] != (n, 9) or len(h) != len(r):
        raise ValueError(f"expected windows of {n} frames ({model.h_dim} and 9 features)")
    with torch.no_grad():
        out = model(h, r)[0].double().numpy()
    d = out[:, 3:]
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    out[:, 3:] = np.where(norm > 1e-12, d / np.maximum(norm, 1e-12), np.array([0.0, 0.0, 1.0]))
    return out


def predict_rot(model: RotModel, h_past, r_past) -> RegionOfTransfer:
    out = predict_rot_batch(model, h_past, r_past)[0]
    return RegionOfTransfer(out[:3], out[3:])


def train_rot(corpus, cfg: RotConfig | None = None, epochs: int | None = None, progress=None):
    """Train the RoT CVAE. Returns ``(model, log)``; the log has one row per epoch."""
    cfg = (cfg or RotConfig()).validate()
    epochs = cfg.epochs if epochs is None else epochs
    data = corpus if isinstance(corpus, RotWindows) else RotWindows(corpus, cfg.T)
    if len(data) == 0:
        raise ValueError("no handover windows to train on")
    model = RotModel(cfg, data.ws.h_dim)
    model.fit_normalization(data)
    dtype = next(model.parameters()).dtype
    h_all = torch.as_tensor(data.ws.h, dtype=dtype)
    r_all = torch.as_tensor(data.ws.r, dtype=dtype)
    labels = torch.as_tensor(data.labels, dtype=dtype)
    centers = torch.as_tensor(data.ws.centers)
    offsets = torch.arange(-cfg.T, 1)
    rng = np.random.default_rng(sub_seed(cfg.seed, "rot", "order"))
    gen = torch.Generator().manual_seed(sub_seed(cfg.seed, "rot", "noise"))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_start)
    model.train()
    log = []
    for epoch in range(epochs):
        lr = lr_schedule(epoch, cfg, epochs)
        set_lr(opt, lr)
        order = torch.as_tensor(rng.permutation(len(data)))
        tot_rec = tot_kl = 0.0
        for bi in range(0, len(order), cfg.batch_size):
            idx = order[bi: bi + cfg.batch_size]
            frames = centers[idx][:, None] + offsets
            pred, mu, log_var = model(h_all[frames], r_all[frames], sample=True, generator=gen)
            rec = rot_loss(pred, labels[idx])
            kl = gaussian_kl(mu, log_var).mean()
            loss = rec + cfg.beta * kl
            check_finite(loss, epoch, bi // cfg.batch_size)
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot_rec += float(rec.detach()) * len(idx)
            tot_kl += float(kl.detach()) * len(idx)
        row = {"epoch": epoch, "lr": lr, "p": 0.0, "recon": tot_rec / len(data), "kl": tot_kl / len(data)}
        log.append(row)
        if progress:
            progress("rot", row)
    model.eval()
    return model, log


def evaluate(model: RotModel, clips) -> list[dict]:
    """Per-activity position MAE (cm) and direction MEAE (rad), over every window in a segment."""
    data = RotWindows(clips, model.cfg.T)
    preds = []
    for bi in range(0, len(data), 512):
        b = data.batch(np.arange(bi, min(bi + 512, len(data))))
        preds.append(predict_rot_batch(model, b["h_seen"], b["r_seen"]))
    pred = np.concatenate(preds) if preds else np.zeros((0, 6))
    pos_err = np.mean(np.abs(pred[:, :3] - data.labels[:, :3]), axis=1) if len(pred) else np.zeros(0)
    ang_err = np.zeros(len(pred))
    for i in range(len(pred)):
        ang_err[i] = meae(pred[i, 3:], data.labels[i, 3:])
    rows = []
    for name in sorted(set(data.activities.tolist())) + ["Overall"]:
        sel = np.ones(len(pred), bool) if name == "Overall" else data.activities == name
        rows.append({
            "activity": name,
            "MAE_cm": 100 * float(np.mean(pos_err[sel])) if sel.any() else float("nan"),
            "MAE_std": 100 * float(np.std(pos_err[sel])) if sel.any() else float("nan"),
            "MEAE_rad": float(np.mean(ang_err[sel])) if sel.any() else float("nan"),
            "MEAE_std": float(np.std(ang_err[sel])) if sel.any() else float("nan"),
            "n_windows": int(sel.sum()),
        })
    return rows


def save_rot(model: RotModel, path, log=()) -> None:
    save_checkpoint(path, "rot", config_dict(model.cfg), model, list(log), {"h_dim": model.h_dim})


def load_rot(path) -> tuple[RotModel, list[dict]]:
    header, tensors, log = load_checkpoint(path)
    if header["kind"] != "rot":
        raise ValueError(f"{path} holds a {header['kind']!r} checkpoint, not 'rot'")
    model = RotModel(config_from_dict(RotConfig, header["config"]), int(header["meta"]["h_dim"]))
    load_state(model, tensors)
    model.eval()
    return model, log

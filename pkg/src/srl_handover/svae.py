"""Autoregressive end-effector trajectory generator (SVAE).

A full-window encoder sees past and future motion, a latent controller sees
only the past plus the handover state, and a mixture-of-experts decoder
turns a latent sample and the seen motion into the next robot EE position.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataio import HandoverState, MotionClip, WindowSet, segment_handovers
from .dataio.synth import sub_seed
from .training import (
    MotionEncoder,
    Standardizer,
    check_finite,
    config_dict,
    config_from_dict,
    gaussian_kl,
    kl_between,
    load_checkpoint,
    load_state,
    lr_schedule,
    mlp,
    reparameterize,
    save_checkpoint,
    sched_sampling_p,
    set_lr,
)

logger = logging.getLogger(__name__)

N_STATES = len(HandoverState)
REL_SCALE = 0.1  # metres; scale of EE history relative to the latest EE position


@dataclass
class SvaeConfig:
    latent_dim: int = 32
    hidden_dim: int = 256
    num_experts: int = 6
    T: int = 25
    beta: float = 0.1
    attention_heads: int = 4
    stage1_epochs: int = 140
    stage2_epochs: int = 100
    stage2_switch_epoch: int = 50
    lr_start: float = 1e-4
    lr_end: float = 1e-7
    lr_decay_start_epoch: int = 50
    rollout_len: int = 10
    sched_sampling_ramp_epochs: int = 50
    recon_only_epochs: int = 10
    seed: int = 0
    embed_dim: int = 64
    gate_hidden: int = 64
    context_stride: int = 5
    batch_size: int = 64
    segment_margin: int | None = 10  # None trains on every window

    def validate(self) -> "SvaeConfig":
        positive = ("latent_dim", "hidden_dim", "num_experts", "T", "attention_heads", "rollout_len",
                    "embed_dim", "gate_hidden", "context_stride", "batch_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("stage1_epochs", "stage2_epochs", "stage2_switch_epoch", "lr_decay_start_epoch",
                     "sched_sampling_ramp_epochs", "recon_only_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not (self.lr_start > 0 and self.lr_end > 0):
            raise ValueError("learning rates must be positive")
        if self.embed_dim % self.attention_heads:
            raise ValueError("embed_dim must be divisible by attention_heads")
        return self


@dataclass
class LatentDistribution:
    mu: torch.Tensor
    log_var: torch.Tensor
    attention: torch.Tensor | None = field(default=None, repr=False)

    def sample(self, eps=None, generator=None) -> torch.Tensor:
        return reparameterize(self.mu, self.log_var, eps, generator)


class SvaeModel(nn.Module):
    def __init__(self, cfg: SvaeConfig, h_dim: int):
        super().__init__()
        self.cfg = cfg.validate()
        self.h_dim = h_dim
        T, K, H = cfg.T, cfg.num_experts, cfg.hidden_dim
        torch.manual_seed(sub_seed(cfg.seed, "svae", "init"))
        self.h_norm = Standardizer(h_dim)
        self.r_norm = Standardizer(9)
        self.register_buffer("delta_scale", torch.tensor(0.01))
        self.register_buffer("ctx_index", torch.arange(T, -1, -cfg.context_stride))
        self.encoder = MotionEncoder(h_dim + 9, 2 * T + 1, cfg.embed_dim, cfg.attention_heads, H,
                                     cfg.latent_dim)
        self.lc = MotionEncoder(h_dim + 9, T + 1, cfg.embed_dim, cfg.attention_heads, H,
                                cfg.latent_dim, cond_dim=N_STATES)
        ctx_dim = cfg.latent_dim + len(self.ctx_index) * h_dim + 3 * (T + 1) + 9
        self.gate = mlp([ctx_dim, cfg.gate_hidden, K])
        # experts as stacked weights so all K run in one batched product
        self.w1, self.b1 = self._expert_layer(K, ctx_dim, H)
        self.w2, self.b2 = self._expert_layer(K, H, H)
        self.w3, self.b3 = self._expert_layer(K, H, 3)

    @staticmethod
    def _expert_layer(k, fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        w = nn.Parameter(torch.empty(k, fan_in, fan_out).uniform_(-bound, bound))
        b = nn.Parameter(torch.empty(k, fan_out).uniform_(-bound, bound))
        return w, b

    @property
    def T(self) -> int:
        return self.cfg.T

    def fit_normalization(self, windows: WindowSet) -> None:
        self.h_norm.fit(windows.h)
        self.r_norm.fit(windows.r)
        step = np.diff(windows.r[:, :3], axis=0)
        step = step[np.all(np.abs(step) < 0.2, axis=1)]  # drop clip seams
        self.delta_scale.fill_(float(max(step.std(), 1e-3)))

    def _frames(self, h, r):
        return torch.cat([self.h_norm(h), self.r_norm(r)], dim=-1)

    def encode_full(self, h_full, r_full) -> LatentDistribution:
        mu, log_var, attn = self.encoder(self._frames(h_full, r_full))
        return LatentDistribution(mu, log_var, attn)

    def encode_lc(self, h_seen, r_seen, state) -> LatentDistribution:
        cond = F.one_hot(state.long(), N_STATES).to(h_seen.dtype)
        mu, log_var, attn = self.lc(self._frames(h_seen, r_seen), cond)
        return LatentDistribution(mu, log_var, attn)

    def context(self, z, h_seen, r_seen):
        h_ctx = self.h_norm(h_seen[:, self.ctx_index]).flatten(1)
        pos = r_seen[..., :3]
        rel = ((pos - pos[:, -1:]) / REL_SCALE).flatten(1)
        return torch.cat([z, h_ctx, rel, self.r_norm(r_seen[:, -1])], dim=-1)

    def expert_outputs(self, ctx, last_pos):
        x = F.elu(torch.einsum("bi,kih->bkh", ctx, self.w1) + self.b1)
        x = F.elu(torch.einsum("bki,kih->bkh", x, self.w2) + self.b2)
        x = torch.einsum("bki,kih->bkh", x, self.w3) + self.b3
        return last_pos[:, None, :] + self.delta_scale * x

    def decode(self, z, h_seen, r_seen, gate_override=None, return_parts: bool = False):
        ctx = self.context(z, h_seen, r_seen)
        gates = torch.softmax(self.gate(ctx), dim=-1) if gate_override is None else gate_override
        experts = self.expert_outputs(ctx, r_seen[:, -1, :3])
        out = torch.sum(gates[..., None] * experts, dim=1)
        if return_parts:
            return out, gates, experts
        return out


# --------------------------------------------------------------------------
# functional API


def _prep(model: SvaeModel, x, frames: int, width: int, what: str):
    dtype = next(model.parameters()).dtype
    t = x.to(dtype) if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=dtype)
    single = t.dim() == 2
    if single:
        t = t[None]
    if t.dim() != 3 or t.shape[1:] != (frames, width):
        raise ValueError(f"{what} must have shape (..., {frames}, {width}), got {tuple(t.shape)}")
    return t, single


def _states(state, batch: int) -> torch.Tensor:
    s = torch.as_tensor(np.asarray(state, dtype=np.int64)).reshape(-1)
    if len(s) == 1 and batch > 1:
        s = s.expand(batch)
    if len(s) != batch or s.min() < 0 or s.max() >= N_STATES:
        raise ValueError(f"state must be {batch} handover state value(s) in 0..{N_STATES - 1}")
    return s


def encode_full(model: SvaeModel, h_full, r_full) -> LatentDistribution:
    n = 2 * model.T + 1
    h, _ = _prep(model, h_full, n, model.h_dim, "h_full")
    r, _ = _prep(model, r_full, n, 9, "r_full")
    return model.encode_full(h, r)


def encode_lc(model: SvaeModel, h_seen, r_seen, state) -> LatentDistribution:
    n = model.T + 1
    h, _ = _prep(model, h_seen, n, model.h_dim, "h_seen")
    r, _ = _prep(model, r_seen, n, 9, "r_seen")
    return model.encode_lc(h, r, _states(state, len(h)))


def decode(model: SvaeModel, z, h_seen, r_seen, gate_override=None, return_parts: bool = False):
    n = model.T + 1
    h, single = _prep(model, h_seen, n, model.h_dim, "h_seen")
    r, _ = _prep(model, r_seen, n, 9, "r_seen")
    z = torch.as_tensor(z, dtype=h.dtype).reshape(len(h), -1)
    if z.shape[1] != model.cfg.latent_dim:
        raise ValueError(f"z must have {model.cfg.latent_dim} dims")
    res = model.decode(z, h, r, gate_override, return_parts)
    if single and not return_parts:
        return res[0]
    return res


def _as_batch(model: SvaeModel, window) -> dict[str, torch.Tensor]:
    """Accept a MotionWindow or a ``WindowSet.batch`` dict; return tensors."""
    if hasattr(window, "h_seen") and not isinstance(window, dict):
        window = {
            "h_full": window.h_full[None], "r_full": window.r_full[None],
            "h_seen": window.h_seen[None], "r_seen": window.r_seen[None],
            "state": np.array([int(window.state)]), "target": window.target_next_ee[None],
        }
    dtype = next(model.parameters()).dtype
    out = {}
    for k, v in window.items():
        if k == "state":
            out[k] = torch.as_tensor(np.asarray(v, dtype=np.int64)) if not isinstance(v, torch.Tensor) else v
        else:
            out[k] = v.to(dtype) if isinstance(v, torch.Tensor) else torch.as_tensor(np.asarray(v), dtype=dtype)
    return out


def elbo_loss(model: SvaeModel, window, beta: float, stage: int = 1, eps=None, generator=None):
    """``(loss, recon, kl)`` for a window or batch of windows.

    Stage 1 samples z from the full-window encoder and regularizes it toward
    N(0, I); stage 2 samples from the latent controller and uses
    KL(full-window posterior || latent controller). ``recon`` is the squared
    l2 error of the next EE position, averaged over the batch.
    """
    b = _as_batch(model, window)
    full = model.encode_full(b["h_full"], b["r_full"])
    if stage == 1:
        post = full
        kl = gaussian_kl(full.mu, full.log_var)
    elif stage == 2:
        post = model.encode_lc(b["h_seen"], b["r_seen"], b["state"])
        kl = kl_between(full.mu.detach(), full.log_var.detach(), post.mu, post.log_var)
    else:
        raise ValueError("stage must be 1 or 2")
    z = post.sample(eps, generator)
    pred = model.decode(z, b["h_seen"], b["r_seen"])
    if pred.shape != b["target"].shape:
        raise ValueError(f"target shape {tuple(b['target'].shape)} does not match prediction")
    recon = torch.sum((pred - b["target"]) ** 2, dim=-1).mean()
    kl = kl.mean()
    return recon + beta * kl, recon, kl


# --------------------------------------------------------------------------
# training


def segment_filter(margin: int):
    """Center filter keeping windows within ``margin`` frames of a handover segment."""

    def keep(clip: MotionClip, centers: np.ndarray) -> np.ndarray:
        mask = np.zeros(len(centers), dtype=bool)
        for start, end, _ in segment_handovers(clip):
            mask |= (centers >= start - margin) & (centers <= end + margin)
        return mask

    return keep


def training_windows(corpus, cfg: SvaeConfig) -> WindowSet:
    filt = None if cfg.segment_margin is None else segment_filter(cfg.segment_margin)
    return WindowSet(list(corpus), T=cfg.T, center_filter=filt)


class _Data:
    """Torch views of a window set for fast gathering."""

    def __init__(self, ws: WindowSet, dtype):
        self.ws = ws
        self.T = ws.T
        self.h = torch.as_tensor(ws.h, dtype=dtype)
        self.r = torch.as_tensor(ws.r, dtype=dtype)
        self.states = torch.as_tensor(ws.states)
        lengths = np.diff(np.append(ws.clip_starts, len(ws.h)))
        self.last_center = lengths[ws.clip_ids] - ws.T - 2  # per window, local index

    def frames(self, centers, start, stop, which="h"):
        src = self.h if which == "h" else self.r
        idx = centers[:, None] + torch.arange(start, stop)[None, :]
        return src[idx]

    def chain_starts(self, length: int, offset: int) -> np.ndarray:
        """Window indices starting non-overlapping chains of ``length`` valid centers."""
        ok = self.ws.local_centers + length - 1 <= self.last_center
        ok &= (self.ws.local_centers - offset) % length == 0
        return np.flatnonzero(ok)


def _chain_epoch(model, data: _Data, optimizer, cfg, epoch, p, stage, use_kl, rng, gen, log_kl_only=False):
    """One pass of scheduled-sampling chains; returns mean recon and kl."""
    T, l = cfg.T, cfg.rollout_len
    starts = data.chain_starts(l, int(rng.integers(l)))
    order = rng.permutation(starts)
    recon_sum = kl_sum = 0.0
    count = 0
    for bi in range(0, len(order), cfg.batch_size):
        c0 = torch.as_tensor(data.ws.centers[order[bi: bi + cfg.batch_size]])
        r_run = data.frames(c0, -T, 1, "r")
        for k in range(l):
            c = c0 + k
            h_full = data.frames(c, -T, T + 1, "h")
            r_full = data.frames(c, -T, T + 1, "r")
            batch = {"h_full": h_full, "r_full": r_full, "h_seen": h_full[:, : T + 1], "r_seen": r_run,
                     "state": data.states[c], "target": data.r[c + 1, :3]}
            optimizer.zero_grad()
            full = model.encode_full(h_full, r_full)
            if stage == 1:
                post, kl = full, gaussian_kl(full.mu, full.log_var)
            else:
                post = model.encode_lc(batch["h_seen"], r_run, batch["state"])
                kl = kl_between(full.mu.detach(), full.log_var.detach(), post.mu, post.log_var)
            z = post.sample(generator=gen)
            pred = model.decode(z, batch["h_seen"], r_run)
            recon = torch.sum((pred - batch["target"]) ** 2, dim=-1).mean()
            kl = kl.mean()
            loss = recon + cfg.beta * kl if use_kl else recon
            check_finite(loss, epoch, bi // cfg.batch_size)
            loss.backward()
            optimizer.step()
            recon_sum += float(recon.detach()) * len(c)
            kl_sum += float(kl.detach()) * len(c)
            count += len(c)
            # next seen robot frame: own prediction (rotation held) with probability p
            gt_next = data.r[c + 1]
            own = torch.cat([pred.detach(), r_run[:, -1, 3:]], dim=-1)
            use_own = (torch.rand(len(c), generator=gen) < p)[:, None]
            r_run = torch.cat([r_run[:, 1:], torch.where(use_own, own, gt_next)[:, None]], dim=1)
    return recon_sum / max(count, 1), kl_sum / max(count, 1)


def train_stage1(corpus, cfg: SvaeConfig | None = None, model: SvaeModel | None = None,
                 epochs: int | None = None, progress=None):
    """Train encoder + decoder with scheduled sampling. Returns ``(model, log)``."""
    cfg = (cfg or SvaeConfig()).validate()
    epochs = cfg.stage1_epochs if epochs is None else epochs
    ws = corpus if isinstance(corpus, WindowSet) else training_windows(corpus, cfg)
    if model is None:
        model = SvaeModel(cfg, ws.h_dim)
        model.fit_normalization(ws)
    data = _Data(ws, next(model.parameters()).dtype)
    rng = np.random.default_rng(sub_seed(cfg.seed, "svae", "stage1", "order"))
    gen = torch.Generator().manual_seed(sub_seed(cfg.seed, "svae", "stage1", "noise"))
    params = [p for n, p in model.named_parameters() if not n.startswith("lc.")]
    opt = torch.optim.Adam(params, lr=cfg.lr_start)
    model.train()
    log = []
    for epoch in range(epochs):
        lr = lr_schedule(epoch, cfg, epochs)
        set_lr(opt, lr)
        p = sched_sampling_p(epoch, cfg.sched_sampling_ramp_epochs)
        use_kl = epoch >= cfg.recon_only_epochs
        recon, kl = _chain_epoch(model, data, opt, cfg, epoch, p, 1, use_kl, rng, gen)
        row = {"epoch": epoch, "lr": lr, "p": p, "recon": recon, "kl": kl, "kl_in_loss": int(use_kl)}
        log.append(row)
        if progress:
            progress("svae-stage1", row)
    model.eval()
    return model, log


def train_stage2(model: SvaeModel, corpus, cfg: SvaeConfig | None = None, epochs: int | None = None,
                 progress=None):
    """Align the latent controller with the frozen full-window encoder.

    Epochs before ``stage2_switch_epoch`` minimize KL(full || LC) alone;
    later epochs add the reconstruction of autoregressive chains.
    """
    cfg = (cfg or model.cfg).validate()
    epochs = cfg.stage2_epochs if epochs is None else epochs
    ws = corpus if isinstance(corpus, WindowSet) else training_windows(corpus, cfg)
    data = _Data(ws, next(model.parameters()).dtype)
    rng = np.random.default_rng(sub_seed(cfg.seed, "svae", "stage2", "order"))
    gen = torch.Generator().manual_seed(sub_seed(cfg.seed, "svae", "stage2", "noise"))
    for p in model.encoder.parameters():
        p.requires_grad_(False)
    params = [p for n, p in model.named_parameters() if not n.startswith("encoder.")]
    opt = torch.optim.Adam(params, lr=cfg.lr_start)
    model.train()
    T = cfg.T
    log = []
    for epoch in range(epochs):
        lr = lr_schedule(epoch, cfg, epochs)
        set_lr(opt, lr)
        if epoch < cfg.stage2_switch_epoch:
            kl_sum, count = 0.0, 0
            order = rng.permutation(len(ws))
            for bi in range(0, len(order), cfg.batch_size):
                c = torch.as_tensor(ws.centers[order[bi: bi + cfg.batch_size]])
                h_full = data.frames(c, -T, T + 1, "h")
                r_full = data.frames(c, -T, T + 1, "r")
                opt.zero_grad()
                with torch.no_grad():
                    full = model.encode_full(h_full, r_full)
                lc = model.encode_lc(h_full[:, : T + 1], r_full[:, : T + 1], data.states[c])
                kl = kl_between(full.mu, full.log_var, lc.mu, lc.log_var).mean()
                check_finite(kl, epoch, bi // cfg.batch_size)
                kl.backward()
                opt.step()
                kl_sum += float(kl.detach()) * len(c)
                count += len(c)
            row = {"epoch": epoch, "lr": lr, "p": 0.0, "recon": float("nan"), "kl": kl_sum / max(count, 1),
                   "kl_in_loss": 1, "phase": "kl"}
        else:
            # the sampling curriculum continues from where stage 1 ended
            p = sched_sampling_p(cfg.stage1_epochs + epoch, cfg.sched_sampling_ramp_epochs)
            recon, kl = _chain_epoch(model, data, opt, cfg, epoch, p, 2, True, rng, gen)
            row = {"epoch": epoch, "lr": lr, "p": p, "recon": recon, "kl": kl, "kl_in_loss": 1,
                   "phase": "kl+recon"}
        log.append(row)
        if progress:
            progress("svae-stage2", row)
    model.eval()
    return model, log


def mean_lc_kl(model: SvaeModel, windows: WindowSet, max_windows: int = 2048) -> float:
    """Mean KL(full-window posterior || latent controller) over a window set."""
    idx = np.arange(min(len(windows), max_windows))
    b = _as_batch(model, windows.batch(idx))
    with torch.no_grad():
        full = model.encode_full(b["h_full"], b["r_full"])
        lc = model.encode_lc(b["h_seen"], b["r_seen"], b["state"])
        return float(kl_between(full.mu, full.log_var, lc.mu, lc.log_var).mean())


# --------------------------------------------------------------------------
# inference


def generate_next(model: SvaeModel, h_seen, r_seen, state, deterministic: bool = True, generator=None):
    """Next EE position(s). Deterministic mode decodes the latent-controller mean."""
    n = model.T + 1
    h, single = _prep(model, h_seen, n, model.h_dim, "h_seen")
    r, _ = _prep(model, r_seen, n, 9, "r_seen")
    with torch.no_grad():
        lat = model.encode_lc(h, r, _states(state, len(h)))
        z = lat.mu if deterministic else lat.sample(generator=generator)
        out = model.decode(z, h, r).numpy().astype(np.float64)
    return out[0] if single else out


def rollout(model: SvaeModel, h_stream, r_init_window, steps: int, state_stream,
            deterministic: bool = True, generator=None, hook=None) -> np.ndarray:
    """Generate ``steps`` EE positions autoregressively.

    Step ``k`` sees primary frames ``h_stream[k : k+T+1]`` and the robot
    window of the last ``T+1`` frames, whose newest entries are the model's own
    outputs. The EE rotation is held at its last observed value.
    ``hook(k, r_window)`` is called with the robot window used at each step.
    """
    T = model.T
    h_stream = np.asarray(h_stream, dtype=np.float64)
    r_win = np.array(r_init_window, dtype=np.float64)
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if r_win.shape != (T + 1, 9):
        raise ValueError(f"r_init_window must have shape ({T + 1}, 9)")
    if steps == 0:
        return np.zeros((0, 3))
    if len(h_stream) < steps + T:
        raise ValueError(f"primary stream has {len(h_stream)} frames; {steps} steps need {steps + T}")
    states = np.asarray(state_stream, dtype=np.int64).reshape(-1)
    if len(states) == 1:
        states = np.repeat(states, steps)
    if len(states) < steps:
        raise ValueError(f"state stream has {len(states)} entries; need {steps}")
    held_rot = r_win[-1, 3:].copy()
    out = np.zeros((steps, 3))
    for k in range(steps):
        if hook is not None:
            hook(k, r_win.copy())
        out[k] = generate_next(model, h_stream[k: k + T + 1], r_win, states[k], deterministic, generator)
        r_win = np.vstack([r_win[1:], np.concatenate([out[k], held_rot])])
    return out


def mae(generated, ground_truth) -> float:
    """Per-trajectory mean of per-frame mean absolute coordinate error, averaged over trajectories."""
    if isinstance(generated, np.ndarray) and generated.ndim == 2:
        generated, ground_truth = [generated], [ground_truth]
    if len(generated) != len(ground_truth):
        raise ValueError(f"{len(generated)} generated vs {len(ground_truth)} ground-truth trajectories")
    if not generated:
        raise ValueError("no trajectories")
    per = []
    for g, t in zip(generated, ground_truth):
        g, t = np.asarray(g, dtype=float), np.asarray(t, dtype=float)
        if g.shape != t.shape:
            raise ValueError(f"trajectory length mismatch: {g.shape} vs {t.shape}")
        per.append(np.mean(np.abs(g - t)) if len(g) else 0.0)
    return float(np.mean(per))


def segment_rollouts(model: SvaeModel, clips, deterministic: bool = True):
    """Autoregressive rollouts over every handover segment with ground-truth states.

    Yields ``(clip, (start, end, kind), generated, truth)``; the rollout starts
    from the ground-truth robot window ending at ``start`` and predicts frames
    ``start+1 .. end+1``.
    """
    T = model.T
    ws = WindowSet(list(clips), T=T, center_filter=lambda clip, c: np.zeros(len(c), bool))
    for ci, clip in enumerate(ws.clips):
        base = ws.clip_starts[ci]
        h = ws.h[base: base + len(clip)]
        r = ws.r[base: base + len(clip)]
        for start, end, kind in segment_handovers(clip):
            if start < T:
                continue
            steps = min(end, len(clip) - 2) - start + 1
            gen = rollout(model, h[start - T: start + steps], r[start - T: start + 1], steps,
                          clip.states[start: start + steps], deterministic)
            yield clip, (start, end, kind), gen, r[start + 1: start + 1 + steps, :3]


def evaluate(model: SvaeModel, clips, deterministic: bool = True) -> list[dict]:
    """Per-activity MAE in cm, next-step (ground-truth inputs) and autoregressive."""
    T = model.T
    ws = WindowSet(list(clips), T=T, center_filter=segment_filter(0))
    per_window, activities = [], []
    for bi in range(0, len(ws), 512):
        idx = np.arange(bi, min(bi + 512, len(ws)))
        b = ws.batch(idx, future=False)
        pred = generate_next(model, b["h_seen"], b["r_seen"], b["state"], deterministic)
        per_window.append(np.mean(np.abs(pred - b["target"]), axis=1))
        activities += [ws.clips[ws.clip_ids[i]].activity for i in idx]
    per_window = np.concatenate(per_window) if per_window else np.zeros(0)
    activities = np.array(activities)
    ar = {}
    for clip, _, gen, truth in segment_rollouts(model, clips, deterministic):
        ar.setdefault(clip.activity, []).append(mae(gen, truth))
    rows = []
    names = sorted(set(activities.tolist()) | set(ar))
    for name in names + ["Overall"]:
        sel = per_window if name == "Overall" else per_window[activities == name]
        ar_vals = np.concatenate([v for v in ar.values()]) if name == "Overall" and ar else np.asarray(ar.get(name, []))
        rows.append({
            "activity": name,
            "mae_cm": 100 * float(np.mean(sel)) if len(sel) else float("nan"),
            "mae_std_cm": 100 * float(np.std(sel)) if len(sel) else float("nan"),
            "ar_mae_cm": 100 * float(np.mean(ar_vals)) if len(ar_vals) else float("nan"),
            "ar_mae_std_cm": 100 * float(np.std(ar_vals)) if len(ar_vals) else float("nan"),
            "n_windows": int(len(sel)),
            "n_segments": int(len(ar_vals)),
        })
    return rows


# --------------------------------------------------------------------------
# checkpoints


def save_svae(model: SvaeModel, path, log=()) -> None:
    save_checkpoint(path, "svae", config_dict(model.cfg), model, list(log), {"h_dim": model.h_dim})


def load_svae(path) -> tuple[SvaeModel, list[dict]]:
    header, tensors, log = load_checkpoint(path)
    if header["kind"] != "svae":
        raise ValueError(f"{path} holds a {header['kind']!r} checkpoint, not 'svae'")
    model = SvaeModel(config_from_dict(SvaeConfig, header["config"]), int(header["meta"]["h_dim"]))
    load_state(model, tensors)
    model.eval()
    return model, log

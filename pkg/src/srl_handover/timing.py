"""Handover-timeframe classifier.

A small fully connected network maps the last second of primary-user motion
(``T+1`` frames) to the likelihood that a handover is in progress.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dataio import ACTIVITIES, ACTIVITY_PARAMS, HandoverState, WindowSet
from .dataio.synth import sub_seed
from .training import (
    Standardizer,
    check_finite,
    config_dict,
    config_from_dict,
    load_checkpoint,
    load_state,
    lr_schedule,
    save_checkpoint,
    set_lr,
)

BCE_EPS = 1e-7
PARAMETER_ROWS = (
    ("height", "torso"), ("height", "head"),
    ("distance", "on-body"), ("distance", "mid-air"),
    ("range", "small"), ("range", "medium"), ("range", "large"),
)
REPORT_COLUMNS = ("group", "name", "segment_accuracy", "window_accuracy", "n_segments", "n_windows")


@dataclass
class TimingConfig:
    T: int = 25
    hidden: int = 128
    epochs: int = 500
    lr_start: float = 1e-4
    lr_end: float = 1e-7
    lr_decay_start_epoch: int = 50
    batch_size: int = 256
    stride: int = 1
    threshold: float = 0.6
    label_mode: str = "current"  # or "majority"
    pos_weight: float | None = None  # class weighting for handover windows; off by default
    seed: int = 0

    def validate(self) -> "TimingConfig":
        for name in ("T", "hidden", "batch_size", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0 or self.lr_decay_start_epoch < 0:
            raise ValueError("epoch counts must be >= 0")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.label_mode not in ("current", "majority"):
            raise ValueError("label_mode must be 'current' or 'majority'")
        if self.pos_weight is not None and self.pos_weight <= 0:
            raise ValueError("pos_weight must be positive")
        return self


class TimingModel(nn.Module):
    def __init__(self, in_dim: int, hidden: int = 128, frame_dim: int | None = None, seed: int = 0):
        super().__init__()
        frame_dim = frame_dim or in_dim
        if in_dim % frame_dim:
            raise ValueError("input width must be a multiple of the frame width")
        torch.manual_seed(sub_seed(seed, "timing", "init"))
        self.in_dim, self.frame_dim = in_dim, frame_dim
        self.norm = Standardizer(frame_dim)
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.ELU(),
            nn.Linear(hidden, hidden), nn.ELU(),
            nn.Linear(hidden, 1), nn.Sigmoid(),
        )

    def forward(self, x):
        """``x`` is ``(B, frames, frame_dim)`` or already flat ``(B, in_dim)``."""
        b = x.shape[0]
        x = self.norm(x.reshape(b, -1, self.frame_dim)).reshape(b, -1)
        return self.net(x)[:, 0]


def bce_loss(predictions, labels, eps: float = BCE_EPS, pos_weight: float | None = None):
    """Mean binary cross-entropy with predictions clamped to ``[eps, 1-eps]``."""
    if isinstance(predictions, torch.Tensor):
        labels = torch.as_tensor(labels, dtype=predictions.dtype)
        p = predictions.clamp(eps, 1 - eps)
        per = -(labels * torch.log(p) + (1 - labels) * torch.log(1 - p))
        if pos_weight is not None:
            per = per * torch.where(labels > 0.5, pos_weight, 1.0)
        return per.mean()
    p = np.clip(np.asarray(predictions, dtype=float), eps, 1 - eps)
    y = np.asarray(labels, dtype=float)
    per = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    if pos_weight is not None:
        per = per * np.where(y > 0.5, pos_weight, 1.0)
    return float(np.mean(per))


def classify(likelihood, threshold: float = 0.6):
    """``likelihood > threshold`` (strict). Works on scalars and arrays."""
    lk = np.asarray(likelihood, dtype=float)
    if np.any(~np.isfinite(lk)) or np.any(lk < 0) or np.any(lk > 1):
        raise ValueError("likelihood must lie in [0, 1]")
    out = lk > threshold
    return bool(out) if out.ndim == 0 else out


def predict_likelihood(model: TimingModel, h_past):
    """Likelihood(s) for one ``(T+1, Dh)`` window or a batch ``(B, T+1, Dh)``."""
    dtype = next(model.parameters()).dtype
    x = h_past.to(dtype) if isinstance(h_past, torch.Tensor) else torch.as_tensor(np.asarray(h_past), dtype=dtype)
    single = x.dim() == 2
    if single:
        x = x[None]
    if x.dim() != 3 or x.shape[1] * x.shape[2] != model.in_dim or x.shape[2] != model.frame_dim:
        raise ValueError(f"window must flatten to {model.in_dim} features of width {model.frame_dim}, got {tuple(x.shape)}")
    with torch.no_grad():
        out = model(x).double().numpy()
    return float(out[0]) if single else out


class TimingWindows:
    """Past windows over every frame ``t >= T`` with binary handover labels."""

    def __init__(self, clips, T: int = 25, stride: int = 1, label_mode: str = "current"):
        self.ws = WindowSet(list(clips), T=T, stride=stride, future=False)
        active = (self.ws.states != HandoverState.IDLE).astype(np.float64)
        if label_mode == "current":
            self.labels = active[self.ws.centers]
        else:
            idx = self.ws.centers[:, None] + np.arange(-T, 1)[None, :]
            self.labels = (active[idx].mean(axis=1) > 0.5).astype(np.float64)

    def __len__(self) -> int:
        return len(self.ws)

    def windows(self, idx) -> np.ndarray:
        return self.ws.gather(self.ws.centers[np.asarray(idx)], -self.ws.T, 1, "h")


def train_timing(corpus, cfg: TimingConfig | None = None, epochs: int | None = None, progress=None):
    """Train the classifier. Returns ``(model, log)`` with one log row per epoch."""
    cfg = (cfg or TimingConfig()).validate()
    epochs = cfg.epochs if epochs is None else epochs
    data = corpus if isinstance(corpus, TimingWindows) else TimingWindows(corpus, cfg.T, cfg.stride, cfg.label_mode)
    if len(data) == 0:
        raise ValueError("no training windows")
    Dh = data.ws.h_dim
    model = TimingModel((cfg.T + 1) * Dh, cfg.hidden, Dh, cfg.seed)
    model.norm.fit(data.ws.h)
    x_all = torch.as_tensor(data.windows(np.arange(len(data))).reshape(len(data), -1), dtype=torch.float32)
    y_all = torch.as_tensor(data.labels, dtype=torch.float32)
    rng = np.random.default_rng(sub_seed(cfg.seed, "timing", "order"))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_start)
    model.train()
    log = []
    for epoch in range(epochs):
        lr = lr_schedule(epoch, cfg, epochs)
        set_lr(opt, lr)
        order = torch.as_tensor(rng.permutation(len(data)))
        total = correct = 0.0
        for bi in range(0, len(order), cfg.batch_size):
            idx = order[bi: bi + cfg.batch_size]
            pred = model(x_all[idx])
            loss = bce_loss(pred, y_all[idx], pos_weight=cfg.pos_weight)
            check_finite(loss, epoch, bi // cfg.batch_size)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            correct += float(((pred.detach() > cfg.threshold).float() == y_all[idx]).sum())
        row = {"epoch": epoch, "lr": lr, "p": 0.0, "recon": total / len(data), "kl": 0.0,
               "accuracy": correct / len(data)}
        log.append(row)
        if progress:
            progress("timing", row)
    model.eval()
    return model, log


def _state_runs(states: np.ndarray):
    """Maximal runs of constant state (Idle runs included) as ``(start, end, state)``."""
    change = np.flatnonzero(np.diff(states)) + 1
    starts = np.r_[0, change]
    ends = np.r_[change - 1, len(states) - 1]
    return [(int(s), int(e), int(states[s])) for s, e in zip(starts, ends)]


def accuracy_report(model, test_corpus, threshold: float = 0.6, T: int | None = None) -> list[dict]:
    """Segment- and window-level accuracy per activity, per activity parameter, and overall.

    ``model`` is a :class:`TimingModel` or any callable mapping ``(B, T+1, Dh)``
    windows to likelihoods. A segment (maximal run of one handover state,
    Idle included) is correct when more than half of its windows are.
    """
    clips = list(test_corpus)
    if not clips:
        raise ValueError("empty test corpus")
    if T is None:
        T = model.in_dim // model.frame_dim - 1 if isinstance(model, TimingModel) else 25
    data = TimingWindows(clips, T)
    predict = (lambda x: predict_likelihood(model, x)) if isinstance(model, TimingModel) else model
    lk = np.concatenate([np.asarray(predict(data.windows(np.arange(i, min(i + 2048, len(data))))), dtype=float)
                         for i in range(0, len(data), 2048)])
    ok = classify(lk, threshold) == (data.labels > 0.5)

    stats: dict[str, list] = {}  # activity -> [segments correct, segments, windows correct, windows]
    for ci, clip in enumerate(data.ws.clips):
        sel = data.ws.clip_ids == ci
        centers, ok_c = data.ws.local_centers[sel], ok[sel]
        s = stats.setdefault(clip.activity, [0, 0, 0, 0])
        for start, end, _ in _state_runs(np.asarray(clip.states)):
            in_run = (centers >= start) & (centers <= end)
            if not in_run.any():
                continue
            s[0] += int(ok_c[in_run].mean() > 0.5)
            s[1] += 1
        s[2] += int(ok_c.sum())
        s[3] += int(len(ok_c))

    def row(group, name, acts):
        tot = np.sum([stats[a] for a in acts if a in stats], axis=0) if any(a in stats for a in acts) else np.zeros(4)
        return {
            "group": group, "name": name,
            "segment_accuracy": 100 * tot[0] / tot[1] if tot[1] else float("nan"),
            "window_accuracy": 100 * tot[2] / tot[3] if tot[3] else float("nan"),
            "n_segments": int(tot[1]), "n_windows": int(tot[3]),
        }

    known = [a for a in ACTIVITIES]
    extra = sorted(set(stats) - set(known))
    rows = [row("activity", a, [a]) for a in known + extra]
    for k, (group, value) in enumerate(PARAMETER_ROWS):
        pos = {"height": 0, "distance": 1, "range": 2}[group]
        acts = [a for a, p in ACTIVITY_PARAMS.items() if p is not None and p[pos] == value]
        rows.append(row(group, value, acts))
    rows.append(row("overall", "Overall", list(stats)))
    return rows


def save_timing(model: TimingModel, cfg: TimingConfig, path, log=()) -> None:
    save_checkpoint(path, "timing", config_dict(cfg), model, list(log),
                    {"in_dim": model.in_dim, "frame_dim": model.frame_dim})


def load_timing(path) -> tuple[TimingModel, TimingConfig, list[dict]]:
    header, tensors, log = load_checkpoint(path)
    if header["kind"] != "timing":
        raise ValueError(f"{path} holds a {header['kind']!r} checkpoint, not 'timing'")
    cfg = config_from_dict(TimingConfig, header["config"])
    model = TimingModel(int(header["meta"]["in_dim"]), cfg.hidden, int(header["meta"]["frame_dim"]), cfg.seed)
    load_state(model, tensors)
    model.eval()
    return model, cfg, log

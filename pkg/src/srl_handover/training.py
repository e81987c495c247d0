"""Schedules, Gaussian KL terms, shared network blocks and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import math
import zipfile
from dataclasses import asdict, fields

import numpy as np
import torch
from torch import nn


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss."""


def lr_schedule(epoch: int, cfg, n_epochs: int | None = None) -> float:
    """Constant ``lr_start`` until ``lr_decay_start_epoch``, then geometric decay.

    The decay reaches ``lr_end`` at the final epoch ``n_epochs - 1``
    (default: ``cfg.stage1_epochs`` or ``cfg.epochs``). Runs that end before
    the decay start never decay.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if n_epochs is None:
        n_epochs = getattr(cfg, "stage1_epochs", None) or cfg.epochs
    start, final = cfg.lr_decay_start_epoch, n_epochs - 1
    if epoch < start or final <= start:
        return cfg.lr_start
    frac = min(1.0, (epoch - start) / (final - start))
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


def sched_sampling_p(epoch: int, ramp_epochs: int = 50) -> float:
    """Probability of feeding back the model's own output: linear ramp 0 -> 1."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if ramp_epochs <= 0:
        return 1.0
    return min(1.0, epoch / ramp_epochs)


def gaussian_kl(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(log_var)) || N(0, I)) summed over latent dims, per sample."""
    return 0.5 * torch.sum(mu**2 + log_var.exp() - 1.0 - log_var, dim=-1)


def kl_between(mu_p, log_var_p, mu_q, log_var_q) -> torch.Tensor:
    """KL(N_p || N_q) for diagonal Gaussians, summed over latent dims, per sample."""
    var_ratio = (log_var_p - log_var_q).exp()
    return 0.5 * torch.sum(
        var_ratio + (mu_q - mu_p) ** 2 / log_var_q.exp() - 1.0 - (log_var_p - log_var_q), dim=-1
    )


def reparameterize(mu, log_var, eps=None, generator=None):
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + (0.5 * log_var).exp() * eps


def check_finite(value: torch.Tensor, epoch: int, batch: int, what: str = "loss") -> None:
    if not torch.isfinite(value).all():
        raise TrainingError(f"non-finite {what} at epoch {epoch}, batch {batch}")


def set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def mlp(sizes, act=nn.ELU) -> nn.Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(act())
    return nn.Sequential(*layers)


class TemporalAttention(nn.Module):
    """Multi-head self-attention over the frames of a window, with residual + LayerNorm."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"embedding size {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        B, F, D = x.shape
        dh = D // self.heads
        q, k, v = self.qkv(x).view(B, F, 3, self.heads, dh).permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(B, F, D)
        return self.norm(x + self.out(y)), attn


class MotionEncoder(nn.Module):
    """Per-frame embedding -> temporal attention -> pooling -> MLP to ``(mu, log_var)``."""

    def __init__(self, in_dim: int, n_frames: int, embed_dim: int, heads: int, hidden: int,
                 latent: int, cond_dim: int = 0):
        super().__init__()
        self.cond_dim = cond_dim
        self.embed = nn.Linear(in_dim + cond_dim, embed_dim)
        self.pos = nn.Parameter(0.02 * torch.randn(n_frames, embed_dim))
        self.attn = TemporalAttention(embed_dim, heads)
        self.head = mlp([2 * embed_dim, hidden, 2 * latent])

    def forward(self, x, cond=None):
        if self.cond_dim:
            x = torch.cat([x, cond[:, None, :].expand(-1, x.shape[1], -1)], dim=-1)
        e, attn = self.attn(self.embed(x) + self.pos)
        pooled = torch.cat([e.mean(dim=1), e[:, -1]], dim=-1)
        mu, log_var = self.head(pooled).chunk(2, dim=-1)
        return mu, log_var, attn


class Standardizer(nn.Module):
    """Fixed feature scaling stored with the model."""

    def __init__(self, dim: int):
        super().__init__()
        self.register_buffer("mean", torch.zeros(dim))
        self.register_buffer("std", torch.ones(dim))

    def fit(self, data: np.ndarray) -> None:
        data = np.asarray(data, dtype=np.float64).reshape(-1, self.mean.shape[0])
        std = data.std(axis=0)
        std[std < 1e-6] = 1.0
        self.mean.copy_(torch.as_tensor(data.mean(axis=0), dtype=self.mean.dtype))
        self.std.copy_(torch.as_tensor(std, dtype=self.std.dtype))

    def forward(self, x):
        return (x - self.mean) / self.std


def parameter_hash(module: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def as_tensor(x, dtype=torch.float32) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


# --------------------------------------------------------------------------
# checkpoints

LOG_COLUMNS = ("epoch", "lr", "p", "recon", "kl")


def config_dict(cfg) -> dict:
    return asdict(cfg)


def config_from_dict(cls, data: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def save_checkpoint(path, kind: str, config: dict, model: nn.Module, log: list[dict],
                    meta: dict | None = None) -> None:
    """Zip container: ``config.json`` (kind, config echo, meta, tensor index),
    ``tensors.npz`` (row-major float32) and ``log.csv``."""
    state = {k: v.detach().cpu().float().contiguous().numpy() for k, v in model.state_dict().items()}
    header = {
        "kind": kind,
        "config": config,
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(v.shape), "dtype": "float32"} for k, v in state.items()],
    }
    buf = io.BytesIO()
    np.savez(buf, **state)
    log_text = io.StringIO()
    cols = list(LOG_COLUMNS) + sorted({k for row in log for k in row} - set(LOG_COLUMNS))
    w = csv.DictWriter(log_text, fieldnames=cols, restval="")
    w.writeheader()
    for row in log:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(header, indent=1))
        zf.writestr("tensors.npz", buf.getvalue())
        zf.writestr("log.csv", log_text.getvalue())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], list[dict]]:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("config.json"))
        with np.load(io.BytesIO(zf.read("tensors.npz"))) as npz:
            tensors = {k: npz[k] for k in npz.files}
        log = list(csv.DictReader(io.StringIO(zf.read("log.csv").decode())))
    for entry in header["tensors"]:
        if list(tensors[entry["name"]].shape) != entry["shape"]:
            raise ValueError(f"checkpoint tensor {entry['name']} has inconsistent shape")
    return header, tensors, log


def load_state(model: nn.Module, tensors: dict[str, np.ndarray]) -> nn.Module:
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return model


def write_log_csv(log: list[dict], path) -> None:
    cols = list(LOG_COLUMNS) + sorted({k for row in log for k in row} - set(LOG_COLUMNS))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        for row in log:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

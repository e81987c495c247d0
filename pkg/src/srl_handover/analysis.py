"""Gradient-based joint importance and handover dataset statistics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dataio import HandoverState, WindowSet, facing_transforms, segment_handovers, to_hip_frame, transfer_frame
from .rot import palm_joint, rot_ground_truth

logger = logging.getLogger(__name__)

CHANNELS = ("position", "rotation")
IMPORTANCE_COLUMNS = ("rank", "joint", "channel", "magnitude")


@dataclass(frozen=True)
class ImportanceRow:
    rank: int
    joint: str
    channel: str
    magnitude: float


class JointImportanceTable(list):
    """Rows of :class:`ImportanceRow`, ranked separately per channel."""

    def channel(self, name: str) -> list[ImportanceRow]:
        return [r for r in self if r.channel == name]

    def top(self, channel: str = "position", k: int = 5) -> list[str]:
        return [r.joint for r in self.channel(channel)[:k]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(IMPORTANCE_COLUMNS)
            for r in self:
                w.writerow([r.rank, r.joint, r.channel, repr(r.magnitude)])


def joint_importance(model, h, joint_names, aux: dict | None = None, batch_size: int = 256,
                     dtype=torch.float64) -> JointImportanceTable:
    """Rank joints by mean input-gradient magnitude.

    ``model(h_batch, **aux_batch)`` must return ``(B, K)`` or ``(B,)`` outputs
    that depend on each sample independently. ``h`` is ``(N, frames, J*9)``
    with per-joint blocks of 3 position and 6 rotation features. For each
    sample the gradient magnitudes are summed over output dimensions, then
    over the frames and coordinates of a joint's channel; the table reports
    their mean over samples.
    """
    h = np.asarray(h)
    J = len(joint_names)
    if h.ndim != 3 or h.shape[2] != 9 * J:
        raise ValueError(f"h must have shape (N, frames, {9 * J})")
    if len(h) == 0:
        raise ValueError("empty dataset")
    aux = aux or {}
    total = np.zeros((J, 2))
    for bi in range(0, len(h), batch_size):
        x = torch.tensor(h[bi: bi + batch_size], dtype=dtype, requires_grad=True)
        extra = {k: (torch.as_tensor(np.asarray(v[bi: bi + batch_size]), dtype=dtype)
                     if np.asarray(v).dtype.kind == "f" else torch.as_tensor(np.asarray(v[bi: bi + batch_size])))
                 for k, v in aux.items()}
        y = model(x, **extra)
        if not isinstance(y, torch.Tensor) or not y.requires_grad:
            raise TypeError("model output is not differentiable with respect to its input")
        y = y.reshape(len(x), -1)
        mag = torch.zeros_like(x)
        for k in range(y.shape[1]):
            (g,) = torch.autograd.grad(y[:, k].sum(), x, retain_graph=k < y.shape[1] - 1)
            mag += g.abs()
        per = mag.detach().numpy().reshape(len(x), -1, J, 9)
        total[:, 0] += per[..., :3].sum(axis=(1, 3)).sum(axis=0)
        total[:, 1] += per[..., 3:].sum(axis=(1, 3)).sum(axis=0)
    mean = total / len(h)
    table = JointImportanceTable()
    for c, channel in enumerate(CHANNELS):
        order = sorted(range(J), key=lambda j: (-mean[j, c], j))
        table.extend(ImportanceRow(r + 1, joint_names[j], channel, float(mean[j, c])) for r, j in enumerate(order))
    return table


def _limit(n: int, max_samples: int | None, seed: int = 0) -> np.ndarray:
    if max_samples is None or n <= max_samples:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, max_samples, replace=False))


def svae_importance(model, clips, max_samples: int | None = 2000) -> JointImportanceTable:
    """Importance for the SVAE's deterministic next-position output inside handover segments."""
    from .svae import segment_filter

    ws = WindowSet(list(clips), T=model.T, center_filter=segment_filter(0))
    b = ws.batch(_limit(len(ws), max_samples), future=False)
    model = model.double()

    def fn(h, r_seen, state):
        lat = model.encode_lc(h, r_seen, state)
        return model.decode(lat.mu, h, r_seen)

    try:
        return joint_importance(fn, b["h_seen"], ws.clips[0].skeleton.names,
                                {"r_seen": b["r_seen"], "state": b["state"]})
    finally:
        model.float()


def rot_importance(model, clips, max_samples: int | None = 2000) -> JointImportanceTable:
    from .rot import RotWindows

    data = RotWindows(clips, model.cfg.T)
    b = data.batch(_limit(len(data), max_samples))
    model = model.double()
    try:
        return joint_importance(lambda h, r_seen: model(h, r_seen)[0], b["h_seen"],
                                data.ws.clips[0].skeleton.names, {"r_seen": b["r_seen"]})
    finally:
        model.float()


def timing_importance(model, clips, max_samples: int | None = 2000) -> JointImportanceTable:
    from .timing import TimingWindows

    T = model.in_dim // model.frame_dim - 1
    data = TimingWindows(clips, T)
    h = data.windows(_limit(len(data), max_samples))
    model = model.double()
    try:
        return joint_importance(lambda x: model(x), h, data.ws.clips[0].skeleton.names)
    finally:
        model.float()


# --------------------------------------------------------------------------
# dataset statistics

STATS_COLUMNS = ("clip", "activity", "kind", "start", "end", "duration_s",
                 "rot_x", "rot_y", "rot_z", "palm_x", "palm_y", "palm_z")


def handover_stats(corpus) -> dict:
    """Segment durations and hip-frame RoT / palm point clouds.

    Durations use ``(end - start + 1) / fps``; ``duration_std`` is the
    population standard deviation.
    """
    rows = []
    for clip in corpus:
        try:
            j = palm_joint(clip.skeleton)
        except LookupError:
            j = None
        heading, hip = facing_transforms(clip)
        for start, end, kind in segment_handovers(clip):
            row = {"clip": clip.name, "activity": clip.activity, "kind": HandoverState(kind).label,
                   "start": start, "end": end, "duration_s": (end - start + 1) / clip.fps}
            if j is not None:
                f = transfer_frame(clip, start, end)
                palm = clip.positions[f, j]
                pts = to_hip_frame(np.stack([rot_ground_truth(palm, clip.ee_positions[f], kind).position, palm])[None],
                                   heading[f: f + 1], hip[f: f + 1])[0]
                row.update(zip(("rot_x", "rot_y", "rot_z", "palm_x", "palm_y", "palm_z"), pts.reshape(-1)))
            rows.append(row)
    if not rows:
        logger.warning("corpus has no handover segments")
        return {"n_segments": 0, "duration_mean": float("nan"), "duration_std": float("nan"),
                "rows": [], "rot_points": np.zeros((0, 3)), "palm_points": np.zeros((0, 3)), "activities": []}
    durations = np.array([r["duration_s"] for r in rows])
    has_pts = [r for r in rows if "rot_x" in r]
    return {
        "n_segments": len(rows),
        "duration_mean": float(durations.mean()),
        "duration_std": float(durations.std()),
        "rows": rows,
        "rot_points": np.array([[r["rot_x"], r["rot_y"], r["rot_z"]] for r in has_pts]).reshape(-1, 3),
        "palm_points": np.array([[r["palm_x"], r["palm_y"], r["palm_z"]] for r in has_pts]).reshape(-1, 3),
        "activities": [r["activity"] for r in has_pts],
    }


def write_stats(stats: dict, out_dir, svg: bool = True) -> list[Path]:
    """Write ``segments.csv``, ``summary.csv`` and (optionally) ``handover_points.svg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "segments.csv", out / "summary.csv"]
    with open(paths[0], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STATS_COLUMNS, restval="")
        w.writeheader()
        w.writerows(stats["rows"])
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_segments", "duration_mean_s", "duration_std_s"])
        w.writerow([stats["n_segments"], repr(stats["duration_mean"]), repr(stats["duration_std"])])
    if svg and len(stats["rot_points"]):
        paths.append(scatter_svg(stats, out / "handover_points.svg"))
    return paths


def scatter_svg(stats: dict, path) -> Path:
    """Front (x-y) and top (x-z) views of RoT positions, coloured by activity."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pts = stats["rot_points"]
    acts = np.array(stats["activities"])
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for name in sorted(set(acts.tolist())):
        sel = acts == name
        # -x is the user's right; plot it on the viewer's left like a front view
        axes[0].scatter(pts[sel, 0], pts[sel, 1], s=8, label=name)
        axes[1].scatter(pts[sel, 0], pts[sel, 2], s=8)
    axes[0].set(title="front view", xlabel="x (m)", ylabel="y up (m)")
    axes[1].set(title="top view", xlabel="x (m)", ylabel="z front (m)")
    for ax in axes:
        ax.scatter([0], [0], marker="+", c="k")
        ax.set_aspect("equal")
    axes[0].legend(fontsize=6, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)

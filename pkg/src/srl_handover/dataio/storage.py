"""Corpus persistence: clip CSVs, annotation CSVs and a JSON manifest.

Clip CSV columns: ``frame``, then for every joint ``<joint>_px, _py, _pz,
_r6_0 .. _r6_5`` (world position and 6D local rotation), then
``ee_px, ee_py, ee_pz, ee_r6_0 .. ee_r6_5``. Floats use ``.`` as decimal
separator and 12 significant digits.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from ..kinematics import Skeleton, matrix_to_6d, matrix_to_euler, sixd_to_matrix
from .annotations import annotate, load_annotations, write_annotations
from .clip import MotionClip

FLOAT_FORMAT = "%.12g"
MANIFEST = "manifest.json"
SKELETON = "skeleton.json"


def clip_columns(skeleton: Skeleton) -> list[str]:
    cols = ["frame"]
    for name in skeleton.names:
        cols += [f"{name}_p{a}" for a in "xyz"] + [f"{name}_r6_{k}" for k in range(6)]
    cols += [f"ee_p{a}" for a in "xyz"] + [f"ee_r6_{k}" for k in range(6)]
    return cols


def clip_table(clip: MotionClip) -> np.ndarray:
    """Numeric clip table ``(N, 1 + 9J + 9)`` in CSV column order."""
    pos = clip.positions
    rot6 = matrix_to_6d(clip.local_rotation_matrices())
    body = np.concatenate([pos, rot6], axis=-1).reshape(len(clip), -1)
    return np.column_stack([np.arange(len(clip)), body, clip.robot_features()])


def write_clip_csv(clip: MotionClip, path, float_format: str = FLOAT_FORMAT) -> None:
    table = clip_table(clip)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(clip_columns(clip.skeleton))
        for row in table:
            w.writerow([str(int(row[0]))] + [float_format % v for v in row[1:]])


def read_clip_table(path, skeleton: Skeleton) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = clip_columns(skeleton)
        if header != expected:
            raise ValueError(f"{path}: clip columns do not match the skeleton ({len(header)} vs {len(expected)})")
        table = np.array([[float(v) for v in row] for row in reader], dtype=float)
    return table.reshape(-1, len(expected))


def clip_from_table(table: np.ndarray, skeleton: Skeleton, fps: float, **kwargs) -> MotionClip:
    """Rebuild a clip from its CSV table (annotations default to Idle)."""
    n, J = len(table), len(skeleton)
    body = table[:, 1 : 1 + 9 * J].reshape(n, J, 9)
    local = sixd_to_matrix(body[..., 3:])
    angles = np.zeros((n, J, 3))
    for j, spec in enumerate(skeleton.joints):
        if j == 0:
            continue
        angles[:, j] = matrix_to_euler(local[:, j], spec.order) * skeleton.dof_mask[j]
    ee = table[:, 1 + 9 * J :]
    root_pos = body[:, 0, :3] - skeleton.offsets[0]
    return MotionClip.idle(
        skeleton, fps, root_pos, local[:, 0], angles,
        ee_positions=ee[:, :3], ee_rotations=sixd_to_matrix(ee[:, 3:]), **kwargs,
    )


def write_corpus(corpus, out_dir, float_format: str = FLOAT_FORMAT) -> Path:
    """Write clips, annotations, the shared skeleton and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not corpus:
        raise ValueError("empty corpus")
    skeleton = corpus[0].skeleton
    (out / SKELETON).write_text(json.dumps(skeleton.to_dict(), indent=1))
    entries = []
    for k, clip in enumerate(corpus):
        if clip.skeleton is not skeleton and clip.skeleton.to_dict() != skeleton.to_dict():
            raise ValueError("all clips in a corpus must share one skeleton")
        stem = clip.name or f"clip{k:04d}"
        write_clip_csv(clip, out / f"{stem}.csv", float_format)
        write_annotations(clip, out / f"{stem}_annotations.csv", float_format)
        entries.append({
            "path": f"{stem}.csv",
            "annotations": f"{stem}_annotations.csv",
            "activity": clip.activity,
            "pair_id": clip.pair_id,
            "fps": clip.fps,
        })
    manifest = {"skeleton": SKELETON, "clips": entries}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1))
    return out / MANIFEST


def read_corpus(path) -> list[MotionClip]:
    """Load a corpus from a manifest file or the directory containing it."""
    path = Path(path)
    manifest_path = path / MANIFEST if path.is_dir() else path
    if not manifest_path.exists():
        raise FileNotFoundError(f"no corpus manifest at {manifest_path}")
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    skeleton = Skeleton.from_dict(json.loads((root / manifest.get("skeleton", SKELETON)).read_text()))
    clips = []
    for entry in manifest["clips"]:
        table = read_clip_table(root / entry["path"], skeleton)
        clip = clip_from_table(
            table, skeleton, float(entry["fps"]),
            activity=entry.get("activity", ""),
            pair_id=str(entry.get("pair_id", "")),
            name=os.path.splitext(entry["path"])[0],
        )
        if entry.get("annotations"):
            ann = load_annotations(root / entry["annotations"], len(clip), clip.fps)
            clip = annotate(clip, ann)
        clips.append(clip)
    return clips

"""Per-frame handover annotation tables."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .clip import HandoverState, MotionClip, Possession

ANNOTATION_COLUMNS = ("frame", "handover_state", "possession", "time_in_segment")


class SchemaError(ValueError):
    pass


@dataclass(eq=False)
class Annotations:
    states: np.ndarray
    possession: np.ndarray
    time_in_segment: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


def _rows(source):
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, newline="") as fh:
            return list(csv.DictReader(fh)), True
    if isinstance(source, str):
        return list(csv.DictReader(io.StringIO(source))), True
    return [dict(r) for r in source], False


def load_annotations(source, n_frames: int, fps: float = 25.0) -> Annotations:
    """Parse an annotation table into typed per-frame arrays.

    ``source`` is a CSV path, CSV text, or an iterable of row mappings with
    columns ``frame, handover_state, possession, time_in_segment``. Rows must
    cover one contiguous block of frames; frames outside it are Idle. A blank
    or missing ``time_in_segment`` is derived from the frame's position in its
    run at ``fps``.
    """
    rows, from_csv = _rows(source)
    states = np.full(n_frames, HandoverState.IDLE, dtype=np.int8)
    possession = np.full(n_frames, Possession.ROBOT, dtype=np.int8)
    times = np.zeros(n_frames)
    if not rows:
        return Annotations(states, possession, times)

    missing = {"frame", "handover_state"} - set(rows[0])
    if missing:
        raise SchemaError(f"annotation table lacks columns {sorted(missing)}")
    frames = []
    for k, row in enumerate(rows):
        where = f"row {k + 2 if from_csv else k}"
        try:
            frame = int(row["frame"])
        except (TypeError, ValueError):
            raise SchemaError(f"{where}: frame {row['frame']!r} is not an integer") from None
        if not 0 <= frame < n_frames:
            raise SchemaError(f"{where}: frame {frame} outside clip of {n_frames} frames")
        if frames and frame != frames[-1] + 1:
            raise SchemaError(f"{where}: frame {frame} follows {frames[-1]}; frames must be contiguous")
        frames.append(frame)
        try:
            states[frame] = HandoverState.parse(str(row["handover_state"]))
            if row.get("possession") not in (None, ""):
                possession[frame] = Possession.parse(str(row["possession"]))
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}") from None
        t = row.get("time_in_segment")
        times[frame] = np.nan if t in (None, "") else float(t)

    # derive missing times from run positions
    run_start = None
    for f in range(n_frames):
        if states[f] == HandoverState.IDLE:
            run_start = None
            if np.isnan(times[f]):
                times[f] = 0.0
            continue
        if run_start is None or states[f] != states[f - 1]:
            run_start = f
        if np.isnan(times[f]):
            times[f] = (f - run_start) / fps
    return Annotations(states, possession, times)


def annotate(clip: MotionClip, ann: Annotations) -> MotionClip:
    if len(ann) != len(clip):
        raise SchemaError(f"{len(ann)} annotations for a clip of {len(clip)} frames")
    return clip.replace(states=ann.states, possession=ann.possession, time_in_segment=ann.time_in_segment)


def write_annotations(clip: MotionClip, path, float_format: str = "%.12g") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ANNOTATION_COLUMNS)
        for f in range(len(clip)):
            w.writerow([
                f,
                HandoverState(int(clip.states[f])).label,
                Possession(int(clip.possession[f])).label,
                float_format % clip.time_in_segment[f],
            ])

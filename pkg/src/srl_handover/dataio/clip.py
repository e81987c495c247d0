"""Motion clips, handover annotations and per-frame pose normalization."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ..kinematics import (
    KinematicsError,
    Pose,
    Skeleton,
    forward_kinematics_batch,
    heading_rotations,
    local_rotations,
    matrix_to_6d,
)


class HandoverState(enum.IntEnum):
    HANDING_OVER = 0
    TAKING_BACK = 1
    IDLE = 2

    @property
    def label(self) -> str:
        return _STATE_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "HandoverState":
        try:
            return _LABEL_STATES[text.strip()]
        except KeyError:
            raise ValueError(
                f"unknown handover state {text!r}; permitted values: {', '.join(_LABEL_STATES)}"
            ) from None


_STATE_LABELS = {
    HandoverState.HANDING_OVER: "HandingOver",
    HandoverState.TAKING_BACK: "TakingBack",
    HandoverState.IDLE: "Idle",
}
_LABEL_STATES = {v: k for k, v in _STATE_LABELS.items()}


class Possession(enum.IntEnum):
    PRIMARY = 0
    ROBOT = 1

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "Possession":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown possession {text!r}; permitted values: primary, robot") from None


def one_hot(states) -> np.ndarray:
    """One-hot encode handover states, ``(...,) -> (..., 3)``."""
    states = np.asarray(states, dtype=int)
    return np.eye(len(HandoverState))[states]


# The 12 activities plus the neutral pose, with their (height, distance, range)
# parameters. Neutral pose has no parameters.
ACTIVITY_PARAMS: dict[str, tuple[str, str, str] | None] = {
    "Mount a mic": ("torso", "on-body", "small"),
    "Apply sunscreen to face": ("head", "on-body", "small"),
    "Apply body lotion to chest": ("torso", "on-body", "medium"),
    "Shampoo hair": ("head", "on-body", "medium"),
    "Wash torso with washcloth": ("torso", "on-body", "large"),
    "Blow dry hair": ("head", "on-body", "large"),
    "Straighten a pic (low)": ("torso", "mid-air", "small"),
    "Straighten a picture (high)": ("head", "mid-air", "small"),
    "Hammer a nail": ("torso", "mid-air", "medium"),
    "Clean a window": ("head", "mid-air", "medium"),
    "Paint the wall (low)": ("torso", "mid-air", "large"),
    "Paint the wall (high)": ("head", "mid-air", "large"),
    "Neutral pose": None,
}
ACTIVITIES = tuple(ACTIVITY_PARAMS)


@dataclass(eq=False)
class MotionClip:
    """One recording: primary-user poses, robot end-effector track, annotations.

    All per-frame arrays share the leading frame axis of length ``N``.
    """

    skeleton: Skeleton
    fps: float
    root_positions: np.ndarray  # (N, 3)
    root_rotations: np.ndarray  # (N, 3, 3)
    joint_angles: np.ndarray  # (N, J, 3)
    ee_positions: np.ndarray  # (N, 3)
    ee_rotations: np.ndarray  # (N, 3, 3)
    states: np.ndarray  # (N,) HandoverState values
    possession: np.ndarray  # (N,) Possession values
    time_in_segment: np.ndarray  # (N,) seconds
    activity: str = "Neutral pose"
    pair_id: str = ""
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.root_positions)
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        checks = {
            "root_rotations": (self.root_rotations, (n, 3, 3)),
            "joint_angles": (self.joint_angles, (n, len(self.skeleton), 3)),
            "ee_positions": (self.ee_positions, (n, 3)),
            "ee_rotations": (self.ee_rotations, (n, 3, 3)),
            "states": (self.states, (n,)),
            "possession": (self.possession, (n,)),
            "time_in_segment": (self.time_in_segment, (n,)),
        }
        for name, (arr, shape) in checks.items():
            if np.shape(arr) != shape:
                raise ValueError(f"{name} has shape {np.shape(arr)}, expected {shape}")

    def __len__(self) -> int:
        return len(self.root_positions)

    @classmethod
    def idle(cls, skeleton, fps, root_positions, root_rotations, joint_angles,
             ee_positions=None, ee_rotations=None, **kwargs) -> "MotionClip":
        """Clip with every frame annotated Idle (robot holding the object)."""
        n = len(root_positions)
        return cls(
            skeleton=skeleton,
            fps=fps,
            root_positions=np.asarray(root_positions, dtype=float),
            root_rotations=np.asarray(root_rotations, dtype=float),
            joint_angles=np.asarray(joint_angles, dtype=float),
            ee_positions=np.zeros((n, 3)) if ee_positions is None else np.asarray(ee_positions, float),
            ee_rotations=(np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
                          if ee_rotations is None else np.asarray(ee_rotations, float)),
            states=np.full(n, HandoverState.IDLE, dtype=np.int8),
            possession=np.full(n, Possession.ROBOT, dtype=np.int8),
            time_in_segment=np.zeros(n),
            **kwargs,
        )

    def pose(self, i: int) -> Pose:
        return Pose(self.root_positions[i], self.root_rotations[i], self.joint_angles[i])

    def replace(self, **changes) -> "MotionClip":
        return replace(self, **changes)

    @cached_property
    def _fk(self):
        return forward_kinematics_batch(
            self.skeleton, self.root_positions, self.root_rotations, self.joint_angles,
            return_rotations=True,
        )

    @property
    def positions(self) -> np.ndarray:
        """World joint positions ``(N, J, 3)``."""
        return self._fk[0]

    @property
    def global_rotations(self) -> np.ndarray:
        return self._fk[1]

    def local_rotation_matrices(self) -> np.ndarray:
        """Local joint rotations ``(N, J, 3, 3)``; the root entry includes the root rotation."""
        local = local_rotations(self.skeleton, self.joint_angles)
        local[:, 0] = self.root_rotations @ local[:, 0]
        return local

    def primary_features(self) -> np.ndarray:
        """Per-frame primary-user features ``(N, J*9)``.

        For every joint: root-relative position (3) then 6D local rotation (6).
        """
        pos = self.positions
        rel = pos - pos[:, :1]
        rot6 = matrix_to_6d(self.local_rotation_matrices())
        return np.concatenate([rel, rot6], axis=-1).reshape(len(self), -1)

    def robot_features(self) -> np.ndarray:
        """Per-frame robot end-effector features ``(N, 9)``: position then 6D rotation."""
        return np.concatenate([self.ee_positions, matrix_to_6d(self.ee_rotations)], axis=-1)


def feature_width(skeleton: Skeleton) -> int:
    return 9 * len(skeleton)


def facing_transforms(clip: MotionClip) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame heading rotations ``(N, 3, 3)`` and hip world positions ``(N, 3)``.

    A world point ``p`` maps into frame ``i``'s normalized hip frame as
    ``H[i].T @ (p - hip[i])``.
    """
    heading = heading_rotations(clip.root_rotations)
    hip = clip.root_positions + clip.skeleton.offsets[0]
    return heading, hip


def to_hip_frame(points: np.ndarray, heading: np.ndarray, hip: np.ndarray) -> np.ndarray:
    """Map world points ``(N, ..., 3)`` into the per-frame hip frames."""
    points = np.asarray(points, dtype=float)
    extra = points.ndim - 2
    h = heading.reshape(heading.shape[:1] + (1,) * extra + (3, 3))
    o = hip.reshape(hip.shape[:1] + (1,) * extra + (3,))
    return np.einsum("...ji,...j->...i", h, points - o)


def normalize_clip(clip: MotionClip) -> MotionClip:
    """Rigidly move every frame so the hip is at the origin and faces +z.

    Only the heading (rotation about +y) is removed; hip pitch and roll stay in
    ``root_rotations``. The same per-frame transform is applied to the robot
    end-effector so user/robot relative geometry is preserved.
    """
    if len(clip) == 0:
        raise ValueError("cannot normalize an empty clip")
    heading, hip = facing_transforms(clip)
    inv = np.swapaxes(heading, -1, -2)
    return clip.replace(
        root_positions=np.broadcast_to(-clip.skeleton.offsets[0], (len(clip), 3)).copy(),
        root_rotations=inv @ clip.root_rotations,
        ee_positions=to_hip_frame(clip.ee_positions, heading, hip),
        ee_rotations=inv @ clip.ee_rotations,
    )


class AnnotationError(ValueError):
    pass


def segment_handovers(clip: MotionClip) -> list[tuple[int, int, HandoverState]]:
    """Maximal runs of non-Idle frames as ``(start, end, kind)`` with inclusive end."""
    states = np.asarray(clip.states)
    active = states != HandoverState.IDLE
    segments = []
    i, n = 0, len(states)
    while i < n:
        if not active[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and active[j + 1]:
            j += 1
        kinds = set(states[i : j + 1].tolist())
        if len(kinds) > 1:
            raise AnnotationError(
                f"frames {i}-{j} mix {sorted(HandoverState(k).label for k in kinds)} without an Idle gap"
            )
        segments.append((i, j, HandoverState(kinds.pop())))
        i = j + 1
    return segments


def transfer_frame(clip: MotionClip, start: int, end: int) -> int:
    """Frame inside ``[start, end]`` where possession changes hands.

    Falls back to the segment midpoint when the annotation has no change.
    """
    pos = np.asarray(clip.possession[start : end + 1])
    change = np.flatnonzero(pos[1:] != pos[:-1])
    if len(change):
        return start + int(change[0]) + 1
    return (start + end) // 2


__all__ = [
    "ACTIVITIES",
    "ACTIVITY_PARAMS",
    "AnnotationError",
    "HandoverState",
    "KinematicsError",
    "MotionClip",
    "Possession",
    "facing_transforms",
    "feature_width",
    "normalize_clip",
    "one_hot",
    "segment_handovers",
    "to_hip_frame",
    "transfer_frame",
]

"""Skeleton model, forward kinematics and rotation representations.

Conventions used throughout the package:

* world and hip frames are right-handed with +y up;
* the body faces its hip's local +z axis, so in the normalized hip frame
  +z is "front", +y is "up" and -x is the user's right side;
* joint rotations are Euler angles applied intrinsically in the joint's
  ``order`` (``"ZXY"`` unless a BVH file says otherwise);
* rotation matrices act on column vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

AXES = "XYZ"
DEFAULT_ORDER = "ZXY"
# hip local axis treated as the facing direction
FACING_AXIS = np.array([0.0, 0.0, 1.0])
UP_AXIS = 1


class KinematicsError(ValueError):
    """Structural or numerical problem with kinematic input."""


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: int | None
    offset: tuple[float, float, float]
    dof: dict[str, tuple[float, float]] = field(default_factory=dict)
    order: str = DEFAULT_ORDER

    @property
    def dof_count(self) -> int:
        return len(self.dof)


class Skeleton:
    """Topologically sorted kinematic tree.

    Parameters
    ----------
    joints : sequence of JointSpec
        Joint ``i`` must have its parent at an index smaller than ``i``;
        exactly one joint (the root) has ``parent=None``.
    """

    def __init__(self, joints: Sequence[JointSpec]):
        joints = list(joints)
        if not joints:
            raise KinematicsError("skeleton needs at least one joint")
        roots = [i for i, j in enumerate(joints) if j.parent is None]
        if roots != [0]:
            raise KinematicsError(f"expected a single root at index 0, got roots at {roots}")
        for i, j in enumerate(joints[1:], start=1):
            if not 0 <= j.parent < i:
                raise KinematicsError(f"joint {j.name!r} has parent {j.parent} >= own index {i}")
        for j in joints:
            for axis, (lo, hi) in j.dof.items():
                if axis not in AXES:
                    raise KinematicsError(f"joint {j.name!r}: unknown axis {axis!r}")
                if lo > hi:
                    raise KinematicsError(f"joint {j.name!r}: limit min {lo} > max {hi} on {axis}")
            if sorted(j.order) != sorted(AXES):
                raise KinematicsError(f"joint {j.name!r}: bad rotation order {j.order!r}")
        names = [j.name for j in joints]
        if len(set(names)) != len(names):
            raise KinematicsError("joint names must be unique")

        self.joints = joints
        self.names = names
        self.parents = np.array([-1] + [j.parent for j in joints[1:]], dtype=int)
        self.offsets = np.array([j.offset for j in joints], dtype=float)
        lower = np.zeros((len(joints), 3))
        upper = np.zeros((len(joints), 3))
        mask = np.zeros((len(joints), 3), dtype=bool)
        for i, j in enumerate(joints):
            for axis, (lo, hi) in j.dof.items():
                k = AXES.index(axis)
                lower[i, k], upper[i, k], mask[i, k] = lo, hi, True
        self.lower, self.upper, self.dof_mask = lower, upper, mask

    def __len__(self) -> int:
        return len(self.joints)

    def __repr__(self) -> str:
        return f"Skeleton({len(self)} joints, {self.dof_count} DoF)"

    @property
    def dof_count(self) -> int:
        return int(self.dof_mask.sum())

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> dict:
        return {
            "joints": [
                {
                    "name": j.name,
                    "parent": j.parent,
                    "offset": list(j.offset),
                    "dof": {k: list(v) for k, v in j.dof.items()},
                    "order": j.order,
                }
                for j in self.joints
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Skeleton":
        return cls(
            JointSpec(
                name=j["name"],
                parent=j["parent"],
                offset=tuple(j["offset"]),
                dof={k: tuple(v) for k, v in j.get("dof", {}).items()},
                order=j.get("order", DEFAULT_ORDER),
            )
            for j in data["joints"]
        )

    def clamp(self, angles: np.ndarray) -> np.ndarray:
        """Clamp Euler angles ``(..., J, 3)`` to the DoF limits.

        Angles on locked axes are forced to zero. Out-of-range values are
        logged, not rejected.
        """
        angles = np.asarray(angles, dtype=float)
        clamped = np.clip(angles, self.lower, self.upper)
        moved = np.abs(clamped - angles) > 1e-12
        if moved.any():
            worst = np.unravel_index(np.argmax(np.abs(clamped - angles)), angles.shape)
            logger.warning(
                "clamped %d joint angles to DoF limits (largest change %.4f rad at joint %s)",
                int(moved.sum()),
                float(np.abs(clamped - angles)[worst]),
                self.names[worst[-2]],
            )
        return clamped


@dataclass(frozen=True)
class Pose:
    root_position: np.ndarray
    root_rotation: np.ndarray
    joint_rotations: np.ndarray  # (J, 3) Euler angles indexed by x, y, z

    def __post_init__(self):
        check_rotation(self.root_rotation, tol=1e-6)


def synthetic_skeleton() -> Skeleton:
    """Reduced 17-joint body used for synthetic data and simulation.

    T-pose with arms along +-x; the left arm points to +x.
    """
    spine = {"X": (-0.4, 0.6), "Y": (-0.5, 0.5), "Z": (-0.3, 0.3)}
    neck = {"X": (-0.6, 0.6), "Y": (-0.8, 0.8), "Z": (-0.4, 0.4)}
    clav = {"Y": (-0.3, 0.3), "Z": (-0.3, 0.3)}
    shoulder = {"X": (-np.pi, np.pi), "Y": (-np.pi, np.pi), "Z": (-np.pi, np.pi)}
    wrist = {"X": (-1.0, 1.0), "Y": (-0.5, 0.5), "Z": (-1.0, 1.0)}
    hand = {"Z": (-0.5, 0.5)}
    joints = [
        JointSpec("hips", None, (0.0, 0.0, 0.0)),
        JointSpec("spine", 0, (0.0, 0.10, 0.0), spine),
        JointSpec("spine1", 1, (0.0, 0.12, 0.0), spine),
        JointSpec("chest", 2, (0.0, 0.12, 0.0), spine),
        JointSpec("neck", 3, (0.0, 0.17, 0.0), neck),
        JointSpec("head", 4, (0.0, 0.10, 0.0), neck),
        JointSpec("face", 5, (0.0, 0.06, 0.10)),
    ]
    for side, sign, elbow in (("l", 1.0, (-2.6, 0.0)), ("r", -1.0, (0.0, 2.6))):
        base = len(joints)
        joints += [
            JointSpec(f"{side}_clavicle", 3, (sign * 0.03, 0.12, 0.0), clav),
            JointSpec(f"{side}_shoulder", base, (sign * 0.14, 0.0, 0.0), shoulder),
            JointSpec(f"{side}_elbow", base + 1, (sign * 0.28, 0.0, 0.0), {"Y": elbow}),
            JointSpec(f"{side}_wrist", base + 2, (sign * 0.25, 0.0, 0.0), wrist),
            JointSpec(f"{side}_hand", base + 3, (sign * 0.08, 0.0, 0.0), hand),
        ]
    return Skeleton(joints)


# --------------------------------------------------------------------------
# rotations


def axis_rotation(axis: str, angle) -> np.ndarray:
    """Elementary rotation matrices ``(..., 3, 3)`` about x, y or z."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(c), np.zeros_like(c)
    axis = axis.upper()
    if axis == "X":
        rows = [[one, zero, zero], [zero, c, -s], [zero, s, c]]
    elif axis == "Y":
        rows = [[c, zero, s], [zero, one, zero], [-s, zero, c]]
    elif axis == "Z":
        rows = [[c, -s, zero], [s, c, zero], [zero, zero, one]]
    else:
        raise KinematicsError(f"unknown axis {axis!r}")
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def euler_to_matrix(angles: np.ndarray, order: str = DEFAULT_ORDER) -> np.ndarray:
    """Intrinsic Euler angles ``(..., 3)`` indexed by x, y, z to matrices."""
    angles = np.asarray(angles, dtype=float)
    out = np.broadcast_to(np.eye(3), angles.shape[:-1] + (3, 3)).copy()
    for axis in order.upper():
        out = out @ axis_rotation(axis, angles[..., AXES.index(axis)])
    return out


def matrix_to_euler(R: np.ndarray, order: str = DEFAULT_ORDER) -> np.ndarray:
    """Inverse of :func:`euler_to_matrix`, returning angles indexed by x, y, z."""
    from scipy.spatial.transform import Rotation

    R = np.asarray(R, dtype=float)
    flat = Rotation.from_matrix(R.reshape(-1, 3, 3)).as_euler(order.upper())
    out = np.zeros_like(flat)
    for k, axis in enumerate(order.upper()):
        out[:, AXES.index(axis)] = flat[:, k]
    return out.reshape(R.shape[:-2] + (3,))


def check_rotation(R: np.ndarray, tol: float = 1e-4) -> None:
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise KinematicsError(f"expected (..., 3, 3) rotation, got {R.shape}")
    err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max(initial=0.0)
    det = np.linalg.det(R)
    if err > tol or np.abs(det - 1.0).max(initial=0.0) > tol:
        raise KinematicsError(
            f"matrix is not a proper rotation (orthonormality error {err:.2e}, det {np.min(det):.6f})"
        )


def matrix_to_6d(R: np.ndarray) -> np.ndarray:
    """First two columns of ``R``, concatenated: ``(..., 3, 3) -> (..., 6)``."""
    R = np.asarray(R, dtype=float)
    check_rotation(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def sixd_to_matrix(v: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Gram-Schmidt decode of 6D rotations ``(..., 6) -> (..., 3, 3)``."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 6:
        raise KinematicsError(f"expected (..., 6) input, got {v.shape}")
    if not np.isfinite(v).all():
        raise KinematicsError("6D rotation contains non-finite values")
    a, b = v[..., :3], v[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if (na < eps).any():
        raise KinematicsError("degenerate 6D rotation: zero-norm first column")
    c1 = a / na
    b = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if (nb < eps).any():
        raise KinematicsError("degenerate 6D rotation: second column parallel to the first")
    c2 = b / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


# --------------------------------------------------------------------------
# forward kinematics


def local_rotations(skeleton: Skeleton, angles: np.ndarray) -> np.ndarray:
    """Per-joint local rotation matrices ``(..., J, 3, 3)`` from Euler angles."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape[-2:] != (len(skeleton), 3):
        raise KinematicsError(
            f"pose has {angles.shape[-2] if angles.ndim >= 2 else '?'} joints, "
            f"skeleton has {len(skeleton)}"
        )
    out = np.empty(angles.shape[:-1] + (3, 3))
    for j, spec in enumerate(skeleton.joints):
        out[..., j, :, :] = euler_to_matrix(angles[..., j, :], spec.order)
    return out


def forward_kinematics_batch(
    skeleton: Skeleton,
    root_positions: np.ndarray,
    root_rotations: np.ndarray,
    joint_angles: np.ndarray,
    return_rotations: bool = False,
):
    """Vectorized FK over frames.

    Parameters
    ----------
    root_positions : (N, 3)
    root_rotations : (N, 3, 3)
    joint_angles : (N, J, 3)

    Returns
    -------
    positions : (N, J, 3) world positions
    rotations : (N, J, 3, 3) world rotations, only if ``return_rotations``
    """
    local = local_rotations(skeleton, joint_angles)
    n = local.shape[0]
    pos = np.empty((n, len(skeleton), 3))
    rot = np.empty((n, len(skeleton), 3, 3))
    rot[:, 0] = root_rotations @ local[:, 0]
    pos[:, 0] = root_positions + skeleton.offsets[0]
    for j in range(1, len(skeleton)):
        p = skeleton.parents[j]
        pos[:, j] = pos[:, p] + rot[:, p] @ skeleton.offsets[j]
        rot[:, j] = rot[:, p] @ local[:, j]
    if return_rotations:
        return pos, rot
    return pos


def forward_kinematics(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    """World positions ``(J, 3)`` of every joint for a single pose."""
    angles = np.asarray(pose.joint_rotations, dtype=float)
    if angles.shape != (len(skeleton), 3):
        raise KinematicsError(
            f"pose has {angles.shape[0] if angles.ndim else 0} joint rotations, "
            f"skeleton has {len(skeleton)} joints"
        )
    return forward_kinematics_batch(
        skeleton,
        np.asarray(pose.root_position, dtype=float)[None],
        np.asarray(pose.root_rotation, dtype=float)[None],
        angles[None],
    )[0]


# --------------------------------------------------------------------------
# facing normalization


def heading_rotations(root_rotations: np.ndarray) -> np.ndarray:
    """Yaw-only rotations ``(N, 3, 3)`` that carry +z onto each hip's horizontal facing.

    A frame whose facing axis is (near) vertical reuses the previous
    frame's heading; the first frame must not be degenerate.
    """
    root_rotations = np.asarray(root_rotations, dtype=float)
    forward = root_rotations @ FACING_AXIS
    horiz = forward.copy()
    horiz[:, UP_AXIS] = 0.0
    norms = np.linalg.norm(horiz, axis=-1)
    degenerate = norms < 1e-6
    if degenerate[0]:
        raise KinematicsError("facing direction of the first frame is vertical")
    yaw = np.arctan2(horiz[:, 0], horiz[:, 2])
    for i in np.flatnonzero(degenerate):
        yaw[i] = yaw[i - 1]
    return axis_rotation("Y", yaw)
